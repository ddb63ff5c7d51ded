"""Shared fixtures and dense brute-force oracles.

The oracles build every projection as an explicit matrix and use explicit
inverses, so they share no code path with the library.
"""

import numpy as np
import pytest

from ruviii import Dataset


def dense_projection(M):
    """``M (M'M)^{-1} M'`` built explicitly."""
    return M @ np.linalg.inv(M.T @ M) @ M.T


def dense_ruv3(Y, M, control_idx, k):
    """Reference RUV-III: returns ``(U_k, alpha_hat, w_hat, removed)``."""
    m = Y.shape[0]
    P_perp = np.eye(m) - dense_projection(M)
    S = P_perp @ Y @ Y.T @ P_perp
    vals, vecs = np.linalg.eigh(S)
    U = vecs[:, ::-1][:, :k]
    alpha = U.T @ Y
    Yc = Y[:, control_idx]
    P1_perp = np.eye(m) - np.ones((m, m)) / m
    A = U.T @ Yc @ Yc.T @ U
    w = P1_perp @ Yc @ Yc.T @ U @ np.linalg.inv(A)
    return U, alpha, w, w @ alpha


def random_a2s(rng, m, s):
    """Random mapping of ``m`` assays onto ``s`` samples, each sample used."""
    a2s = np.concatenate([np.arange(s), rng.integers(0, s, m - s)])
    rng.shuffle(a2s)
    return a2s


def random_dataset(rng, m, s, n, n_c, k0=2, noise=1.0):
    a2s = random_a2s(rng, m, s)
    W = rng.standard_normal((m, k0))
    alpha = rng.standard_normal((k0, n))
    Y = W @ alpha + noise * rng.standard_normal((m, n)) + rng.standard_normal((s, n))[a2s]
    controls = np.sort(rng.choice(n, n_c, replace=False))
    return Dataset.from_arrays(Y, a2s, controls)


def rel_diff(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record(criterion, ok, detail):
    """Store and print the outcome of one acceptance criterion."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
