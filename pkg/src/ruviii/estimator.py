"""RUV-III fit and the k-scan selector.

For a chosen dimension ``k`` the fit takes the top ``k`` eigenvectors
``U`` of the replicate-residual Gram matrix and forms

* ``alpha_hat = U' Y``
* ``w_hat``, the regression of the column-centred controls on
  ``alpha_hat``'s control columns (a k x k symmetric solve)
* ``removed = w_hat @ alpha_hat`` and ``adjusted = Y - removed``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import SingularSystemError, ValidationError
from .model import ControlMask, Dataset, MappingMatrix, split_columns
from .projections import (
    EIGEN_RESIDUAL_TOL,
    SymmetricEigen,
    center_columns,
    residual_gram,
    sym_eigen_desc,
)

__all__ = [
    "Ruv3Fit",
    "KScanResult",
    "fit",
    "fit_with_eigen",
    "removed_norm_sq",
    "k_scan",
    "k_max",
    "replicate_eigen",
    "RCOND_MIN",
]

log = logging.getLogger(__name__)

RCOND_MIN = 1e-12


def k_max(mapping: MappingMatrix) -> int:
    """Largest admissible k, ``m - s``."""
    return mapping.m - mapping.s


@dataclass(frozen=True)
class Ruv3Fit:
    """Result of one RUV-III fit.

    ``removed`` and ``adjusted`` are materialised on first access; the
    factors ``w_hat`` (m x r) and ``alpha_hat`` (r x n) are always kept.
    ``rank`` is the number of factors actually used: it equals ``k``
    unless the replicate residuals have fewer than ``k`` non-zero
    eigenvalues, in which case the surplus directions carry no data and
    are dropped.
    """

    k: int
    eigen: SymmetricEigen
    alpha_hat: np.ndarray
    w_hat: np.ndarray
    Y: np.ndarray = field(repr=False)
    rcond: float = float("nan")

    @property
    def rank(self):
        return self.alpha_hat.shape[0]

    @cached_property
    def removed(self):
        if self.rank == 0:
            return np.zeros_like(self.Y)
        return self.w_hat @ self.alpha_hat

    @cached_property
    def adjusted(self):
        return self.Y - self.removed


@dataclass(frozen=True)
class KScanResult:
    """Squared Frobenius norm of the removed component for k = 1..K."""

    norms_sq: np.ndarray
    status: tuple
    k_hat: int
    K: int


def replicate_eigen(Y, mapping: MappingMatrix, r, zero_threshold=None, residual_tol=EIGEN_RESIDUAL_TOL):
    """Top ``r`` eigenpairs of the replicate-residual Gram matrix of ``Y``."""
    S = residual_gram(Y, mapping)
    e = sym_eigen_desc(S, r, zero_threshold=zero_threshold, residual_tol=residual_tol)
    return replace(e, max_rank=k_max(mapping))


def check_control_count(k, controls):
    if controls.n_c < k:
        raise ValidationError(
            f"k={k} exceeds the {controls.n_c} negative controls; the control system would be "
            f"rank deficient, use k <= {controls.n_c} or add controls"
        )


def _check_k(k, mapping):
    K = k_max(mapping)
    if K < 1:
        raise ValidationError(
            f"no replicates: m - s = {K}, RUV-III needs replicate or pseudo-replicate sets"
        )
    if not 1 <= k <= K:
        raise ValidationError(f"k={k} outside the admissible range 1..{K} (m - s)")


def _solve_control_system(G, H, k, rcond_min=RCOND_MIN):
    """Return ``H @ inv(G)`` for symmetric positive definite ``G``."""
    c, info = lapack.dpotrf(G, lower=1, clean=1)
    if info != 0:
        raise SingularSystemError(k, 0.0, 0.0)
    anorm = np.max(np.sum(np.abs(G), axis=0))
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    pivot = float(np.min(np.diag(c)) ** 2)
    if info != 0 or not rcond >= rcond_min:
        raise SingularSystemError(k, float(rcond), pivot)
    X = scipy.linalg.cho_solve((c, True), H.T)
    return X.T, float(rcond)


def fit_with_eigen(Y, controls: ControlMask, eigen: SymmetricEigen, k: int, rcond_min=RCOND_MIN) -> Ruv3Fit:
    """Fit from precomputed eigenpairs (at least ``k`` of them).

    Range checks against ``m - s`` are the caller's job.
    """
    Y = np.asarray(Y, dtype=float)
    if eigen.vectors.shape[1] < k:
        raise ValidationError(f"only {eigen.vectors.shape[1]} eigenpairs available for k={k}")
    r = min(k, eigen.rank)
    if r < k:
        log.info("k=%d exceeds the %d non-zero replicate eigenvalues; using %d", k, r, r)
    U = eigen.vectors[:, :r]
    alpha_hat = U.T @ Y
    if r == 0:
        return Ruv3Fit(k, eigen.head(k), alpha_hat, np.zeros((Y.shape[0], 0)), Y)
    Yc, _ = split_columns(Y, controls)
    alpha_c = alpha_hat[:, controls.control_indices]
    G = alpha_c @ alpha_c.T
    H = center_columns(Yc) @ alpha_c.T
    w_hat, rcond = _solve_control_system(G, H, k, rcond_min)
    return Ruv3Fit(k, eigen.head(k), alpha_hat, w_hat, Y, rcond)


def fit(
    d: Dataset,
    k: int | None = None,
    *,
    zero_threshold=None,
    residual_tol=EIGEN_RESIDUAL_TOL,
    rcond_min=RCOND_MIN,
) -> Ruv3Fit:
    """Fit RUV-III with ``k`` factors (default ``m - s``).

    Raises
    ------
    ValidationError
        ``k`` outside ``1..m-s``.
    SingularSystemError
        The k x k control system fails the reciprocal-condition guard.
    """
    if k is None:
        k = k_max(d.mapping)
    _check_k(k, d.mapping)
    check_control_count(k, d.controls)
    eigen = replicate_eigen(d.Y, d.mapping, k, zero_threshold, residual_tol)
    return fit_with_eigen(d.Y, d.controls, eigen, k, rcond_min)


def removed_norm_sq(f: Ruv3Fit) -> float:
    """``||w_hat alpha_hat||_2^2`` evaluated in factor space."""
    if f.rank == 0:
        return 0.0
    WtW = f.w_hat.T @ f.w_hat
    AAt = f.alpha_hat @ f.alpha_hat.T
    return float(np.sum(WtW * AAt))


def k_scan(d: Dataset, K: int | None = None, *, zero_threshold=None, rcond_min=RCOND_MIN) -> KScanResult:
    """Removed-component norm for every k up to ``K`` and its argmax.

    One eigendecomposition serves all k. A k whose control system is
    singular gets norm ``-inf`` and status ``"singular"``; a k beyond the
    number of non-zero replicate eigenvalues repeats the last full-rank
    value with status ``"rank_limited"``. Ties go to the smallest k.
    """
    if K is None:
        K = k_max(d.mapping)
    _check_k(K, d.mapping)
    check_control_count(K, d.controls)
    Y = d.Y
    eigen = replicate_eigen(Y, d.mapping, K, zero_threshold)
    r = min(K, eigen.rank)
    U = eigen.vectors[:, :r]
    alpha = U.T @ Y
    alpha_c = alpha[:, d.controls.control_indices]
    Gc = alpha_c @ alpha_c.T
    Hc = center_columns(split_columns(Y, d.controls)[0]) @ alpha_c.T
    AAt = alpha @ alpha.T
    norms = np.full(K, -np.inf)
    status = []
    for k in range(1, K + 1):
        if k > r:
            norms[k - 1] = norms[r - 1] if r else 0.0
            status.append("rank_limited")
            continue
        try:
            w, _ = _solve_control_system(Gc[:k, :k], Hc[:, :k], k, rcond_min)
        except SingularSystemError as exc:
            log.warning("k-scan: %s", exc)
            status.append("singular")
            continue
        norms[k - 1] = float(np.sum((w.T @ w) * AAt[:k, :k]))
        status.append("ok")
    if not np.any(np.isfinite(norms)):
        raise SingularSystemError(1, 0.0, 0.0)
    # argmax returns the first (smallest k) maximiser
    k_hat = int(np.argmax(norms)) + 1
    return KScanResult(norms, tuple(status), k_hat, K)
