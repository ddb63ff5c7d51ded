"""Projection operators, Gram accumulation, eigendecomposition and norms.

The replicate projections act through the group structure of the mapping
(subtract or broadcast per-sample means), so no m x m projection matrix is
ever built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceWarning, NumericalError, ValidationError
from .model import MappingMatrix

__all__ = [
    "SymmetricEigen",
    "center_columns",
    "replicate_means",
    "replicate_residuals",
    "residual_gram",
    "gram",
    "sym_eigen_desc",
    "spectral_norm",
    "euclidean_norm_sq",
    "weyl_gap",
]

EIGEN_RESIDUAL_TOL = 1e-8
GRAM_BLOCK = 4096


def center_columns(Y):
    """Subtract each column's mean (the 1_m-orthogonal projection)."""
    Y = np.asarray(Y, dtype=float)
    return Y - Y.mean(axis=0, keepdims=True)


def _check_rows(Y, mapping):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != mapping.m:
        raise ValidationError(
            f"matrix with shape {Y.shape} does not match mapping of {mapping.m} assays"
        )
    return Y


def replicate_means(Y, mapping: MappingMatrix):
    """Replace each row by the mean of its replicate set."""
    Y = _check_rows(Y, mapping)
    order = np.concatenate(mapping.replicate_sets)
    sizes = mapping.sizes
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    sums = np.add.reduceat(Y[order], starts, axis=0)
    means = sums / sizes[:, None]
    return means[mapping.assay_to_sample]


def replicate_residuals(Y, mapping: MappingMatrix):
    """Deviation of each row from its replicate-set mean.

    Rows of singleton sets come out exactly zero.
    """
    Y = _check_rows(Y, mapping)
    return Y - replicate_means(Y, mapping)


def gram(R, block=GRAM_BLOCK):
    """R @ R.T accumulated over column blocks with Kahan compensation.

    Block boundaries are fixed, so the reduction order does not depend on
    how many threads the BLAS uses.
    """
    R = np.asarray(R, dtype=float)
    m, n = R.shape
    total = np.zeros((m, m))
    comp = np.zeros((m, m))
    for start in range(0, max(n, 1), block):
        part = R[:, start:start + block]
        y = part @ part.T - comp
        t = total + y
        comp = (t - total) - y
        total = t
    # exact symmetry
    return (total + total.T) / 2


def residual_gram(Y, mapping: MappingMatrix):
    """Gram matrix of the replicate residuals, ``R R'`` with ``R = P_M⊥ Y``."""
    return gram(replicate_residuals(Y, mapping))


@dataclass(frozen=True)
class SymmetricEigen:
    """Leading eigenpairs of a symmetric matrix, largest first.

    ``max_rank``, when known, is a structural bound on the rank (``m - s``
    for a replicate-residual Gram); pairs beyond it are treated as zero
    even if rounding lifts their eigenvalues above ``zero_threshold``.
    """

    vectors: np.ndarray
    values: np.ndarray
    zero_threshold: float
    max_rank: int | None = None

    @property
    def rank(self):
        """Number of eigenvalues above ``zero_threshold``, capped at ``max_rank``."""
        above = int(np.count_nonzero(self.values > self.zero_threshold))
        return above if self.max_rank is None else min(above, self.max_rank)

    @property
    def structural_zero(self):
        return np.arange(self.values.size) >= self.rank

    def head(self, k):
        return SymmetricEigen(self.vectors[:, :k], self.values[:k], self.zero_threshold, self.max_rank)


def _fix_signs(U):
    # largest-magnitude entry positive; argmax returns the lowest index on ties
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def sym_eigen_desc(S, r=None, zero_threshold=None, residual_tol=EIGEN_RESIDUAL_TOL):
    """Top ``r`` eigenpairs of symmetric ``S`` in descending order.

    Parameters
    ----------
    S : (m, m) array
        Symmetric matrix (asymmetry above 1e-8 relative is rejected).
    r : int, optional
        Number of pairs to return, default all ``m``.
    zero_threshold : float, optional
        Eigenvalues at or below this are treated as structurally zero.
        Defaults to ``m * eps * max|lambda|``.
    residual_tol : float
        Each pair must satisfy ``|S u - lambda u| <= residual_tol * (1 + lambda_max)``.

    Returns
    -------
    SymmetricEigen
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {S.shape}")
    m = S.shape[0]
    r = m if r is None else int(r)
    if not 1 <= r <= m:
        raise ValidationError(f"requested {r} eigenpairs from a {m}x{m} matrix")
    scale = np.max(np.abs(S)) if S.size else 0.0
    if np.max(np.abs(S - S.T)) > 1e-8 * max(scale, 1.0):
        raise ValidationError("matrix is not symmetric")
    try:
        vals, vecs = scipy.linalg.eigh(S, subset_by_index=[m - r, m - 1], driver="evr")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = _fix_signs(vecs[:, ::-1])
    lam_max = float(np.max(np.abs(vals)))
    resid = np.linalg.norm(S @ vecs - vecs * vals, axis=0)
    if np.any(resid > residual_tol * (1.0 + lam_max)):
        raise NumericalError(
            f"eigenpair residual {resid.max():.3e} exceeds tolerance {residual_tol:.1e}"
        )
    if zero_threshold is None:
        zero_threshold = m * np.finfo(float).eps * lam_max
    return SymmetricEigen(vecs, vals, float(zero_threshold))


def spectral_norm(A, tol=1e-10, max_iter=10000):
    """Largest singular value by power iteration.

    Iterates on the smaller of ``A A'`` and ``A'A`` from a fixed
    pseudo-random start, stopping once the eigen-residual of the Rayleigh
    quotient falls below ``tol`` relative. On hitting ``max_iter`` the best
    estimate is returned with a :class:`ConvergenceWarning`.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.size == 0:
        return 0.0
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    G = gram(A) if A.shape[0] <= A.shape[1] else gram(A.T)
    x = np.random.default_rng(0).standard_normal(G.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(max_iter):
        y = G @ x
        rho = float(x @ y)
        resid = np.linalg.norm(y - rho * x)
        if resid <= tol * rho:
            break
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    else:
        warnings.warn(
            f"spectral_norm did not reach tol={tol:g} in {max_iter} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    return math.sqrt(max(rho, 0.0))


def euclidean_norm_sq(A):
    """Sum of squared entries (squared Frobenius norm), compensated."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    A2 = A.reshape(A.shape[0], -1) if A.ndim > 1 else A[None, :]
    return math.fsum(np.einsum("ij,ij->i", A2, A2))


def weyl_gap(A, B):
    """Both sides of Weyl's inequality for symmetric ``A`` and ``B``.

    Returns ``(max_i |lambda_i(A) - lambda_i(B)|, ||A - B||)``; the first
    never exceeds the second.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"shape mismatch: {A.shape} vs {B.shape}")
    la = scipy.linalg.eigvalsh(A)
    lb = scipy.linalg.eigvalsh(B)
    diff = scipy.linalg.eigvalsh(A - B)
    return float(np.max(np.abs(la - lb))), float(np.max(np.abs(diff)))
