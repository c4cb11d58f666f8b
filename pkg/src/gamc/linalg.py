"""Dense symmetric linear algebra for small (n <= ~50) sampler states.

Everything here operates on plain float64 ndarrays.  Factorizations are
delegated to LAPACK; the rank-one update/downdate of a Cholesky factor is
written out explicitly because no numpy/scipy routine provides it and the
O(n^2) incremental path is load-bearing for the adaptive-covariance kernel.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import NDArray
from scipy.linalg.lapack import dpotri, dpotrs, dtrtrs

__all__ = [
    "DimensionMismatch",
    "NotPositiveDefinite",
    "DowndateBreaksPositivity",
    "NonFiniteInput",
    "PosDefFactor",
    "cholesky",
    "rank_one_update",
    "chol_solve",
    "tri_solve",
    "invert_spd",
    "softabs_metric",
]

# A Cholesky pivot at or below this fraction of the largest diagonal entry is
# treated as a failed factorization rather than a usable (near-singular) one.
PIVOT_RTOL = 1e-12


class DimensionMismatch(ValueError):
    """Operands have incompatible shapes."""


class NotPositiveDefinite(ValueError):
    """Symmetric matrix has a non-positive (or negligible) Cholesky pivot."""


class DowndateBreaksPositivity(ValueError):
    """Rank-one downdate would leave the matrix indefinite."""


class NonFiniteInput(ValueError):
    """Matrix argument contains NaN or infinity."""


def _require_square(a: NDArray) -> NDArray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def cholesky(a: NDArray) -> NDArray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises NotPositiveDefinite when a pivot is non-positive or falls at or
    below PIVOT_RTOL times the largest diagonal entry of ``a``.
    """
    a = _require_square(a)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    d = lower.diagonal()
    floor = PIVOT_RTOL * max(float(a.diagonal().max()), 0.0)
    # NaN pivots fail the comparison too, so this also rejects non-finite input
    if not np.all(d * d > floor):
        raise NotPositiveDefinite("pivot below positivity threshold")
    return lower


def rank_one_update(lower: NDArray, v: NDArray, sign: int = 1) -> NDArray:
    """Factor of A + sign * v v^T given the factor of A, in O(n^2).

    Inputs are not modified.  For sign -1 (downdating) raises
    DowndateBreaksPositivity when the result would lose positive definiteness
    (a pivot shrinking at or below PIVOT_RTOL relative to itself).
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lower = np.array(lower, dtype=float)
    v = np.array(v, dtype=float)
    n = lower.shape[0]
    if v.shape != (n,):
        raise DimensionMismatch(f"vector shape {v.shape} does not match factor order {n}")
    for k in range(n):
        d = lower[k, k]
        if sign == 1:
            r = math.hypot(d, v[k])
        else:
            r2 = d * d - v[k] * v[k]
            if not r2 > PIVOT_RTOL * d * d:
                raise DowndateBreaksPositivity(f"pivot {k} lost positivity in downdate")
            r = math.sqrt(r2)
        c, s = r / d, v[k] / d
        lower[k, k] = r
        if k + 1 < n:
            col = (lower[k + 1 :, k] + sign * s * v[k + 1 :]) / c
            lower[k + 1 :, k] = col
            v[k + 1 :] = c * v[k + 1 :] - s * col
    return lower


def chol_solve(lower: NDArray, b: NDArray) -> NDArray:
    """Solve A x = b given the lower Cholesky factor of A."""
    x, info = dpotrs(lower, b, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"triangular solve failed (info={info})")
    return x


def tri_solve(lower: NDArray, b: NDArray) -> NDArray:
    """Solve L y = b for the lower-triangular factor alone (whitening)."""
    y, info = dtrtrs(lower, b, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"triangular solve failed (info={info})")
    return y


def invert_spd(a: NDArray) -> NDArray:
    """Inverse of a symmetric positive-definite matrix via its factorization."""
    lower = cholesky(a)
    inv, info = dpotri(lower, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"inversion from factor failed (info={info})")
    # dpotri fills the lower triangle only; the upper one is still the
    # factor's zeros, so mirroring is a plain add plus a diagonal rewrite
    full = inv + inv.T
    np.fill_diagonal(full, inv.diagonal())
    return full


def softabs_metric(h: NDArray, alpha: float) -> NDArray:
    """Positive-definite regularization of a symmetric matrix.

    Eigenvalues lam are mapped to lam*coth(alpha*lam), which behaves like
    |lam| away from zero and levels off at 1/alpha near zero; eigenvectors are
    untouched.  ``alpha`` controls how sharply small curvature is floored.
    """
    h = _require_square(h)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not np.all(np.isfinite(h)):
        raise NonFiniteInput("matrix contains non-finite entries")
    lam, vecs = np.linalg.eigh(h)
    z = alpha * lam
    mapped = np.where(np.abs(z) < 1e-8, 1.0 / alpha, lam / np.tanh(np.where(z == 0.0, 1.0, z)))
    m = (vecs * mapped) @ vecs.T
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class PosDefFactor:
    """Lower Cholesky factor wrapper used by Gaussian proposals."""

    lower: NDArray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def log_det(self) -> float:
        """log-determinant of the factored matrix (not of the factor)."""
        cached = self.__dict__.get("_log_det")
        if cached is None:
            cached = 2.0 * float(np.sum(np.log(self.lower.diagonal())))
            object.__setattr__(self, "_log_det", cached)
        return cached

    def solve(self, b: NDArray) -> NDArray:
        return chol_solve(self.lower, b)

    def whiten(self, b: NDArray) -> NDArray:
        return tri_solve(self.lower, b)

    def matvec(self, z: NDArray) -> NDArray:
        """L @ z, mapping white noise to correlated noise."""
        return self.lower @ z

    def scaled(self, c: float) -> "PosDefFactor":
        """Factor of c^2 * A."""
        return PosDefFactor(c * self.lower)

    def matrix(self) -> NDArray:
        return self.lower @ self.lower.T
