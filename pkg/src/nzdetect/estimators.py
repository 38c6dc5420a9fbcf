"""Sample mean and sample covariance estimators of the background.

Secondary data are stored one observation per row: an ``(N, m)`` complex
array.  The batched variants take ``(T, N, m)`` stacks and are what the
Monte-Carlo harness and the image pipeline use.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .cgauss import as_vector, batch_cholesky
from .errors import DimensionError, DomainError, SingularEstimateError

# Pivot floor (relative to the largest diagonal entry) below which an
# estimate is declared singular.  Catches rank-deficient estimates that
# rounding leaves with tiny positive pivots.
SINGULAR_RTOL = 1e-12


class EstimatorKind(enum.Enum):
    """Normalization of the sample covariance: divide by N, N-1 or N+1."""

    SCM_ML = "ml"
    SCM_UNBIASED = "unbiased"
    SCM_NPLUS1 = "nplus1"

    def divisor(self, n):
        return {"ml": n, "unbiased": n - 1, "nplus1": n + 1}[self.value]


def as_secondary(secondary, m=None):
    """Coerce secondary data to a finite ``(N, m)`` complex array with N >= 1."""
    arr = np.asarray(secondary, dtype=np.complex128)
    if arr.ndim == 1 and m in (None, 1):
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionError(f"secondary data must be a non-empty (N, m) array, got shape {arr.shape}")
    if m is not None and arr.shape[1] != m:
        raise DimensionError(f"secondary data have dimension {arr.shape[1]}, expected {m}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("secondary data have non-finite entries")
    return arr


@dataclass(frozen=True)
class SampleSet:
    """N signal-free secondary vectors plus the cell under test."""

    secondary: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        test = as_vector(self.test, "test vector")
        secondary = as_secondary(self.secondary, test.size)
        object.__setattr__(self, "test", test)
        object.__setattr__(self, "secondary", secondary)

    @property
    def m(self):
        return self.test.size

    @property
    def n(self):
        return self.secondary.shape[0]


def smv(secondary):
    """Sample mean vector (coordinate-wise average of the rows)."""
    arr = np.asarray(secondary, dtype=np.complex128)
    if arr.size == 0:
        raise DomainError("sample mean of an empty set is undefined")
    return as_secondary(arr).mean(axis=0)


def scatter(secondary, center):
    """Unnormalized scatter matrix ``sum_i (x_i - c)(x_i - c)^H``, exactly Hermitian."""
    x = as_secondary(secondary)
    c = as_vector(center, "center")
    if c.size != x.shape[1]:
        raise DimensionError(f"center has dimension {c.size}, data have {x.shape[1]}")
    r = x - c
    w = r.T @ r.conj()
    return 0.5 * (w + w.conj().T)


def scm(secondary, center=None, kind=EstimatorKind.SCM_ML, check=True):
    """Sample covariance matrix about *center*.

    Parameters
    ----------
    secondary : array_like, shape (N, m)
    center : array_like, shape (m,), optional
        Known mean, or ``None`` to center on the sample mean.
    kind : EstimatorKind
        Divisor N (default), N-1 or N+1.
    check : bool
        Verify positive definiteness through a Cholesky factorization.

    Raises
    ------
    SingularEstimateError
        When the estimate is rank deficient and *check* is set.
    """
    x = as_secondary(secondary)
    n, m = x.shape
    if center is None:
        center = x.mean(axis=0)
    d = kind.divisor(n)
    if d <= 0:
        raise DomainError(f"{kind.name} needs more than {n} samples")
    s = scatter(x, center) / d
    if check:
        _, ok, first_bad = batch_cholesky(s, rtol=SINGULAR_RTOL)
        if not ok:
            raise SingularEstimateError(
                f"covariance estimate from N={n} samples in dimension m={m} is singular "
                f"(pivot {int(first_bad)}); use more secondary data (N >= m+1 with an estimated mean)",
                pivot=int(first_bad),
            )
    return s


def batch_scatter(secondary, center):
    """Scatter matrices for a stack of sample sets.

    ``secondary`` is ``(T, N, m)`` and ``center`` is ``(T, m)`` or ``(m,)``.
    """
    r = secondary - np.asarray(center)[..., None, :]
    w = np.matmul(np.swapaxes(r, -1, -2), r.conj())
    return 0.5 * (w + np.conj(np.swapaxes(w, -1, -2)))
