"""Complex Gaussian vectors and Hermitian positive-definite algebra.

Vectors are 1-D complex ``ndarray`` objects and matrices are 2-D ones; the
batched helpers accept any number of leading batch axes.  No routine in this
module forms an explicit inverse: every ``Sigma^{-1} v`` goes through a
Cholesky factor and two triangular substitutions.

Random draws come from :class:`RngStream`, a thin wrapper around numpy's
Philox4x64 counter-based generator keyed by ``(master_seed, stream_id)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionError, DimensionError, DomainError

HERMITIAN_RTOL = 1e-12

__all__ = [
    "RngStream",
    "as_vector",
    "as_hermitian",
    "build_toeplitz_covariance",
    "cholesky",
    "batch_cholesky",
    "forward_substitution",
    "back_substitution",
    "solve_pd",
    "quad_form",
    "sample_cn",
]


def as_vector(v, name="vector"):
    """Coerce *v* to a finite 1-D complex128 array of length >= 1."""
    arr = np.asarray(v, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def as_hermitian(a, name="matrix"):
    """Coerce *a* to a square complex128 matrix and reject non-Hermitian input.

    The input is not symmetrized; a relative Frobenius asymmetry above
    ``1e-12`` raises :class:`DomainError`.
    """
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    scale = np.linalg.norm(arr)
    if np.linalg.norm(arr - arr.conj().T) > HERMITIAN_RTOL * scale:
        raise DomainError(f"{name} is not Hermitian")
    return arr


def build_toeplitz_covariance(rho, m):
    """Toeplitz covariance with entries ``rho**|i-j|``.

    Parameters
    ----------
    rho : float
        Correlation coefficient, ``|rho| < 1``.
    m : int
        Dimension.

    Returns
    -------
    ndarray, shape (m, m), complex128
    """
    rho = float(rho)
    if not abs(rho) < 1.0:
        raise DomainError(f"Toeplitz parameter must satisfy |rho| < 1, got {rho}")
    if int(m) != m or m < 1:
        raise DomainError(f"dimension must be a positive integer, got {m}")
    m = int(m)
    idx = np.arange(m)
    lag = np.abs(idx[:, None] - idx[None, :])
    # 0.0 ** 0 == 1.0, so rho = 0 yields the identity.
    return np.power(rho, lag).astype(np.complex128)


def batch_cholesky(a, rtol=0.0):
    """Cholesky factorization of a stack of Hermitian matrices.

    Column-oriented Cholesky-Banachiewicz loop, vectorized over the batch.
    Factorization of a batch member stops being meaningful at its first
    failed pivot; its factor is then filled with a harmless placeholder and
    flagged in the returned mask.

    Parameters
    ----------
    a : ndarray, shape (..., m, m)
        Hermitian matrices.  Only the lower triangle is read.
    rtol : float
        A pivot fails when it is ``<= rtol * max(diag(a))``.  With the
        default of zero only non-positive pivots fail.

    Returns
    -------
    L : ndarray, shape (..., m, m)
        Lower-triangular factors with real positive diagonal.
    ok : ndarray of bool, shape (...)
        True where the factorization succeeded.
    first_bad : ndarray of int, shape (...)
        Index of the first failing pivot, ``-1`` where ``ok``.
    """
    a = np.asarray(a, dtype=np.complex128)
    m = a.shape[-1]
    batch = a.shape[:-2]
    L = np.zeros_like(a)
    ok = np.ones(batch, dtype=bool)
    first_bad = np.full(batch, -1, dtype=np.int64)
    diag = np.real(np.diagonal(a, axis1=-2, axis2=-1))
    floor = rtol * np.max(diag, axis=-1) if m else np.zeros(batch)
    for j in range(m):
        row = L[..., j, :j]
        pivot = diag[..., j] - np.sum(row.real ** 2 + row.imag ** 2, axis=-1)
        bad = ~(pivot > floor) & ok
        first_bad = np.where(bad, j, first_bad)
        ok &= ~bad
        pivot = np.where(ok, pivot, 1.0)
        ljj = np.sqrt(pivot)
        L[..., j, j] = ljj
        if j + 1 < m:
            col = a[..., j + 1:, j] - np.einsum("...ik,...k->...i", L[..., j + 1:, :j], row.conj())
            L[..., j + 1:, j] = col / ljj[..., None]
    return L, ok, first_bad


def cholesky(sigma, rtol=0.0):
    """Lower Cholesky factor of a Hermitian positive-definite matrix.

    Raises
    ------
    DecompositionError
        If a pivot is non-positive; ``.pivot`` names its index.
    """
    sigma = as_hermitian(sigma, "covariance")
    L, ok, first_bad = batch_cholesky(sigma, rtol=rtol)
    if not ok:
        k = int(first_bad)
        raise DecompositionError(f"matrix is not positive definite: pivot {k} is not positive", pivot=k)
    return L


def forward_substitution(L, b):
    """Solve ``L y = b`` for lower-triangular *L*.

    *b* has shape ``(..., m)`` or ``(..., m, k)``; *L* broadcasts against the
    batch axes of *b*.
    """
    L = np.asarray(L)
    b = np.asarray(b, dtype=np.complex128)
    vec = b.ndim == L.ndim - 1
    if vec:
        b = b[..., None]
    m = L.shape[-1]
    if b.shape[-2] != m:
        raise DimensionError(f"dimension mismatch: matrix is {m}x{m}, right-hand side has {b.shape[-2]} rows")
    y = np.empty(np.broadcast_shapes(L.shape[:-2] + (m, b.shape[-1]), b.shape), dtype=np.complex128)
    for i in range(m):
        acc = b[..., i, :] - np.einsum("...k,...kj->...j", L[..., i, :i], y[..., :i, :])
        y[..., i, :] = acc / L[..., i, i, None]
    return y[..., 0] if vec else y


def back_substitution(L, y):
    """Solve ``L^H x = y`` for lower-triangular *L*."""
    L = np.asarray(L)
    y = np.asarray(y, dtype=np.complex128)
    vec = y.ndim == L.ndim - 1
    if vec:
        y = y[..., None]
    m = L.shape[-1]
    if y.shape[-2] != m:
        raise DimensionError(f"dimension mismatch: matrix is {m}x{m}, right-hand side has {y.shape[-2]} rows")
    LH = np.conj(np.swapaxes(L, -1, -2))
    x = np.empty(np.broadcast_shapes(L.shape[:-2] + (m, y.shape[-1]), y.shape), dtype=np.complex128)
    for i in range(m - 1, -1, -1):
        acc = y[..., i, :] - np.einsum("...k,...kj->...j", LH[..., i, i + 1:], x[..., i + 1:, :])
        x[..., i, :] = acc / LH[..., i, i, None]
    return x[..., 0] if vec else x


def solve_pd(sigma, v):
    """Return ``Sigma^{-1} v`` through a Cholesky factorization."""
    L = cholesky(sigma)
    v = as_vector(v, "right-hand side")
    if v.size != L.shape[0]:
        raise DimensionError(f"dimension mismatch: matrix is {L.shape[0]}x{L.shape[0]}, vector has {v.size}")
    return back_substitution(L, forward_substitution(L, v))


def quad_form(a, sigma, b=None):
    """Quadratic form ``a^H Sigma^{-1} b``.

    When *b* is omitted (or is *a*) the result is the real nonnegative
    ``a^H Sigma^{-1} a`` returned as a complex number with zero imaginary
    part.
    """
    L = cholesky(sigma)
    a = as_vector(a, "a")
    b = a if b is None else as_vector(b, "b")
    m = L.shape[0]
    if a.size != m or b.size != m:
        raise DimensionError(f"dimension mismatch: matrix is {m}x{m}, vectors have {a.size} and {b.size}")
    za = forward_substitution(L, a)
    zb = forward_substitution(L, b)
    val = complex(np.vdot(za, zb))
    if np.array_equal(a, b):
        if abs(val.imag) > 1e-12 * abs(val.real):
            raise ArithmeticError("quadratic form a^H S^-1 a has a non-negligible imaginary part")
        val = complex(val.real, 0.0)
    return val


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(master_seed, stream_id)``.

    Backed by Philox4x64-10 with the 128-bit key
    ``master_seed + 2**64 * stream_id``.  Distinct stream ids give
    non-overlapping, independent sequences, so each Monte-Carlo block or
    worker can own one.
    """

    master_seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            val = getattr(self, name)
            if int(val) != val or not 0 <= val < 2 ** 64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {val}")
            setattr(self, name, int(val))
        key = self.master_seed + (self.stream_id << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self):
        return self._gen

    def standard_complex_normal(self, shape):
        """Circular CN(0, 1) draws: real and imaginary parts each of variance 1/2."""
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(n) for n in shape)
        z = self._gen.standard_normal(shape + (2,))
        return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def sample_cn(mu, chol, count, rng):
    """Draw *count* vectors from CN(mu, L L^H).

    Parameters
    ----------
    mu : array_like, shape (m,)
    chol : ndarray, shape (m, m)
        Lower Cholesky factor of the covariance.
    count : int
    rng : RngStream

    Returns
    -------
    ndarray, shape (count, m)
        One sample per row, ``mu + L w`` with ``E[w w^H] = I``.
    """
    mu = as_vector(mu, "mean")
    chol = np.asarray(chol, dtype=np.complex128)
    if chol.ndim != 2 or chol.shape != (mu.size, mu.size):
        raise DimensionError(f"mean has dimension {mu.size} but Cholesky factor has shape {chol.shape}")
    if int(count) != count or count < 0:
        raise DomainError(f"count must be a nonnegative integer, got {count}")
    w = rng.standard_complex_normal((int(count), mu.size))
    return mu + w @ chol.T
