"""Detection statistics for Gaussian backgrounds with known or estimated mean.

Two entry points are provided:

* scalar functions (:func:`mf`, :func:`amf`, :func:`nmf`, :func:`anmf`,
  :func:`kelly_known_mean`, :func:`kelly_plugin`, :func:`kelly_generalized`)
  taking one test vector and its secondary data, raising on degenerate
  input;
* :func:`batch_statistics`, vectorized over a stack of trials or pixels,
  returning flags instead of raising.

All adaptive detectors build their own estimates from the secondary data so
the N-dependent constants always match the estimator normalization.  The
sample covariance used throughout is the ML one (divide by N).
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .cgauss import as_hermitian, as_vector, batch_cholesky, cholesky, forward_substitution
from .errors import DimensionError, DomainError, SingularEstimateError, UndefinedStatisticError
from .estimators import SINGULAR_RTOL, as_secondary, batch_scatter, scatter

__all__ = [
    "DetectorKind",
    "DetectorResult",
    "FLAG_OK",
    "FLAG_SINGULAR",
    "FLAG_UNDEFINED",
    "mf",
    "amf",
    "nmf",
    "anmf",
    "kelly_known_mean",
    "kelly_plugin",
    "kelly_generalized",
    "estimate_amplitude",
    "statistic_from_estimates",
    "batch_statistics",
    "evaluate",
]

FLAG_OK = 0
FLAG_SINGULAR = 1
FLAG_UNDEFINED = 2

# Slack allowed above the supremum of a bounded statistic before it is
# treated as a numerical failure.
_BOUND_RTOL = 1e-12


class DetectorKind(enum.Enum):
    MF = "mf"
    AMF_KNOWN_MEAN = "amf-known"
    AMF = "amf"
    NMF = "nmf"
    ANMF_KNOWN_MEAN = "anmf-known"
    ANMF = "anmf"
    KELLY_KNOWN_MEAN = "kelly-known"
    KELLY_PLUGIN = "kelly-plugin"
    KELLY_GENERALIZED = "kelly-generalized"

    @property
    def uses_true_covariance(self):
        return self in (DetectorKind.MF, DetectorKind.NMF)

    @property
    def uses_known_mean(self):
        return self in (
            DetectorKind.MF,
            DetectorKind.NMF,
            DetectorKind.AMF_KNOWN_MEAN,
            DetectorKind.ANMF_KNOWN_MEAN,
            DetectorKind.KELLY_KNOWN_MEAN,
        )

    def min_secondary(self, m):
        """Smallest N for which the covariance estimate is a.s. invertible."""
        if self.uses_true_covariance:
            return 0
        return m if self.uses_known_mean else m + 1

    def domain_max(self, n=None):
        """Supremum of the statistic: inf, 1, or (N+1)/N for the generalized Kelly."""
        if self in (DetectorKind.MF, DetectorKind.AMF_KNOWN_MEAN, DetectorKind.AMF):
            return math.inf
        if self is DetectorKind.KELLY_GENERALIZED:
            if n is None:
                raise DomainError("the generalized Kelly domain depends on N")
            return (n + 1) / n
        return 1.0


@dataclass(frozen=True)
class DetectorResult:
    statistic: float
    kind: DetectorKind
    domain_max: float

    def __post_init__(self):
        s = self.statistic
        if not math.isfinite(s) or s < 0:
            raise ArithmeticError(f"{self.kind.value} produced an invalid statistic {s!r}")
        if math.isfinite(self.domain_max) and s > self.domain_max * (1 + _BOUND_RTOL):
            raise ArithmeticError(
                f"{self.kind.value} statistic {s!r} exceeds its supremum {self.domain_max!r}"
            )


def _steering(p, m):
    p = as_vector(p, "steering vector")
    if p.size != m:
        raise DimensionError(f"steering vector has dimension {p.size}, data have {m}")
    if not np.any(p):
        raise DomainError("steering vector must be nonzero")
    return p


def _forms(L, p, d):
    """Return (p^H S^-1 d, p^H S^-1 p, d^H S^-1 d) given the Cholesky factor of S."""
    z = forward_substitution(L, np.stack([p, d], axis=-1))
    zp, zd = z[:, 0], z[:, 1]
    return complex(np.vdot(zp, zd)), float(np.vdot(zp, zp).real), float(np.vdot(zd, zd).real)


def _estimate_factor(secondary, center, n_min, m):
    n = secondary.shape[0]
    if n < n_min:
        raise SingularEstimateError(
            f"N={n} secondary vectors cannot give an invertible covariance in dimension m={m}; "
            f"need N >= {n_min}"
        )
    s = scatter(secondary, center) / n
    L, ok, first_bad = batch_cholesky(s, rtol=SINGULAR_RTOL)
    if not ok:
        raise SingularEstimateError(
            f"covariance estimate from N={n} samples is singular (pivot {int(first_bad)}); "
            "use more secondary data",
            pivot=int(first_bad),
        )
    return L


def _known(x, p, mu, sigma):
    x = as_vector(x, "test vector")
    mu = as_vector(mu, "mean")
    if mu.size != x.size:
        raise DimensionError(f"mean has dimension {mu.size}, test vector has {x.size}")
    p = _steering(p, x.size)
    sigma = as_hermitian(sigma, "covariance")
    if sigma.shape[0] != x.size:
        raise DimensionError(f"covariance is {sigma.shape[0]}x{sigma.shape[0]}, test vector has {x.size}")
    return x, p, mu, cholesky(sigma)


def _adaptive(x, p, secondary, mu):
    x = as_vector(x, "test vector")
    m = x.size
    secondary = as_secondary(secondary, m)
    p = _steering(p, m)
    if mu is None:
        center = secondary.mean(axis=0)
        n_min = m + 1
    else:
        center = as_vector(mu, "mean")
        if center.size != m:
            raise DimensionError(f"mean has dimension {center.size}, test vector has {m}")
        n_min = m
    return x, p, center, secondary.shape[0], _estimate_factor(secondary, center, n_min, m)


def mf(x, p, mu, sigma):
    """Matched filter with known mean and covariance, ``|p^H S^-1 (x-mu)|^2 / p^H S^-1 p``."""
    x, p, mu, L = _known(x, p, mu, sigma)
    q, pp, _ = _forms(L, p, x - mu)
    return DetectorResult(abs(q) ** 2 / pp, DetectorKind.MF, math.inf)


def nmf(x, p, mu, sigma):
    """Normalized matched filter (squared whitened cosine between p and x - mu)."""
    x, p, mu, L = _known(x, p, mu, sigma)
    q, pp, qq = _forms(L, p, x - mu)
    if qq == 0.0:
        raise UndefinedStatisticError("NMF is 0/0 when the test vector equals the mean")
    return DetectorResult(abs(q) ** 2 / (pp * qq), DetectorKind.NMF, 1.0)


def amf(x, p, secondary, mu=None):
    """Adaptive matched filter.

    Parameters
    ----------
    x : array_like, shape (m,)
        Cell under test.
    p : array_like, shape (m,)
        Steering vector.
    secondary : array_like, shape (N, m)
        Signal-free secondary data.
    mu : array_like, optional
        Known background mean.  When omitted the sample mean of the
        secondary data is used and N >= m+1 is required.
    """
    x, p, center, _, L = _adaptive(x, p, secondary, mu)
    q, pp, _ = _forms(L, p, x - center)
    kind = DetectorKind.AMF if mu is None else DetectorKind.AMF_KNOWN_MEAN
    return DetectorResult(abs(q) ** 2 / pp, kind, math.inf)


def anmf(x, p, secondary, mu=None):
    """Adaptive normalized matched filter; ``mu=None`` estimates the mean."""
    x, p, center, _, L = _adaptive(x, p, secondary, mu)
    q, pp, qq = _forms(L, p, x - center)
    if qq == 0.0:
        raise UndefinedStatisticError("ANMF is 0/0 when the test vector equals the mean estimate")
    kind = DetectorKind.ANMF if mu is None else DetectorKind.ANMF_KNOWN_MEAN
    return DetectorResult(abs(q) ** 2 / (pp * qq), kind, 1.0)


def kelly_known_mean(x, p, mu, secondary):
    """Kelly's GLRT with known mean and SCM about that mean."""
    x, p, center, n, L = _adaptive(x, p, secondary, mu)
    q, pp, qq = _forms(L, p, x - center)
    return DetectorResult(abs(q) ** 2 / (pp * (n + qq)), DetectorKind.KELLY_KNOWN_MEAN, 1.0)


def kelly_plugin(x, p, secondary):
    """Kelly's statistic with the secondary-data sample mean plugged in."""
    x, p, center, n, L = _adaptive(x, p, secondary, None)
    q, pp, qq = _forms(L, p, x - center)
    return DetectorResult(abs(q) ** 2 / (pp * (n + qq)), DetectorKind.KELLY_PLUGIN, 1.0)


def kelly_generalized(x, p, secondary):
    """GLRT with mean and covariance estimated jointly from x and the secondary data.

    ``mu0 = (x + sum x_i) / (N+1)``, ``S0 = sum (x_i - mu0)(x_i - mu0)^H`` and
    the statistic is ``(N+1)/N |p^H S0^-1 (x-mu0)|^2 /
    (p^H S0^-1 p (1 + (x-mu0)^H S0^-1 (x-mu0)))``, bounded by (N+1)/N.
    """
    x = as_vector(x, "test vector")
    m = x.size
    secondary = as_secondary(secondary, m)
    p = _steering(p, m)
    n = secondary.shape[0]
    if n < m + 1:
        raise SingularEstimateError(f"generalized Kelly needs N >= m+1 = {m + 1}, got N={n}")
    mu0 = (x + secondary.sum(axis=0)) / (n + 1)
    L, ok, first_bad = batch_cholesky(scatter(secondary, mu0), rtol=SINGULAR_RTOL)
    if not ok:
        raise SingularEstimateError(
            f"S0 from N={n} samples is singular (pivot {int(first_bad)}); use more secondary data",
            pivot=int(first_bad),
        )
    q, pp, qq = _forms(L, p, x - mu0)
    beta = (n + 1) / n
    return DetectorResult(beta * abs(q) ** 2 / (pp * (1 + qq)), DetectorKind.KELLY_GENERALIZED, beta)


def estimate_amplitude(x, p, mu, sigma):
    """Real amplitude estimate ``Re{p^H S^-1 (x-mu)} / p^H S^-1 p``."""
    x, p, mu, L = _known(x, p, mu, sigma)
    q, pp, _ = _forms(L, p, x - mu)
    return q.real / pp


def statistic_from_estimates(kind, x, p, center, scatter_matrix, n):
    """Evaluate an adaptive statistic from precomputed estimates.

    Parameters
    ----------
    kind : DetectorKind
        One of the AMF, ANMF or Kelly (known-mean or plug-in) variants.
    center : array_like
        Mean (known or estimated) the test vector is centered on.
    scatter_matrix : array_like
        ``W = N * SCM`` about *center*.
    n : int
        Number of secondary vectors that produced *scatter_matrix*.
    """
    kind = DetectorKind(kind)
    if kind.uses_true_covariance or kind is DetectorKind.KELLY_GENERALIZED:
        raise DomainError(f"{kind.value} cannot be evaluated from (mean, W, N)")
    x = as_vector(x, "test vector")
    p = _steering(p, x.size)
    w = as_hermitian(scatter_matrix, "scatter matrix")
    L, ok, first_bad = batch_cholesky(w / n, rtol=SINGULAR_RTOL)
    if not ok:
        raise SingularEstimateError(f"scatter matrix is singular (pivot {int(first_bad)})", pivot=int(first_bad))
    q, pp, qq = _forms(L, p, x - as_vector(center, "center"))
    num = abs(q) ** 2 / pp
    if kind in (DetectorKind.AMF, DetectorKind.AMF_KNOWN_MEAN):
        return DetectorResult(num, kind, math.inf)
    if kind in (DetectorKind.ANMF, DetectorKind.ANMF_KNOWN_MEAN):
        if qq == 0.0:
            raise UndefinedStatisticError("ANMF is 0/0 when the test vector equals the mean")
        return DetectorResult(num / qq, kind, 1.0)
    return DetectorResult(num / (n + qq), kind, 1.0)


def evaluate(kind, sample_set, p, mu=None, sigma=None):
    """Dispatch on *kind* for a :class:`~nzdetect.estimators.SampleSet`."""
    kind = DetectorKind(kind)
    x, sec = sample_set.test, sample_set.secondary
    if kind is DetectorKind.MF:
        return mf(x, p, mu, sigma)
    if kind is DetectorKind.NMF:
        return nmf(x, p, mu, sigma)
    if kind is DetectorKind.AMF_KNOWN_MEAN:
        return amf(x, p, sec, mu=_required(mu))
    if kind is DetectorKind.AMF:
        return amf(x, p, sec)
    if kind is DetectorKind.ANMF_KNOWN_MEAN:
        return anmf(x, p, sec, mu=_required(mu))
    if kind is DetectorKind.ANMF:
        return anmf(x, p, sec)
    if kind is DetectorKind.KELLY_KNOWN_MEAN:
        return kelly_known_mean(x, p, _required(mu), sec)
    if kind is DetectorKind.KELLY_PLUGIN:
        return kelly_plugin(x, p, sec)
    return kelly_generalized(x, p, sec)


def _required(mu):
    if mu is None:
        raise DomainError("this detector needs the known background mean")
    return mu


def batch_statistics(kind, x, p, secondary=None, mu=None, sigma=None):
    """Vectorized statistics for a stack of trials or pixels.

    Parameters
    ----------
    kind : DetectorKind
    x : ndarray, shape (T, m)
        Test vectors.
    p : ndarray, shape (m,) or (T, m)
        Steering vector(s).
    secondary : ndarray, shape (T, N, m)
        Secondary data per trial; unused by MF and NMF.
    mu : ndarray, shape (m,) or (T, m), optional
        Known mean for the known-mean detectors.
    sigma : ndarray, shape (m, m), optional
        True covariance for MF and NMF.

    Returns
    -------
    stat : ndarray, shape (T,)
        Statistic values; zero where the flag is not ``FLAG_OK``.
    flags : ndarray of int8, shape (T,)
        ``FLAG_OK``, ``FLAG_SINGULAR`` (estimate not positive definite) or
        ``FLAG_UNDEFINED`` (0/0 normalized statistic).
    """
    kind = DetectorKind(kind)
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise DimensionError(f"test vectors must be a (T, m) array, got shape {x.shape}")
    t, m = x.shape
    p = np.broadcast_to(np.asarray(p, dtype=np.complex128), (t, m))
    if not np.all(np.any(p != 0, axis=-1)):
        raise DomainError("steering vector must be nonzero")

    if kind.uses_true_covariance:
        L = np.broadcast_to(cholesky(sigma), (t, m, m))
        ok = np.ones(t, dtype=bool)
        center = _required(mu)
        n = None
    else:
        secondary = np.asarray(secondary, dtype=np.complex128)
        n = secondary.shape[1]
        if kind is DetectorKind.KELLY_GENERALIZED:
            center = (x + secondary.sum(axis=1)) / (n + 1)
            w = batch_scatter(secondary, center)
        else:
            center = _required(mu) if kind.uses_known_mean else secondary.mean(axis=1)
            w = batch_scatter(secondary, center) / n
        L, ok, _ = batch_cholesky(w, rtol=SINGULAR_RTOL)
        if n < kind.min_secondary(m):
            ok[:] = False

    d = x - np.asarray(center)
    z = forward_substitution(L, np.stack([p, d], axis=-1))
    zp, zd = z[..., 0], z[..., 1]
    q = np.sum(zp.conj() * zd, axis=-1)
    pp = np.sum(zp.real ** 2 + zp.imag ** 2, axis=-1)
    qq = np.sum(zd.real ** 2 + zd.imag ** 2, axis=-1)
    num = (q.real ** 2 + q.imag ** 2) / pp

    flags = np.where(ok, FLAG_OK, FLAG_SINGULAR).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind in (DetectorKind.MF, DetectorKind.AMF, DetectorKind.AMF_KNOWN_MEAN):
            stat = num
        elif kind in (DetectorKind.NMF, DetectorKind.ANMF, DetectorKind.ANMF_KNOWN_MEAN):
            undefined = ok & (qq == 0.0)
            flags[undefined] = FLAG_UNDEFINED
            stat = num / qq
        elif kind is DetectorKind.KELLY_GENERALIZED:
            stat = (n + 1) / n * num / (1.0 + qq)
        else:
            stat = num / (n + qq)
    stat = np.where(flags == FLAG_OK, stat, 0.0)
    good = flags == FLAG_OK
    if not np.all(np.isfinite(stat[good])) or np.any(stat[good] < 0):
        raise ArithmeticError(f"{kind.value} produced non-finite or negative statistics")
    return stat, flags
