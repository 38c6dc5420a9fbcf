"""False-alarm probability laws, the special functions behind them, and their inverses.

Every law maps a threshold ``lambda`` to ``P(statistic > lambda | H0)`` and
depends only on the dimension ``m`` and the number of secondary vectors
``N``.  The Gauss hypergeometric function is evaluated through its Euler
integral with adaptive Gauss-Kronrod quadrature; Gamma-function ratios are
formed from ``lgamma`` differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from .detectors import DetectorKind
from .errors import DomainError
from .quadrature import gauss_kronrod

__all__ = [
    "hyp2f1",
    "pfa_mf",
    "pfa_amf_known_mean",
    "pfa_amf_unknown_mean",
    "pfa_kelly_known_mean",
    "pfa_kelly_plugin",
    "pfa_nmf",
    "pfa_anmf_known_mean",
    "pfa_anmf_unknown_mean",
    "PfaLaw",
    "ThresholdDomain",
    "invert_threshold",
    "lambda_to_eta",
    "eta_to_lambda",
    "eta_lambda_transform",
]

# Internal quadrature targets, tighter than the 1e-11 promised to callers.
_EPSABS = 1e-14
_EPSREL = 1e-13
_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


def _peak_points(b, c):
    """Breakpoints around the bulk of the Beta(b, c-b) weight on [0, 1].

    Offsets from the mean grow geometrically in units of the standard
    deviation, so every subinterval spans a moderate dynamic range even in
    the long tail of a strongly skewed weight; otherwise a 15-point rule can
    miss tail mass that sits at the edge of a wide interval.
    """
    mean = b / c
    sd = math.sqrt(b * (c - b) / (c * c * (c + 1.0)))
    pts = {0.5, mean}
    k = 1.0
    while mean - k * sd > 0.0 or mean + k * sd < 1.0:
        for t in (mean - k * sd, mean + k * sd):
            if 0.0 < t < 1.0:
                pts.add(t)
        k *= 2.0
    return sorted(pts)


def _open_unit(t):
    # keep abscissae strictly inside (0, 1) once intervals shrink to rounding level
    return np.clip(t, _TINY, _ONE_MINUS)


def _euler_integral(a, b, c, z, log_scale=0.0):
    """``exp(log_scale) * 2F1(a, b; c; z)`` through the Euler integral, c > b > 0, z < 1.

    When ``b < 1`` (resp. ``c - b < 1``) the weight is singular at 0 (resp.
    1); the end piece is then integrated after the substitution
    ``t = u^(1/b)`` (resp. ``1 - t = v^(1/(c-b))``), which absorbs the
    singular factor and leaves a smooth integrand.
    """
    log_norm = math.lgamma(c) - math.lgamma(b) - math.lgamma(c - b) + log_scale

    def log_rest(t):
        return log_norm - a * np.log1p(-t * z)

    def integrand(t):
        t = _open_unit(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(log_rest(t) + (b - 1.0) * np.log(t) + (c - b - 1.0) * np.log1p(-t))

    def left(u):
        t = _open_unit(u ** (1.0 / b))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(log_rest(t) + (c - b - 1.0) * np.log1p(-t)) / b

    def right(v):
        s = _open_unit(v ** (1.0 / (c - b)))
        t = 1.0 - s
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(log_rest(t) + (b - 1.0) * np.log(t)) / (c - b)

    pts = _peak_points(b, c)
    lo, hi = 0.0, 1.0
    total = 0.0
    if b < 1.0:
        lo = pts.pop(0)
        total += gauss_kronrod(left, 0.0, lo ** b, epsabs=_EPSABS, epsrel=_EPSREL)[0]
    if c - b < 1.0:
        hi = pts.pop()
        total += gauss_kronrod(right, 0.0, (1.0 - hi) ** (c - b), epsabs=_EPSABS, epsrel=_EPSREL)[0]
    total += gauss_kronrod(integrand, lo, hi, epsabs=_EPSABS, epsrel=_EPSREL, points=pts)[0]
    return total


def hyp2f1(a, b, c, z):
    """Gauss hypergeometric function for real arguments with z < 1.

    Evaluated as ``Gamma(c) / (Gamma(b) Gamma(c-b)) *
    int_0^1 t^(b-1) (1-t)^(c-b-1) (1-tz)^(-a) dt``.  The parameters may be
    given in either order of (a, b) since the function is symmetric in them;
    one of them must satisfy ``c > b > 0``.  The case ``b == c`` uses the
    binomial identity ``(1-z)^(-a)``.
    """
    a, b, c, z = float(a), float(b), float(c), float(z)
    if not all(math.isfinite(v) for v in (a, b, c, z)):
        raise DomainError("hyp2f1 arguments must be finite")
    if not z < 1.0:
        raise DomainError(f"hyp2f1 requires z < 1, got {z}")
    if z == 0.0 or a == 0.0 or b == 0.0:
        return 1.0
    if b == c:
        return (1.0 - z) ** (-a)
    if a == c:
        return (1.0 - z) ** (-b)
    if not c > b > 0.0:
        if c > a > 0.0:
            a, b = b, a
        else:
            raise DomainError(f"hyp2f1 Euler integral needs c > b > 0 (or c > a > 0), got a={a}, b={b}, c={c}")
    return _euler_integral(a, b, c, z)


def _check_lambda(lam, bounded):
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0.0:
        raise DomainError(f"threshold must be a finite nonnegative number, got {lam}")
    if bounded and lam >= 1.0:
        raise DomainError(f"threshold must lie in [0, 1), got {lam}")
    return lam


def _check_counts(n, m, n_min_offset, name):
    if int(m) != m or m < 1:
        raise DomainError(f"dimension m must be a positive integer, got {m}")
    if int(n) != n or n < m + n_min_offset:
        raise DomainError(f"{name} requires N >= m{'+%d' % n_min_offset if n_min_offset else ''}, got N={n}, m={m}")
    return int(n), int(m)


def pfa_mf(lam):
    """``exp(-lambda)``."""
    return math.exp(-_check_lambda(lam, False))


def pfa_amf_known_mean(lam, n, m):
    """``2F1(N-m+1, N-m+2; N+1; -lambda/N)``: AMF with SCM about a known mean."""
    lam = _check_lambda(lam, False)
    n, m = _check_counts(n, m, 0, "AMF (known mean)")
    return hyp2f1(n - m + 1, n - m + 2, n + 1, -lam / n)


def pfa_amf_unknown_mean(lam, n, m):
    """``2F1(N-m, N-m+1; N; -lambda'/(N-1))`` with ``lambda' = (N-1)/(N+1) lambda``.

    AMF with both the mean (sample mean) and covariance (SCM) estimated.
    """
    lam = _check_lambda(lam, False)
    n, m = _check_counts(n, m, 1, "AMF (estimated mean)")
    lam_p = (n - 1) / (n + 1) * lam
    return hyp2f1(n - m, n - m + 1, n, -lam_p / (n - 1))


def pfa_kelly_known_mean(lam, n, m):
    """``(1 - lambda)^(N-m+1)``."""
    lam = _check_lambda(lam, True)
    n, m = _check_counts(n, m, 0, "Kelly (known mean)")
    return (1.0 - lam) ** (n - m + 1)


def pfa_kelly_plugin(lam, n, m):
    """Kelly statistic with the sample mean plugged in.

    ``Gamma(N) / (Gamma(N-m+1) Gamma(m-1)) * int_0^1
    [1 + lambda/(1-lambda) (1 - u/(N+1))]^(m-N) u^(N-m) (1-u)^(m-2) du``,
    i.e. the survival function of a complex F(1, N-m) variable averaged over
    a complex Beta(N-m+1, m-1) loss factor.
    """
    lam = _check_lambda(lam, True)
    n, m = _check_counts(n, m, 1, "Kelly (plug-in mean)")
    if m < 2:
        raise DomainError("the plug-in Kelly law needs m >= 2")
    if lam == 0.0:
        return 1.0
    r = lam / (1.0 - lam)
    log_norm = math.lgamma(n) - math.lgamma(n - m + 1) - math.lgamma(m - 1)

    def integrand(u):
        u = _open_unit(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_f = (
                log_norm
                + (m - n) * np.log1p(r * (1.0 - u / (n + 1)))
                + (n - m) * np.log(u)
                + (m - 2) * np.log1p(-u)
            )
        return np.exp(log_f)

    value, _ = gauss_kronrod(
        integrand, 0.0, 1.0, epsabs=_EPSABS, epsrel=_EPSREL, points=_peak_points(n - m + 1, n)
    )
    return value


def pfa_nmf(lam, m):
    """``(1 - lambda)^(m-1)``."""
    lam = _check_lambda(lam, True)
    if int(m) != m or m < 1:
        raise DomainError(f"dimension m must be a positive integer, got {m}")
    return (1.0 - lam) ** (int(m) - 1)


def pfa_anmf_known_mean(lam, n, m):
    """``(1-lambda)^(a-1) 2F1(a, a-1; b-1; lambda)`` with ``a = N-m+2``, ``b = N+2``.

    The prefactor is folded into the Euler integrand so that neither factor
    overflows as lambda approaches 1.
    """
    lam = _check_lambda(lam, True)
    n, m = _check_counts(n, m, 0, "ANMF (known mean)")
    a = n - m + 2
    b = n + 2
    if lam == 0.0:
        return 1.0
    return _euler_integral(a, a - 1, b - 1, lam, log_scale=(a - 1) * math.log1p(-lam))


def pfa_anmf_unknown_mean(lam, n, m):
    """ANMF with estimated mean: the known-mean law with N replaced by N-1."""
    _check_counts(n, m, 1, "ANMF (estimated mean)")
    return pfa_anmf_known_mean(lam, int(n) - 1, m)


_LAW_FUNCS = {
    DetectorKind.AMF_KNOWN_MEAN: pfa_amf_known_mean,
    DetectorKind.AMF: pfa_amf_unknown_mean,
    DetectorKind.KELLY_KNOWN_MEAN: pfa_kelly_known_mean,
    DetectorKind.KELLY_PLUGIN: pfa_kelly_plugin,
    DetectorKind.ANMF_KNOWN_MEAN: pfa_anmf_known_mean,
    DetectorKind.ANMF: pfa_anmf_unknown_mean,
}


@dataclass(frozen=True)
class ThresholdDomain:
    lo: float
    hi: float

    def contains(self, lam):
        return self.lo <= lam < self.hi


@dataclass(frozen=True)
class PfaLaw:
    """Closed-form PFA-threshold law of one detector.

    ``n`` is ignored (and may be ``None``) for MF and NMF.
    """

    kind: DetectorKind
    m: int
    n: int = None

    def __post_init__(self):
        kind = DetectorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DetectorKind.KELLY_GENERALIZED:
            raise DomainError("the generalized Kelly detector has no closed-form PFA; calibrate empirically")
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"dimension m must be a positive integer, got {self.m}")
        if not kind.uses_true_covariance:
            n_min = kind.min_secondary(self.m)
            if self.n is None or int(self.n) != self.n or self.n < n_min:
                raise DomainError(f"{kind.value} law needs N >= {n_min}, got N={self.n}")
            if kind is DetectorKind.KELLY_PLUGIN and self.m < 2:
                raise DomainError("the plug-in Kelly law needs m >= 2")

    @property
    def domain(self):
        return ThresholdDomain(0.0, self.kind.domain_max(self.n))

    def _scalar(self, lam):
        if self.kind is DetectorKind.MF:
            return pfa_mf(lam)
        if self.kind is DetectorKind.NMF:
            return pfa_nmf(lam, self.m)
        return _LAW_FUNCS[self.kind](lam, self.n, self.m)

    def pfa(self, lam):
        """PFA at threshold(s) *lam*; scalar in, float out; array in, array out."""
        if np.ndim(lam) == 0:
            return self._scalar(lam)
        lam = np.asarray(lam, dtype=float)
        return np.array([self._scalar(v) for v in lam.ravel()]).reshape(lam.shape)

    __call__ = pfa

    def log10_pfa(self, lam):
        return np.log10(self.pfa(lam))

    def invert(self, target):
        return invert_threshold(self, target)


def invert_threshold(law, target_pfa, rtol=1e-10):
    """Threshold whose PFA equals *target_pfa*.

    Closed-form inverses are used for MF, NMF and the known-mean Kelly law;
    every other law is inverted by bisection, which relies only on the law
    being continuous and strictly decreasing.

    Returns
    -------
    float
        lambda with ``|pfa(lambda) - target| / target`` below *rtol* (or the
        bracket collapsed to floating-point resolution).
    """
    if not isinstance(law, PfaLaw):
        raise TypeError("law must be a PfaLaw")
    p = float(target_pfa)
    if not 0.0 < p <= 1.0:
        raise DomainError(f"target PFA must lie in (0, 1], got {target_pfa}")
    if p == 1.0:
        return 0.0
    kind, m, n = law.kind, law.m, law.n
    if kind is DetectorKind.MF:
        return -math.log(p)
    if kind is DetectorKind.KELLY_KNOWN_MEAN:
        return 1.0 - p ** (1.0 / (n - m + 1))
    if kind is DetectorKind.NMF:
        if m == 1:
            raise DomainError("NMF with m = 1 has PFA identically 1; a smaller target is unreachable")
        return 1.0 - p ** (1.0 / (m - 1))

    lo = 0.0
    if math.isinf(law.domain.hi):
        hi = 1.0
        while law.pfa(hi) > p:
            lo, hi = hi, 2.0 * hi
            if hi > 1e12:
                raise DomainError(f"target PFA {p} is not reachable")
    else:
        hi = law.domain.hi
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            return mid
        val = law.pfa(mid)
        if abs(val - p) <= rtol * p:
            return mid
        if val > p:
            lo = mid
        else:
            hi = mid


def _eta_exponent(kind, n, m):
    kind = DetectorKind(kind)
    if kind in (DetectorKind.KELLY_KNOWN_MEAN, DetectorKind.KELLY_PLUGIN):
        return n + 1
    if kind in (DetectorKind.NMF, DetectorKind.ANMF, DetectorKind.ANMF_KNOWN_MEAN):
        return m
    if kind is DetectorKind.KELLY_GENERALIZED:
        return 1
    raise DomainError(f"{kind.value} has no likelihood-ratio threshold eta")


def lambda_to_eta(kind, lam, n, m):
    """Likelihood-ratio threshold ``eta = (1 - lambda)^(-k)``.

    ``k = N+1`` for the Kelly detectors, ``m`` for NMF/ANMF and ``1`` for the
    generalized Kelly (``lambda = (eta - 1) / eta``).
    """
    k = _eta_exponent(kind, n, m)
    lam = _check_lambda(lam, True)
    return (1.0 - lam) ** (-k)


def eta_to_lambda(kind, eta, n, m):
    """Inverse of :func:`lambda_to_eta`; requires ``eta >= 1``."""
    k = _eta_exponent(kind, n, m)
    eta = float(eta)
    if not eta >= 1.0 or not math.isfinite(eta):
        raise DomainError(f"eta must be a finite number >= 1, got {eta}")
    return -math.expm1(-math.log(eta) / k)


def eta_lambda_transform(kind, value, n, m, to="eta"):
    """Convert between lambda and eta in the direction given by *to*."""
    if to == "eta":
        return lambda_to_eta(kind, value, n, m)
    if to == "lambda":
        return eta_to_lambda(kind, value, n, m)
    raise ValueError(f"to must be 'eta' or 'lambda', got {to!r}")
