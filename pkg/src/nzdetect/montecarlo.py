"""Reproducible Monte-Carlo harness: false-alarm curves, Pd curves, calibration.

Trials are split into fixed-size blocks.  Block ``b`` draws from
``RngStream(seed, namespace + b)``, so the statistic sample is a function of
the configuration alone: running the blocks serially or over any number of
worker processes gives bit-identical results.

Stream namespaces (added to the block index):

* ``0``        H0 trials (false-alarm curves, KS comparisons)
* ``1 << 32``  H1 trials (Pd curves)
* ``2 << 32``  H0 trials used to calibrate the generalized Kelly threshold
* ``3 << 32``  bootstrap resampling of calibrations

SNR convention: ``SNR = |alpha|^2 p^H Sigma^-1 p`` (whitened signal energy);
alpha is real and positive.
"""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .cgauss import RngStream, build_toeplitz_covariance, cholesky, forward_substitution
from .detectors import FLAG_OK, DetectorKind, batch_statistics
from .errors import DomainError, InsufficientTrialsError
from .pfa import PfaLaw, invert_threshold

__all__ = [
    "ExperimentConfig",
    "FaCurve",
    "PdCurve",
    "Calibration",
    "binomial_interval",
    "default_threshold_grid",
    "simulate_h0_statistics",
    "simulate_fa_curve",
    "simulate_pd_curve",
    "calibrate_threshold_empirical",
    "ks_compare",
    "max_monotonicity_violation",
]

H0_STREAMS = 0
H1_STREAMS = 1 << 32
CALIBRATION_STREAMS = 2 << 32
BOOTSTRAP_STREAM = 3 << 32

DEFAULT_BLOCK_SIZE = 8192


def _complex(v):
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return complex(v)


def _complex_list(v):
    if v is None:
        return None
    return [_complex(t) for t in v]


@dataclass
class ExperimentConfig:
    """One simulation setup.

    ``mu`` is a complex scalar broadcast to every coordinate or a list of
    ``m`` complex values.  ``steering`` defaults to the all-ones vector
    scaled to unit norm.  In JSON, complex numbers are ``[re, im]`` pairs
    and the secondary-data count is spelled ``N``.
    """

    m: int = 5
    n: int = 10
    rho: float = 0.4
    mu: object = 3 + 4j
    trials: int = 100_000
    detector: DetectorKind = DetectorKind.AMF
    seed: int = 0
    threshold_grid: list = None
    snr_grid_db: list = None
    steering: list = None
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        self.detector = DetectorKind(self.detector)
        self.m, self.n, self.trials, self.seed = int(self.m), int(self.n), int(self.trials), int(self.seed)
        self.block_size = int(self.block_size)
        if self.m < 1:
            raise DomainError(f"m must be positive, got {self.m}")
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if self.block_size < 1:
            raise DomainError(f"block_size must be >= 1, got {self.block_size}")
        n_min = max(self.detector.min_secondary(self.m), 1)
        if self.n < n_min:
            raise DomainError(f"{self.detector.value} needs N >= {n_min} for m={self.m}, got N={self.n}")
        if not abs(self.rho) < 1:
            raise DomainError(f"|rho| must be < 1, got {self.rho}")
        if isinstance(self.mu, (list, tuple, np.ndarray)) and not _is_pair(self.mu, self.m):
            self.mu = [_complex(v) for v in self.mu]
            if len(self.mu) != self.m:
                raise DomainError(f"mu has {len(self.mu)} entries, expected {self.m}")
        else:
            self.mu = _complex(self.mu)
        self.steering = _complex_list(self.steering)
        if self.steering is not None and len(self.steering) != self.m:
            raise DomainError(f"steering vector has {len(self.steering)} entries, expected {self.m}")
        for name in ("threshold_grid", "snr_grid_db"):
            grid = getattr(self, name)
            if grid is None:
                continue
            grid = [float(v) for v in grid]
            if not grid:
                raise DomainError(f"{name} must be nonempty")
            if any(b < a for a, b in zip(grid, grid[1:])):
                raise DomainError(f"{name} must be sorted ascending")
            setattr(self, name, grid)

    def mean_vector(self):
        if isinstance(self.mu, list):
            return np.array(self.mu, dtype=np.complex128)
        return np.full(self.m, self.mu, dtype=np.complex128)

    def covariance(self):
        return build_toeplitz_covariance(self.rho, self.m)

    def steering_vector(self):
        if self.steering is None:
            return np.ones(self.m, dtype=np.complex128) / math.sqrt(self.m)
        p = np.array(self.steering, dtype=np.complex128)
        if not np.any(p):
            raise DomainError("steering vector must be nonzero")
        return p

    def law(self):
        """Closed-form PFA law of the configured detector, or None for the generalized Kelly."""
        if self.detector is DetectorKind.KELLY_GENERALIZED:
            return None
        return PfaLaw(self.detector, self.m, None if self.detector.uses_true_covariance else self.n)

    def to_dict(self):
        d = asdict(self)
        d["N"] = d.pop("n")
        d["detector"] = self.detector.value
        d["mu"] = [[v.real, v.imag] for v in self.mu] if isinstance(self.mu, list) else [self.mu.real, self.mu.imag]
        d["steering"] = None if self.steering is None else [[v.real, v.imag] for v in self.steering]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "N" in d:
            d["n"] = d.pop("N")
        mu = d.get("mu")
        if isinstance(mu, list) and mu and isinstance(mu[0], list):
            d["mu"] = [_complex(v) for v in mu]
        elif mu is not None:
            d["mu"] = _complex(mu)
        return cls(**d)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _is_pair(v, m):
    # [re, im] pair encoding a scalar mean, as opposed to an m-vector
    return m != 2 and len(v) == 2 and all(isinstance(t, (int, float)) for t in v)


def binomial_interval(p, n, level=0.99):
    """Central binomial interval for the fraction of successes in *n* trials at rate *p*."""
    p = np.asarray(p, dtype=float)
    alpha = 1.0 - level
    lo = sps.binom.ppf(alpha / 2, n, p) / n
    hi = sps.binom.ppf(1 - alpha / 2, n, p) / n
    return lo, hi


def _wilson(k, n, level):
    lo, hi = [], []
    for kk in np.atleast_1d(k):
        ci = sps.binomtest(int(kk), int(n)).proportion_ci(confidence_level=level, method="wilson")
        lo.append(ci.low)
        hi.append(ci.high)
    return np.array(lo), np.array(hi)


@dataclass
class FaCurve:
    """Empirical (and, when available, theoretical) PFA versus threshold.

    ``ci_lo``/``ci_hi`` bound the 99% binomial interval: around the
    theoretical value when there is one, otherwise a Wilson interval around
    the empirical value.
    """

    thresholds: np.ndarray
    empirical_pfa: np.ndarray
    theoretical_pfa: np.ndarray
    trials: int
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    detector: DetectorKind = None
    samples: np.ndarray = field(default=None, repr=False)
    redraws: int = 0
    pfa_floor: float = None

    @property
    def ci_halfwidth(self):
        return 0.5 * (self.ci_hi - self.ci_lo)

    @property
    def expected_counts(self):
        if self.theoretical_pfa is None:
            return None
        return self.theoretical_pfa * self.trials

    def outside_ci(self, min_expected=20):
        """Indices of grid points whose empirical PFA falls outside the CI.

        Points with fewer than *min_expected* expected exceedances are
        skipped.  Returns ``(failing_indices, checked_indices)``.
        """
        if self.theoretical_pfa is None:
            raise DomainError("no theoretical curve to compare against")
        checked = np.flatnonzero(self.expected_counts >= min_expected)
        bad = [i for i in checked if not self.ci_lo[i] <= self.empirical_pfa[i] <= self.ci_hi[i]]
        return np.array(bad, dtype=int), checked

    def to_rows(self):
        theo = self.theoretical_pfa
        for i, t in enumerate(self.thresholds):
            yield [
                repr(float(t)),
                repr(float(self.empirical_pfa[i])),
                "" if theo is None else repr(float(theo[i])),
                repr(float(self.ci_lo[i])),
                repr(float(self.ci_hi[i])),
            ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "empirical", "theoretical", "ci_lo", "ci_hi"])
            w.writerows(self.to_rows())

    def to_dict(self):
        return {
            "detector": None if self.detector is None else self.detector.value,
            "trials": self.trials,
            "redraws": self.redraws,
            "pfa_floor": self.pfa_floor,
            "thresholds": [float(v) for v in self.thresholds],
            "empirical_pfa": [float(v) for v in self.empirical_pfa],
            "theoretical_pfa": None if self.theoretical_pfa is None else [float(v) for v in self.theoretical_pfa],
            "ci_lo": [float(v) for v in self.ci_lo],
            "ci_hi": [float(v) for v in self.ci_hi],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class PdCurve:
    snr_db: np.ndarray
    pd: np.ndarray
    pfa_target: float
    calibrated_threshold: float
    trials: int
    detector: DetectorKind = None
    threshold_ci: tuple = None

    @property
    def standard_error(self):
        return np.sqrt(self.pd * (1 - self.pd) / self.trials)

    def to_csv(self, path):
        lo, hi = _wilson(np.rint(self.pd * self.trials), self.trials, 0.99)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["snr_db", "empirical", "theoretical", "ci_lo", "ci_hi"])
            for i, s in enumerate(self.snr_db):
                w.writerow([repr(float(s)), repr(float(self.pd[i])), "", repr(float(lo[i])), repr(float(hi[i]))])

    def to_dict(self):
        return {
            "detector": None if self.detector is None else self.detector.value,
            "trials": self.trials,
            "pfa_target": self.pfa_target,
            "calibrated_threshold": self.calibrated_threshold,
            "threshold_ci": None if self.threshold_ci is None else list(self.threshold_ci),
            "snr_db": [float(v) for v in self.snr_db],
            "pd": [float(v) for v in self.pd],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass(frozen=True)
class Calibration:
    threshold: float
    ci_lo: float
    ci_hi: float
    trials: int
    pfa_target: float


def default_threshold_grid(kind, m, n, points=26):
    """Thresholds whose theoretical PFA runs over 1 ... 1e-5 (log-spaced).

    The generalized Kelly has no law; its grid is linear over most of
    ``[0, (N+1)/N)``.
    """
    kind = DetectorKind(kind)
    if kind is DetectorKind.KELLY_GENERALIZED:
        return np.linspace(0.0, 0.98 * (n + 1) / n, points)
    law = PfaLaw(kind, m, None if kind.uses_true_covariance else n)
    if kind is DetectorKind.NMF and m == 1:
        return np.linspace(0.0, 0.98, points)
    return np.array([invert_threshold(law, p) for p in np.logspace(0.0, -5.0, points)])


def _plan(trials, block_size):
    nblocks = -(-trials // block_size)
    return [(b, min(block_size, trials - b * block_size)) for b in range(nblocks)]


def _map_blocks(func, jobs, workers):
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, jobs))


class _Model:
    """Background model and per-block drawing shared by H0 and H1 simulations."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.mu = cfg.mean_vector()
        self.sigma = cfg.covariance()
        self.chol = cholesky(self.sigma)
        self.p = cfg.steering_vector()

    def draw(self, rng, count):
        w = rng.standard_complex_normal((count, self.cfg.n + 1, self.cfg.m))
        data = self.mu + w @ self.chol.T
        return data[:, 0, :], data[:, 1:, :]

    def statistics(self, x, secondary):
        kind = self.cfg.detector
        return batch_statistics(kind, x, self.p, secondary, mu=self.mu, sigma=self.sigma)


def _evaluate_with_redraw(model, rng, x, secondary, permute):
    """Statistics for one block; trials with singular/undefined estimates are redrawn."""
    redraws = 0
    if permute:
        x, secondary = _swap_test(rng, x, secondary)
    stat, flags = model.statistics(x, secondary)
    bad = np.flatnonzero(flags != FLAG_OK)
    while bad.size:
        redraws += bad.size
        nx, ns = model.draw(rng, bad.size)
        if permute:
            nx, ns = _swap_test(rng, nx, ns)
        x[bad], secondary[bad] = nx, ns
        s, f = model.statistics(nx, ns)
        stat[bad] = s
        bad = bad[f != FLAG_OK]
    return stat, redraws


def _swap_test(rng, x, secondary):
    """Exchange each test vector with a uniformly chosen secondary vector."""
    t, n, _ = secondary.shape
    j = rng.generator.integers(0, n, size=t)
    rows = np.arange(t)
    x, secondary = x.copy(), secondary.copy()
    swapped = secondary[rows, j].copy()
    secondary[rows, j] = x
    return swapped, secondary


def _h0_block(job):
    cfg, namespace, block, count, permute = job
    model = _Model(cfg)
    rng = RngStream(cfg.seed, namespace + block)
    x, secondary = model.draw(rng, count)
    return _evaluate_with_redraw(model, rng, x, secondary, permute)


def simulate_h0_statistics(cfg, workers=1, permute=False, namespace=H0_STREAMS):
    """Draw ``cfg.trials`` H0 statistics.

    Parameters
    ----------
    permute : bool
        Swap the test vector with a random secondary vector before
        evaluation (checks exchangeability of the generalized Kelly).

    Returns
    -------
    samples : ndarray, shape (trials,)
    redraws : int
        Number of trials redrawn because the estimate was singular or the
        statistic undefined (probability zero under the model).
    """
    jobs = [(cfg, namespace, b, c, permute) for b, c in _plan(cfg.trials, cfg.block_size)]
    results = _map_blocks(_h0_block, jobs, workers)
    samples = np.concatenate([r[0] for r in results])
    return samples, int(sum(r[1] for r in results))


def _exceedance(samples, thresholds):
    srt = np.sort(samples)
    return (srt.size - np.searchsorted(srt, thresholds, side="right")) / srt.size


def simulate_fa_curve(cfg, workers=1, level=0.99):
    """Empirical false-alarm curve over ``cfg.threshold_grid`` with theoretical overlay."""
    samples, redraws = simulate_h0_statistics(cfg, workers)
    thresholds = np.asarray(
        cfg.threshold_grid if cfg.threshold_grid is not None
        else default_threshold_grid(cfg.detector, cfg.m, cfg.n),
        dtype=float,
    )
    emp = _exceedance(samples, thresholds)
    law = cfg.law()
    if law is None:
        theo = None
        lo, hi = _wilson(np.rint(emp * cfg.trials), cfg.trials, level)
    else:
        dom = law.domain
        if np.any(thresholds < dom.lo) or np.any(thresholds >= dom.hi):
            raise DomainError(f"threshold grid leaves the domain [{dom.lo}, {dom.hi}) of {cfg.detector.value}")
        theo = law.pfa(thresholds)
        lo, hi = binomial_interval(theo, cfg.trials, level)
    return FaCurve(
        thresholds=thresholds,
        empirical_pfa=emp,
        theoretical_pfa=theo,
        trials=cfg.trials,
        ci_lo=lo,
        ci_hi=hi,
        detector=cfg.detector,
        samples=samples,
        redraws=redraws,
        pfa_floor=1.0 / cfg.trials,
    )


def _h1_block(job):
    cfg, block, count, alphas = job
    model = _Model(cfg)
    rng = RngStream(cfg.seed, H1_STREAMS + block)
    noise_x, secondary = model.draw(rng, count)
    out = np.empty((len(alphas), count))
    for k, a in enumerate(alphas):
        stat, flags = model.statistics(noise_x + a * model.p, secondary)
        # Singular/undefined cases have probability zero; count them as misses.
        out[k] = np.where(flags == FLAG_OK, stat, 0.0)
    return out


def signal_amplitude(snr_db, p, sigma):
    """Real amplitude giving ``|alpha|^2 p^H Sigma^-1 p = 10^(snr_db/10)``."""
    z = forward_substitution(cholesky(sigma), p)
    energy = float(np.vdot(z, z).real)
    return math.sqrt(10.0 ** (snr_db / 10.0) / energy)


def simulate_pd_curve(cfg, pfa_target, workers=1):
    """Detection probability versus SNR at a fixed false-alarm probability.

    The threshold comes from the closed-form law, or from
    :func:`calibrate_threshold_empirical` for the generalized Kelly.  The
    same noise realizations are reused at every SNR point (common random
    numbers), which keeps the curve smooth without changing its marginal
    distribution at any single point.
    """
    if cfg.snr_grid_db is None:
        raise DomainError("simulate_pd_curve needs snr_grid_db")
    law = cfg.law()
    threshold_ci = None
    if law is None:
        cal = calibrate_threshold_empirical(cfg, pfa_target, workers)
        threshold = cal.threshold
        threshold_ci = (cal.ci_lo, cal.ci_hi)
    else:
        threshold = invert_threshold(law, pfa_target)
    model = _Model(cfg)
    alphas = [signal_amplitude(s, model.p, model.sigma) for s in cfg.snr_grid_db]
    jobs = [(cfg, b, c, alphas) for b, c in _plan(cfg.trials, cfg.block_size)]
    blocks = _map_blocks(_h1_block, jobs, workers)
    stats_ = np.concatenate(blocks, axis=1)
    pd = np.mean(stats_ > threshold, axis=1)
    return PdCurve(
        snr_db=np.asarray(cfg.snr_grid_db, dtype=float),
        pd=pd,
        pfa_target=float(pfa_target),
        calibrated_threshold=float(threshold),
        trials=cfg.trials,
        detector=cfg.detector,
        threshold_ci=threshold_ci,
    )


def calibrate_threshold_empirical(cfg, pfa_target, workers=1, n_boot=100, level=0.95, samples=None):
    """Empirical ``(1 - pfa)``-quantile of the H0 statistic with a bootstrap CI.

    Parameters
    ----------
    samples : ndarray, optional
        Precomputed H0 statistics; drawn from the calibration stream
        namespace when omitted.

    Raises
    ------
    InsufficientTrialsError
        When fewer than ``100 / pfa_target`` trials are available.
    """
    p = float(pfa_target)
    if not 0.0 < p <= 1.0:
        raise DomainError(f"target PFA must lie in (0, 1], got {pfa_target}")
    need = math.ceil(100.0 / p - 1e-9)
    trials = cfg.trials if samples is None else len(samples)
    if trials < need:
        raise InsufficientTrialsError(f"calibrating PFA={p} needs at least {need} trials, got {trials}")
    if p == 1.0:
        return Calibration(0.0, 0.0, 0.0, trials, p)
    if samples is None:
        samples, _ = simulate_h0_statistics(cfg, workers, namespace=CALIBRATION_STREAMS)
    samples = np.asarray(samples, dtype=float)
    q = 1.0 - p
    threshold = float(np.quantile(samples, q))
    gen = RngStream(cfg.seed, BOOTSTRAP_STREAM).generator
    boots = np.empty(n_boot)
    for i in range(n_boot):
        boots[i] = np.quantile(samples[gen.integers(0, samples.size, size=samples.size)], q)
    alpha = 1.0 - level
    lo, hi = np.quantile(boots, [alpha / 2, 1 - alpha / 2])
    return Calibration(threshold, float(lo), float(hi), trials, p)


def ks_compare(curve_a, curve_b):
    """Two-sample Kolmogorov-Smirnov p-value between the statistic samples of two curves."""
    if not np.array_equal(np.asarray(curve_a.thresholds), np.asarray(curve_b.thresholds)):
        raise DomainError("curves were evaluated on different threshold grids")
    if curve_a.samples is None or curve_b.samples is None:
        raise DomainError("curves carry no statistic samples")
    return float(sps.ks_2samp(curve_a.samples, curve_b.samples).pvalue)


def max_monotonicity_violation(curve):
    """Largest drop of Pd between any lower and higher SNR point, in standard errors."""
    pd = np.asarray(curve.pd)
    se = np.maximum(curve.standard_error, 1.0 / curve.trials)
    worst = 0.0
    for i in range(pd.size):
        for j in range(i + 1, pd.size):
            drop = pd[i] - pd[j]
            if drop > 0:
                worst = max(worst, drop / math.hypot(se[i], se[j]))
    return worst
