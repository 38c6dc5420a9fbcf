"""Hyperspectral processing: complexification, band management, sliding-window detection.

The intended chain for a real radiance cube is
``hilbert_complexify -> downsample_bands(2) -> select_bands(start, 6)``
followed by :func:`sliding_window_detect`; each stage is usable on its own.
"""

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps_signal
from scipy import stats as sps

from .cgauss import RngStream, as_vector, build_toeplitz_covariance, cholesky
from .cube import HyperCube, save_cube
from .detectors import FLAG_OK, DetectorKind, batch_statistics
from .errors import DimensionError, DomainError
from .montecarlo import FaCurve, binomial_interval
from .pfa import PfaLaw

__all__ = [
    "PixelFlag",
    "WindowSpec",
    "DetectionMap",
    "QQData",
    "hilbert_complexify",
    "downsample_bands",
    "select_bands",
    "complexify_pipeline",
    "generate_gaussian_cube",
    "sliding_window_detect",
    "empirical_pfa_from_map",
    "qq_plot_data",
]


class PixelFlag(enum.IntEnum):
    OK = 0
    BOUNDARY = 1
    DEGENERATE = 2


def hilbert_complexify(cube):
    """Analytic signal of every pixel spectrum (DFT along the band axis).

    The real part of the output reproduces the input up to float32 storage.
    """
    if cube.is_complex:
        raise DomainError("hilbert_complexify expects a real cube")
    if cube.bands < 2:
        raise DomainError(f"need at least 2 bands for a spectral Hilbert transform, got {cube.bands}")
    analytic = sps_signal.hilbert(cube.values.astype(np.float64), axis=0)
    return HyperCube(analytic.astype(np.complex64))


def downsample_bands(cube, factor=2):
    """Keep bands ``0, factor, 2*factor, ...``."""
    factor = int(factor)
    if factor < 1:
        raise DomainError(f"downsampling factor must be >= 1, got {factor}")
    if factor > 1 and factor >= cube.bands:
        raise DomainError(f"downsampling factor {factor} leaves at most one of {cube.bands} bands")
    if factor == 1:
        return cube
    return HyperCube(cube.values[::factor])


def select_bands(cube, start, count):
    """Contiguous slice of *count* bands starting at *start*."""
    start, count = int(start), int(count)
    if start < 0 or count < 1 or start + count > cube.bands:
        raise DomainError(f"band range [{start}, {start + count}) outside 0..{cube.bands}")
    return HyperCube(cube.values[start:start + count])


def complexify_pipeline(cube, factor=2, start=0, count=6):
    """Hilbert transform, then band decimation, then a contiguous band selection."""
    return select_bands(downsample_bands(hilbert_complexify(cube), factor), start, count)


def generate_gaussian_cube(width, height, m, rho, mu, seed, complex_valued=True):
    """Synthetic cube whose pixel spectra are i.i.d. Gaussian with Toeplitz covariance.

    Parameters
    ----------
    width, height : int
        Image size in pixels.
    m : int
        Number of bands.
    rho : float
        Toeplitz correlation parameter, ``Sigma[i, j] = rho^|i-j|``.
    mu : complex or array_like
        Mean spectrum (scalar is broadcast to all bands).
    seed : int
    complex_valued : bool
        Circular complex normal spectra (complex64 cube) or real normal
        spectra with mean ``Re(mu)`` (float32 cube).
    """
    width, height, m = int(width), int(height), int(m)
    if min(width, height, m) < 1:
        raise DomainError("width, height and bands must be positive")
    mu = np.broadcast_to(np.asarray(mu, dtype=np.complex128), (m,))
    chol = cholesky(build_toeplitz_covariance(rho, m))
    stream = RngStream(int(seed), 0)
    count = width * height
    if complex_valued:
        w = stream.standard_complex_normal((count, m))
        pix = mu + w @ chol.T
    else:
        w = stream.generator.standard_normal((count, m))
        pix = mu.real + w @ chol.real.T
    return HyperCube(np.ascontiguousarray(pix.T.reshape(m, height, width)))


@dataclass(frozen=True)
class WindowSpec:
    size: int = 5
    exclude_center: bool = True

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 3 or self.size % 2 == 0:
            raise DomainError(f"window size must be an odd integer >= 3, got {self.size}")

    @property
    def half(self):
        return self.size // 2

    @property
    def n_secondary(self):
        return self.size ** 2 - (1 if self.exclude_center else 0)

    def offsets(self):
        """Row/column offsets of the secondary pixels, row-major."""
        h = self.half
        out = [(dr, dc) for dr in range(-h, h + 1) for dc in range(-h, h + 1)]
        if self.exclude_center:
            out.remove((0, 0))
        return out


@dataclass
class DetectionMap:
    """Per-pixel statistic and status flag, both ``(height, width)``."""

    statistic: np.ndarray
    flags: np.ndarray
    detector: DetectorKind
    window: WindowSpec
    bands: int

    @property
    def height(self):
        return self.statistic.shape[0]

    @property
    def width(self):
        return self.statistic.shape[1]

    @property
    def n_secondary(self):
        return self.window.n_secondary

    @property
    def ok_mask(self):
        return self.flags == PixelFlag.OK

    def thinned_mask(self, step):
        """Pixels on a lattice of spacing *step* anchored at the first interior pixel."""
        mask = np.zeros(self.statistic.shape, dtype=bool)
        h = self.window.half
        mask[h::step, h::step] = True
        return mask

    def ok_statistics(self, thin=1):
        mask = self.ok_mask
        if thin > 1:
            mask &= self.thinned_mask(thin)
        return self.statistic[mask]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "statistic", "flag"])
            for r in range(self.height):
                for c in range(self.width):
                    w.writerow([r, c, repr(float(self.statistic[r, c])), PixelFlag(self.flags[r, c]).name.lower()])

    def to_cube(self, path):
        """Single-band float32 cube of the statistic (non-ok pixels hold 0)."""
        save_cube(HyperCube(self.statistic[None].astype(np.float32)), path)


def _detect_rows(job):
    pix, rows, kind, p, offsets, half, mu, sigma = job
    height, width, m = pix.shape
    cols = np.arange(half, width - half)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    x = pix[rr, cc]
    secondary = np.stack([pix[rr + dr, cc + dc] for dr, dc in offsets], axis=1)
    stat, flags = batch_statistics(kind, x, p, secondary, mu=mu, sigma=sigma)
    return rows, stat.reshape(len(rows), len(cols)), flags.reshape(len(rows), len(cols))


def sliding_window_detect(cube, detector, steering, window=WindowSpec(), mu=None, sigma=None,
                          workers=1, rows_per_block=32):
    """Run an adaptive detector at every interior pixel of *cube*.

    The test vector is the pixel spectrum; the secondary data are the
    spectra of the window neighbors.  Pixels closer than ``size // 2`` to the
    border are flagged ``BOUNDARY``; pixels whose estimate is singular (or
    whose normalized statistic is 0/0) are flagged ``DEGENERATE`` with
    statistic 0.

    Parameters
    ----------
    mu, sigma : array_like, optional
        Known mean (for the known-mean detectors) and covariance (MF, NMF).
    workers : int
        Processes used over row blocks; the map does not depend on it.
    """
    kind = DetectorKind(detector)
    m = cube.bands
    p = as_vector(steering, "steering vector")
    if p.size != m:
        raise DimensionError(f"steering vector has {p.size} entries, cube has {m} bands")
    if not np.any(p):
        raise DomainError("steering vector must be nonzero")
    n = window.n_secondary
    if n < kind.min_secondary(m):
        raise DomainError(
            f"{window.size}x{window.size} window gives N={n} secondary pixels; "
            f"{kind.value} needs N >= {kind.min_secondary(m)} for {m} bands"
        )
    pix = cube.pixels().astype(np.complex128)
    height, width = cube.height, cube.width
    h = window.half
    statistic = np.zeros((height, width))
    flags = np.full((height, width), PixelFlag.BOUNDARY, dtype=np.uint8)
    interior_rows = np.arange(h, height - h)
    if interior_rows.size and width > 2 * h:
        blocks = [interior_rows[i:i + rows_per_block] for i in range(0, interior_rows.size, rows_per_block)]
        jobs = [(pix, rows, kind, p, window.offsets(), h, mu, sigma) for rows in blocks]
        if workers is not None and workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_detect_rows, jobs))
        else:
            results = [_detect_rows(j) for j in jobs]
        for rows, stat, fl in results:
            statistic[rows, h:width - h] = stat
            flags[rows, h:width - h] = np.where(fl == FLAG_OK, PixelFlag.OK, PixelFlag.DEGENERATE)
    return DetectionMap(statistic, flags, kind, window, m)


def empirical_pfa_from_map(dmap, thresholds, thin=1, level=0.99):
    """Exceedance fraction over ok pixels, with the theoretical law when one exists.

    Parameters
    ----------
    thin : int
        Use only pixels on a lattice of this spacing; a spacing equal to the
        window size gives non-overlapping windows, hence independent
        statistics on an i.i.d. cube.
    """
    values = dmap.ok_statistics(thin)
    if values.size == 0:
        raise DomainError("the detection map has no ok pixels")
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.ndim != 1 or thresholds.size == 0:
        raise DomainError("thresholds must be a nonempty 1-D list")
    srt = np.sort(values)
    emp = (srt.size - np.searchsorted(srt, thresholds, side="right")) / srt.size
    theo = None
    kind = dmap.detector
    if kind is not DetectorKind.KELLY_GENERALIZED:
        law = PfaLaw(kind, dmap.bands, None if kind.uses_true_covariance else dmap.n_secondary)
        theo = law.pfa(np.clip(thresholds, law.domain.lo, np.nextafter(law.domain.hi, 0)))
        lo, hi = binomial_interval(theo, srt.size, level)
    else:
        lo, hi = np.zeros_like(emp), np.ones_like(emp)
        for i, e in enumerate(emp):
            ci = sps.binomtest(int(round(e * srt.size)), srt.size).proportion_ci(level, method="wilson")
            lo[i], hi[i] = ci.low, ci.high
    return FaCurve(
        thresholds=thresholds,
        empirical_pfa=emp,
        theoretical_pfa=theo,
        trials=int(srt.size),
        ci_lo=lo,
        ci_hi=hi,
        detector=kind,
        samples=values,
        pfa_floor=1.0 / srt.size,
    )


@dataclass(frozen=True)
class QQData:
    """Normal Q-Q pairs with the least-squares reference line."""

    normal_quantiles: np.ndarray
    sample_quantiles: np.ndarray
    slope: float
    intercept: float
    correlation: float
    degenerate: bool

    def pairs(self):
        return list(zip(self.normal_quantiles.tolist(), self.sample_quantiles.tolist()))


def qq_plot_data(cube, band, region=None):
    """Q-Q data of one band over a rectangular region.

    Parameters
    ----------
    band : int
    region : tuple (row0, col0, height, width), optional
        Defaults to the whole image.

    Notes
    -----
    Plotting positions are ``(i - 0.5) / n``.  A constant region has no
    spread; it is returned with ``degenerate=True``, zero slope and NaN
    correlation.
    """
    if cube.is_complex:
        raise DomainError("Q-Q data are computed on a real cube")
    band = int(band)
    if not 0 <= band < cube.bands:
        raise DomainError(f"band {band} outside 0..{cube.bands - 1}")
    r0, c0, h, w = region if region is not None else (0, 0, cube.height, cube.width)
    if r0 < 0 or c0 < 0 or h < 1 or w < 1 or r0 + h > cube.height or c0 + w > cube.width:
        raise DomainError(f"region {(r0, c0, h, w)} outside the {cube.height}x{cube.width} image")
    data = np.sort(cube.values[band, r0:r0 + h, c0:c0 + w].astype(np.float64).ravel())
    n = data.size
    if n < 3:
        raise DomainError(f"Q-Q data need at least 3 pixels, region has {n}")
    q = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    if data[0] == data[-1]:
        return QQData(q, data, 0.0, float(data[0]), math.nan, True)
    slope, intercept = np.polyfit(q, data, 1)
    corr = float(np.corrcoef(q, data)[0, 1])
    return QQData(q, data, float(slope), float(intercept), corr, False)
