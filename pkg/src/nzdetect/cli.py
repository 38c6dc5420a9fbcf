"""nzdetect command-line interface.

Every subcommand writes its outputs under ``--out PREFIX`` (default
``nzdetect-<command>``) together with ``PREFIX.manifest.json`` (argv, resolved configuration, seed, version and
worker count).  Outputs never depend on the worker count.

Exit codes: 0 success, 1 usage error, 2 domain/precondition error, 3 I/O
error.  Failures print one line to stderr::

    nzdetect: error: code=<n> type=<ExceptionName>: <message>
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .cube import load_cube, save_cube
from .detectors import DetectorKind
from .errors import DetectionError
from .hsi import (
    WindowSpec,
    complexify_pipeline,
    empirical_pfa_from_map,
    generate_gaussian_cube,
    qq_plot_data,
    sliding_window_detect,
)
from .montecarlo import (
    DEFAULT_BLOCK_SIZE,
    ExperimentConfig,
    calibrate_threshold_empirical,
    simulate_fa_curve,
    simulate_pd_curve,
)
from .pfa import PfaLaw, invert_threshold, lambda_to_eta

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_IO = 3

WORKERS_ENV = "NZDETECT_WORKERS"
DEFAULT_SNR_GRID = "-10,-7.5,-5,-2.5,0,2.5,5,7.5,10,12.5,15,17.5,20,22.5,25,27.5,30"
HSI_DETECTORS = ("amf", "anmf", "kelly-plugin", "kelly-generalized")
_NO_ETA = (DetectorKind.MF, DetectorKind.AMF, DetectorKind.AMF_KNOWN_MEAN)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _complex(text):
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a complex number of the form a+bj: {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _region(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("region must be row0,col0,height,width")
    try:
        return tuple(int(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"region must be four integers: {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _default_workers():
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        return _positive_int(raw)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{WORKERS_ENV}: {exc}") from None


def read_complex_vector(path):
    """Read one complex value per line from a one- or two-column (real, imag) CSV."""
    rows = []
    with open(path, newline="") as fh:
        header_allowed = True
        for lineno, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells or cells[0].startswith("#"):
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if header_allowed:
                    header_allowed = False
                    continue  # header row
                raise OSError(f"{path}: line {lineno}: cannot parse {row!r}") from None
            header_allowed = False
            if len(vals) > 2:
                raise OSError(f"{path}: line {lineno}: expected 1 or 2 columns, got {len(vals)}")
            rows.append(complex(vals[0], vals[1] if len(vals) == 2 else 0.0))
    if not rows:
        raise OSError(f"{path}: no values")
    return rows


def _add_out(p, command):
    p.add_argument("--out", metavar="PREFIX", default=None,
                   help=f"output path prefix; extensions are appended (default: nzdetect-{command} in the working directory)")


def _add_workers(p):
    p.add_argument("--workers", type=_positive_int, default=None,
                   help=f"worker processes for trial or pixel blocks (count; default: ${WORKERS_ENV} or 1)")


def _add_experiment(p, trials_default):
    p.add_argument("--config", metavar="JSON",
                   help="experiment descriptor JSON; explicit flags override its fields (default: none, built-in values)")
    p.add_argument("--detector", choices=[k.value for k in DetectorKind],
                   help="detection statistic (default: amf)")
    p.add_argument("--m", type=_positive_int, help="vector dimension (count; default: 5)")
    p.add_argument("--N", dest="n", type=_positive_int, help="secondary vectors per trial (count; default: 10)")
    p.add_argument("--rho", type=float, help="Toeplitz correlation coefficient, |rho| < 1 (default: 0.4)")
    p.add_argument("--mu", type=_complex, help="background mean, same in every coordinate (a+bj; default: 3+4j)")
    p.add_argument("--steering", metavar="CSV",
                   help="steering vector file, real[,imag] per line (default: all-ones, unit norm)")
    p.add_argument("--trials", type=_positive_int, help=f"Monte-Carlo trials (count; default: {trials_default})")
    p.add_argument("--seed", type=int, help="master seed (64-bit integer; default: 0)")
    p.add_argument("--block-size", type=_positive_int,
                   help=f"trials per random-stream block (count; default: {DEFAULT_BLOCK_SIZE})")


def build_parser():
    parser = _Parser(prog="nzdetect", description="Adaptive detection in Gaussian backgrounds with unknown mean.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("simulate-fa", help="Monte-Carlo false-alarm curve against the closed-form law")
    _add_experiment(p, 100_000)
    p.add_argument("--thresholds", type=_float_list,
                   help="ascending threshold grid (statistic units; default: PFA from 1 to 1e-5, log-spaced)")
    _add_out(p, "simulate-fa")
    _add_workers(p)

    p = sub.add_parser("simulate-pd", help="Monte-Carlo detection probability versus SNR")
    _add_experiment(p, 100_000)
    p.add_argument("--pfa", type=float, default=1e-3, help="false-alarm probability (default: 0.001)")
    p.add_argument("--snr", type=_float_list, default=None,
                   help=f"ascending SNR grid; write --snr=-10,0 when the list starts negative "
                        f"(dB, |alpha|^2 p^H Sigma^-1 p; default: {DEFAULT_SNR_GRID})")
    _add_out(p, "simulate-pd")
    _add_workers(p)

    p = sub.add_parser("threshold", help="threshold (and likelihood-ratio eta) for a target PFA")
    p.add_argument("--detector", required=True, choices=[k.value for k in DetectorKind], help="detection statistic")
    p.add_argument("--m", type=_positive_int, required=True, help="vector dimension (count)")
    p.add_argument("--N", dest="n", type=_positive_int, default=None,
                   help="secondary vectors (count; required except for mf and nmf; default: none)")
    p.add_argument("--pfa", type=float, required=True, help="target false-alarm probability")
    p.add_argument("--trials", type=_positive_int, default=100_000,
                   help="calibration trials for kelly-generalized (count; default: 100000)")
    p.add_argument("--seed", type=int, default=0, help="calibration seed for kelly-generalized (default: 0)")
    _add_out(p, "threshold")
    _add_workers(p)

    p = sub.add_parser("detect", help="sliding-window detection on a cube, plus its false-alarm curve")
    p.add_argument("--cube", required=True, help="input cube file (complex or real)")
    p.add_argument("--detector", required=True, choices=HSI_DETECTORS, help="detection statistic")
    p.add_argument("--steering", required=True, metavar="CSV", help="steering vector, real[,imag] per line, one per band")
    p.add_argument("--window", type=int, default=5, help="odd window side (pixels; default: 5)")
    p.add_argument("--thresholds", type=_float_list, default=None,
                   help="ascending threshold grid (statistic units; default: PFA from 1 to the pixel-count floor)")
    p.add_argument("--thin", type=_positive_int, default=1,
                   help="curve uses every k-th pixel in both axes (pixels; default: 1)")
    _add_out(p, "detect")
    _add_workers(p)

    p = sub.add_parser("complexify", help="Hilbert transform, band decimation and band selection")
    p.add_argument("--cube", required=True, help="input real cube file")
    p.add_argument("--factor", type=_positive_int, default=2, help="keep one band in every FACTOR (default: 2)")
    p.add_argument("--start", type=int, default=0, help="first selected band after decimation (index; default: 0)")
    p.add_argument("--count", type=_positive_int, default=6, help="number of contiguous bands kept (default: 6)")
    _add_out(p, "complexify")

    p = sub.add_parser("qqplot", help="normal Q-Q pairs for one band over a region")
    p.add_argument("--cube", required=True, help="input real cube file")
    p.add_argument("--band", type=int, default=0, help="band index (default: 0)")
    p.add_argument("--region", type=_region, default=None,
                   help="row0,col0,height,width (pixels; default: whole image)")
    _add_out(p, "qqplot")

    p = sub.add_parser("gen-cube", help="synthetic cube with i.i.d. Gaussian pixel spectra")
    p.add_argument("--bands", "--m", dest="bands", type=_positive_int, default=6, help="spectral bands (count; default: 6)")
    p.add_argument("--rho", type=float, default=0.4, help="Toeplitz correlation across bands (default: 0.4)")
    p.add_argument("--mu", type=_complex, default=0j, help="mean of every band (a+bj; default: 0)")
    p.add_argument("--width", type=_positive_int, default=60, help="image width (pixels; default: 60)")
    p.add_argument("--height", type=_positive_int, default=20, help="image height (pixels; default: 20)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--dtype", choices=("c64", "f32"), default="c64",
                   help="complex circular or real Gaussian values (default: c64)")
    _add_out(p, "gen-cube")
    return parser


def _experiment(args, **extra):
    d = {}
    if args.config:
        try:
            d = ExperimentConfig.from_json(args.config).to_dict()
        except (json.JSONDecodeError, TypeError) as exc:
            raise OSError(f"{args.config}: not a valid experiment descriptor: {exc}") from None
    for key in ("detector", "m", "rho", "mu", "trials", "seed"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.n is not None:
        d["N"] = args.n
    if args.block_size is not None:
        d["block_size"] = args.block_size
    if args.steering is not None:
        d["steering"] = read_complex_vector(args.steering)
    d.setdefault("trials", 100_000)
    d.update(extra)
    return ExperimentConfig.from_dict(d)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(args, argv, command, config, outputs, seed=None):
    return {
        "program": "nzdetect",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "workers": args.workers,
        "outputs": outputs,
    }


def _cmd_simulate_fa(args):
    cfg = _experiment(args, **({"threshold_grid": args.thresholds} if args.thresholds else {}))
    curve = simulate_fa_curve(cfg, workers=args.workers)
    curve.to_csv(args.out + ".csv")
    _write_json(args.out + ".json", {"config": cfg.to_dict(), "curve": curve.to_dict()})
    return cfg.to_dict(), cfg.seed, [args.out + ".csv", args.out + ".json"]


def _cmd_simulate_pd(args):
    snr = args.snr if args.snr is not None else _float_list(DEFAULT_SNR_GRID)
    cfg = _experiment(args, snr_grid_db=snr)
    curve = simulate_pd_curve(cfg, args.pfa, workers=args.workers)
    curve.to_csv(args.out + ".csv")
    _write_json(args.out + ".json", {"config": cfg.to_dict(), "curve": curve.to_dict()})
    config = dict(cfg.to_dict(), pfa=args.pfa)
    return config, cfg.seed, [args.out + ".csv", args.out + ".json"]


def _fmt(v):
    return format(v, ".12g")


def _cmd_threshold(args):
    kind = DetectorKind(args.detector)
    m, n = args.m, args.n
    if n is None and not kind.uses_true_covariance:
        raise UsageError(f"threshold: --N is required for {kind.value}")
    result = {"detector": kind.value, "m": m, "N": n, "pfa": args.pfa}
    if kind is DetectorKind.KELLY_GENERALIZED:
        cfg = ExperimentConfig(m=m, n=n, detector=kind, trials=args.trials, seed=args.seed)
        cal = calibrate_threshold_empirical(cfg, args.pfa, workers=args.workers)
        lam = cal.threshold
        result.update(ci_lo=cal.ci_lo, ci_hi=cal.ci_hi, trials=args.trials, seed=args.seed)
    else:
        lam = invert_threshold(PfaLaw(kind, m, None if kind.uses_true_covariance else n), args.pfa)
    result["lambda"] = lam
    if kind not in _NO_ETA and lam < 1.0:
        result["eta"] = lambda_to_eta(kind, lam, n, m)
    fields = [f"detector={kind.value}", f"m={m}", f"N={'NA' if n is None else n}",
              f"pfa={_fmt(args.pfa)}", f"lambda={_fmt(lam)}"]
    if "eta" in result:
        fields.append(f"eta={_fmt(result['eta'])}")
    if "ci_lo" in result:
        fields += [f"ci_lo={_fmt(result['ci_lo'])}", f"ci_hi={_fmt(result['ci_hi'])}"]
    print(" ".join(fields))
    _write_json(args.out + ".json", result)
    outputs = [args.out + ".json"]
    config = {k: result[k] for k in ("detector", "m", "N", "pfa")}
    if kind is DetectorKind.KELLY_GENERALIZED:
        config.update(trials=args.trials, seed=args.seed)
    return config, (args.seed if kind is DetectorKind.KELLY_GENERALIZED else None), outputs


def _default_map_thresholds(kind, m, n, count):
    if kind is DetectorKind.KELLY_GENERALIZED:
        return np.linspace(0.0, 0.98 * (n + 1) / n, 26)
    law = PfaLaw(kind, m, n)
    floor = 1.0 / max(count, 1)
    return np.array([invert_threshold(law, p) for p in np.logspace(0.0, math.log10(floor), 20)])


def _cmd_detect(args):
    cube = load_cube(args.cube)
    steering = read_complex_vector(args.steering)
    kind = DetectorKind(args.detector)
    window = WindowSpec(args.window)
    dmap = sliding_window_detect(cube, kind, steering, window, workers=args.workers)
    count = dmap.ok_statistics(args.thin).size
    thresholds = args.thresholds
    if thresholds is None:
        thresholds = _default_map_thresholds(kind, cube.bands, window.n_secondary, count)
    curve = empirical_pfa_from_map(dmap, thresholds, thin=args.thin)
    outs = [args.out + ext for ext in (".map.csv", ".map.jcube", ".curve.csv", ".curve.json")]
    dmap.to_csv(outs[0])
    dmap.to_cube(outs[1])
    curve.to_csv(outs[2])
    _write_json(outs[3], curve.to_dict())
    config = {
        "cube": args.cube,
        "detector": kind.value,
        "steering": [[v.real, v.imag] for v in steering],
        "window": window.size,
        "N": window.n_secondary,
        "thin": args.thin,
        "thresholds": [float(t) for t in np.asarray(thresholds)],
    }
    return config, None, outs


def _cmd_complexify(args):
    out = complexify_pipeline(load_cube(args.cube), args.factor, args.start, args.count)
    save_cube(out, args.out + ".jcube")
    config = {"cube": args.cube, "factor": args.factor, "start": args.start, "count": args.count}
    return config, None, [args.out + ".jcube"]


def _cmd_qqplot(args):
    qq = qq_plot_data(load_cube(args.cube), args.band, args.region)
    with open(args.out + ".csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["normal_quantile", "sample_quantile"])
        for a, b in qq.pairs():
            w.writerow([repr(a), repr(b)])
    _write_json(args.out + ".json", {
        "slope": qq.slope,
        "intercept": qq.intercept,
        "correlation": None if qq.degenerate else qq.correlation,
        "degenerate": qq.degenerate,
        "count": int(qq.sample_quantiles.size),
    })
    config = {"cube": args.cube, "band": args.band, "region": None if args.region is None else list(args.region)}
    return config, None, [args.out + ".csv", args.out + ".json"]


def _cmd_gen_cube(args):
    cube = generate_gaussian_cube(args.width, args.height, args.bands, args.rho, args.mu, args.seed,
                                  complex_valued=args.dtype == "c64")
    save_cube(cube, args.out + ".jcube")
    config = {
        "bands": args.bands, "rho": args.rho, "mu": [args.mu.real, args.mu.imag],
        "width": args.width, "height": args.height, "seed": args.seed, "dtype": args.dtype,
    }
    return config, args.seed, [args.out + ".jcube"]


_COMMANDS = {
    "simulate-fa": _cmd_simulate_fa,
    "simulate-pd": _cmd_simulate_pd,
    "threshold": _cmd_threshold,
    "detect": _cmd_detect,
    "complexify": _cmd_complexify,
    "qqplot": _cmd_qqplot,
    "gen-cube": _cmd_gen_cube,
}


def _fail(code, exc):
    msg = " ".join(str(exc).split())
    print(f"nzdetect: error: code={code} type={type(exc).__name__}: {msg}", file=sys.stderr)
    return code


def run(argv):
    """Execute one command line; returns the exit code."""
    argv = list(argv)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", None) is None:
            args.workers = _default_workers()
        if args.out is None:
            args.out = f"nzdetect-{args.command}"
        config, seed, outputs = _COMMANDS[args.command](args)
        _write_json(args.out + ".manifest.json", _manifest(args, argv, args.command, config, outputs, seed))
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (DetectionError, ValueError, ArithmeticError) as exc:
        return _fail(EXIT_DOMAIN, exc)
    return EXIT_OK


def main(argv=None):
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
