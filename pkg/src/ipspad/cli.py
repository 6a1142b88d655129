"""Command-line entry point.

    ipspad simulate   --flux 1e6 --q 0.4 --dead-time 100e-9 --exposure 1e-3 --seed 7 --out s.txt
    ipspad estimate   --in s.txt --estimator ipspad
    ipspad snr-sweep  --grid 1e4:1e16:100 --trials 10 --theory --out sweep.csv
    ipspad hdr-sim    --in scene.pfm --out-pfm rec.pfm --out-pgm rec.pgm --mask mask.pgm
    ipspad calibrate  --in s1.txt s2.txt --bin-width 1e-12

Results go to stdout (or --out), logs to stderr.  Exit codes: 0 success,
1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import estimate as est
from . import imaging, noise
from .core import ConventionalConfig, EstimatorKind, PixelConfig, read_stream, write_stream
from .sim import SimSeed, simulate_stream

log = logging.getLogger("ipspad")

ESTIMATORS = {kind.value: kind for kind in EstimatorKind}


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, points = text.split(":")
        lo, hi, points = float(lo), float(hi), int(points)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like lo:hi:points") from None
    if not (0 < lo < hi) or points < 2:
        raise argparse.ArgumentTypeError("grid needs 0 < lo < hi and points >= 2")
    return np.logspace(np.log10(lo), np.log10(hi), points)


def _add_pixel_flags(p: argparse.ArgumentParser, q=0.4, dead_time=100e-9, exposure=1e-3, delta=0.0):
    g = p.add_argument_group("pixel (seconds, photons/s)")
    g.add_argument("--q", type=float, default=q, help="quantum efficiency in (0, 1]")
    g.add_argument("--dead-time", type=float, default=dead_time, help="dead-time [s]")
    g.add_argument("--exposure", type=float, default=exposure, help="exposure time [s]")
    g.add_argument("--delta", type=float, default=delta, help="TDC bin width [s], 0 = continuous")
    g.add_argument("--dark-rate", type=float, default=0.0, help="dark count rate [1/s]")
    g.add_argument("--jitter", type=float, default=0.0, help="timestamp jitter sigma [s]")
    g.add_argument("--rise-time", type=float, default=0.0, help="gate rise time [s]")
    g.add_argument("--drift", type=float, default=0.0, help="dead-time increase per detection [s]")


def _pixel_config(args) -> PixelConfig:
    try:
        return PixelConfig(
            quantum_efficiency=args.q,
            dead_time=args.dead_time,
            exposure_time=args.exposure,
            time_quantization=args.delta,
            dark_rate=args.dark_rate,
            jitter_sigma=args.jitter,
            rise_time=args.rise_time,
            drift_coefficient=args.drift,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_text(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    if args.flux < 0:
        raise UsageError("--flux must be >= 0")
    config = _pixel_config(args)
    stream = simulate_stream(args.flux, config, SimSeed(args.seed, args.pixel))
    log.info("simulated %d detections", stream.n_detections)
    if args.out in (None, "-"):
        from .core import format_stream

        sys.stdout.write(format_stream(stream))
    else:
        write_stream(stream, args.out)
    return 0


def cmd_estimate(args) -> int:
    stream = read_stream(args.input)
    cfg = stream.config
    q = args.q if args.q is not None else cfg.quantum_efficiency
    tau = args.dead_time if args.dead_time is not None else cfg.dead_time
    T = stream.exposure
    if args.calibrate_dead_time:
        tau = est.calibrate_dead_time([stream], args.bin_width)
    kind = ESTIMATORS[args.estimator]
    if kind is EstimatorKind.IpSpadMle:
        result = est.ipspad_mle(stream, q, tau)
    elif kind is EstimatorKind.IpSpadFullMle:
        result = est.ipspad_full_mle(stream, q, tau, T)
    elif kind is EstimatorKind.PfSpadCounts:
        result = est.pfspad_counts(stream.n_detections, q, tau, T)
    elif kind is EstimatorKind.FirstPhoton:
        if stream.n_detections == 0:
            raise est.InsufficientPhotons("stream has no detections")
        result = est.first_photon_estimate(float(stream.recorded[0]), q)
    elif kind is EstimatorKind.RiseTimeCorrectedMle:
        rise = args.rise_time if args.rise_time is not None else cfg.rise_time
        result = est.risetime_corrected_mle(stream, est.RiseProfileSpec(q, rise), tau, T)
    else:
        raise UsageError(f"estimator {args.estimator} needs a conventional reading, not a stream")
    print(f"flux_photons_per_s={result.flux!r}")
    print(f"estimator={result.estimator_kind.value}")
    print(f"n_detections={result.n_detections}")
    print(f"darkness_total_s={result.darkness_total!r}")
    print(f"dead_time_s={tau!r}")
    print(f"clamped={int(result.clamped)}")
    return 0


def _load_json_config(args, parser_defaults) -> None:
    """Fill flags from a JSON file; keys match flag names (dashes or underscores)."""
    with open(args.config) as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad JSON config: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("JSON config must be an object")
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in parser_defaults:
            raise UsageError(f"unknown config key {key!r}")
        # explicit command-line flags win over the file
        current, default = getattr(args, dest), parser_defaults[dest]
        if np.array_equal(current, default) if dest == "grid" else current == default:
            if dest == "grid":
                try:
                    value = _grid(str(value))
                except argparse.ArgumentTypeError as exc:
                    raise UsageError(f"config grid: {exc}") from None
            setattr(args, dest, value)


def cmd_snr_sweep(args) -> int:
    kind = ESTIMATORS[args.estimator]
    if args.trials < 2:
        raise UsageError("--trials must be >= 2 (the variance needs two samples)")
    if kind is EstimatorKind.ConventionalLinear:
        config = ConventionalConfig(
            quantum_efficiency=args.q,
            exposure_time=args.exposure,
            full_well_capacity=args.fwc,
            read_noise_sigma=args.read_noise,
            dark_rate=args.dark_rate,
        )
    else:
        config = _pixel_config(args)
    try:
        spec = noise.SweepSpec(tuple(args.grid), args.trials, kind, config, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    curve = noise.monte_carlo_snr(spec, threads=args.threads)
    text = curve.to_csv(gnuplot=args.gnuplot)
    if args.theory:
        theory = noise.theory_curve(spec.flux_grid, config, kind).to_csv(gnuplot=args.gnuplot)
        # gnuplot separates data sets with two blank lines
        text += "\n\n" + theory if args.gnuplot else theory.split("\n", 1)[1]
    _write_text(text, args.out)
    return 0


def cmd_hdr_sim(args) -> int:
    truth = imaging.load_flux_image(args.input, args.format, scale=args.scale, channels=args.channels)
    kind = ESTIMATORS[args.estimator]
    if kind is EstimatorKind.FirstPhoton:
        rec = imaging.simulate_image_first_photon(truth, args.q, args.seed, args.photons)
    else:
        rec = imaging.simulate_image(truth, _pixel_config(args), kind, args.seed, args.threads)
    failures = int(rec.failure_mask.sum())
    log.info("%d of %d pixel values failed", failures, rec.failure_mask.size)
    if args.out_pfm:
        imaging.write_pfm(rec.image, args.out_pfm)
    if args.out_csv:
        imaging.write_csv_image(rec.image, args.out_csv)
    if args.out_pgm:
        imaging.tonemap_to_pgm(rec.image, args.out_pgm, args.gamma)
    if args.mask:
        mask = np.any(rec.failure_mask, axis=2).astype(np.uint8) * 255
        imaging.write_pnm(mask, args.mask)
    print(f"pixels={rec.failure_mask.size}")
    print(f"failures={failures}")
    return 0


def cmd_calibrate(args) -> int:
    streams = [read_stream(path) for path in args.input]
    tau = est.calibrate_dead_time(streams, args.bin_width)
    print(f"dead_time_s={tau!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipspad", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one exposure and write a stream file")
    p.add_argument("--flux", type=float, required=True, help="photon flux [photons/s]")
    _add_pixel_flags(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--pixel", type=int, default=0, help="pixel index of the RNG substream")
    p.add_argument("--out", help="stream file (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate flux from a stream file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--estimator", choices=[k for k in ESTIMATORS if k != "conventional"], default="ipspad")
    p.add_argument("--q", type=float, help="override the file's quantum efficiency")
    p.add_argument("--dead-time", type=float, help="override the file's dead-time [s]")
    p.add_argument("--rise-time", type=float, help="rise time for rise-corrected [s]")
    p.add_argument("--calibrate-dead-time", action="store_true", help="use the histogram dead-time")
    p.add_argument("--bin-width", type=float, default=1e-12, help="calibration bin [s]")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("snr-sweep", help="Monte Carlo SNR sweep to CSV")
    p.add_argument("--config", help="JSON file with flag values (same key names)")
    p.add_argument("--grid", type=_grid, default=_grid("1e4:1e16:100"), help="lo:hi:points, log spaced")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--estimator", choices=list(ESTIMATORS), default="ipspad")
    _add_pixel_flags(p)
    p.add_argument("--fwc", type=int, default=34000, help="full well [e-] (conventional)")
    p.add_argument("--read-noise", type=float, default=5.0, help="read noise [e-] (conventional)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--theory", action="store_true", help="also emit the theory curve")
    p.add_argument("--gnuplot", action="store_true", help="two-column whitespace output")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_snr_sweep, subparser=p)

    p = sub.add_parser("hdr-sim", help="simulate and reconstruct an HDR image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["pfm", "csv"], help="default: from the file extension")
    p.add_argument("--channels", type=int, choices=[1, 3], default=1, help="channels of a CSV input")
    p.add_argument("--scale", type=float, default=imaging.DEFAULT_RADIANCE_SCALE, help="photons/s per unit")
    _add_pixel_flags(p, q=0.4, dead_time=150e-9, exposure=5e-3, delta=200e-12)
    p.add_argument("--estimator", choices=[k for k in ESTIMATORS if k != "conventional"], default="ipspad")
    p.add_argument("--photons", type=_positive_int, default=1, help="photons per pixel (first-photon)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--out-pfm")
    p.add_argument("--out-csv")
    p.add_argument("--out-pgm")
    p.add_argument("--mask", help="failure mask PGM")
    p.set_defaults(func=cmd_hdr_sim)

    p = sub.add_parser("calibrate", help="dead-time from the inter-photon histogram")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--bin-width", type=float, default=1e-12)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if getattr(args, "config", None):
            defaults = {a.dest: a.default for a in args.subparser._actions}
            _load_json_config(args, defaults)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ipspad: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"ipspad: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
