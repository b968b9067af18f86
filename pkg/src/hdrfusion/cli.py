"""Command line interface.

Subcommands:

* ``run``: execute a controller-race experiment from a config file and
  write records.csv, utility_trace.csv, map snapshots and optionally the
  metrics figure into the output directory.
* ``calibrate-crf``: fit the inverse response from a directory of PPM
  frame dumps (with ``t=<seconds>`` sidecars) and save the curve table.
* ``fit-noise``: fit the per-channel noise slope from repeated PPM
  captures grouped by exposure time.

Exit codes: 0 on success, 1 for configuration/usage errors, 2 for
runtime or I/O failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # Usage problems are configuration errors for our exit-code contract.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdrfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a controller-race experiment")
    run.add_argument("--config", required=True, type=Path, help="experiment config file")
    run.add_argument("--out-dir", required=True, type=Path, help="output directory")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--frames", type=int, help="override the frame budget")
    run.add_argument("--beta", type=float, help="override the exploration scale")
    run.add_argument("--plot", action="store_true", help="also write metrics.svg")

    crf = sub.add_parser("calibrate-crf", help="fit the inverse response curve")
    crf.add_argument("--stack", required=True, type=Path, help="directory of PPM frames")
    crf.add_argument("--out", required=True, type=Path, help="output curve file")
    crf.add_argument("--smoothness", type=float, default=50.0)
    crf.add_argument("--samples", type=int, default=192, help="pixel sites to sample")

    noise = sub.add_parser("fit-noise", help="fit the noise coefficient per channel")
    noise.add_argument(
        "--frames", required=True, type=Path, help="directory of repeated PPM captures"
    )
    noise.add_argument("--curve", required=True, type=Path, help="response curve file")
    noise.add_argument("--out", required=True, type=Path, help="output coefficients file")
    noise.add_argument("--bins", type=int, default=100)

    return parser


def _load_frame_dir(directory: Path):
    from .fileio import load_ppm_frame

    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    paths = sorted(directory.glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm frames in {directory}")
    return [load_ppm_frame(p) for p in paths]


def _cmd_run(args) -> int:
    from .harness import ConfigError, parse_config, run_experiment, write_outputs

    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(text)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.frames is not None:
            overrides["frames"] = args.frames
        if args.beta is not None:
            overrides["beta"] = args.beta
        if overrides:
            config = dataclasses.replace(config, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_experiment(config)
        write_outputs(result, args.out_dir, plot=args.plot)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    final = {name: buf.fraction_complete for name, buf in result.maps.items()}
    for name, frac in final.items():
        print(f"{name}: {frac * 100:.1f}% complete after {config.frames} frames")
    print(f"outputs written to {args.out_dir}")
    return EXIT_OK


def _cmd_calibrate_crf(args) -> int:
    from .fileio import save_response_curve
    from .radiometry import CalibrationError, fit_response_curve

    try:
        stack = _load_frame_dir(args.stack)
        fit = fit_response_curve(
            stack, smoothness=args.smoothness, sample_count=args.samples
        )
        save_response_curve(fit.curve, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rms = ", ".join(f"{v:.4g}" for v in fit.residual_rms)
    print(
        f"fitted response from {fit.exposures} exposures x {fit.sites} sites; "
        f"log-domain residual RMS per channel: {rms}"
    )
    print(f"curve written to {args.out}")
    return EXIT_OK


def _cmd_fit_noise(args) -> int:
    from .fileio import load_response_curve, save_noise_coefficients
    from .radiometry import CalibrationError, fit_noise_coefficient

    try:
        frames = _load_frame_dir(args.frames)
        curve = load_response_curve(args.curve)
        by_time: dict[float, list] = {}
        for frame in frames:
            by_time.setdefault(frame.time, []).append(frame)
        stacks = [by_time[t] for t in sorted(by_time)]
        fit = fit_noise_coefficient(stacks, curve, bins=args.bins)
        save_noise_coefficients(fit.slope, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    slopes = ", ".join(f"{v:.6g}" for v in fit.slope)
    print(f"noise slopes (R, G, B): {slopes}")
    if fit.degenerate.any():
        print("warning: zero-variance channel(s); fit is degenerate", file=sys.stderr)
    print(f"coefficients written to {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "calibrate-crf":
        return _cmd_calibrate_crf(args)
    if args.command == "fit-noise":
        return _cmd_fit_noise(args)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
