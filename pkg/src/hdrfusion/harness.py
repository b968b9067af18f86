"""Experiment runner: race exposure controllers on a simulated static scene.

Each controller gets a fresh simulator seeded identically, captures and
fuses a fixed budget of frames, and logs per frame the fraction of
complete points and the mean relative reconstruction error against a
batch ground truth (the scene itself when the camera is noise-free, a
noise-free exhaustive bracketing merge otherwise).  Results go to a CSV,
an optional two-panel SVG figure, a per-candidate utility trace, and
packed map snapshots.

Config files are plain text ``key = value`` lines (``#`` starts a
comment).  Recognized keys:

    scene.kind            log-gradient | checkerboard | bright-dark-split | from-file
    scene.width/height    integers (not for from-file)
    scene.low/high        radiance range of the generator
    scene.tile            checkerboard tile size (optional)
    scene.path            PFM path (from-file only)
    camera.times          geometric:T_MIN,T_MAX,COUNT or list:T1,T2,...
    camera.curve          linear | gamma:G | file:PATH
    camera.vignetting     none | radial:CORNER_ATTENUATION | file:PATH
    camera.noise          none | A_R,A_G,A_B
    camera.under-threshold / camera.over-threshold   intensity clip levels
    camera.lag            command lag in frames (default 3)
    camera.initial-time   min | max | seconds (default min)
    camera.weight-cap     optional override of the packed weight ceiling
    controllers           comma list: proposed, additive-up:STEP,
                          additive-down:STEP, multiplicative-up:FACTOR,
                          multiplicative-down:FACTOR
    frames                frame budget (>= 1)
    seed                  RNG seed
    beta                  exploration scale of the proposed controller
    throttle              run the controller every k-th frame (default 3)
    tie-break             largest | smallest (default largest)
    lag-aware             true | false (default false)
    metric                mean-rel (the only supported metric)
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import (
    Controller,
    ControllerConfig,
    ControllerInput,
    SweepController,
    UtilityController,
    UtilityRecord,
    write_utility_trace,
)
from .fileio import load_response_curve, load_vignetting
from .fusion import MapBuffer, fuse_frame, save_snapshot
from .radiometry import (
    DEFAULT_OVER_THRESHOLD,
    DEFAULT_UNDER_THRESHOLD,
    ExposureProgram,
    NoiseModel,
    ResponseCurve,
    VignettingMap,
)
from .sensorsim import CameraSim, Scene, batch_ground_truth, make_scene, synthetic_vignetting

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "FrameRecord",
    "RunResult",
    "build_metrics_figure",
    "emit_csv",
    "emit_plot",
    "mean_relative_error",
    "parse_config",
    "run_experiment",
]

CSV_HEADER = [
    "frame",
    "controller",
    "t_cmd",
    "t_eff",
    "frac_complete",
    "mean_rel_err",
    "promoted",
    "updated",
    "ignored",
]


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class FrameRecord:
    """Metrics recorded after fusing one frame."""

    frame: int
    controller: str
    t_cmd: float
    t_eff: float
    frac_complete: float
    mean_rel_err: float
    promoted: int
    updated: int
    ignored: int
    refined: int = 0


@dataclass
class ExperimentConfig:
    """Everything a run depends on; two equal configs produce equal outputs."""

    scene: Scene
    curve: ResponseCurve
    vignetting: VignettingMap
    program: ExposureProgram
    noise: NoiseModel | None
    controllers: tuple[str, ...]
    frames: int
    seed: int = 0
    beta: float = 1.0
    throttle: int = 3
    lag: int = 3
    initial_time: float | None = None
    tie_break: str = "largest"
    lag_aware: bool = False
    metric: str = "mean-rel"
    out_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ConfigError("frame budget must be at least 1")
        if not self.controllers:
            raise ConfigError("at least one controller is required")
        if self.throttle < 1:
            raise ConfigError("throttle must be at least 1")
        if self.metric != "mean-rel":
            raise ConfigError(f"unknown metric {self.metric!r}")
        if (self.scene.height, self.scene.width) != (
            self.vignetting.height,
            self.vignetting.width,
        ):
            raise ConfigError("scene and vignetting dimensions must match")


@dataclass
class RunResult:
    records: list[FrameRecord]
    maps: dict[str, MapBuffer]
    traces: dict[str, list[UtilityRecord]]
    ground_truth: np.ndarray  # (h, w, 3)
    ground_truth_valid: np.ndarray  # (h, w)


# ---------------------------------------------------------------------------
# Controllers and metric
# ---------------------------------------------------------------------------


def _build_controller(spec: str, config: ExperimentConfig) -> Controller:
    spec = spec.strip()
    if spec == "proposed":
        return UtilityController(
            config=ControllerConfig(
                beta=config.beta,
                tie_break=config.tie_break,
                lag_aware=config.lag_aware,
            )
        )
    kind, _, arg = spec.partition(":")
    if not arg:
        raise ConfigError(f"sweep controller {spec!r} needs a step, e.g. '{kind}:2'")
    try:
        step = float(arg)
    except ValueError:
        raise ConfigError(f"bad sweep step in {spec!r}") from None
    try:
        return SweepController(kind, config.program, step)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def mean_relative_error(
    buffer: MapBuffer, truth: np.ndarray, truth_valid: np.ndarray
) -> float:
    """Mean of |estimate - truth| / truth over complete pixels and channels.

    Pixels without a usable ground truth are skipped; NaN when no pixel
    qualifies.
    """
    mask = buffer.complete & truth_valid
    if not np.any(mask):
        return float("nan")
    estimate = buffer.numerator[mask] / buffer.denominator[mask]
    reference = truth[mask]
    good = reference > 0
    if not np.any(good):
        return float("nan")
    return float(np.mean(np.abs(estimate[good] - reference[good]) / reference[good]))


def _ground_truth(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    if config.noise is None:
        truth = np.array(config.scene.radiance)
        return truth, np.ones(truth.shape[:2], dtype=bool)
    clean = CameraSim(
        curve=config.curve,
        vmap=config.vignetting,
        program=config.program,
        noise=None,
        lag=0,
        seed=config.seed,
    )
    frames = []
    for t in config.program.times:
        clean.command_exposure(t)
        frames.append(clean.capture(config.scene))
    return batch_ground_truth(
        frames, config.curve, config.vignetting, None, config.program
    )


# ---------------------------------------------------------------------------
# Experiment loop
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Run every configured controller and collect per-frame records.

    Each controller run starts from an identically seeded simulator and an
    empty map; after fusing a frame, metrics are recorded, and on every
    throttle-th frame the controller picks the next exposure command.
    """
    truth, truth_valid = _ground_truth(config)
    records: list[FrameRecord] = []
    maps: dict[str, MapBuffer] = {}
    traces: dict[str, list[UtilityRecord]] = {}

    for spec in config.controllers:
        controller = _build_controller(spec, config)
        name = spec
        sim = CameraSim(
            curve=config.curve,
            vmap=config.vignetting,
            program=config.program,
            noise=config.noise,
            lag=config.lag,
            seed=config.seed,
            initial_time=config.initial_time,
        )
        buffer = MapBuffer(config.scene.width, config.scene.height, config.program)
        controller.reset()
        trace: list[UtilityRecord] = []
        commanded = sim.effective_time()

        for k in range(config.frames):
            frame = sim.capture(config.scene)
            stats = fuse_frame(buffer, frame, config.vignetting, config.curve)
            records.append(
                FrameRecord(
                    frame=k,
                    controller=name,
                    t_cmd=commanded,
                    t_eff=frame.time,
                    frac_complete=buffer.fraction_complete,
                    mean_rel_err=mean_relative_error(buffer, truth, truth_valid),
                    promoted=stats.promoted,
                    updated=stats.updated,
                    ignored=stats.ignored,
                    refined=stats.refined,
                )
            )
            if k % config.throttle == 0:
                if config.lag_aware and sim.pending_commands:
                    continue
                view = ControllerInput.render(buffer, config.vignetting)
                t_next, candidates = controller.select(view)
                sim.command_exposure(t_next)
                commanded = t_next
                trace.extend(dataclasses.replace(r, frame=k) for r in candidates)

        maps[name] = buffer
        traces[name] = trace

    return RunResult(
        records=records,
        maps=maps,
        traces=traces,
        ground_truth=truth,
        ground_truth_valid=truth_valid,
    )


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


def emit_csv(records: Sequence[FrameRecord], path: str | Path) -> None:
    """Write per-frame records; row order follows the input exactly."""
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.frame,
                    r.controller,
                    repr(float(r.t_cmd)),
                    repr(float(r.t_eff)),
                    repr(float(r.frac_complete)),
                    repr(float(r.mean_rel_err)),
                    r.promoted,
                    r.updated,
                    r.ignored,
                ]
            )


def build_metrics_figure(records: Sequence[FrameRecord]):
    """Two stacked panels: completion fraction and mean error per frame."""
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    if not records:
        raise ValueError("no records to plot")
    controllers: list[str] = []
    for r in records:
        if r.controller not in controllers:
            controllers.append(r.controller)

    fig, (ax_complete, ax_error) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    for name in controllers:
        rows = [r for r in records if r.controller == name]
        frames = [r.frame for r in rows]
        ax_complete.plot(frames, [r.frac_complete for r in rows], label=name)
        ax_error.plot(frames, [r.mean_rel_err for r in rows], label=name)
    ax_complete.set_ylabel("fraction complete")
    ax_complete.set_ylim(-0.02, 1.02)
    ax_complete.legend(loc="lower right", fontsize="small")
    ax_error.set_ylabel("mean relative error")
    ax_error.set_xlabel("frame")
    fig.tight_layout()
    return fig


def emit_plot(records: Sequence[FrameRecord], path: str | Path) -> Path:
    """Render the metrics figure to a byte-deterministic SVG file."""
    import matplotlib
    import matplotlib.pyplot as plt

    if not records:
        raise ValueError("no records to plot")
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "hdrfusion"}):
        fig = build_metrics_figure(records)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def write_outputs(result: RunResult, out_dir: str | Path, plot: bool = False) -> None:
    """Write records.csv, utility traces, map snapshots and optionally the figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_csv(result.records, out_dir / "records.csv")
    all_traces = [r for trace in result.traces.values() for r in trace]
    write_utility_trace(all_traces, out_dir / "utility_trace.csv")
    for name, buffer in result.maps.items():
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
        save_snapshot(buffer, out_dir / f"map_{safe}.hdrmap")
    if plot:
        emit_plot(result.records, out_dir / "metrics.svg")


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_KNOWN_KEYS = {
    "scene.kind",
    "scene.width",
    "scene.height",
    "scene.low",
    "scene.high",
    "scene.tile",
    "scene.path",
    "camera.times",
    "camera.curve",
    "camera.vignetting",
    "camera.noise",
    "camera.under-threshold",
    "camera.over-threshold",
    "camera.lag",
    "camera.initial-time",
    "camera.weight-cap",
    "controllers",
    "frames",
    "seed",
    "beta",
    "throttle",
    "tie-break",
    "lag-aware",
    "metric",
}


def _parse_kv(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _parse_curve(spec: str) -> ResponseCurve:
    if spec == "linear":
        return ResponseCurve.linear()
    kind, _, arg = spec.partition(":")
    if kind == "gamma":
        try:
            return ResponseCurve.gamma(float(arg))
        except ValueError as exc:
            raise ConfigError(f"bad curve spec {spec!r}: {exc}") from None
    if kind == "file":
        try:
            return load_response_curve(arg)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load curve {arg!r}: {exc}") from None
    raise ConfigError(f"unknown curve spec {spec!r}")


def _parse_times(spec: str) -> tuple[float, ...]:
    kind, _, arg = spec.partition(":")
    try:
        if kind == "geometric":
            t_min, t_max, count = arg.split(",")
            program = ExposureProgram.geometric(float(t_min), float(t_max), int(count))
            return program.times
        if kind == "list":
            return tuple(float(v) for v in arg.split(","))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad times spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown times spec {spec!r} (use geometric:... or list:...)")


def _parse_vignetting(spec: str, width: int, height: int) -> VignettingMap:
    if spec == "none":
        return VignettingMap.uniform(width, height)
    kind, _, arg = spec.partition(":")
    if kind == "radial":
        try:
            return synthetic_vignetting(width, height, float(arg) if arg else 0.5)
        except ValueError as exc:
            raise ConfigError(f"bad vignetting spec {spec!r}: {exc}") from None
    if kind == "file":
        try:
            return load_vignetting(arg)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load vignetting {arg!r}: {exc}") from None
    raise ConfigError(f"unknown vignetting spec {spec!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from config file text."""
    kv = _parse_kv(text)

    def require(key: str) -> str:
        if key not in kv:
            raise ConfigError(f"missing required key {key!r}")
        return kv[key]

    scene_kind = require("scene.kind")
    scene_params: dict[str, object] = {}
    if scene_kind == "from-file":
        scene_params["path"] = require("scene.path")
    else:
        scene_params["width"] = _to_int(require("scene.width"), "scene.width")
        scene_params["height"] = _to_int(require("scene.height"), "scene.height")
        scene_params["low"] = _to_float(require("scene.low"), "scene.low")
        scene_params["high"] = _to_float(require("scene.high"), "scene.high")
        if "scene.tile" in kv:
            scene_params["tile"] = _to_int(kv["scene.tile"], "scene.tile")
    try:
        scene = make_scene(scene_kind, **scene_params)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad scene: {exc}") from None

    curve = _parse_curve(kv.get("camera.curve", "linear"))
    times = _parse_times(require("camera.times"))
    under = _to_int(kv.get("camera.under-threshold", str(DEFAULT_UNDER_THRESHOLD)), "camera.under-threshold")
    over = _to_int(kv.get("camera.over-threshold", str(DEFAULT_OVER_THRESHOLD)), "camera.over-threshold")
    weight_cap = (
        _to_float(kv["camera.weight-cap"], "camera.weight-cap")
        if "camera.weight-cap" in kv
        else None
    )
    try:
        program = ExposureProgram(
            times=times,
            under_threshold=under,
            over_threshold=over,
            weight_cap=weight_cap,
            curve=curve,
        )
    except ValueError as exc:
        raise ConfigError(f"bad exposure program: {exc}") from None

    vignetting = _parse_vignetting(
        kv.get("camera.vignetting", "none"), scene.width, scene.height
    )

    noise_spec = kv.get("camera.noise", "none")
    noise: NoiseModel | None = None
    if noise_spec != "none":
        try:
            noise = NoiseModel(np.array([float(v) for v in noise_spec.split(",")]))
        except ValueError as exc:
            raise ConfigError(f"bad noise spec {noise_spec!r}: {exc}") from None

    initial_spec = kv.get("camera.initial-time", "min")
    if initial_spec == "min":
        initial_time: float | None = program.t_min
    elif initial_spec == "max":
        initial_time = program.t_max
    else:
        initial_time = _to_float(initial_spec, "camera.initial-time")
        if initial_time not in program.times:
            raise ConfigError(
                f"camera.initial-time {initial_spec} is not a program member"
            )

    controllers = tuple(
        spec.strip() for spec in require("controllers").split(",") if spec.strip()
    )
    lag_aware_spec = kv.get("lag-aware", "false").lower()
    if lag_aware_spec not in ("true", "false"):
        raise ConfigError("lag-aware must be 'true' or 'false'")

    try:
        config = ExperimentConfig(
            scene=scene,
            curve=curve,
            vignetting=vignetting,
            program=program,
            noise=noise,
            controllers=controllers,
            frames=_to_int(require("frames"), "frames"),
            seed=_to_int(kv.get("seed", "0"), "seed"),
            beta=_to_float(kv.get("beta", "1.0"), "beta"),
            throttle=_to_int(kv.get("throttle", "3"), "throttle"),
            lag=_to_int(kv.get("camera.lag", "3"), "camera.lag"),
            initial_time=initial_time,
            tie_break=kv.get("tie-break", "largest"),
            lag_aware=lag_aware_spec == "true",
            metric=kv.get("metric", "mean-rel"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    # Validate the controller specs up front so config errors surface early.
    for spec in config.controllers:
        _build_controller(spec, config)
    return config


def _to_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _to_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None
