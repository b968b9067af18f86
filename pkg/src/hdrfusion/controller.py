"""Exposure-time selection from the rendered state of the map.

The next exposure time is the one maximizing

    U(t) = beta * U_e(t) + U_r(t),

where the exploration term U_e counts the expected number of incomplete
points that would get a fully valid observation at time t (assuming each
point's radiance is log-uniform within its current bounds), and the
refinement term U_r rewards revisiting complete points, giving each one
t divided by its accumulated weight.  Sweep baselines that walk the
exposure range up or down are provided for comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .radiometry import ExposureProgram, VignettingMap

__all__ = [
    "Controller",
    "ControllerConfig",
    "ControllerInput",
    "SweepController",
    "UtilityController",
    "UtilityRecord",
    "baseline_sweep",
    "exploration_utility",
    "refinement_utility",
    "saturation_probability",
    "select_exposure",
    "write_utility_trace",
]

SWEEP_KINDS = ("additive-up", "additive-down", "multiplicative-up", "multiplicative-down")


@dataclass(frozen=True)
class ControllerConfig:
    """Knobs of the utility controller.

    beta scales the exploration term; tie_break chooses among equal-utility
    times ("largest" or "smallest"); lag_aware tells the harness not to
    issue a new command while a previous one is still pending.
    """

    beta: float = 1.0
    tie_break: str = "largest"
    lag_aware: bool = False

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.tie_break not in ("largest", "smallest"):
            raise ValueError("tie_break must be 'largest' or 'smallest'")


@dataclass(frozen=True)
class ControllerInput:
    """Rendered view of the map: radiance, weight and bounds over the image.

    A zero weight marks an incomplete point; its row of ``bounds`` is
    meaningful while its radiance is not, and vice versa for complete
    points.
    """

    radiance: np.ndarray  # (h, w, 3)
    weight: np.ndarray  # (h, w); 0 marks incomplete points
    bounds: np.ndarray  # (h, w, 3, 2)
    vignetting: np.ndarray  # (h, w, 3)
    program: ExposureProgram

    def __post_init__(self) -> None:
        h, w = self.weight.shape
        if self.radiance.shape != (h, w, 3):
            raise ValueError("radiance map shape mismatch")
        if self.bounds.shape != (h, w, 3, 2):
            raise ValueError("bounds map shape mismatch")
        if self.vignetting.shape != (h, w, 3):
            raise ValueError("vignetting map shape mismatch")

    @classmethod
    def render(cls, buffer, vmap: VignettingMap) -> "ControllerInput":
        """Snapshot a :class:`~hdrfusion.fusion.MapBuffer` for selection."""
        return cls(
            radiance=buffer.radiance_map(),
            weight=buffer.weight_map(),
            bounds=buffer.bounds_map(),
            vignetting=vmap.values,
            program=buffer.program,
        )

    @property
    def incomplete_mask(self) -> np.ndarray:
        return self.weight == 0.0


@dataclass(frozen=True)
class UtilityRecord:
    """Utilities of one candidate time during one selection."""

    frame: int
    t_candidate: float
    exploration: float
    refinement: float
    total: float
    chosen: bool


def saturation_probability(bounds: tuple[float, float], window: tuple[float, float]) -> float:
    """Probability that a log-uniform radiance in ``bounds`` lands in ``window``.

    Both intervals must have positive endpoints.  A degenerate (zero
    length) bounds interval is a point mass: the result is 1 if the point
    lies inside the window, else 0.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    wlo, whi = float(window[0]), float(window[1])
    if lo <= 0 or hi <= 0 or wlo <= 0 or whi <= 0:
        raise ValueError("interval endpoints must be positive")
    if hi < lo or whi < wlo:
        raise ValueError("intervals must be ordered")
    if lo == hi:
        return 1.0 if wlo <= lo <= whi else 0.0
    ilo, ihi = max(lo, wlo), min(hi, whi)
    if ihi <= ilo:
        return 0.0
    return float(np.log(ihi / ilo) / np.log(hi / lo))


def _probability_array(
    bounds: np.ndarray, wlo: np.ndarray, whi: np.ndarray
) -> np.ndarray:
    """Vectorized :func:`saturation_probability` over (..., 2) intervals."""
    lo = bounds[..., 0]
    hi = bounds[..., 1]
    degenerate = lo == hi
    ilo = np.maximum(lo, wlo)
    ihi = np.minimum(hi, whi)
    overlap = ihi > ilo
    p = np.zeros(lo.shape, dtype=np.float64)
    safe = overlap & ~degenerate
    if np.any(safe):
        p[safe] = np.log(ihi[safe] / ilo[safe]) / np.log(hi[safe] / lo[safe])
    inside = degenerate & (wlo <= lo) & (lo <= whi)
    p[inside] = 1.0
    return p


def exploration_utility(
    t: float,
    bounds: np.ndarray,
    vignetting: np.ndarray,
    program: ExposureProgram,
) -> float:
    """Expected number of incomplete points completed by a frame at time t.

    ``bounds`` holds the radiance intervals of the incomplete points,
    shape (..., 3, 2); ``vignetting`` the matching attenuations (..., 3).
    The per-point success probability is the product over channels of the
    chance that the radiance falls inside the detectable radiance window
    [floor, ceiling] / (t * v).
    """
    if t not in program.times:
        raise ValueError(f"time {t} is not a member of the exposure program")
    bounds = np.asarray(bounds, dtype=np.float64)
    vignetting = np.asarray(vignetting, dtype=np.float64)
    if bounds.size == 0:
        return 0.0
    tv = t * vignetting
    p = _probability_array(bounds, program.exposure_min / tv, program.exposure_max / tv)
    return float(np.sum(np.prod(p, axis=-1)))


def refinement_utility(
    t: float,
    radiance: np.ndarray,
    weight: np.ndarray,
    vignetting: np.ndarray,
    program: ExposureProgram,
) -> float:
    """Weight gain from refreshing complete points with a frame at time t.

    ``radiance``/``weight``/``vignetting`` describe the complete points
    (shapes (..., 3), (...,), (..., 3)).  Points whose expected irradiance
    radiance * v falls in the detectable range on all channels contribute
    t / weight each.
    """
    if t not in program.times:
        raise ValueError(f"time {t} is not a member of the exposure program")
    radiance = np.asarray(radiance, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    vignetting = np.asarray(vignetting, dtype=np.float64)
    if weight.size == 0:
        return 0.0
    lo, hi = program.exposure_min / t, program.exposure_max / t
    irradiance = radiance * vignetting
    valid = np.all((irradiance >= lo) & (irradiance <= hi), axis=-1)
    if not np.any(valid):
        return 0.0
    return float(np.sum(t / weight[valid]))


def select_exposure(
    view: ControllerInput, config: ControllerConfig = ControllerConfig()
) -> tuple[float, list[UtilityRecord]]:
    """Pick the program time maximizing beta * U_e + U_r.

    Returns the chosen time and the full per-candidate utility trace.
    Ties resolve according to the config (toward the larger time by
    default).  Selection is deterministic for identical inputs.
    """
    incomplete = view.incomplete_mask
    inc_bounds = view.bounds[incomplete]
    inc_vig = view.vignetting[incomplete]
    com_radiance = view.radiance[~incomplete]
    com_weight = view.weight[~incomplete]
    com_vig = view.vignetting[~incomplete]

    best_t = None
    best_u = -np.inf
    entries: list[tuple[float, float, float, float]] = []
    for t in view.program.times:
        u_e = exploration_utility(t, inc_bounds, inc_vig, view.program)
        u_r = refinement_utility(t, com_radiance, com_weight, com_vig, view.program)
        total = config.beta * u_e + u_r
        entries.append((t, u_e, u_r, total))
        better = total > best_u if config.tie_break == "smallest" else total >= best_u
        if best_t is None or better:
            best_t, best_u = t, total
    trace = [
        UtilityRecord(
            frame=-1,
            t_candidate=t,
            exploration=u_e,
            refinement=u_r,
            total=total,
            chosen=(t == best_t),
        )
        for t, u_e, u_r, total in entries
    ]
    return best_t, trace


# ---------------------------------------------------------------------------
# Controller objects for the harness
# ---------------------------------------------------------------------------


class Controller(Protocol):
    """Anything that can pick the next exposure time for the harness."""

    name: str

    def select(self, view: ControllerInput) -> tuple[float, list[UtilityRecord]]: ...

    def reset(self) -> None: ...


@dataclass
class UtilityController:
    """Map-aware controller wrapping :func:`select_exposure`."""

    config: ControllerConfig = field(default_factory=ControllerConfig)
    name: str = "proposed"

    def select(self, view: ControllerInput) -> tuple[float, list[UtilityRecord]]:
        return select_exposure(view, self.config)

    def reset(self) -> None:  # stateless
        return None


class SweepController:
    """Baseline that sweeps the exposure range and wraps at the end.

    The raw cursor moves by a multiplicative factor or additive step each
    selection and snaps to the nearest program time; leaving the range
    restarts the sweep at the opposite end.
    """

    def __init__(self, kind: str, program: ExposureProgram, step: float) -> None:
        if kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {kind!r}")
        multiplicative = kind.startswith("multiplicative")
        if multiplicative and step <= 1:
            raise ValueError("multiplicative sweeps need a factor > 1")
        if not multiplicative and step <= 0:
            raise ValueError("additive sweeps need a step > 0")
        self.kind = kind
        self.program = program
        self.step = step
        self.name = f"{kind}:{step:g}"
        self._upward = kind.endswith("up")
        self._multiplicative = multiplicative
        self._cursor = 0.0
        self.reset()

    def reset(self) -> None:
        self._cursor = self.program.t_min if self._upward else self.program.t_max

    def _advance(self, value: float) -> float:
        if self._upward:
            value = value * self.step if self._multiplicative else value + self.step
            if value > self.program.t_max:
                value = self.program.t_min
        else:
            value = value / self.step if self._multiplicative else value - self.step
            if value < self.program.t_min:
                value = self.program.t_max
        return value

    def select(self, view: ControllerInput) -> tuple[float, list[UtilityRecord]]:
        t = self.program.nearest_time(self._cursor)
        self._cursor = self._advance(self._cursor)
        return t, []

    def __iter__(self):
        while True:
            yield self.select(None)[0]  # type: ignore[arg-type]


def baseline_sweep(kind: str, program: ExposureProgram, step: float) -> SweepController:
    """Construct a sweep baseline; see :class:`SweepController`."""
    return SweepController(kind, program, step)


# ---------------------------------------------------------------------------
# Utility trace output
# ---------------------------------------------------------------------------


def write_utility_trace(records: Iterable[UtilityRecord], path: str | Path) -> None:
    """CSV of per-candidate utilities, one row per (selection, candidate)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "t_candidate", "U_e", "U_r", "U_total", "chosen"])
        for r in records:
            writer.writerow(
                [
                    r.frame,
                    repr(float(r.t_candidate)),
                    repr(float(r.exploration)),
                    repr(float(r.refinement)),
                    repr(float(r.total)),
                    int(r.chosen),
                ]
            )
