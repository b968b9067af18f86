"""Radiometric camera model and calibration.

A camera maps scene radiance to 8-bit intensities through

    z = f(x + n),    x = t * L * v,

where ``t`` is the exposure time, ``v`` the per-pixel vignetting
attenuation, ``f`` the quantizing response function and ``n`` the
signal-dependent sensor noise with variance proportional to the exposure
``x``.  Everything in this module is a pure function of immutable inputs:
response tables, vignetting maps, noise coefficients, exposure programs,
and the two calibration fits that recover the tables and coefficients from
image stacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CalibrationError",
    "CrfFit",
    "ExposureProgram",
    "LdrFrame",
    "NoiseFit",
    "NoiseModel",
    "ResponseCurve",
    "VignettingMap",
    "detectable_range",
    "estimate_radiance",
    "fit_noise_coefficient",
    "fit_response_curve",
    "forward_response",
    "inverse_response",
    "radiance_variance",
]

TABLE_SIZE = 256  # 8-bit sensor codomain

DEFAULT_UNDER_THRESHOLD = 4  # z <= 4 counts as under-exposed
DEFAULT_OVER_THRESHOLD = 250  # z >= 250 counts as over-exposed
DEFAULT_SMOOTHNESS = 50.0
DEFAULT_NOISE_BINS = 100


class CalibrationError(RuntimeError):
    """A calibration fit could not be carried out on the given data."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResponseCurve:
    """Per-channel inverse response table.

    ``table[c][z]`` is the normalized exposure that produces intensity
    ``z`` on channel ``c``; each channel is non-decreasing, non-negative
    and ends at exactly 1.  The forward direction (exposure to intensity)
    is recovered by :func:`forward_response`.
    """

    table: np.ndarray  # shape (3, 256), float64

    def __post_init__(self) -> None:
        tbl = np.asarray(self.table, dtype=np.float64)
        if tbl.shape != (3, TABLE_SIZE):
            raise ValueError(f"response table must be (3, {TABLE_SIZE}), got {tbl.shape}")
        if np.any(tbl < 0.0):
            raise ValueError("response table values must be non-negative")
        if np.any(np.diff(tbl, axis=1) < 0.0):
            raise ValueError("response table must be non-decreasing per channel")
        if not np.all(tbl[:, -1] == 1.0):
            raise ValueError("response table must end at exactly 1.0")
        tbl.setflags(write=False)
        object.__setattr__(self, "table", tbl)

    @classmethod
    def linear(cls) -> "ResponseCurve":
        ramp = np.arange(TABLE_SIZE, dtype=np.float64) / (TABLE_SIZE - 1)
        return cls(np.tile(ramp, (3, 1)))

    @classmethod
    def gamma(cls, exponent: float) -> "ResponseCurve":
        """Power-law curve ``(z/255) ** exponent``; exponent 1 is linear."""
        if exponent <= 0:
            raise ValueError("gamma exponent must be positive")
        ramp = (np.arange(TABLE_SIZE, dtype=np.float64) / (TABLE_SIZE - 1)) ** exponent
        ramp[-1] = 1.0
        return cls(np.tile(ramp, (3, 1)))

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.table, axis=1) > 0.0))


@dataclass(frozen=True)
class VignettingMap:
    """Per-pixel, per-channel attenuation factors in (0, 1].

    At least one pixel must be exactly 1 so the map is anchored; the
    anchor is conventionally at the image center where the lens does not
    attenuate.
    """

    values: np.ndarray  # shape (h, w, 3), float64 in (0, 1]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[2] != 3:
            raise ValueError(f"vignetting map must be (h, w, 3), got {vals.shape}")
        if np.any(vals <= 0.0) or np.any(vals > 1.0):
            raise ValueError("vignetting values must lie in (0, 1]")
        if not np.any(vals == 1.0):
            raise ValueError("vignetting map needs a unit-attenuation anchor pixel")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, width: int, height: int) -> "VignettingMap":
        return cls(np.ones((height, width, 3), dtype=np.float64))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Slope of the exposure-variance line, one coefficient per channel."""

    a: np.ndarray  # shape (3,), > 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.a, dtype=np.float64)
        if arr.shape != (3,):
            raise ValueError(f"noise coefficients must be shape (3,), got {arr.shape}")
        if np.any(arr <= 0.0):
            raise ValueError("noise coefficients must be strictly positive")
        arr.setflags(write=False)
        object.__setattr__(self, "a", arr)


@dataclass(frozen=True)
class LdrFrame:
    """8-bit RGB image tagged with the exposure time it was captured at."""

    pixels: np.ndarray  # shape (h, w, 3), uint8
    time: float  # seconds, > 0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame pixels must be (h, w, 3), got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError("frame pixels must be uint8")
        if not self.time > 0:
            raise ValueError("exposure time must be positive")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ExposureProgram:
    """Discrete exposure times plus the detectable ranges they induce.

    ``exposure_min``/``exposure_max`` are the smallest and largest
    normalized exposures still classified well-exposed, taken
    conservatively across channels (max of the per-channel lower edges,
    min of the upper ones).  ``radiance_min``/``radiance_max`` span the
    union of all per-time detectable ranges and seed the radiance bounds
    of unobserved points; ``bound_grid`` is the 256-level log-spaced grid
    those bounds are quantized on.
    """

    times: tuple[float, ...]
    under_threshold: int = DEFAULT_UNDER_THRESHOLD
    over_threshold: int = DEFAULT_OVER_THRESHOLD
    exposure_min: float = field(init=False)
    exposure_max: float = field(init=False)
    radiance_min: float = field(init=False)
    radiance_max: float = field(init=False)
    weight_cap: float = None  # type: ignore[assignment]  # default 64 * max(times)
    curve: "ResponseCurve" = None  # type: ignore[assignment]  # default linear
    bound_grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ValueError("exposure program needs at least one time")
        if any(t <= 0 for t in times):
            raise ValueError("exposure times must be positive")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("exposure times must be strictly increasing")
        object.__setattr__(self, "times", times)

        if not 0 <= self.under_threshold < self.over_threshold <= TABLE_SIZE - 1:
            raise ValueError("need 0 <= under_threshold < over_threshold <= 255")

        curve = self.curve if self.curve is not None else ResponseCurve.linear()
        object.__setattr__(self, "curve", curve)

        x_min = float(np.max(curve.table[:, self.under_threshold + 1]))
        x_max = float(np.min(curve.table[:, self.over_threshold]))
        if not 0.0 < x_min < x_max:
            raise ValueError("curve is degenerate over the well-exposed intensity range")
        object.__setattr__(self, "exposure_min", x_min)
        object.__setattr__(self, "exposure_max", x_max)

        object.__setattr__(self, "radiance_min", x_min / times[-1])
        object.__setattr__(self, "radiance_max", x_max / times[0])

        cap = self.weight_cap if self.weight_cap is not None else 64.0 * times[-1]
        if cap <= 0:
            raise ValueError("weight cap must be positive")
        object.__setattr__(self, "weight_cap", float(cap))

        grid = np.exp(
            np.linspace(np.log(self.radiance_min), np.log(self.radiance_max), TABLE_SIZE)
        )
        grid[0] = self.radiance_min
        grid[-1] = self.radiance_max
        grid.setflags(write=False)
        object.__setattr__(self, "bound_grid", grid)

    @classmethod
    def geometric(
        cls,
        t_min: float,
        t_max: float,
        count: int,
        **kwargs,
    ) -> "ExposureProgram":
        """Program of `count` times spaced geometrically over [t_min, t_max]."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if count == 1:
            return cls(times=(t_min,), **kwargs)
        times = np.exp(np.linspace(np.log(t_min), np.log(t_max), count))
        times[0], times[-1] = t_min, t_max
        return cls(times=tuple(times), **kwargs)

    @property
    def t_min(self) -> float:
        return self.times[0]

    @property
    def t_max(self) -> float:
        return self.times[-1]

    def effective_range(self) -> tuple[float, float]:
        """Irradiance interval observable at some time of the program."""
        return (self.exposure_min / self.t_max, self.exposure_max / self.t_min)

    def nearest_time(self, t: float) -> float:
        """Member of the program closest to ``t``; ties go to the larger one."""
        times = np.asarray(self.times)
        dist = np.abs(times - t)
        best = np.flatnonzero(dist == dist.min())[-1]
        return self.times[best]


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------


def inverse_response(curve: ResponseCurve, z) -> np.ndarray:
    """Normalized exposure for an intensity triplet (or (..., 3) array).

    A scalar intensity is broadcast to all three channels.
    """
    z = np.asarray(z)
    if z.ndim == 0:
        z = np.full(3, z)
    if z.shape[-1] != 3:
        raise ValueError("intensity must have a trailing RGB axis")
    if np.any(z < 0) or np.any(z > TABLE_SIZE - 1):
        raise ValueError("intensities must lie in 0..255")
    idx = z.astype(np.intp)
    out = np.empty(z.shape, dtype=np.float64)
    for c in range(3):
        out[..., c] = curve.table[c][idx[..., c]]
    return out


def forward_response(curve: ResponseCurve, x) -> np.ndarray:
    """Intensity produced by normalized exposure ``x`` on each channel.

    ``x`` is clamped to [0, 1]; the result is the largest intensity whose
    table entry does not exceed ``x`` (ties resolve to the larger
    intensity), with the rails mapped to 0 and 255.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = np.full(3, x)
    if x.shape[-1] != 3:
        raise ValueError("exposure must have a trailing RGB axis")
    xc = np.clip(x, 0.0, 1.0)
    out = np.empty(x.shape, dtype=np.uint8)
    for c in range(3):
        idx = np.searchsorted(curve.table[c], xc[..., c], side="right") - 1
        out[..., c] = np.clip(idx, 0, TABLE_SIZE - 1)
    return out


def estimate_radiance(curve: ResponseCurve, z, t: float, v) -> np.ndarray:
    """Radiance estimate g(z) / (t * v) for a pixel observation."""
    if not t > 0:
        raise ValueError("exposure time must be positive")
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0.0) or np.any(v > 1.0):
        raise ValueError("attenuation must lie in (0, 1]")
    return inverse_response(curve, z) / (t * v)


def radiance_variance(model: NoiseModel, radiance, t: float, v) -> np.ndarray:
    """Variance of a radiance estimate: a * L / (t * v)."""
    if not t > 0:
        raise ValueError("exposure time must be positive")
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0.0) or np.any(v > 1.0):
        raise ValueError("attenuation must lie in (0, 1]")
    radiance = np.asarray(radiance, dtype=np.float64)
    if np.any(radiance < 0.0):
        raise ValueError("radiance must be non-negative")
    return model.a * radiance / (t * v)


def detectable_range(program: ExposureProgram, t: float) -> tuple[float, float]:
    """Irradiance interval observable without saturation at time ``t``."""
    if t not in program.times:
        raise ValueError(f"time {t} is not a member of the exposure program")
    return (program.exposure_min / t, program.exposure_max / t)


# ---------------------------------------------------------------------------
# Response-curve calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrfFit:
    """Result of a response-curve calibration."""

    curve: ResponseCurve
    residual_rms: np.ndarray  # per-channel RMS of the data rows, log domain
    sites: int
    exposures: int


def _hat_weights() -> np.ndarray:
    # Triangle over 0..255, zero at both rails so clipped samples drop out.
    z = np.arange(TABLE_SIZE, dtype=np.float64)
    return np.minimum(z, (TABLE_SIZE - 1) - z) / ((TABLE_SIZE - 1) / 2)


def _sample_sites(height: int, width: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    # Uniform grid over the image, aspect-aware.
    rows = max(1, int(round(np.sqrt(count * height / width))))
    cols = max(1, int(np.ceil(count / rows)))
    ys = np.linspace(0, height - 1, rows).round().astype(np.intp)
    xs = np.linspace(0, width - 1, cols).round().astype(np.intp)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return yy.ravel(), xx.ravel()


def fit_response_curve(
    stack: Sequence[LdrFrame],
    smoothness: float = DEFAULT_SMOOTHNESS,
    sample_count: int = 192,
) -> CrfFit:
    """Recover the inverse response from a bracketed stack of a static scene.

    Solves, per channel, the log-domain least-squares system relating each
    sampled pixel's table entry to the (unknown) site radiance and the
    known exposure time.  Hat weighting suppresses clipped samples, a
    second-difference penalty of weight ``smoothness`` regularizes the
    table, and the middle entry anchors the gauge freedom.  Because the
    quantizer floors (intensity z spans exposures [g(z), g(z+1))), the
    fitted level for z sits half a step above the table convention; half
    the local log step is subtracted to recover the bin edge.  The table
    is then made monotone and rescaled so its last entry is exactly 1.

    Parameters
    ----------
    stack : frames of the same scene at two or more distinct exposure times.
    smoothness : weight of the curvature penalty on the log table.
    sample_count : approximate number of pixel sites placed on a uniform grid.

    Returns
    -------
    CrfFit with the normalized curve and the per-channel RMS residual of
    the data rows.

    Raises
    ------
    CalibrationError
        If fewer than two distinct exposure times are given, or the
        sampled data cannot determine the table (all samples clipped or
        constant).
    """
    if not stack:
        raise CalibrationError("empty calibration stack")
    times = np.array([f.time for f in stack], dtype=np.float64)
    if len(set(times.tolist())) < 2:
        raise CalibrationError("need at least two distinct exposure times")
    shape = stack[0].pixels.shape
    if any(f.pixels.shape != shape for f in stack):
        raise CalibrationError("all frames in the stack must share dimensions")

    ys, xs = _sample_sites(shape[0], shape[1], sample_count)
    if ys.size < 50:
        raise CalibrationError("image too small for the required 50 sample sites")

    z = np.stack([f.pixels[ys, xs, :] for f in stack], axis=1)  # (sites, frames, 3)
    log_t = np.log(times)
    hat = _hat_weights()

    tables = np.empty((3, TABLE_SIZE), dtype=np.float64)
    residuals = np.empty(3, dtype=np.float64)
    for c in range(3):
        zc = z[:, :, c]
        w = hat[zc]
        # Sites with no usable sample leave their radiance unknown; drop them.
        usable = w.sum(axis=1) > 0
        zc, wc = zc[usable], w[usable]
        n_sites = int(usable.sum())
        if np.unique(zc[wc > 0]).size < 2:
            raise CalibrationError(
                "calibration samples are saturated or constant; system is rank deficient"
            )

        n_data = zc.size
        n_unknown = TABLE_SIZE + n_sites
        a = np.zeros((n_data + 1 + (TABLE_SIZE - 2), n_unknown))
        b = np.zeros(a.shape[0])

        rows = np.arange(n_data)
        flat_z = zc.ravel()
        flat_w = wc.ravel()
        site_of = np.repeat(np.arange(n_sites), zc.shape[1])
        a[rows, flat_z] = flat_w
        a[rows, TABLE_SIZE + site_of] = -flat_w
        b[rows] = flat_w * np.tile(log_t, n_sites)

        a[n_data, TABLE_SIZE // 2] = 1.0  # gauge anchor

        smooth_rows = n_data + 1 + np.arange(TABLE_SIZE - 2)
        sw = smoothness * hat[1 : TABLE_SIZE - 1]
        a[smooth_rows, np.arange(TABLE_SIZE - 2)] = sw
        a[smooth_rows, np.arange(1, TABLE_SIZE - 1)] = -2.0 * sw
        a[smooth_rows, np.arange(2, TABLE_SIZE)] = sw

        try:
            solution = np.linalg.solve(a.T @ a, a.T @ b)
        except np.linalg.LinAlgError:
            raise CalibrationError("calibration system is rank deficient") from None
        if not np.all(np.isfinite(solution)):
            raise CalibrationError("calibration system is rank deficient")

        log_g = solution[:TABLE_SIZE].copy()
        half_step = np.diff(log_g) / 2.0  # center-of-bin to bin-edge convention
        log_g[:-1] -= half_step
        log_g[-1] -= half_step[-1]
        log_g = np.maximum.accumulate(log_g)
        tables[c] = np.exp(log_g - log_g[-1])
        tables[c, -1] = 1.0

        data_residual = a[:n_data] @ solution - b[:n_data]
        residuals[c] = float(np.sqrt(np.mean(data_residual**2)))

    return CrfFit(
        curve=ResponseCurve(tables),
        residual_rms=residuals,
        sites=int(ys.size),
        exposures=len(set(times.tolist())),
    )


# ---------------------------------------------------------------------------
# Noise calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseFit:
    """Zero-intercept fit of per-bin median exposure variance vs mean exposure.

    ``slope`` holds the fitted line slopes; a channel is ``degenerate``
    when its observed variance is identically zero (noise-free input), in
    which case the slope is reported as 0 and no noise model can be built.
    """

    slope: np.ndarray  # (3,)
    degenerate: np.ndarray  # (3,) bool
    bins_used: np.ndarray  # (3,) int

    def model(self) -> NoiseModel:
        if bool(np.any(self.degenerate)):
            raise CalibrationError("degenerate (zero-variance) channel; no noise model")
        return NoiseModel(self.slope.copy())


def fit_noise_coefficient(
    stacks: Sequence[Sequence[LdrFrame]],
    curve: ResponseCurve,
    bins: int = DEFAULT_NOISE_BINS,
    program: ExposureProgram | None = None,
) -> NoiseFit:
    """Fit the exposure-variance slope from repeated captures of a static scene.

    For every stack (repeated frames at one exposure setting) the
    per-pixel mean and variance of the normalized exposure g(z) are
    computed, pooled across stacks, grouped by mean into ``bins`` bins
    spanning [0, 1], reduced to the median variance per bin, and fitted
    with a least-squares line through the origin.  Bins whose mean
    exposure exceeds 0.95 of the well-exposed ceiling are excluded, since
    saturation truncates the sample distribution there.

    Raises
    ------
    CalibrationError
        If any stack has fewer than two frames, or fewer than three bins
        are populated for some channel.
    """
    if not stacks:
        raise CalibrationError("no capture stacks given")
    if bins < 3:
        raise CalibrationError("need at least three bins")
    over = program.over_threshold if program is not None else DEFAULT_OVER_THRESHOLD
    x_max = float(np.min(curve.table[:, over]))

    means: list[np.ndarray] = []
    variances: list[np.ndarray] = []
    for stack in stacks:
        if len(stack) < 2:
            raise CalibrationError("each setting needs at least two repeated frames")
        exposures = np.stack(
            [inverse_response(curve, f.pixels) for f in stack], axis=0
        )  # (n, h, w, 3)
        means.append(exposures.mean(axis=0).reshape(-1, 3))
        variances.append(exposures.var(axis=0, ddof=1).reshape(-1, 3))
    mean = np.concatenate(means, axis=0)
    var = np.concatenate(variances, axis=0)

    edges = np.linspace(0.0, 1.0, bins + 1)
    slope = np.zeros(3)
    degenerate = np.zeros(3, dtype=bool)
    bins_used = np.zeros(3, dtype=np.intp)
    for c in range(3):
        which = np.clip(np.digitize(mean[:, c], edges) - 1, 0, bins - 1)
        bin_mean = []
        bin_var = []
        for b in range(bins):
            sel = which == b
            if not np.any(sel):
                continue
            m = float(mean[sel, c].mean())
            if m > 0.95 * x_max:
                continue
            bin_mean.append(m)
            bin_var.append(float(np.median(var[sel, c])))
        if len(bin_mean) < 3:
            raise CalibrationError(
                f"channel {c}: only {len(bin_mean)} populated bins, need 3"
            )
        bm = np.asarray(bin_mean)
        bv = np.asarray(bin_var)
        bins_used[c] = bm.size
        if np.all(bv == 0.0):
            degenerate[c] = True
            continue
        slope[c] = float(bm @ bv / (bm @ bm))
    return NoiseFit(slope=slope, degenerate=degenerate, bins_used=bins_used)
