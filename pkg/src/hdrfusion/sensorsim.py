"""Synthetic camera: noisy, saturating captures of a ground-truth scene.

A capture realizes the imaging model z = f(t*L*v + n) with n drawn from a
zero-mean Gaussian whose variance is proportional to the exposure t*L*v,
clamps negative excursions, and quantizes through the forward response.
Exposure commands take effect a configurable number of frames later,
mimicking real camera control lag.  Noise is keyed per frame with a
counter-based generator, so a frame's content depends only on the seed
and frame index, never on how earlier draws were batched.

The module also provides the classical batch HDR merge used as the
ground-truth oracle, and a few deterministic scene generators.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fileio import load_pfm
from .radiometry import (
    ExposureProgram,
    LdrFrame,
    NoiseModel,
    ResponseCurve,
    VignettingMap,
    forward_response,
    inverse_response,
)

__all__ = [
    "CameraSim",
    "Scene",
    "batch_ground_truth",
    "make_scene",
    "synthetic_vignetting",
]

SCENE_KINDS = ("log-gradient", "checkerboard", "bright-dark-split", "from-file")

DEFAULT_LAG = 3


@dataclass(frozen=True)
class Scene:
    """Ground-truth linear RGB radiance grid."""

    radiance: np.ndarray  # (h, w, 3), >= 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.radiance, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"scene must be (h, w, 3), got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("radiance must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "radiance", arr)

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def height(self) -> int:
        return self.radiance.shape[0]


def make_scene(kind: str, **params) -> Scene:
    """Deterministic test scenes.

    * ``log-gradient``: columns span [low, high] geometrically; needs
      width, height, low, high.
    * ``checkerboard``: two radiance levels on square tiles; needs width,
      height, low, high, optional tile (default 8).
    * ``bright-dark-split``: left half low, right half high; needs width,
      height, low, high.
    * ``from-file``: 3-channel PFM of linear radiance; needs path.
    """
    if kind == "from-file":
        img = load_pfm(params["path"])
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        return Scene(img)

    try:
        width = int(params["width"])
        height = int(params["height"])
        low = float(params["low"])
        high = float(params["high"])
    except KeyError as missing:
        raise ValueError(f"scene kind {kind!r} needs parameter {missing}") from None
    if width < 1 or height < 1:
        raise ValueError("scene dimensions must be positive")
    if not 0 < low <= high:
        raise ValueError("need 0 < low <= high")

    if kind == "log-gradient":
        denom = max(width - 1, 1)
        column = low * (high / low) ** (np.arange(width) / denom)
        plane = np.tile(column, (height, 1))
    elif kind == "checkerboard":
        tile = int(params.get("tile", 8))
        if tile < 1:
            raise ValueError("tile size must be positive")
        yy, xx = np.indices((height, width))
        plane = np.where(((yy // tile + xx // tile) % 2) == 0, low, high)
    elif kind == "bright-dark-split":
        plane = np.full((height, width), low)
        plane[:, width // 2 :] = high
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    return Scene(np.repeat(plane[:, :, None], 3, axis=2).astype(np.float64))


def synthetic_vignetting(
    width: int, height: int, corner_attenuation: float = 0.5
) -> VignettingMap:
    """Radial falloff (1 + (r/r0)^2)^-2 with the given corner attenuation.

    The profile is renormalized so its brightest pixel is exactly 1.
    """
    if not 0 < corner_attenuation <= 1:
        raise ValueError("corner attenuation must lie in (0, 1]")
    yy, xx = np.indices((height, width), dtype=np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    corner_r2 = cy**2 + cx**2
    if corner_r2 == 0 or corner_attenuation == 1.0:
        return VignettingMap.uniform(width, height)
    # Solve (1 + (r_corner/r0)^2)^-2 = attenuation for r0.
    ratio2 = corner_attenuation ** -0.5 - 1.0
    profile = (1.0 + r2 / corner_r2 * ratio2) ** -2
    profile /= profile.max()
    return VignettingMap(np.repeat(profile[:, :, None], 3, axis=2))


class CameraSim:
    """Simulated camera with exposure command lag.

    Commands are queued and become effective exactly ``lag`` captures
    after they are issued; several pending commands apply in order.  Two
    simulators with the same seed and command/capture sequence produce
    bit-identical frames.  Callers must serialize command/capture calls
    per instance; the per-pixel work inside a capture carries no state.
    """

    def __init__(
        self,
        curve: ResponseCurve,
        vmap: VignettingMap,
        program: ExposureProgram,
        noise: NoiseModel | None = None,
        lag: int = DEFAULT_LAG,
        seed: int = 0,
        initial_time: float | None = None,
    ) -> None:
        if lag < 0:
            raise ValueError("lag must be non-negative")
        t0 = program.times[0] if initial_time is None else float(initial_time)
        if t0 not in program.times:
            raise ValueError("initial time must be a member of the program")
        self.curve = curve
        self.vmap = vmap
        self.program = program
        self.noise = noise
        self.lag = lag
        self.seed = int(seed)
        self._steady_time = t0
        self._pending: deque[tuple[int, float]] = deque()  # (due frame, time)
        self._frame_index = 0

    @property
    def frame_index(self) -> int:
        return self._frame_index

    @property
    def pending_commands(self) -> int:
        return len(self._pending)

    def command_exposure(self, t: float) -> None:
        """Request exposure time ``t``; effective ``lag`` captures later."""
        if t not in self.program.times:
            raise ValueError(f"time {t} is not a member of the exposure program")
        self._pending.append((self._frame_index + self.lag, float(t)))

    def effective_time(self) -> float:
        """Exposure time the next capture will use."""
        t = self._steady_time
        for due, value in self._pending:
            if due <= self._frame_index:
                t = value
            else:
                break
        return t

    def capture(self, scene: Scene) -> LdrFrame:
        """Expose the scene once and return the quantized frame."""
        if (scene.height, scene.width) != (self.vmap.height, self.vmap.width):
            raise ValueError("scene dimensions must match the vignetting map")
        while self._pending and self._pending[0][0] <= self._frame_index:
            self._steady_time = self._pending.popleft()[1]
        t = self._steady_time

        exposure = t * scene.radiance * self.vmap.values
        if self.noise is not None:
            gen = np.random.Generator(
                np.random.Philox(
                    key=np.array(
                        [self.seed & 0xFFFFFFFFFFFFFFFF, self._frame_index],
                        dtype=np.uint64,
                    )
                )
            )
            sigma = np.sqrt(self.noise.a * exposure)
            exposure = exposure + sigma * gen.standard_normal(exposure.shape)
            np.maximum(exposure, 0.0, out=exposure)
        z = forward_response(self.curve, exposure)
        self._frame_index += 1
        return LdrFrame(pixels=z, time=t)


def batch_ground_truth(
    frames: Sequence[LdrFrame],
    curve: ResponseCurve,
    vmap: VignettingMap,
    noise: NoiseModel | None,
    program: ExposureProgram,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical weighted HDR merge over a bracketed stack.

    Every well-exposed sample contributes its radiance estimate weighted
    by its inverse variance; with variance proportional to radiance over
    t*v this collapses to sum(g(z)) / sum(t*v) per channel.  Channels are
    merged independently (no cross-channel validity rule here).

    Returns (radiance (h, w, 3), valid (h, w) bool); a pixel is valid
    when all three channels received at least one well-exposed sample,
    and channels with no sample hold NaN.
    """
    if not frames:
        raise ValueError("need at least one frame")
    shape = frames[0].pixels.shape
    if any(f.pixels.shape != shape for f in frames):
        raise ValueError("all frames must share dimensions")
    if (vmap.height, vmap.width) != (shape[0], shape[1]):
        raise ValueError("vignetting map dimensions must match the frames")

    weighted = np.zeros(shape, dtype=np.float64)
    total_weight = np.zeros(shape, dtype=np.float64)
    # Any fixed per-pixel reference radiance cancels from the weighted
    # mean; a first pass supplies one so the weights are true inverse
    # variances rather than their t*v proportional stand-ins.
    reference = np.ones(shape, dtype=np.float64)
    if noise is not None:
        num = np.zeros(shape, dtype=np.float64)
        den = np.zeros(shape, dtype=np.float64)
        for f in frames:
            g = inverse_response(curve, f.pixels)
            well = (f.pixels > program.under_threshold) & (
                f.pixels < program.over_threshold
            )
            tv = f.time * vmap.values
            num += np.where(well, g, 0.0)
            den += np.where(well, tv, 0.0)
        np.divide(num, den, out=reference, where=den > 0)
        np.maximum(reference, np.finfo(np.float64).tiny, out=reference)

    a = noise.a if noise is not None else np.ones(3)
    for f in frames:
        g = inverse_response(curve, f.pixels)
        well = (f.pixels > program.under_threshold) & (f.pixels < program.over_threshold)
        tv = f.time * vmap.values
        estimate = g / tv
        variance = a * reference / tv
        w = np.where(well, 1.0 / variance, 0.0)
        weighted += w * estimate
        total_weight += w

    valid_channel = total_weight > 0
    radiance = np.full(shape, np.nan)
    np.divide(weighted, total_weight, out=radiance, where=valid_channel)
    return radiance, valid_channel.all(axis=2)
