"""Two-state incremental HDR color estimation.

Every map point starts *incomplete*: nothing is known about its radiance
beyond the system-wide range, and each saturated observation tightens a
per-channel radiance interval (over-exposure raises the lower bound,
under-exposure lowers the upper bound; once a channel has produced a
well-exposed sample its interval becomes the running hull of those
samples).  The first observation whose three channels are all
well-exposed *promotes* the point to the *complete* state: an exact
radiance estimate with an accumulated confidence weight, updated by every
further fully-valid observation as an inverse-variance weighted running
mean.  Under the proportional noise model that mean reduces to

    radiance = sum(g(z_i)) / sum(t_i * v_i),

so the accumulators store the numerator and denominator per channel and
quantize only when a point is packed into its 64-bit storage word.

Partially saturated observations never touch a complete point, keeping
channel updates synchronized; this trades a little information for
robustness against mis-associated pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Union

import numpy as np

from .radiometry import ExposureProgram, LdrFrame, ResponseCurve, VignettingMap

__all__ = [
    "Classification",
    "CompleteColor",
    "FusionStats",
    "HdrColor",
    "IncompleteColor",
    "MapBuffer",
    "Observation",
    "PackedColor",
    "classify",
    "fuse_frame",
    "load_snapshot",
    "pack",
    "pack_map",
    "promote",
    "save_snapshot",
    "unpack",
    "unpack_map",
    "update_complete",
    "update_incomplete",
]

WEIGHT_CODE_BITS = 16
RADIANCE_CODE_MAX = 0xFFFF
BOUND_CODE_MAX = 0xFF

GREEN = 1  # channel whose accumulated weight is stored as the common weight


class Classification(IntEnum):
    UNDER = 0
    WELL = 1
    OVER = 2


@dataclass(frozen=True)
class Observation:
    """One pixel sample: intensities, exposure time, local attenuation."""

    z: np.ndarray  # (3,) uint8
    time: float
    attenuation: np.ndarray  # (3,) in (0, 1]
    classification: np.ndarray  # (3,) Classification values

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.uint8).reshape(3)
        v = np.asarray(self.attenuation, dtype=np.float64).reshape(3)
        cls = np.asarray(self.classification, dtype=np.int8).reshape(3)
        if not self.time > 0:
            raise ValueError("exposure time must be positive")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise ValueError("attenuation must lie in (0, 1]")
        for arr in (z, v, cls):
            arr.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "attenuation", v)
        object.__setattr__(self, "classification", cls)

    @classmethod
    def create(
        cls, z, time: float, attenuation, program: ExposureProgram
    ) -> "Observation":
        z = np.asarray(z, dtype=np.uint8).reshape(3)
        kinds, _ = classify(z, program)
        return cls(z=z, time=time, attenuation=attenuation, classification=kinds)

    @property
    def valid(self) -> bool:
        return bool(np.all(self.classification == Classification.WELL))


def classify(z, program: ExposureProgram) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel exposure classification and overall validity.

    Works on a single triplet or an (..., 3) intensity array; a sample is
    valid when all three channels are strictly between the thresholds.
    """
    z = np.asarray(z)
    if z.ndim == 0 or z.shape[-1] != 3:
        raise ValueError("intensity must have a trailing RGB axis")
    kinds = np.full(z.shape, Classification.WELL, dtype=np.int8)
    kinds[z <= program.under_threshold] = Classification.UNDER
    kinds[z >= program.over_threshold] = Classification.OVER
    valid = np.all(kinds == Classification.WELL, axis=-1)
    return kinds, valid


# ---------------------------------------------------------------------------
# Color states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncompleteColor:
    """Radiance bounds per channel, before the first fully valid sample.

    ``seen_well`` marks channels whose interval is already the hull of
    well-exposed samples; saturation information is discarded for those.
    """

    bounds: np.ndarray  # (3, 2): columns are lower, upper
    seen_well: np.ndarray  # (3,) bool

    def __post_init__(self) -> None:
        b = np.asarray(self.bounds, dtype=np.float64).reshape(3, 2)
        s = np.asarray(self.seen_well, dtype=bool).reshape(3)
        if np.any(b[:, 0] > b[:, 1]):
            raise ValueError("lower bounds must not exceed upper bounds")
        b.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "seen_well", s)

    @classmethod
    def fresh(cls, program: ExposureProgram) -> "IncompleteColor":
        bounds = np.tile(
            [program.radiance_min, program.radiance_max], (3, 1)
        ).astype(np.float64)
        return cls(bounds=bounds, seen_well=np.zeros(3, dtype=bool))


@dataclass(frozen=True)
class CompleteColor:
    """Radiance estimate with per-channel accumulators.

    ``numerator``/``denominator`` hold the running sums of g(z) and t*v;
    the radiance is their ratio and the common stored weight is the green
    channel's denominator.
    """

    numerator: np.ndarray  # (3,)
    denominator: np.ndarray  # (3,), > 0

    def __post_init__(self) -> None:
        num = np.asarray(self.numerator, dtype=np.float64).reshape(3)
        den = np.asarray(self.denominator, dtype=np.float64).reshape(3)
        if np.any(den <= 0.0):
            raise ValueError("accumulated weight must be positive")
        if np.any(num < 0.0):
            raise ValueError("accumulated exposure must be non-negative")
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)

    @property
    def radiance(self) -> np.ndarray:
        return self.numerator / self.denominator

    @property
    def weight(self) -> float:
        return float(self.denominator[GREEN])


HdrColor = Union[IncompleteColor, CompleteColor]


# ---------------------------------------------------------------------------
# Single-point update rules
# ---------------------------------------------------------------------------


def update_incomplete(
    color: IncompleteColor,
    obs: Observation,
    curve: ResponseCurve,
    program: ExposureProgram,
) -> IncompleteColor:
    """Refine radiance bounds with an invalid observation.

    Per channel: over-exposure raises the lower bound to ceiling/(t*v),
    under-exposure lowers the upper bound to floor/(t*v), and a
    well-exposed sample switches the interval to (and thereafter extends)
    the hull of well-exposed radiances.  Bounds are clamped into the
    system radiance range; if noise drives the bounds past each other the
    interval collapses onto the most recent bound.
    """
    if obs.valid:
        raise ValueError("valid observations promote the color instead")
    lo, hi = program.radiance_min, program.radiance_max
    tv = obs.time * obs.attenuation
    g = curve.table[np.arange(3), obs.z.astype(np.intp)]
    bounds = np.array(color.bounds)
    seen = np.array(color.seen_well)
    for c in range(3):
        kind = obs.classification[c]
        if kind == Classification.WELL:
            value = min(max(g[c] / tv[c], lo), hi)
            if seen[c]:
                bounds[c, 0] = min(bounds[c, 0], value)
                bounds[c, 1] = max(bounds[c, 1], value)
            else:
                bounds[c] = (value, value)
                seen[c] = True
        elif seen[c]:
            continue  # hull mode ignores saturated samples
        elif kind == Classification.OVER:
            b = min(max(program.exposure_max / tv[c], lo), hi)
            if b > bounds[c, 1]:
                bounds[c] = (b, b)  # conflicting evidence, collapse to newest
            else:
                bounds[c, 0] = max(bounds[c, 0], b)
        else:
            b = min(max(program.exposure_min / tv[c], lo), hi)
            if b < bounds[c, 0]:
                bounds[c] = (b, b)
            else:
                bounds[c, 1] = min(bounds[c, 1], b)
    return IncompleteColor(bounds=bounds, seen_well=seen)


def promote(obs: Observation, curve: ResponseCurve) -> CompleteColor:
    """Turn the first fully valid observation into a complete color."""
    if not obs.valid:
        raise ValueError("promotion requires a fully well-exposed observation")
    g = curve.table[np.arange(3), obs.z.astype(np.intp)]
    return CompleteColor(numerator=g, denominator=obs.time * obs.attenuation)


def update_complete(
    color: CompleteColor, obs: Observation, curve: ResponseCurve
) -> CompleteColor:
    """Average a valid observation into a complete color.

    Invalid observations are ignored and return the color unchanged.
    """
    if not obs.valid:
        return color
    g = curve.table[np.arange(3), obs.z.astype(np.intp)]
    return CompleteColor(
        numerator=color.numerator + g,
        denominator=color.denominator + obs.time * obs.attenuation,
    )


# ---------------------------------------------------------------------------
# Map buffer and frame fusion
# ---------------------------------------------------------------------------


@dataclass
class FusionStats:
    """Per-frame routing counts; cells are counted exactly once."""

    promoted: int = 0
    updated: int = 0
    ignored: int = 0
    refined: int = 0

    @property
    def total(self) -> int:
        return self.promoted + self.updated + self.ignored + self.refined


class MapBuffer:
    """Dense grid of per-point color states for a fixed camera view.

    Storage is struct-of-arrays: a completeness mask, radiance bounds and
    hull flags for incomplete cells, and the numerator/denominator
    accumulators for complete ones.  One writer per frame; all per-cell
    updates within :func:`fuse_frame` are independent.
    """

    def __init__(self, width: int, height: int, program: ExposureProgram) -> None:
        if width < 1 or height < 1:
            raise ValueError("map dimensions must be positive")
        self.width = width
        self.height = height
        self.program = program
        self.complete = np.zeros((height, width), dtype=bool)
        self.bounds = np.empty((height, width, 3, 2), dtype=np.float64)
        self.bounds[..., 0] = program.radiance_min
        self.bounds[..., 1] = program.radiance_max
        self.seen_well = np.zeros((height, width, 3), dtype=bool)
        self.numerator = np.zeros((height, width, 3), dtype=np.float64)
        self.denominator = np.zeros((height, width, 3), dtype=np.float64)

    @property
    def fraction_complete(self) -> float:
        return float(self.complete.mean())

    def radiance_map(self) -> np.ndarray:
        """Per-pixel radiance; zero where the point is still incomplete."""
        out = np.zeros((self.height, self.width, 3), dtype=np.float64)
        mask = self.complete
        out[mask] = self.numerator[mask] / self.denominator[mask]
        return out

    def weight_map(self) -> np.ndarray:
        """Common accumulated weight per pixel; zero marks incomplete points."""
        out = np.zeros((self.height, self.width), dtype=np.float64)
        mask = self.complete
        out[mask] = self.denominator[..., GREEN][mask]
        return out

    def bounds_map(self) -> np.ndarray:
        return self.bounds.copy()

    def cell(self, y: int, x: int) -> HdrColor:
        if self.complete[y, x]:
            return CompleteColor(
                numerator=self.numerator[y, x].copy(),
                denominator=self.denominator[y, x].copy(),
            )
        return IncompleteColor(
            bounds=self.bounds[y, x].copy(), seen_well=self.seen_well[y, x].copy()
        )


def fuse_frame(
    buffer: MapBuffer,
    frame: LdrFrame,
    vmap: VignettingMap,
    curve: ResponseCurve,
) -> FusionStats:
    """Fuse one frame into the map and report how cells were routed.

    Every pixel takes exactly one route: a valid observation promotes an
    incomplete cell or updates a complete one; an invalid observation
    refines the bounds of an incomplete cell and is ignored by a complete
    one.  Channel updates are synchronized: a cell's three channels are
    either all touched or all left alone.
    """
    if (frame.height, frame.width) != (buffer.height, buffer.width):
        raise ValueError(
            f"frame is {frame.width}x{frame.height}, map is {buffer.width}x{buffer.height}"
        )
    if (vmap.height, vmap.width) != (buffer.height, buffer.width):
        raise ValueError("vignetting map dimensions must match the map")
    program = buffer.program

    z = frame.pixels
    under = z <= program.under_threshold
    over = z >= program.over_threshold
    well = ~under & ~over
    valid = well.all(axis=2)

    g = np.empty(z.shape, dtype=np.float64)
    for c in range(3):
        g[..., c] = curve.table[c][z[..., c].astype(np.intp)]
    tv = frame.time * vmap.values

    promote_mask = valid & ~buffer.complete
    update_mask = valid & buffer.complete
    refine_mask = ~valid & ~buffer.complete
    ignore_mask = ~valid & buffer.complete

    # Promote: start fresh accumulators.
    buffer.numerator[promote_mask] = g[promote_mask]
    buffer.denominator[promote_mask] = tv[promote_mask]
    buffer.complete[promote_mask] = True

    # Update: extend accumulators.
    buffer.numerator[update_mask] += g[update_mask]
    buffer.denominator[update_mask] += tv[update_mask]

    # Refine bounds of incomplete cells, channel by channel.
    lo, hi = program.radiance_min, program.radiance_max
    refine3 = refine_mask[..., None] & np.ones(3, dtype=bool)
    lower = buffer.bounds[..., 0]
    upper = buffer.bounds[..., 1]

    hull = refine3 & well & buffer.seen_well
    value = np.clip(np.divide(g, tv, out=np.zeros_like(g), where=tv > 0), lo, hi)
    lower[hull] = np.minimum(lower[hull], value[hull])
    upper[hull] = np.maximum(upper[hull], value[hull])

    first_well = refine3 & well & ~buffer.seen_well
    lower[first_well] = value[first_well]
    upper[first_well] = value[first_well]
    buffer.seen_well |= first_well

    sat_over = refine3 & over & ~buffer.seen_well
    b_over = np.clip(
        np.divide(program.exposure_max, tv, out=np.zeros_like(tv), where=tv > 0), lo, hi
    )
    conflict = sat_over & (b_over > upper)
    settle = sat_over & ~conflict
    lower[conflict] = b_over[conflict]
    upper[conflict] = b_over[conflict]
    lower[settle] = np.maximum(lower[settle], b_over[settle])

    sat_under = refine3 & under & ~buffer.seen_well
    b_under = np.clip(
        np.divide(program.exposure_min, tv, out=np.zeros_like(tv), where=tv > 0), lo, hi
    )
    conflict = sat_under & (b_under < lower)
    settle = sat_under & ~conflict
    lower[conflict] = b_under[conflict]
    upper[conflict] = b_under[conflict]
    upper[settle] = np.minimum(upper[settle], b_under[settle])

    return FusionStats(
        promoted=int(promote_mask.sum()),
        updated=int(update_mask.sum()),
        ignored=int(ignore_mask.sum()),
        refined=int(refine_mask.sum()),
    )


# ---------------------------------------------------------------------------
# 64-bit packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedColor:
    """One color squeezed into 64 bits.

    Complete points store three 16-bit radiance codes (low word first:
    R, G, B) and a 16-bit weight code in the top word; any positive
    weight maps to a nonzero code, so a zero weight code marks an
    incomplete point, whose six bound codes (R lower, R upper, G lower,
    G upper, B lower, B upper) occupy the low six bytes as indices into
    the program's log-spaced bound grid.

    ``clamped`` records whether any field had to be clamped into its code
    range; it is bookkeeping only and is not part of the 64 bits.
    """

    word: int
    clamped: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.word <= 0xFFFFFFFFFFFFFFFF:
            raise ValueError("packed word must fit in 64 bits")

    @property
    def is_complete(self) -> bool:
        return (self.word >> 48) != 0


def _bound_indices(bounds: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Grid indices enclosing each interval: lower floors, upper ceils."""
    lower = np.clip(bounds[..., 0], grid[0], grid[-1])
    upper = np.clip(bounds[..., 1], grid[0], grid[-1])
    lo_idx = np.searchsorted(grid, lower, side="right") - 1
    lo_idx = np.clip(lo_idx, 0, BOUND_CODE_MAX)
    # searchsorted floors exactly; guard one step for float slop.
    lo_idx = np.where(grid[lo_idx] > lower, np.maximum(lo_idx - 1, 0), lo_idx)
    hi_idx = np.searchsorted(grid, upper, side="left")
    hi_idx = np.clip(hi_idx, 0, BOUND_CODE_MAX)
    hi_idx = np.where(
        grid[hi_idx] < upper, np.minimum(hi_idx + 1, BOUND_CODE_MAX), hi_idx
    )
    return lo_idx.astype(np.uint64), hi_idx.astype(np.uint64)


def pack(color: HdrColor, program: ExposureProgram) -> PackedColor:
    """Quantize a color into its 64-bit word."""
    if isinstance(color, CompleteColor):
        l_max = program.radiance_max
        radiance = color.radiance
        weight = color.weight
        clamped = bool(np.any(radiance > l_max) or weight > program.weight_cap)
        codes = np.round(np.clip(radiance / l_max, 0.0, 1.0) * RADIANCE_CODE_MAX)
        codes = codes.astype(np.uint64)
        wcode = int(round(min(weight / program.weight_cap, 1.0) * RADIANCE_CODE_MAX))
        wcode = max(wcode, 1)  # positive weight must stay distinguishable
        word = (
            int(codes[0])
            | (int(codes[1]) << 16)
            | (int(codes[2]) << 32)
            | (wcode << 48)
        )
        return PackedColor(word=word, clamped=clamped)

    grid = program.bound_grid
    clamped = bool(
        np.any(color.bounds < grid[0]) or np.any(color.bounds > grid[-1])
    )
    lo_idx, hi_idx = _bound_indices(color.bounds, grid)
    word = 0
    for c in range(3):
        word |= int(lo_idx[c]) << (16 * c)
        word |= int(hi_idx[c]) << (16 * c + 8)
    return PackedColor(word=word, clamped=clamped)


def unpack(packed: PackedColor, program: ExposureProgram) -> HdrColor:
    """Reconstruct a color from its 64-bit word (quantized values)."""
    word = packed.word
    wcode = word >> 48
    if wcode == 0:
        grid = program.bound_grid
        bounds = np.empty((3, 2), dtype=np.float64)
        for c in range(3):
            lo_idx = (word >> (16 * c)) & 0xFF
            hi_idx = (word >> (16 * c + 8)) & 0xFF
            bounds[c, 0] = grid[lo_idx]
            bounds[c, 1] = grid[hi_idx]
        return IncompleteColor(bounds=bounds, seen_well=np.zeros(3, dtype=bool))
    radiance = np.array(
        [(word >> (16 * c)) & 0xFFFF for c in range(3)], dtype=np.float64
    )
    radiance *= program.radiance_max / RADIANCE_CODE_MAX
    weight = wcode / RADIANCE_CODE_MAX * program.weight_cap
    return CompleteColor(numerator=radiance * weight, denominator=np.full(3, weight))


def pack_map(buffer: MapBuffer) -> tuple[np.ndarray, int]:
    """Pack every cell; returns (uint64 array, number of clamped cells)."""
    program = buffer.program
    h, w = buffer.height, buffer.width
    words = np.zeros((h, w), dtype=np.uint64)

    mask = buffer.complete
    clamp_count = 0
    if np.any(mask):
        radiance = buffer.numerator[mask] / buffer.denominator[mask]
        weight = buffer.denominator[mask][:, GREEN]
        clamp_count += int(
            np.sum(
                np.any(radiance > program.radiance_max, axis=1)
                | (weight > program.weight_cap)
            )
        )
        codes = np.round(
            np.clip(radiance / program.radiance_max, 0.0, 1.0) * RADIANCE_CODE_MAX
        ).astype(np.uint64)
        wcodes = np.round(
            np.clip(weight / program.weight_cap, 0.0, 1.0) * RADIANCE_CODE_MAX
        ).astype(np.uint64)
        wcodes = np.maximum(wcodes, 1)
        words[mask] = (
            codes[:, 0] | (codes[:, 1] << 16) | (codes[:, 2] << 32) | (wcodes << 48)
        )

    inc = ~mask
    if np.any(inc):
        bounds = buffer.bounds[inc]
        clamp_count += int(
            np.sum(
                np.any(
                    (bounds < program.radiance_min) | (bounds > program.radiance_max),
                    axis=(1, 2),
                )
            )
        )
        lo_idx, hi_idx = _bound_indices(bounds, program.bound_grid)
        inc_words = np.zeros(lo_idx.shape[0], dtype=np.uint64)
        for c in range(3):
            inc_words |= lo_idx[:, c] << np.uint64(16 * c)
            inc_words |= hi_idx[:, c] << np.uint64(16 * c + 8)
        words[inc] = inc_words
    return words, clamp_count


def unpack_map(words: np.ndarray, program: ExposureProgram) -> MapBuffer:
    """Rebuild a map buffer from packed words (quantized accumulators)."""
    words = np.asarray(words, dtype=np.uint64)
    h, w = words.shape
    buffer = MapBuffer(width=w, height=h, program=program)
    wcodes = words >> np.uint64(48)
    mask = wcodes != 0

    if np.any(mask):
        weight = wcodes[mask].astype(np.float64) / RADIANCE_CODE_MAX * program.weight_cap
        radiance = np.empty((int(mask.sum()), 3), dtype=np.float64)
        for c in range(3):
            codes = (words[mask] >> np.uint64(16 * c)) & np.uint64(0xFFFF)
            radiance[:, c] = codes.astype(np.float64) / RADIANCE_CODE_MAX * program.radiance_max
        buffer.complete[mask] = True
        buffer.numerator[mask] = radiance * weight[:, None]
        buffer.denominator[mask] = weight[:, None]

    inc = ~mask
    if np.any(inc):
        grid = program.bound_grid
        for c in range(3):
            lo_idx = (words[inc] >> np.uint64(16 * c)) & np.uint64(0xFF)
            hi_idx = (words[inc] >> np.uint64(16 * c + 8)) & np.uint64(0xFF)
            buffer.bounds[inc, c, 0] = grid[lo_idx.astype(np.intp)]
            buffer.bounds[inc, c, 1] = grid[hi_idx.astype(np.intp)]
    return buffer


# ---------------------------------------------------------------------------
# Snapshot file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IIddd")  # width, height, radiance range, weight cap


def save_snapshot(buffer: MapBuffer, path: str | Path) -> int:
    """Write the packed map: a fixed header plus row-major little-endian words.

    Returns the number of cells whose values had to be clamped.
    """
    words, clamped = pack_map(buffer)
    program = buffer.program
    header = _HEADER.pack(
        buffer.width,
        buffer.height,
        program.radiance_min,
        program.radiance_max,
        program.weight_cap,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(words.astype("<u8").tobytes())
    return clamped


@dataclass(frozen=True)
class Snapshot:
    width: int
    height: int
    radiance_min: float
    radiance_max: float
    weight_cap: float
    words: np.ndarray  # (h, w) uint64


def load_snapshot(path: str | Path) -> Snapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot file too short")
    width, height, rmin, rmax, wcap = _HEADER.unpack(raw[: _HEADER.size])
    expected = _HEADER.size + width * height * 8
    if len(raw) != expected:
        raise ValueError(f"snapshot payload is {len(raw)} bytes, expected {expected}")
    words = np.frombuffer(raw[_HEADER.size :], dtype="<u8").reshape(height, width)
    return Snapshot(
        width=width,
        height=height,
        radiance_min=rmin,
        radiance_max=rmax,
        weight_cap=wcap,
        words=words.astype(np.uint64),
    )
