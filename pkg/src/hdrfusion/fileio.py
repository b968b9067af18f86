"""File formats: PFM float maps, PPM frame dumps, and calibration tables.

Formats supported:

* response curve: plain text, three lines (R, G, B) of 256 comma-separated
  decimals in [0, 1], last value exactly 1;
* vignetting / scenes: PFM (portable float map), 1 or 3 channels, scale
  line ``-1.0`` (little-endian), rows stored bottom-up;
* frame dumps: binary PPM (P6, maxval 255) with a text sidecar holding
  ``t=<seconds>``;
* noise coefficients: one line of three comma-separated decimals.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .radiometry import TABLE_SIZE, LdrFrame, ResponseCurve, VignettingMap

__all__ = [
    "load_noise_coefficients",
    "load_pfm",
    "load_ppm_frame",
    "load_response_curve",
    "load_vignetting",
    "save_noise_coefficients",
    "save_pfm",
    "save_ppm_frame",
    "save_response_curve",
    "save_vignetting",
]


# ---------------------------------------------------------------------------
# Response curve text format
# ---------------------------------------------------------------------------


def save_response_curve(curve: ResponseCurve, path: str | Path) -> None:
    lines = []
    for c in range(3):
        lines.append(",".join(format(v, ".17g") for v in curve.table[c]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_response_curve(path: str | Path) -> ResponseCurve:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise ValueError(f"response curve file needs 3 lines, got {len(lines)}")
    table = np.empty((3, TABLE_SIZE), dtype=np.float64)
    for c, line in enumerate(lines):
        values = [float(v) for v in line.split(",")]
        if len(values) != TABLE_SIZE:
            raise ValueError(
                f"line {c + 1}: expected {TABLE_SIZE} values, got {len(values)}"
            )
        table[c] = values
    if np.any(table < 0.0) or np.any(table > 1.0):
        raise ValueError("response curve values must lie in [0, 1]")
    if np.any(table[:, -1] != 1.0):
        raise ValueError("response curve must end at exactly 1")
    return ResponseCurve(table)


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("unexpected end of PFM header")
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def load_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file into an (h, w, channels) float64 array, top row first."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file (magic {magic!r})")
        width = int(_read_token(f))
        height = int(_read_token(f))
        scale = float(_read_token(f))
        count = width * height * channels
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype)
        if data.size != count:
            raise ValueError("truncated PFM payload")
    img = data.reshape(height, width, channels).astype(np.float64)
    return np.flipud(img).copy()  # PFM stores the bottom row first


def save_pfm(values: np.ndarray, path: str | Path) -> None:
    """Write an (h, w) or (h, w, 1|3) array as little-endian PFM."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {arr.shape}")
    magic = b"PF" if arr.shape[2] == 3 else b"Pf"
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def load_vignetting(path: str | Path) -> VignettingMap:
    img = load_pfm(path)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return VignettingMap(img)


def save_vignetting(vmap: VignettingMap, path: str | Path) -> None:
    save_pfm(vmap.values, path)


# ---------------------------------------------------------------------------
# PPM frame dumps
# ---------------------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".txt")


def save_ppm_frame(frame: LdrFrame, path: str | Path) -> None:
    """Write a frame as binary PPM plus a ``t=<seconds>`` sidecar."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P6\n{frame.width} {frame.height}\n255\n".encode())
        f.write(frame.pixels.tobytes())
    _sidecar_path(path).write_text(f"t={frame.time!r}\n")


def load_ppm_frame(path: str | Path) -> LdrFrame:
    path = Path(path)
    with open(path, "rb") as f:
        if _read_token(f) != b"P6":
            raise ValueError("not a binary PPM file")
        width = int(_read_token(f))
        height = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise ValueError(f"only maxval 255 PPMs are supported, got {maxval}")
        data = np.frombuffer(f.read(width * height * 3), dtype=np.uint8)
        if data.size != width * height * 3:
            raise ValueError("truncated PPM payload")
    text = _sidecar_path(path).read_text().strip()
    if not text.startswith("t="):
        raise ValueError(f"sidecar {_sidecar_path(path)} must contain 't=<seconds>'")
    t = float(text[2:])
    return LdrFrame(pixels=data.reshape(height, width, 3).copy(), time=t)


# ---------------------------------------------------------------------------
# Noise coefficient text format
# ---------------------------------------------------------------------------


def save_noise_coefficients(a: np.ndarray, path: str | Path) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError("noise coefficients must be shape (3,)")
    Path(path).write_text(",".join(format(v, ".17g") for v in a) + "\n")


def load_noise_coefficients(path: str | Path) -> np.ndarray:
    values = [float(v) for v in Path(path).read_text().strip().split(",")]
    if len(values) != 3:
        raise ValueError(f"expected 3 noise coefficients, got {len(values)}")
    return np.asarray(values, dtype=np.float64)
