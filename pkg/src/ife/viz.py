"""Attention overlays: nearest upsampling, darkening, 8-bit RGB and binary PPM I/O."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .geometry import naive_upsample_map

NORMALIZATIONS = ("max", "sum")
COLORMAPS = ("grayscale", "heat")


class PPMError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRGB:
    width: int
    height: int
    pixels: bytes  # row-major RGB triplets

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")
        if len(self.pixels) != 3 * self.width * self.height:
            raise ValueError(
                f"pixel buffer holds {len(self.pixels)} bytes, expected {3 * self.width * self.height}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageRGB":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(f"expected an H x W x 3 uint8 array, got {arr.dtype} {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr.tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3).copy()


@dataclass(frozen=True)
class OverlayConfig:
    darken: float = 0.25
    normalization: str = "max"
    colormap: str = "grayscale"

    def __post_init__(self):
        if not 0.0 <= self.darken <= 1.0:
            raise ValueError(f"darken factor must lie in [0, 1], got {self.darken}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.colormap not in COLORMAPS:
            raise ValueError(f"colormap must be one of {COLORMAPS}")


def upsample_blocks(feature: int, out: int):
    return [naive_upsample_map(feature, out, i) for i in range(feature)]


def upsample_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Replicate each mask weight over its nearest-neighbour pixel block."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    if out_h < h or out_w < w:
        raise ValueError(f"output {out_h}x{out_w} is smaller than the {h}x{w} mask")
    rows = np.empty(out_h, dtype=np.int64)
    cols = np.empty(out_w, dtype=np.int64)
    for i, (a, b) in enumerate(upsample_blocks(h, out_h)):
        rows[a:b] = i
    for j, (a, b) in enumerate(upsample_blocks(w, out_w)):
        cols[a:b] = j
    return mask[np.ix_(rows, cols)]


def normalize_mask(up_mask: np.ndarray, mode: str = "max") -> np.ndarray:
    up = np.asarray(up_mask, dtype=np.float64)
    if np.any(up < 0):
        raise ValueError("attention mask must be nonnegative")
    denom = up.max() if mode == "max" else up.sum()
    if denom <= 0:
        warnings.warn("all-zero attention mask; overlay falls back to the fully darkened frame")
        return np.zeros_like(up)
    return up / denom


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit codes, rounding halves up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _heat(t: np.ndarray) -> np.ndarray:
    # red at zero attention, through yellow, to white at full attention
    return np.stack([np.ones_like(t), t, t * t], axis=-1)


def overlay(frame: np.ndarray, up_mask: np.ndarray, cfg: OverlayConfig = OverlayConfig()) -> ImageRGB:
    """Darken ``frame`` where attention is low: ``frame * (d + (1 - d) * m)``."""
    frame = np.asarray(frame, dtype=np.float64)
    up_mask = np.asarray(up_mask, dtype=np.float64)
    if frame.shape != up_mask.shape or frame.ndim != 2:
        raise ValueError(f"frame {frame.shape} and mask {up_mask.shape} must be equal 2-D shapes")
    m = normalize_mask(up_mask, cfg.normalization)
    value = frame * (cfg.darken + (1.0 - cfg.darken) * m)
    if cfg.colormap == "grayscale":
        rgb = np.repeat(value[..., None], 3, axis=-1)
    else:
        rgb = value[..., None] * _heat(m)
    return ImageRGB.from_array(quantize(rgb))


def side_by_side(left: ImageRGB, right: ImageRGB, gap: int = 2) -> ImageRGB:
    if left.height != right.height:
        raise ValueError("images must share a height")
    a, b = left.to_array(), right.to_array()
    spacer = np.zeros((left.height, gap, 3), dtype=np.uint8)
    return ImageRGB.from_array(np.concatenate([a, spacer, b], axis=1))


def ppm_bytes(img: ImageRGB) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + bytes(img.pixels)


def write_ppm(img: ImageRGB, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(ppm_bytes(img))
    except OSError as exc:
        raise OSError(f"cannot write PPM to {path}: {exc.strerror or exc}") from exc


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos : pos + 1].isspace():
            pos += 1
        elif data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PPMError("truncated PPM header")
    return data[start:pos], pos


def parse_ppm(data: bytes) -> ImageRGB:
    magic, pos = _next_token(data, 0)
    if magic != b"P6":
        raise PPMError(f"not a binary PPM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        if not tok.isdigit():
            raise PPMError(f"bad PPM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PPMError(f"only 8-bit PPM is supported, got maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:]
    if len(raster) != 3 * width * height:
        raise PPMError(f"raster has {len(raster)} bytes, expected {3 * width * height}")
    return ImageRGB(width, height, bytes(raster))


def read_ppm(path) -> ImageRGB:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read PPM from {path}: {exc.strerror or exc}") from exc
    return parse_ppm(data)


def mask_overlay(frame: np.ndarray, mask: np.ndarray, cfg: OverlayConfig = OverlayConfig()) -> ImageRGB:
    """Upsample a feature-grid mask to the frame and overlay it."""
    h, w = np.shape(frame)
    return overlay(frame, upsample_nearest(mask, h, w), cfg)

