"""Receptive-field geometry of convolution stacks and naive-upsampling displacement.

Two independent routes compute how far an upsampled attention location lands
from the pixels that actually produced the feature:

* :func:`displacement` evaluates the closed-form displacement expression.
* :func:`geometric_displacement` measures it directly with exact rationals,
  from :func:`receptive_field` and the nearest-neighbour upsampling scale.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConvStackSpec:
    """Ordered (kernel, stride) layers applied to a ``input_width x input_height`` image."""

    layers: Tuple[Tuple[int, int], ...]
    input_width: int
    input_height: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((int(k), int(s)) for k, s in self.layers))
        if not self.layers:
            raise GeometryError("a conv stack needs at least one layer")
        if self.input_width < 1 or self.input_height < 1:
            raise GeometryError(f"input size must be positive, got {self.input_width}x{self.input_height}")
        w, h = self.input_width, self.input_height
        for i, (k, s) in enumerate(self.layers):
            if s < 1:
                raise GeometryError(f"layer {i}: stride {s} must be >= 1")
            if k < 1 or k > w or k > h:
                raise GeometryError(f"layer {i}: kernel {k} does not fit the {w}x{h} feature map")
            w, h = (w - k) // s + 1, (h - k) // s + 1

    @classmethod
    def parse(cls, stack: str, input_size: str) -> "ConvStackSpec":
        """Build from CLI strings such as ``"8x4,4x2,3x1"`` and ``"84x84"``."""
        try:
            layers = []
            for item in stack.split(","):
                k, s = item.strip().lower().split("x")
                layers.append((int(k), int(s)))
            w, h = (int(v) for v in input_size.lower().split("x"))
        except ValueError as exc:
            raise GeometryError(f"cannot parse stack {stack!r} / input {input_size!r}: {exc}") from None
        return cls(tuple(layers), w, h)

    def feature_size(self) -> Tuple[int, int]:
        """Output grid (width, height) after every layer."""
        w, h = self.input_width, self.input_height
        for k, s in self.layers:
            w, h = (w - k) // s + 1, (h - k) // s + 1
        return w, h

    def effective_layer(self) -> Tuple[int, int]:
        """Single (kernel, stride) equivalent to the whole stack."""
        extent, stride = 1, 1
        for k, s in reversed(self.layers):
            extent = (extent - 1) * s + k
            stride *= s
        return extent, stride

    @property
    def is_preserving(self) -> bool:
        return all(k == s for k, s in self.layers)


@dataclass(frozen=True)
class DisplacementResult:
    m: int
    n: int
    l_x: int
    l_y: int
    d_x: float
    d_y: float


@dataclass(frozen=True)
class ReceptiveField:
    x_start: int
    x_end: int
    y_start: int
    y_end: int

    def contains(self, x: int, y: int) -> bool:
        return self.x_start <= x < self.x_end and self.y_start <= y < self.y_end


def displacement_1d(coord: int, offset: int, kernel: int, stride: int, extent: int) -> float:
    """Closed-form displacement along one axis (real division throughout)."""
    if extent + stride - kernel <= 0:
        raise GeometryError(
            f"degenerate divisor: input extent + stride - kernel = {extent + stride - kernel} <= 0"
        )
    shrink = 1.0 / (1.0 + (stride - kernel) / extent)
    return coord * stride * (1.0 - shrink) + offset * (1.0 - (stride / kernel) * shrink)


def displacement(spec: ConvStackSpec, m: int, n: int, l_x: int, l_y: int) -> DisplacementResult:
    """Displacement between a naively upsampled feature and its true input pixels.

    Multi-layer stacks are reduced to their effective single layer first.
    """
    kernel, stride = spec.effective_layer()
    fw, fh = spec.feature_size()
    if not (0 <= m < fw and 0 <= n < fh):
        raise GeometryError(f"feature ({m}, {n}) outside the {fw}x{fh} feature grid")
    if not (0 <= l_x < kernel and 0 <= l_y < kernel):
        raise GeometryError(f"window offset ({l_x}, {l_y}) outside [0, {kernel})")
    return DisplacementResult(
        m,
        n,
        l_x,
        l_y,
        displacement_1d(m, l_x, kernel, stride, spec.input_width),
        displacement_1d(n, l_y, kernel, stride, spec.input_height),
    )


def receptive_field(spec: ConvStackSpec, m: int, n: int) -> ReceptiveField:
    """Exact half-open pixel box that can influence output feature ``(m, n)``."""
    fw, fh = spec.feature_size()
    if not (0 <= m < fw and 0 <= n < fh):
        raise GeometryError(f"feature ({m}, {n}) outside the {fw}x{fh} feature grid")
    x0, y0, extent = m, n, 1
    for k, s in reversed(spec.layers):
        x0, y0 = x0 * s, y0 * s
        extent = (extent - 1) * s + k
    return ReceptiveField(x0, x0 + extent, y0, y0 + extent)


def _round_half_up(q: Fraction) -> int:
    return math.floor(q + Fraction(1, 2))


def naive_upsample_map(feature_width: int, input_width: int, m: int) -> Tuple[int, int]:
    """Pixel block ``[start, end)`` that nearest-neighbour upsampling assigns to feature ``m``."""
    if feature_width > input_width:
        raise GeometryError(f"feature width {feature_width} exceeds input width {input_width}")
    if not 0 <= m < feature_width:
        raise GeometryError(f"feature index {m} outside [0, {feature_width})")
    scale = Fraction(input_width, feature_width)
    return _round_half_up(m * scale), _round_half_up((m + 1) * scale)


def geometric_displacement(kernel: int, stride: int, extent: int, m: int, offset: int) -> Fraction:
    """Exact displacement: true pixel position minus where upsampling puts it.

    Feature ``m``'s window starts at the receptive-field origin; upsampling with
    the exact scale ``extent / feature_width`` maps window offset ``offset`` to
    the same fraction of the feature's upsampled block.
    """
    spec = ConvStackSpec(((kernel, stride),), extent, extent)
    true_pos = receptive_field(spec, m, 0).x_start + offset
    feature_width = Fraction(extent - kernel, stride) + 1
    block = Fraction(extent) / feature_width
    mapped = (m + Fraction(offset, kernel)) * block
    return true_pos - mapped


def overlap_counts_1d(kernel: int, stride: int, extent: int) -> np.ndarray:
    """How many windows ``[j*stride, j*stride + kernel)`` cover each pixel of one axis."""
    counts = np.zeros(extent, dtype=np.int64)
    n_windows = (extent - kernel) // stride + 1
    for j in range(n_windows):
        counts[j * stride : j * stride + kernel] += 1
    return counts


def overlap_count_map(spec: ConvStackSpec) -> np.ndarray:
    """Per-pixel (H x W) count of feature windows covering the pixel."""
    kernel, stride = spec.effective_layer()
    cx = overlap_counts_1d(kernel, stride, spec.input_width)
    cy = overlap_counts_1d(kernel, stride, spec.input_height)
    return np.outer(cy, cx)


def displacement_sweep(spec: ConvStackSpec) -> List[float]:
    """|D_x| for every feature column and every within-window offset."""
    kernel, stride = spec.effective_layer()
    fw, _ = spec.feature_size()
    return [
        abs(displacement_1d(m, lx, kernel, stride, spec.input_width))
        for m in range(fw)
        for lx in range(kernel)
    ]


def audit_report(spec: ConvStackSpec) -> dict:
    """JSON-ready summary of a stack's spatial-preservation behaviour."""
    kernel, stride = spec.effective_layer()
    dx = displacement_sweep(spec)
    hist = Counter(overlap_count_map(spec).ravel().tolist())
    fw, fh = spec.feature_size()
    return {
        "verdict": "preserving" if spec.is_preserving else "non-preserving",
        "max_dx": max(dx),
        "mean_dx": sum(dx) / len(dx),
        "overlap_histogram": {str(k): hist[k] for k in sorted(hist)},
        "layers": [list(layer) for layer in spec.layers],
        "input": [spec.input_width, spec.input_height],
        "feature_grid": [fw, fh],
        "effective_kernel": kernel,
        "effective_stride": stride,
    }
