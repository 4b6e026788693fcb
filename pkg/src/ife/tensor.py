"""Reverse-mode automatic differentiation over numpy float64 arrays.

Graphs are built define-by-run: every differentiable op stamps its output
with a monotonically increasing ``tape_id``, so parents always precede
children and ``backward`` can replay the tape in reverse insertion order.

Layer ops accept either unbatched ``C x H x W`` inputs or batched
``N x C x H x W`` inputs; the batched form is what training uses.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ArrayLike = Union[np.ndarray, float, int, Sequence]

_counter = itertools.count(1)
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the offending dimension."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (inference, target computation)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape_id: Optional[int] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape_id = next(_counter)
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out.tape_id = None
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------


class Tape:
    """Recorded operations reachable from a loss, in insertion order."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        seen = set()
        nodes = []
        stack = [loss]
        while stack:
            node = stack.pop()
            if id(node) in seen or node._backward is None:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n.tape_id)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Populate ``.grad`` on every trainable leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until cleared with ``zero_grad``.
    """
    if loss.size != 1 and grad is None:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any trainable tensor")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if loss._backward is None:
        loss.grad = seed.copy() if loss.grad is None else loss.grad + seed
        return
    tape = Tape.from_loss(loss)
    pending = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual_add operands differ: {a.shape} vs {b.shape}")
    return add(a, b)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return _make(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw)


def gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Pick ``a[i, indices[i]]`` along the last axis of a 2-D tensor."""
    indices = np.asarray(indices, dtype=np.int64)
    rows = np.arange(a.shape[0])
    return getitem(a, (rows, indices))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
        gb = np.swapaxes(ad, -1, -2) @ g if ad.ndim > 1 else np.multiply.outer(ad, g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# Layer primitives
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``weight @ x + bias`` applied over the last axis of ``x``."""
    x = _as_tensor(x)
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-D, got shape {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear input dimension {x.shape[-1]} does not match weight columns {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias has shape {bias.shape}, expected ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents: Tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = parents + (bias,)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = g @ wd if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, bw)


def _batched(x: Tensor, op: str) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"{op} expects C x H x W or N x C x H x W input, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation."""
    if stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    x = _as_tensor(x)
    xb, squeeze = _batched(x, "conv2d")
    n, c, h, w = xb.shape
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be C_out x C_in x K x K, got shape {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ShapeError(f"conv2d input channels {c} do not match weight C_in {c_in}")
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if kh > h:
        raise ShapeError(f"conv2d kernel {kh} exceeds input height {h}")
    if kw > w:
        raise ShapeError(f"conv2d kernel {kw} exceeds input width {w}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias has shape {bias.shape}, expected ({c_out},)")
    k, s = kh, stride
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    xd, wd = xb.data, weight.data
    if s == k and h % k == 0 and w % k == 0:
        # non-overlapping windows: a pure reshape, no window copies
        cols = xd.reshape(n, c, ho, k, wo, k).transpose(0, 2, 4, 1, 3, 5)
    else:
        cols = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = cols.transpose(0, 2, 3, 1, 4, 5)
    cols = np.ascontiguousarray(cols).reshape(n * ho * wo, c * k * k)
    wflat = wd.reshape(c_out, -1)
    out = cols @ wflat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, c_out)
        gw = (g2.T @ cols).reshape(wd.shape)
        if not xb.requires_grad:
            gx = None
        elif s == k and h % k == 0 and w % k == 0:
            gcols = (g2 @ wflat).reshape(n, ho, wo, c, k, k)
            gx = gcols.transpose(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)
        else:
            gcols = (g2 @ wflat).reshape(n, ho, wo, c, k, k)
            gx = np.zeros((n, c, h, w))
            gcols_t = np.ascontiguousarray(gcols.transpose(4, 5, 0, 3, 1, 2))
            for i in range(k):
                for j in range(k):
                    gx[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols_t[i, j]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    res = _make(out, parents, bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad both spatial axes by ``pad`` on every side."""
    if pad == 0:
        return x
    spec = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _make(np.pad(x.data, spec), (x,), lambda g: (g[..., pad:-pad, pad:-pad],))


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling; gradient goes to the lowest flat index among tied maxima."""
    stride = kernel if stride is None else stride
    xb, squeeze = _batched(x, "maxpool2d")
    n, c, h, w = xb.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"maxpool2d kernel {kernel} exceeds input spatial dims {h}x{w}")
    ho, wo = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    win = sliding_window_view(xb.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    rows = (np.arange(ho) * stride)[None, None, :, None] + arg // kernel
    cols = (np.arange(wo) * stride)[None, None, None, :] + arg % kernel
    flat = (rows * w + cols).reshape(n, c, -1)

    def bw(g):
        gx = np.zeros((n, c, h * w))
        if stride >= kernel:
            np.put_along_axis(gx, flat, g.reshape(n, c, -1), axis=-1)
        else:
            nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
            np.add.at(gx, (nn_[..., None], cc[..., None], flat), g.reshape(n, c, -1))
        return (gx.reshape(n, c, h, w),)

    res = _make(out, (xb,), bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def adaptive_bins(size: int, bins: int) -> list:
    """Partition ``range(size)`` into ``bins`` contiguous near-equal half-open intervals."""
    return [((i * size) // bins, ((i + 1) * size) // bins) for i in range(bins)]


def adaptive_maxpool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    xb, squeeze = _batched(x, "adaptive_maxpool")
    n, c, h, w = xb.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_maxpool output {out_h}x{out_w} larger than input {h}x{w}")
    pieces = []
    for r0, r1 in adaptive_bins(h, out_h):
        for c0, c1 in adaptive_bins(w, out_w):
            pieces.append(maxpool_region(xb, r0, r1, c0, c1))
    out = stack_last(pieces)
    res = reshape(out, (n, c, out_h, out_w))
    return reshape(res, res.shape[1:]) if squeeze else res


def maxpool_region(x: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    """Max over ``x[..., r0:r1, c0:c1]`` per (batch, channel); ties to lowest flat index."""
    n, c = x.shape[:2]
    bh, bw_ = r1 - r0, c1 - c0
    region = x.data[:, :, r0:r1, c0:c1].reshape(n, c, -1)
    arg = region.argmax(axis=-1)
    out = np.take_along_axis(region, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        sub = np.zeros((n, c, bh * bw_))
        np.put_along_axis(sub, arg[..., None], g[..., None], axis=-1)
        gx[:, :, r0:r1, c0:c1] = sub.reshape(n, c, bh, bw_)
        return (gx,)

    return _make(out, (x,), bw)


def stack_last(tensors: Sequence[Tensor]) -> Tensor:
    return _make(
        np.stack([t.data for t in tensors], axis=-1),
        tuple(tensors),
        lambda g: tuple(g[..., i] for i in range(len(tensors))),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise ValueError("log_softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: quadratic inside ``|d| <= delta``, linear outside."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"huber_loss shapes differ: pred {pred.shape} vs target {target.shape}")
    d = pred.data - target.data
    absd = np.abs(d)
    quad = absd <= delta
    per = np.where(quad, 0.5 * d * d, delta * (absd - 0.5 * delta))
    count = max(d.size, 1)
    st = target.shape

    def bw(g):
        gd = g * np.where(quad, d, delta * np.sign(d)) / count
        return gd, _unbroadcast(-gd, st)

    return _make(np.asarray(per.mean()), (pred, target), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def parameters_grads(params: Iterable[Tensor]) -> list:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
