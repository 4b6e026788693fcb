"""Interpretable feature extractor: attention over a non-overlapping conv grid.

The encoder is split at an interpretability boundary. On the near side,
stride == kernel convolutions keep every feature cell tied to one input
pixel block, and a single softmax mask scales each cell. On the far side,
ordinary overlapping convolutions (pool, residual blocks, adaptive pool)
restore parameter sharing before the decision heads.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from . import tensor as T
from .geometry import ConvStackSpec, receptive_field
from .tensor import ShapeError, Tensor

HEAD_TYPES = ("dueling", "actor_critic")
ARCHS = ("ife", "cnn")


@dataclass(frozen=True)
class HueConfig:
    """Front-end conv stack plus attention; ``conv_layers`` holds (kernel, stride)."""

    conv_layers: Tuple[Tuple[int, int], ...] = ((2, 2), (2, 2))
    channels: Tuple[int, ...] = (16, 32)
    attention_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in l) for l in self.conv_layers))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.conv_layers) != len(self.channels):
            raise ValueError("conv_layers and channels must have the same length")
        if self.attention_dim < 1 or any(c < 1 for c in self.channels):
            raise ValueError("channels and attention_dim must be positive")

    @property
    def non_overlapping(self) -> bool:
        return all(k == s for k, s in self.conv_layers)


@dataclass(frozen=True)
class AfeConfig:
    pool_kernel: int = 2
    pool_stride: int = 2
    res_blocks: int = 2
    width: int = 16
    adaptive: Tuple[int, int] = (3, 3)

    def __post_init__(self):
        object.__setattr__(self, "adaptive", tuple(int(v) for v in self.adaptive))
        if self.res_blocks < 1:
            raise ValueError(f"res_blocks must be >= 1, got {self.res_blocks}")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 4
    height: int = 40
    width: int = 40
    num_actions: int = 3
    arch: str = "ife"
    head: str = "dueling"
    head_hidden: int = 64
    hue: HueConfig = field(default_factory=HueConfig)
    afe: AfeConfig = field(default_factory=AfeConfig)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.head not in HEAD_TYPES:
            raise ValueError(f"head must be one of {HEAD_TYPES}, got {self.head!r}")
        if self.arch == "ife" and not self.hue.non_overlapping:
            raise ValueError("the interpretable encoder requires stride == kernel in every layer")
        spec = self.conv_spec()
        fw, fh = spec.feature_size()
        if self.arch == "ife":
            h, w = self.height, self.width
            for i, (k, _) in enumerate(self.hue.conv_layers):
                if h % k or w % k:
                    raise ValueError(f"HUE layer {i}: input {h}x{w} not divisible by kernel {k}")
                h, w = h // k, w // k
            if fw < 2 or fh < 2:
                raise ValueError(f"feature grid {fw}x{fh} is smaller than 2x2")
        afe = self.afe
        if afe.pool_kernel > min(fh, fw):
            raise ValueError(f"AFE pool kernel {afe.pool_kernel} exceeds the {fh}x{fw} feature grid")
        ph = (fh - afe.pool_kernel) // afe.pool_stride + 1
        pw = (fw - afe.pool_kernel) // afe.pool_stride + 1
        if afe.adaptive[0] > ph or afe.adaptive[1] > pw:
            raise ValueError(f"AFE adaptive output {afe.adaptive} exceeds the pooled {ph}x{pw} map")

    def conv_spec(self) -> ConvStackSpec:
        return ConvStackSpec(self.hue.conv_layers, self.width, self.height)

    def feature_grid(self) -> Tuple[int, int]:
        """(height, width) of the attention grid."""
        fw, fh = self.conv_spec().feature_size()
        return fh, fw

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hue"]["conv_layers"] = [list(l) for l in self.hue.conv_layers]
        d["hue"]["channels"] = list(self.hue.channels)
        d["afe"]["adaptive"] = list(self.afe.adaptive)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        hue = HueConfig(**{**d.pop("hue", {})})
        afe = AfeConfig(**{**d.pop("afe", {})})
        return cls(hue=hue, afe=afe, **d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AttentionMask:
    """One sample's attention weights laid out on the feature grid."""

    weights: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape

    def is_valid(self, tol: float = 1e-9) -> bool:
        return bool((self.weights >= 0).all() and abs(self.weights.sum() - 1.0) <= tol)

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())


@dataclass
class ModelParams:
    tensors: Dict[str, Tensor]
    fingerprint: str

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors)

    def values(self) -> List[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.tensors.items()},
            self.fingerprint,
        )

    def load_from(self, other: "ModelParams") -> None:
        if other.fingerprint != self.fingerprint:
            raise ValueError("parameter sets come from different architectures")
        for k, v in other.tensors.items():
            self.tensors[k].data = v.data.copy()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

RELU_GAIN = float(np.sqrt(2.0))


def orthogonal(rng: np.random.Generator, shape: Tuple[int, ...], gain: float) -> np.ndarray:
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols]).reshape(shape)


def _layer_specs(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...], float]]:
    specs: List[Tuple[str, Tuple[int, ...], float]] = []
    c_in = cfg.in_channels
    for i, ((k, _), c_out) in enumerate(zip(cfg.hue.conv_layers, cfg.hue.channels)):
        specs.append((f"hue.conv{i}", (c_out, c_in, k, k), RELU_GAIN))
        c_in = c_out
    c_f = c_in
    specs.append(("att.fc1", (cfg.hue.attention_dim, c_f), 1.0))
    specs.append(("att.fc2", (1, cfg.hue.attention_dim), 1.0))
    afe = cfg.afe
    if afe.width != c_f:
        specs.append(("afe.entry", (afe.width, c_f, 3, 3), RELU_GAIN))
    for b in range(afe.res_blocks):
        specs.append((f"afe.res{b}.conv0", (afe.width, afe.width, 3, 3), RELU_GAIN))
        specs.append((f"afe.res{b}.conv1", (afe.width, afe.width, 3, 3), RELU_GAIN))
    emb = embedding_dim(cfg)
    hidden = cfg.head_hidden
    if cfg.head == "dueling":
        for stream, out in (("value", 1), ("adv", cfg.num_actions)):
            if hidden:
                specs.append((f"head.{stream}.fc1", (hidden, emb), RELU_GAIN))
                specs.append((f"head.{stream}.fc2", (out, hidden), 1.0))
            else:
                specs.append((f"head.{stream}.fc2", (out, emb), 1.0))
    else:
        trunk = emb
        if hidden:
            specs.append(("head.trunk", (hidden, emb), RELU_GAIN))
            trunk = hidden
        specs.append(("head.policy", (cfg.num_actions, trunk), 0.01))
        specs.append(("head.value", (1, trunk), 1.0))
    return specs


def embedding_dim(cfg: ModelConfig) -> int:
    return cfg.afe.width * cfg.afe.adaptive[0] * cfg.afe.adaptive[1]


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Orthogonal weights (gain sqrt 2 ahead of ReLU), zero biases; fully seeded."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    for name, shape, gain in _layer_specs(cfg):
        tensors[f"{name}.w"] = Tensor(orthogonal(rng, shape, gain), requires_grad=True, name=f"{name}.w")
        tensors[f"{name}.b"] = Tensor(np.zeros(shape[0]), requires_grad=True, name=f"{name}.b")
    return ModelParams(tensors, cfg.fingerprint())


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


class HueOutput(NamedTuple):
    masked: Tensor  # N x C_f x H_f x W_f
    mask: Tensor  # N x H_f x W_f
    features: Tensor  # pre-attention z, N x C_f x H_f x W_f


def _as_batch(obs) -> Tensor:
    obs = obs if isinstance(obs, Tensor) else Tensor(obs)
    if obs.ndim == 3:
        obs = obs.reshape((1,) + obs.shape)
    if obs.ndim != 4:
        raise ShapeError(f"observation must be C x H x W or N x C x H x W, got shape {obs.shape}")
    return obs


def encode_features(obs: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Conv + ReLU stack up to (not including) attention."""
    x = _as_batch(obs)
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"observation has {x.shape[1]} channels, model expects {cfg.in_channels}")
    for i, (k, s) in enumerate(cfg.hue.conv_layers):
        if cfg.arch == "ife" and (x.shape[2] % k or x.shape[3] % k):
            raise ShapeError(f"HUE layer {i}: spatial dims {x.shape[2]}x{x.shape[3]} not divisible by stride {k}")
        x = T.relu(T.conv2d(x, params[f"hue.conv{i}.w"], params[f"hue.conv{i}.b"], stride=s))
    return x


def attention_weights(z: Tensor, params: ModelParams) -> Tensor:
    """Softmax over locations of ``fc2(tanh(fc1(z_i)))``; ``z`` is N x L x C_f (or L x C_f)."""
    hidden = T.tanh(T.linear(z, params["att.fc1.w"], params["att.fc1.b"]))
    logits = T.linear(hidden, params["att.fc2.w"], params["att.fc2.b"])
    logits = logits.reshape(logits.shape[:-1])
    return T.softmax(logits, axis=-1)


def apply_attention(z: Tensor, params: ModelParams) -> Tuple[Tensor, Tensor]:
    n, c, h, w = z.shape
    flat = z.reshape(n, c, h * w).transpose(0, 2, 1)  # N x L x C
    alpha = attention_weights(flat, params)  # N x L
    masked = flat * alpha.reshape(n, h * w, 1)
    masked = masked.transpose(0, 2, 1).reshape(n, c, h, w)
    return masked, alpha.reshape(n, h, w)


def hue_forward(obs, params: ModelParams, cfg: ModelConfig) -> HueOutput:
    z = encode_features(obs, params, cfg)
    masked, mask = apply_attention(z, params)
    return HueOutput(masked, mask, z)


def cnn_baseline_forward(obs, params: ModelParams, cfg: ModelConfig) -> HueOutput:
    """Same attention mechanism over an overlapping (stride < kernel) conv stack."""
    if cfg.arch != "cnn":
        raise ValueError("cnn_baseline_forward needs a config with arch='cnn'")
    return hue_forward(obs, params, cfg)


def _conv3(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return T.conv2d(T.pad2d(x, 1), params[f"{name}.w"], params[f"{name}.b"], stride=1)


def afe_forward(masked: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Max pool, residual blocks, adaptive max pool, flatten to N x D."""
    afe = cfg.afe
    x = masked
    if "afe.entry.w" in params.tensors:
        x = _conv3(x, params, "afe.entry")
    h, w = x.shape[2], x.shape[3]
    if afe.pool_kernel > h or afe.pool_kernel > w:
        raise ShapeError(f"AFE pool kernel {afe.pool_kernel} collapses {h}x{w} feature map below 1")
    x = T.maxpool2d(x, afe.pool_kernel, afe.pool_stride)
    for b in range(afe.res_blocks):
        y = _conv3(T.relu(x), params, f"afe.res{b}.conv0")
        y = _conv3(T.relu(y), params, f"afe.res{b}.conv1")
        x = T.residual_add(x, y)
    x = T.relu(x)
    oh, ow = afe.adaptive
    if oh > x.shape[2] or ow > x.shape[3]:
        raise ShapeError(f"AFE adaptive output {oh}x{ow} exceeds pooled map {x.shape[2]}x{x.shape[3]}")
    x = T.adaptive_maxpool(x, oh, ow)
    return x.reshape(x.shape[0], -1)


def dueling_combine(value: Tensor, adv: Tensor) -> Tensor:
    """Q = V + A - mean(A); ``value`` is N x 1, ``adv`` N x A."""
    return value + adv - adv.mean(axis=-1, keepdims=True)


def _mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    if f"{prefix}.fc1.w" in params.tensors:
        x = T.relu(T.linear(x, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]))
    return T.linear(x, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])


def dueling_q(embedding: Tensor, params: ModelParams) -> Tensor:
    return dueling_combine(_mlp(embedding, params, "head.value"), _mlp(embedding, params, "head.adv"))


def actor_critic_heads(embedding: Tensor, params: ModelParams) -> Tuple[Tensor, Tensor]:
    """Policy logits (N x A) and state value (N,) off a shared trunk."""
    x = embedding
    if "head.trunk.w" in params.tensors:
        x = T.relu(T.linear(x, params["head.trunk.w"], params["head.trunk.b"]))
    logits = T.linear(x, params["head.policy.w"], params["head.policy.b"])
    value = T.linear(x, params["head.value.w"], params["head.value.b"])
    return logits, value.reshape(value.shape[0])


class ModelOutput(NamedTuple):
    q: Optional[Tensor]
    logits: Optional[Tensor]
    value: Optional[Tensor]
    mask: Tensor
    features: Tensor


class Model:
    """Config plus parameters with a batched forward pass."""

    def __init__(self, cfg: ModelConfig, params: Optional[ModelParams] = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        if self.params.fingerprint != cfg.fingerprint():
            raise ValueError("parameter fingerprint does not match the model config")

    def forward(self, obs) -> ModelOutput:
        hue = hue_forward(obs, self.params, self.cfg)
        emb = afe_forward(hue.masked, self.params, self.cfg)
        if self.cfg.head == "dueling":
            return ModelOutput(dueling_q(emb, self.params), None, None, hue.mask, hue.features)
        logits, value = actor_critic_heads(emb, self.params)
        return ModelOutput(None, logits, value, hue.mask, hue.features)

    __call__ = forward

    def parameters(self) -> List[Tensor]:
        return self.params.values()

    def masks(self, obs) -> List[AttentionMask]:
        with T.no_grad():
            out = hue_forward(obs, self.params, self.cfg)
        return [AttentionMask(m.copy()) for m in out.mask.data]

    def feature_cells(self) -> Dict[Tuple[int, int], Tuple[int, int, int, int]]:
        """Receptive-field pixel box (y0, y1, x0, x1) of every attention cell (row, col)."""
        spec = self.cfg.conv_spec()
        fh, fw = self.cfg.feature_grid()
        cells = {}
        for r in range(fh):
            for c in range(fw):
                rf = receptive_field(spec, c, r)
                cells[(r, c)] = (rf.y_start, rf.y_end, rf.x_start, rf.x_end)
        return cells
