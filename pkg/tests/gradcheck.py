"""Central finite-difference oracle for autograd checks."""
import numpy as np

from ife import tensor as T

STEP = 1e-5
# central differences at STEP carry ~1e-11 round-off, so smaller gradients compare absolutely
ABS_FLOOR = 1e-6


def numeric_grad(fn, tensor, step=STEP):
    """d fn() / d tensor by central differences; ``fn`` returns a float."""
    grad = np.zeros_like(tensor.data)
    data = tensor.data
    for idx in np.ndindex(data.shape):
        orig = data[idx]
        data[idx] = orig + step
        with T.no_grad():
            hi = fn()
        data[idx] = orig - step
        with T.no_grad():
            lo = fn()
        data[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=ABS_FLOOR):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_grads(loss_fn, tensors, step=STEP):
    """Max elementwise relative error between autograd and finite differences."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    T.backward(loss)
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: float(loss_fn().data), t, step)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, float(relative_error(ana, num).max()))
    return worst


def tiny_model_config(head="dueling", seed_channels=(2, 3)):
    """Full IFE pipeline small enough for exhaustive finite differences."""
    from ife.model import AfeConfig, HueConfig, ModelConfig

    return ModelConfig(
        in_channels=2,
        height=8,
        width=8,
        num_actions=3,
        head=head,
        head_hidden=4,
        hue=HueConfig(conv_layers=((2, 2), (2, 2)), channels=seed_channels, attention_dim=4),
        afe=AfeConfig(pool_kernel=1, pool_stride=1, res_blocks=1, width=3, adaptive=(1, 1)),
    )


def randomize_biases(params, rng, scale=0.1):
    """Zero-initialised biases make ReLU kinks coincide; spread them out."""
    for name, t in params.tensors.items():
        if name.endswith(".b"):
            t.data = rng.normal(0.0, scale, t.shape)
