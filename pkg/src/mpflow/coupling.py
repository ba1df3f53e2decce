"""Volume-preserving coupling layers, one-coordinate shears, and their stacks.

Conventions: the split `s` and the shear target `i` are 1-based, matching the
serialized format. With D components, an Upper layer adds a function of the
lower block x[s-1:] to the upper block x[:s-1]; a Lower layer adds a function
of the (unchanged) upper block to the lower block; a Shear adds a scalar
function of the other D-1 coordinates to component i. Each update touches a
block the shift does not read, so the Jacobian is unit-triangular and the
inverse is the same subtraction in closed form.

Layers and nets are immutable after construction; forward, inverse, and
backward are pure functions and safe for concurrent callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UnsupportedError
from .mlp import backward_batch, forward_cached, mlp_params
from .shifts import FixedShift, MlpShift

UPPER = "upper"
LOWER = "lower"
SHEAR = "shear"


@dataclass(frozen=True)
class Layer:
    kind: str
    dim: int
    s: int = 0  # split, upper/lower only
    i: int = 0  # target coordinate, shear only
    shift: object = None


def upper_layer(dim, s, shift) -> Layer:
    _check_split(dim, s)
    _check_shift_dims(shift, dim - s + 1, s - 1, "upper")
    return Layer(UPPER, dim, s=s, shift=shift)


def lower_layer(dim, s, shift) -> Layer:
    _check_split(dim, s)
    _check_shift_dims(shift, s - 1, dim - s + 1, "lower")
    return Layer(LOWER, dim, s=s, shift=shift)


def shear_layer(dim, i, shift) -> Layer:
    if dim < 2:
        raise ConfigError(f"shear layers need dim >= 2, got {dim}")
    if not 1 <= i <= dim:
        raise ConfigError(f"shear target must satisfy 1 <= i <= {dim}, got {i}")
    _check_shift_dims(shift, dim - 1, 1, "shear")
    return Layer(SHEAR, dim, i=i, shift=shift)


def _check_split(dim, s):
    if dim < 2:
        raise ConfigError(f"coupling layers need dim >= 2, got {dim}")
    if not 2 <= s <= dim:
        raise ConfigError(f"split must satisfy 2 <= s <= {dim}, got {s}")


def _check_shift_dims(shift, in_dim, out_dim, kind):
    if shift.in_dim != in_dim or shift.out_dim != out_dim:
        raise ConfigError(
            f"{kind} shift must map dim {in_dim} -> {out_dim}, "
            f"got {shift.in_dim} -> {shift.out_dim}"
        )


def _drop(x, j):
    return np.concatenate([x[..., :j], x[..., j + 1 :]], axis=-1)


def layer_forward(layer: Layer, x) -> np.ndarray:
    x = _check_point(layer.dim, x)
    out = x.copy()
    k = layer.s - 1
    if layer.kind == UPPER:
        out[:k] += layer.shift(x[k:])
    elif layer.kind == LOWER:
        out[k:] += layer.shift(x[:k])
    else:
        j = layer.i - 1
        out[j] += layer.shift(_drop(x, j))[0]
    return out


def layer_inverse(layer: Layer, xh) -> np.ndarray:
    xh = _check_point(layer.dim, xh)
    out = xh.copy()
    k = layer.s - 1
    if layer.kind == UPPER:
        out[:k] -= layer.shift(xh[k:])
    elif layer.kind == LOWER:
        out[k:] -= layer.shift(xh[:k])
    else:
        j = layer.i - 1
        out[j] -= layer.shift(_drop(xh, j))[0]
    return out


def layer_apply_batch(layer: Layer, x, inverse=False) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim != 2 or x.shape[1] != layer.dim:
        raise ConfigError(f"expected (n, {layer.dim}) batch, got {x.shape}")
    out = x.copy()
    sign = -1.0 if inverse else 1.0
    k = layer.s - 1
    if layer.kind == UPPER:
        out[:, :k] += sign * layer.shift.apply_batch(x[:, k:])
    elif layer.kind == LOWER:
        out[:, k:] += sign * layer.shift.apply_batch(x[:, :k])
    else:
        j = layer.i - 1
        out[:, j] += sign * layer.shift.apply_batch(_drop(x, j))[:, 0]
    return out


def _check_point(dim, x):
    x = np.asarray(x, float)
    if x.shape != (dim,):
        raise ConfigError(f"expected point of dim {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class MPNet:
    """Ordered stack of layers sharing one dimension; empty stack = identity."""

    dim: int
    layers: tuple

    def __post_init__(self):
        for idx, layer in enumerate(self.layers):
            if layer.dim != self.dim:
                raise ConfigError(f"layer {idx} has dim {layer.dim}, net has dim {self.dim}")

    @property
    def n_layers(self):
        return len(self.layers)


def net_forward(net: MPNet, x) -> np.ndarray:
    x = _check_point(net.dim, x)
    for layer in net.layers:
        x = layer_forward(layer, x)
    return x


def net_inverse(net: MPNet, xh) -> np.ndarray:
    xh = _check_point(net.dim, xh)
    for layer in reversed(net.layers):
        xh = layer_inverse(layer, xh)
    return xh


def net_apply_batch(net: MPNet, x, inverse=False) -> np.ndarray:
    x = np.asarray(x, float)
    layers = reversed(net.layers) if inverse else net.layers
    for layer in layers:
        x = layer_apply_batch(layer, x, inverse=inverse)
    return x


def _active_block(layer):
    """(read slice, written slice) in 0-based coordinates, for upper/lower."""
    k = layer.s - 1
    if layer.kind == UPPER:
        return slice(k, layer.dim), slice(0, k)
    return slice(0, k), slice(k, layer.dim)


def layer_backward_batch(layer: Layer, x, upstream):
    """Chain rule through one layer for a batch of points.

    Returns (shift parameter grads summed over the batch, gradient wrt x).
    FixedShift layers have no parameters; ones without an analytic Jacobian
    cannot propagate gradients and raise UnsupportedError.
    """
    x = np.asarray(x, float)
    g = np.asarray(upstream, float)
    dx = g.copy()
    if layer.kind == SHEAR:
        j = layer.i - 1
        u = _drop(x, j)
        g_out = g[:, j : j + 1]
    else:
        read, written = _active_block(layer)
        u = x[:, read]
        g_out = g[:, written]
    if isinstance(layer.shift, MlpShift):
        _, cache = forward_cached(layer.shift.mlp, u)
        grads, du = backward_batch(layer.shift.mlp, cache, g_out)
    elif isinstance(layer.shift, FixedShift):
        if layer.shift._jac is None:
            raise UnsupportedError(
                f"fixed shift {layer.shift.id!r} has no registered analytic Jacobian; "
                "gradients through it are not supported"
            )
        grads = []
        du = np.stack([g_out[n] @ layer.shift.jacobian(u[n]) for n in range(u.shape[0])])
    else:
        raise ConfigError(f"unknown shift type {type(layer.shift)!r}")
    if layer.kind == SHEAR:
        j = layer.i - 1
        dx[:, :j] += du[:, :j]
        dx[:, j + 1 :] += du[:, j:]
    else:
        dx[:, read] += du
    return grads, dx


def net_forward_collect(net: MPNet, x):
    """Batched forward keeping each layer's input; returns (output, inputs)."""
    x = np.asarray(x, float)
    inputs = []
    for layer in net.layers:
        inputs.append(x)
        x = layer_apply_batch(layer, x)
    return x, inputs


def net_backward_collected(net: MPNet, inputs, upstream):
    g = np.asarray(upstream, float)
    per_layer = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        per_layer[idx], g = layer_backward_batch(net.layers[idx], inputs[idx], g)
    return per_layer, g


def net_backward_batch(net: MPNet, x, upstream):
    """Gradients of sum_i <upstream_i, net(x_i)> for a batch.

    Returns (per-layer parameter-grad lists, gradient wrt the input batch).
    """
    _, inputs = net_forward_collect(net, x)
    return net_backward_collected(net, inputs, upstream)


def net_backward(net: MPNet, x, upstream):
    """Single-point gradients: (per-layer parameter grads, input gradient)."""
    x = _check_point(net.dim, x)
    upstream = _check_point(net.dim, np.asarray(upstream, float))
    per_layer, dx = net_backward_batch(net, x[None, :], upstream[None, :])
    return per_layer, dx[0]


def net_trainable_params(net: MPNet):
    """Flat parameter list over MlpShift layers, in layer order."""
    params = []
    for layer in net.layers:
        if isinstance(layer.shift, MlpShift):
            params.extend(mlp_params(layer.shift.mlp))
    return params
