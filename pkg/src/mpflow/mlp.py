"""Dense feed-forward networks with exact reverse-mode gradients and Adam.

Everything is float64. An `Mlp` is immutable after construction; forward and
backward are pure functions, so instances are safe to share across threads.
Parameters travel as flat lists of arrays ordered [W1, b1, W2, b2, ...],
the same order `mlp_backward` and `adam_step` use.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError
from .rng import Xoshiro256

ACTIVATIONS = ("sigmoid", "tanh", "relu")

# Global Lipschitz constant of each activation on the real line.
ACTIVATION_LIPSCHITZ = {"sigmoid": 0.25, "tanh": 1.0, "relu": 1.0}


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name, z):
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z, a):
    # a is the already-computed activation value at z
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(float)


@dataclass(frozen=True)
class Mlp:
    """Perceptron with linear output layer; hidden layers share one activation."""

    layer_dims: tuple
    weights: tuple  # per layer, shape (out, in)
    biases: tuple  # per layer, shape (out,)
    activation: str

    @property
    def d_in(self):
        return self.layer_dims[0]

    @property
    def d_out(self):
        return self.layer_dims[-1]


def mlp_init(layer_dims, activation="sigmoid", seed=0) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic for a fixed seed."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ConfigError(f"layer_dims needs at least (d_in, d_out), got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer_dims must be positive, got {dims}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    rng = Xoshiro256(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform_array((fan_out, fan_in), -bound, bound)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return Mlp(dims, tuple(weights), tuple(biases), activation)


def mlp_params(mlp: Mlp) -> list:
    """Parameter arrays in the canonical order [W1, b1, W2, b2, ...]."""
    out = []
    for w, b in zip(mlp.weights, mlp.biases):
        out.append(w)
        out.append(b)
    return out


def mlp_with_params(mlp: Mlp, params) -> Mlp:
    """New Mlp with the same shape carrying the given parameter list."""
    n = len(mlp.weights)
    if len(params) != 2 * n:
        raise ConfigError(f"expected {2 * n} parameter arrays, got {len(params)}")
    weights, biases = [], []
    for l in range(n):
        w, b = np.asarray(params[2 * l], float), np.asarray(params[2 * l + 1], float)
        if w.shape != mlp.weights[l].shape or b.shape != mlp.biases[l].shape:
            raise ConfigError(f"parameter shape mismatch at layer {l + 1}")
        weights.append(w)
        biases.append(b)
    return replace(mlp, weights=tuple(weights), biases=tuple(biases))


def forward_batch(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Apply the network to rows of x, shape (n, d_in) -> (n, d_out)."""
    a = np.asarray(x, float)
    if a.ndim != 2 or a.shape[1] != mlp.d_in:
        raise ConfigError(f"expected input of shape (n, {mlp.d_in}), got {a.shape}")
    last = len(mlp.weights) - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = a @ w.T + b
        if l < last:
            a = _act(mlp.activation, a)
    return a


def mlp_forward(mlp: Mlp, x) -> np.ndarray:
    x = np.asarray(x, float)
    if x.shape != (mlp.d_in,):
        raise ConfigError(f"expected input of shape ({mlp.d_in},), got {x.shape}")
    return forward_batch(mlp, x[None, :])[0]


def forward_cached(mlp: Mlp, x: np.ndarray):
    """Batched forward keeping pre-activations and activations for backward."""
    a = np.asarray(x, float)
    if a.ndim != 2 or a.shape[1] != mlp.d_in:
        raise ConfigError(f"expected input of shape (n, {mlp.d_in}), got {a.shape}")
    acts = [a]
    zs = []
    last = len(mlp.weights) - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = acts[-1] @ w.T + b
        zs.append(z)
        acts.append(_act(mlp.activation, z) if l < last else z)
    return acts[-1], (acts, zs)


def backward_batch(mlp: Mlp, cache, upstream: np.ndarray):
    """Gradients of sum_i <upstream_i, mlp(x_i)> from a forward_cached pass.

    Returns (param_grads in [W1, b1, ...] order summed over the batch,
    input gradient of shape (n, d_in)).
    """
    acts, zs = cache
    delta = np.asarray(upstream, float)
    if delta.shape != zs[-1].shape:
        raise ConfigError(f"upstream shape {delta.shape} != output shape {zs[-1].shape}")
    n_layers = len(mlp.weights)
    grads = [None] * (2 * n_layers)
    for l in range(n_layers - 1, -1, -1):
        grads[2 * l] = delta.T @ acts[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        delta = delta @ mlp.weights[l]
        if l > 0:
            delta = delta * _act_grad(mlp.activation, zs[l - 1], acts[l])
    return grads, delta


def mlp_backward(mlp: Mlp, x, upstream):
    """Exact reverse-mode gradients of <upstream, mlp_forward(x)>."""
    x = np.asarray(x, float)
    upstream = np.asarray(upstream, float)
    if x.shape != (mlp.d_in,):
        raise ConfigError(f"expected input of shape ({mlp.d_in},), got {x.shape}")
    if upstream.shape != (mlp.d_out,):
        raise ConfigError(f"expected upstream of shape ({mlp.d_out},), got {upstream.shape}")
    _, cache = forward_cached(mlp, x[None, :])
    grads, dx = backward_batch(mlp, cache, upstream[None, :])
    return grads, dx[0]


def lipschitz_bound(mlp: Mlp) -> float:
    """Product-of-norms Lipschitz constant in the sup norm on any box."""
    l_act = ACTIVATION_LIPSCHITZ[mlp.activation]
    bound = 1.0
    for w in mlp.weights:
        bound *= np.abs(w).sum(axis=1).max()
    return bound * l_act ** (len(mlp.weights) - 1)


@dataclass
class AdamState:
    m: list
    v: list
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def adam_init(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("params, grads and state must have matching lengths")
    t = state.t + 1
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in array {i} at step {t}", step=t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
