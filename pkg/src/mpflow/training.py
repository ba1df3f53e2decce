"""Full-batch training of coupling stacks on flow-map pair data, plus
multi-step rollout prediction.

The training loop is single-threaded and bit-deterministic: a fixed
(dataset, config) always yields identical final parameters. Updates only move
shift-network weights, so the trained net keeps exact invertibility and unit
Jacobian determinant at every epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import (
    MPNet,
    lower_layer,
    net_apply_batch,
    net_backward_collected,
    net_forward,
    net_forward_collect,
    upper_layer,
)
from .dynamics import PairDataset, Trajectory
from .errors import ConfigError, TrainingError
from .mlp import adam_init, adam_step, mlp_init, mlp_with_params
from .rng import Xoshiro256
from .shifts import MlpShift
from .verify import fd_jacobian_det


@dataclass(frozen=True)
class TrainConfig:
    n_layers: int = 8
    s: int = 2
    width: int = 64
    activation: str = "sigmoid"
    lr: float = 0.001
    epochs: int = 50000
    seed: int = 0
    log_stride: int = 500

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.log_stride < 1:
            raise ConfigError(f"log_stride must be >= 1, got {self.log_stride}")


@dataclass
class TrainMetrics:
    loss_curve: list = field(default_factory=list)  # (epoch, mse)
    det_curve: list = field(default_factory=list)  # (epoch, |det - 1| at spot point)
    final_loss: float = float("nan")
    wall_time: float = 0.0


def build_training_net(dim, config: TrainConfig) -> MPNet:
    """Alternating upper/lower stack (upper first) with freshly seeded shifts."""
    if dim < 2:
        raise ConfigError(f"training nets need dim >= 2, got {dim}")
    if not 2 <= config.s <= dim:
        raise ConfigError(f"split must satisfy 2 <= s <= {dim}, got {config.s}")
    seeder = Xoshiro256(config.seed)
    layers = []
    for l in range(config.n_layers):
        seed = seeder.next_u64()
        if l % 2 == 0:
            mlp = mlp_init((dim - config.s + 1, config.width, config.s - 1),
                           config.activation, seed)
            layers.append(upper_layer(dim, config.s, MlpShift(mlp)))
        else:
            mlp = mlp_init((config.s - 1, config.width, dim - config.s + 1),
                           config.activation, seed)
            layers.append(lower_layer(dim, config.s, MlpShift(mlp)))
    return MPNet(dim, tuple(layers))


def mse_loss(net: MPNet, dataset: PairDataset) -> float:
    """Mean squared Euclidean residual of net(x_n) against x_{n+1}."""
    if dataset.n_pairs == 0:
        raise ConfigError("dataset is empty")
    out = net_apply_batch(net, dataset.x)
    return float(np.mean(np.sum((out - dataset.y) ** 2, axis=1)))


def _net_with_params(net: MPNet, flat_params) -> MPNet:
    layers = []
    pos = 0
    for layer in net.layers:
        if isinstance(layer.shift, MlpShift):
            n = 2 * len(layer.shift.mlp.weights)
            mlp = mlp_with_params(layer.shift.mlp, flat_params[pos : pos + n])
            pos += n
            layers.append(replace(layer, shift=MlpShift(mlp)))
        else:
            layers.append(layer)
    return MPNet(net.dim, tuple(layers))


def train(dataset: PairDataset, config: TrainConfig):
    """Full-batch Adam on the MSE loss; returns (trained net, metrics).

    A non-finite loss aborts with TrainingError carrying the epoch index and
    the last finite checkpoint.
    """
    if dataset.n_pairs == 0:
        raise ConfigError("dataset is empty")
    start = time.perf_counter()
    net = build_training_net(dataset.dim, config)
    x, y = dataset.x, dataset.y
    n = dataset.n_pairs
    spot = x[0]

    params = []
    for layer in net.layers:
        if isinstance(layer.shift, MlpShift):
            for w, b in zip(layer.shift.mlp.weights, layer.shift.mlp.biases):
                params.extend([w, b])
    if not params:
        raise ConfigError("training net has no trainable shifts")
    state = adam_init(params, lr=config.lr)
    metrics = TrainMetrics()
    last_good = net

    for epoch in range(config.epochs):
        out, inputs = net_forward_collect(net, x)
        residual = out - y
        loss = float(np.mean(np.sum(residual**2, axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(
                f"loss became non-finite at epoch {epoch}", epoch=epoch, checkpoint=last_good
            )
        last_good = net
        if epoch % config.log_stride == 0:
            metrics.loss_curve.append((epoch, loss))
            dev = abs(fd_jacobian_det(lambda p: net_forward(net, p), spot) - 1.0)
            metrics.det_curve.append((epoch, dev))
        per_layer, _ = net_backward_collected(net, inputs, (2.0 / n) * residual)
        grads = [g for layer_grads in per_layer for g in layer_grads]
        params, state = adam_step(params, grads, state)
        net = _net_with_params(net, params)

    final = mse_loss(net, dataset)
    metrics.loss_curve.append((config.epochs, final))
    dev = abs(fd_jacobian_det(lambda p: net_forward(net, p), spot) - 1.0)
    metrics.det_curve.append((config.epochs, dev))
    metrics.final_loss = final
    metrics.wall_time = time.perf_counter() - start
    return net, metrics


def rollout(net: MPNet, x0, n_steps, h_data=None):
    """Iterate the net n_steps times; returns (Trajectory, truncated_at).

    truncated_at is None for a clean run, otherwise the 1-based step at which
    the state stopped being finite (the trajectory holds the finite prefix).
    """
    if n_steps < 0:
        raise ConfigError(f"n_steps must be >= 0, got {n_steps}")
    x = np.asarray(x0, float)
    scale = 1.0 if h_data is None else float(h_data)
    states = [x.copy()]
    truncated_at = None
    for k in range(n_steps):
        x = net_forward(net, x)
        if not np.all(np.isfinite(x)):
            truncated_at = k + 1
            break
        states.append(x.copy())
    times = scale * np.arange(len(states))
    return Trajectory(times, np.array(states)), truncated_at
