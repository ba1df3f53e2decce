import numpy as np
import pytest

from mpflow.coupling import MPNet, net_apply_batch, net_forward, net_inverse, upper_layer
from mpflow.dynamics import PairDataset, make_field
from mpflow.errors import ConfigError, TrainingError
from mpflow.mlp import mlp_init, mlp_params
from mpflow.rng import Xoshiro256
from mpflow.shifts import MlpShift
from mpflow.training import TrainConfig, build_training_net, mse_loss, rollout, train
from mpflow.verify import fd_jacobian_det, roundtrip_error, sample_points


def teacher_student_dataset(seed, n_points=64, width=8):
    """Pairs (x, teacher(x)) for a one-layer upper teacher on [-1,1]^2."""
    teacher = MPNet(2, (upper_layer(2, 2, MlpShift(mlp_init((1, width, 1), "sigmoid", 1000 + seed))),))
    x = sample_points((np.full(2, -1.0), np.full(2, 1.0)), n_points, 42 + seed)
    return PairDataset(x, net_apply_batch(teacher, x), 0.0), teacher


# --- mse_loss -----------------------------------------------------------------


def test_mse_identity_on_constant_pairs():
    x = Xoshiro256(0).uniform_array((10, 3), -1, 1)
    ds = PairDataset(x, x.copy(), 0.5)
    assert mse_loss(MPNet(3, ()), ds) == 0.0


def test_mse_single_unit_offset_pair():
    x = np.array([[0.2, -0.4]])
    y = x + np.array([[1.0, 0.0]])
    assert mse_loss(MPNet(2, ()), PairDataset(x, y, 0.0)) == 1.0


def test_mse_invariant_under_reordering():
    rng = Xoshiro256(3)
    x = rng.uniform_array((12, 2), -1, 1)
    y = rng.uniform_array((12, 2), -1, 1)
    net = MPNet(2, (upper_layer(2, 2, MlpShift(mlp_init((1, 4, 1), "sigmoid", 5))),))
    perm = np.argsort(rng.uniform_array(12))
    a = mse_loss(net, PairDataset(x, y, 0.0))
    b = mse_loss(net, PairDataset(x[perm], y[perm], 0.0))
    assert abs(a - b) < 1e-15


def test_mse_empty_dataset_rejected():
    with pytest.raises(ConfigError):
        mse_loss(MPNet(2, ()), PairDataset(np.zeros((0, 2)), np.zeros((0, 2)), 0.0))


# --- build_training_net ---------------------------------------------------------


def test_build_net_alternates_starting_upper():
    cfg = TrainConfig(n_layers=5, s=2, width=4, epochs=1)
    net = build_training_net(4, cfg)
    kinds = [layer.kind for layer in net.layers]
    assert kinds == ["upper", "lower", "upper", "lower", "upper"]
    assert net.layers[0].shift.mlp.layer_dims == (3, 4, 1)
    assert net.layers[1].shift.mlp.layer_dims == (1, 4, 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(n_layers=0)
    with pytest.raises(ConfigError):
        TrainConfig(width=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


# --- train ---------------------------------------------------------------------


def test_train_identity_fixed_point():
    # zero-field pairs with zero-initialized shift outputs stay at loss 0
    x = Xoshiro256(9).uniform_array((16, 2), -1, 1)
    ds = PairDataset(x, x.copy(), 0.0)
    cfg = TrainConfig(n_layers=2, width=4, epochs=50, seed=0, log_stride=10)
    net, metrics = train(ds, cfg)
    # Glorot init is not the identity, but training must drive loss down hard
    assert metrics.final_loss < metrics.loss_curve[0][1]


def test_teacher_student_recovery():
    ds, _ = teacher_student_dataset(seed=0)
    cfg = TrainConfig(n_layers=1, width=8, epochs=6000, seed=0, log_stride=2000)
    net, metrics = train(ds, cfg)
    assert metrics.final_loss < 1e-5


def test_train_deterministic_bitwise():
    ds, _ = teacher_student_dataset(seed=1)
    cfg = TrainConfig(n_layers=1, width=4, epochs=200, seed=7, log_stride=100)
    net_a, met_a = train(ds, cfg)
    net_b, met_b = train(ds, cfg)
    for la, lb in zip(net_a.layers, net_b.layers):
        for pa, pb in zip(mlp_params(la.shift.mlp), mlp_params(lb.shift.mlp)):
            assert np.array_equal(pa, pb)
    assert met_a.loss_curve == met_b.loss_curve


def test_train_structural_preservation():
    ds, _ = teacher_student_dataset(seed=2)
    cfg = TrainConfig(n_layers=2, width=6, epochs=500, seed=3, log_stride=250)
    net, metrics = train(ds, cfg)
    pts = sample_points((np.full(2, -1.0), np.full(2, 1.0)), 50, 4)
    assert roundtrip_error(net, pts) < 1e-11
    for p in pts[:10]:
        assert abs(fd_jacobian_det(lambda q: net_forward(net, q), p) - 1.0) < 1e-6
    assert all(dev < 1e-6 for _, dev in metrics.det_curve)


def test_train_best_so_far_non_increasing_and_progress():
    ds, _ = teacher_student_dataset(seed=3)
    cfg = TrainConfig(n_layers=1, width=8, epochs=2000, seed=1, log_stride=200)
    _, metrics = train(ds, cfg)
    losses = [v for _, v in metrics.loss_curve]
    best = np.minimum.accumulate(losses)
    assert np.all(np.diff(best) <= 0)
    assert losses[-1] < 1e-2 * losses[0]


def test_train_loss_curve_epochs_strictly_increasing():
    ds, _ = teacher_student_dataset(seed=4)
    cfg = TrainConfig(n_layers=1, width=4, epochs=300, seed=0, log_stride=100)
    _, metrics = train(ds, cfg)
    epochs = [e for e, _ in metrics.loss_curve]
    assert epochs == sorted(set(epochs))
    assert epochs[-1] == 300


def test_train_nonfinite_aborts_with_checkpoint():
    # relu shifts with an absurd learning rate overflow after the first update
    ds, _ = teacher_student_dataset(seed=6, n_points=8)
    cfg = TrainConfig(n_layers=2, width=4, activation="relu", epochs=50, seed=0,
                      lr=1e200, log_stride=10)
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingError) as err:
            train(ds, cfg)
    assert err.value.epoch is not None and err.value.epoch >= 1
    assert isinstance(err.value.checkpoint, MPNet)
    # the checkpoint is the last net whose loss was still finite
    assert np.isfinite(mse_loss(err.value.checkpoint, ds))


# --- rollout --------------------------------------------------------------------


def test_rollout_identity_constant():
    traj, truncated = rollout(MPNet(3, ()), np.array([0.5, -0.2, 1.0]), 5)
    assert truncated is None
    assert traj.states.shape == (6, 3)
    for row in traj.states:
        assert np.array_equal(row, np.array([0.5, -0.2, 1.0]))


def test_rollout_times_scaled_by_h_data():
    traj, _ = rollout(MPNet(2, ()), np.zeros(2), 4, h_data=0.2)
    np.testing.assert_allclose(traj.times, [0.0, 0.2, 0.4, 0.6, 0.8], atol=1e-15)


def test_rollout_forward_then_inverse_returns_start():
    ds, teacher = teacher_student_dataset(seed=5)
    cfg = TrainConfig(n_layers=2, width=4, epochs=100, seed=2, log_stride=50)
    net, _ = train(ds, cfg)
    x0 = np.array([0.3, -0.6])
    traj, _ = rollout(net, x0, 10)
    x = traj.states[-1]
    for _ in range(10):
        x = net_inverse(net, x)
    assert np.max(np.abs(x - x0)) < 1e-9


def test_rollout_compiled_flow_tracks_reference():
    # compiled lorentz flow (T=0.2, 200 internal steps) applied 100 times from
    # the state at t=40 stays near the RK4 reference trajectory
    from mpflow.compiler import compile_flow
    from mpflow.dynamics import rk4_flow

    f = make_field("lorentz4d")
    x = np.array([0.1, 1.0, 1.1, 0.5])
    for n in range(200):
        x = rk4_flow(f, n * 0.2, 0.2, 1e-3, x)
    box = (np.array([-1.6, -1.6, -1.4, -1.4]), np.array([1.6, 1.6, 1.4, 1.4]))
    compiled = compile_flow(f, 0.0, 0.2, 200, box, n_check=2)
    traj, truncated = rollout(compiled.net, x, 100, h_data=0.2)
    assert truncated is None
    y = x.copy()
    worst = 0.0
    for n in range(100):
        y = rk4_flow(f, 40.0 + n * 0.2, 0.2, 1e-3, y)
        worst = max(worst, float(np.max(np.abs(traj.states[n + 1] - y))))
    assert worst < 0.5


def test_rollout_truncates_on_blowup():
    # alternating cube shifts feed each other, so magnitudes cube every layer
    from mpflow.coupling import lower_layer
    from mpflow.shifts import register_fixed_shift, fixed_shift

    register_fixed_shift(
        "cube", lambda params, i, o: ((lambda u: np.array([u[0] ** 3])), None)
    )
    net = MPNet(
        2,
        (
            upper_layer(2, 2, fixed_shift("cube", [], 1, 1)),
            lower_layer(2, 2, fixed_shift("cube", [], 1, 1)),
        ),
    )
    with np.errstate(all="ignore"):
        traj, truncated = rollout(net, np.array([0.0, 10.0]), 10)
    assert truncated is not None
    assert traj.states.shape[0] == truncated
