import numpy as np
import pytest

from mpflow.compiler import (
    compile_flow,
    convergence_study,
    shear_pair,
    shear_rewrite_bound,
    shear_to_couplings,
)
from mpflow.coupling import layer_forward, net_forward, shear_layer
from mpflow.dynamics import make_field, rk4_flow, splitting_step
from mpflow.errors import ConfigError, UnsupportedError
from mpflow.mlp import Mlp
from mpflow.pair_decomposition import decompose
from mpflow.rng import Xoshiro256
from mpflow.serialize import deserialize, serialize
from mpflow.shifts import MlpShift
from mpflow.verify import fd_jacobian_det, roundtrip_error, sample_points

from test_pair_decomposition import BOX3, BOX4, quadrature_field

BOXH = (np.full(2, -1.0), np.full(2, 1.0))


def zero_field3():
    return make_field("linear", params=np.zeros((3, 3)))


def sigmoid_shear(dim, width, seed, scale=1.0):
    """Shear on coordinate 1 with shift a . sigmoid(K u + b), zero output bias."""
    rng = Xoshiro256(seed)
    K = rng.uniform_array((width, dim - 1), -1.5, 1.5)
    b = rng.uniform_array(width, -1.0, 1.0)
    a = rng.uniform_array((1, width), -scale, scale)
    mlp = Mlp((dim - 1, width, 1), (K, a), (b, np.zeros(1)), "sigmoid")
    return shear_layer(dim, 1, MlpShift(mlp))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# --- shear_pair ---------------------------------------------------------------


def test_shear_pair_harmonic_hand_example():
    deco = decompose(make_field("harmonic2d"), BOXH, tol=1e-9)
    first, second = shear_pair(deco.pairs[0], 0.0, 0.1)
    x = np.array([1.0, 0.0])
    after1 = layer_forward(first, x)
    assert np.array_equal(after1, np.array([1.0, 0.0]))  # g1 = -q = 0 here
    after2 = layer_forward(second, after1)
    np.testing.assert_allclose(after2, [1.0, 0.1], atol=1e-15)


def test_shear_pair_zero_step_identity():
    deco = decompose(make_field("harmonic2d"), BOXH, tol=1e-9)
    first, second = shear_pair(deco.pairs[0], 0.0, 0.0)
    for seed in range(5):
        x = Xoshiro256(seed).uniform_array(2, -1, 1)
        assert np.array_equal(layer_forward(second, layer_forward(first, x)), x)


def test_shear_pair_layers_unit_det():
    deco = decompose(make_field("lorentz4d"), BOX4, tol=1e-9)
    pts = sample_points(BOX4, 10, 5, exclude=deco.field.singular)
    for pair in deco.pairs:
        for layer in shear_pair(pair, 0.1, 0.05):
            for p in pts[:5]:
                det = fd_jacobian_det(lambda q: layer_forward(layer, q), p)
                assert abs(det - 1.0) < 1e-6


def test_shear_pair_rejects_nonseparable():
    deco = decompose(quadrature_field(), BOX3, tol=1e-6)
    with pytest.raises(UnsupportedError):
        shear_pair(deco.pairs[0], 0.0, 0.1)


# --- compile_flow --------------------------------------------------------------


def test_compile_lorentz_layer_count_and_det():
    f = make_field("lorentz4d")
    compiled = compile_flow(f, 0.0, 0.2, 20, BOX4)
    assert compiled.net.n_layers == 120  # 20 steps x 3 pairs x 2 shears
    pts = sample_points(BOX4, 10, 8, exclude=f.singular)
    for p in pts:
        det = fd_jacobian_det(lambda q: net_forward(compiled.net, q), p)
        assert abs(det - 1.0) < 1e-6


def test_compile_zero_field_identity():
    compiled = compile_flow(zero_field3(), 0.0, 1.0, 4, BOX3)
    for seed in range(5):
        x = Xoshiro256(seed).uniform_array(3, -2, 2)
        assert np.array_equal(net_forward(compiled.net, x), x)


def test_compile_rejects_nonseparable_field():
    with pytest.raises(UnsupportedError) as err:
        compile_flow(quadrature_field(), 0.0, 0.5, 4, BOX3)
    assert "not implemented" in str(err.value)


def test_compiled_net_equals_explicit_splitting():
    f = make_field("lorentz4d")
    compiled = compile_flow(f, 0.0, 0.2, 5, BOX4)
    subflows = [lambda x, layer=layer: layer_forward(layer, x) for layer in compiled.net.layers]
    pts = sample_points(BOX4, 100, 12, exclude=f.singular)
    for p in pts:
        a = net_forward(compiled.net, p)
        b = splitting_step(subflows, p)
        assert np.max(np.abs(a - b)) < 1e-12


def test_compiled_net_invertible():
    f = make_field("lorentz4d")
    compiled = compile_flow(f, 0.0, 0.2, 10, BOX4)
    pts = sample_points(BOX4, 20, 14, exclude=f.singular)
    assert roundtrip_error(compiled.net, pts) < 1e-11


def test_compiled_net_serialization_reproduces_bitwise():
    f = make_field("lorentz4d")
    compiled = compile_flow(f, 0.0, 0.2, 3, BOX4)
    restored = deserialize(serialize(compiled.net))
    pts = sample_points(BOX4, 10, 15, exclude=f.singular)
    for p in pts:
        assert np.array_equal(net_forward(compiled.net, p), net_forward(restored, p))
    assert serialize(restored) == serialize(compiled.net)


def test_compile_approaches_rk4_flow():
    f = make_field("harmonic2d")
    compiled = compile_flow(f, 0.0, 1.0, 200, BOXH)
    x = np.array([0.6, -0.3])
    ref = rk4_flow(f, 0.0, 1.0, 1e-3, x)
    assert np.max(np.abs(net_forward(compiled.net, x) - ref)) < 5e-3


# --- shear_to_couplings ---------------------------------------------------------


def test_rewrite_zero_outer_weights_exact_identity():
    shear = sigmoid_shear(3, 4, seed=2, scale=1.0)
    mlp = shear.shift.mlp
    zeroed = Mlp(mlp.layer_dims, (mlp.weights[0], np.zeros_like(mlp.weights[1])),
                 mlp.biases, "sigmoid")
    shear0 = shear_layer(3, 1, MlpShift(zeroed))
    net = shear_to_couplings(shear0, s=2, delta=1e-3)
    for seed in range(5):
        x = Xoshiro256(seed).uniform_array(3, -1, 1)
        assert np.array_equal(net_forward(net, x), x)


def test_rewrite_layer_count_and_kinds():
    shear = sigmoid_shear(4, 5, seed=3)
    net = shear_to_couplings(shear, s=3, delta=1e-3)
    assert net.n_layers == 15
    kinds = [layer.kind for layer in net.layers]
    assert kinds == ["lower", "upper", "lower"] * 5


def test_rewrite_composition_identity_exact():
    # The composed net must equal the target with its s-th input argument
    # perturbed by delta * x_s, to rounding.
    for dim, s, width, seed in [(3, 2, 1, 5), (4, 3, 4, 6), (5, 2, 3, 7), (4, 4, 2, 8)]:
        shear = sigmoid_shear(dim, width, seed)
        delta = 1e-3
        net = shear_to_couplings(shear, s=s, delta=delta)
        K = shear.shift.mlp.weights[0]
        b = shear.shift.mlp.biases[0]
        a = shear.shift.mlp.weights[1][0]
        pts = sample_points((np.full(dim, -1.0), np.full(dim, 1.0)), 50, seed)
        for x in pts:
            out = net_forward(net, x)
            pred = x.copy()
            z = K @ x[1:] + b + delta * x[s - 1]
            pred[0] += a @ _sigmoid(z)
            np.testing.assert_allclose(out, pred, rtol=0, atol=1e-12)


def test_rewrite_hand_example_bound():
    # W=1, D=3, s=2, K=(1,1), b=0, a=1, delta=1e-3 on [-1,1]^3:
    # bound = 1 * (1/4) * 1e-3 * 1 = 2.5e-4
    K = np.array([[1.0, 1.0]])
    mlp = Mlp((2, 1, 1), (K, np.array([[1.0]])), (np.zeros(1), np.zeros(1)), "sigmoid")
    shear = shear_layer(3, 1, MlpShift(mlp))
    box = (np.full(3, -1.0), np.full(3, 1.0))
    net = shear_to_couplings(shear, s=2, delta=1e-3)
    bound = shear_rewrite_bound(shear, 2, 1e-3, box)
    assert bound == pytest.approx(2.5e-4)
    pts = sample_points(box, 500, 21)
    measured = max(abs(net_forward(net, p)[0] - layer_forward(shear, p)[0]) for p in pts)
    assert measured <= bound


def test_rewrite_error_linear_in_delta():
    shear = sigmoid_shear(3, 3, seed=9)
    box = (np.full(3, -1.0), np.full(3, 1.0))
    pts = sample_points(box, 300, 22)

    def sup_err(delta):
        net = shear_to_couplings(shear, s=2, delta=delta)
        return max(abs(net_forward(net, p)[0] - layer_forward(shear, p)[0]) for p in pts)

    e1, e2 = sup_err(1e-3), sup_err(5e-4)
    assert 0.45 <= e2 / e1 <= 0.55


def test_rewrite_validation():
    shear = sigmoid_shear(3, 2, seed=10)
    with pytest.raises(ConfigError):
        shear_to_couplings(shear, s=7, delta=1e-3)
    with pytest.raises(ConfigError):
        shear_to_couplings(shear, s=2, delta=0.0)
    wrong_target = shear_layer(3, 2, shear.shift)
    with pytest.raises(UnsupportedError):
        shear_to_couplings(wrong_target, s=2, delta=1e-3)
    # tanh activation unsupported
    m = shear.shift.mlp
    tanh_shift = MlpShift(Mlp(m.layer_dims, m.weights, m.biases, "tanh"))
    with pytest.raises(UnsupportedError):
        shear_to_couplings(shear_layer(3, 1, tanh_shift), s=2, delta=1e-3)


def test_rewrite_degenerate_delta_rejected():
    K = np.array([[-1e-3, 0.5]])
    mlp = Mlp((2, 1, 1), (K, np.array([[1.0]])), (np.zeros(1), np.zeros(1)), "sigmoid")
    shear = shear_layer(3, 1, MlpShift(mlp))
    with pytest.raises(ConfigError):
        shear_to_couplings(shear, s=2, delta=1e-3)  # K[w][s-1] + delta == 0


def test_rewrite_net_unit_det_and_invertible():
    shear = sigmoid_shear(4, 3, seed=12)
    net = shear_to_couplings(shear, s=3, delta=1e-3)
    pts = sample_points((np.full(4, -1.0), np.full(4, 1.0)), 10, 23)
    assert roundtrip_error(net, pts) < 1e-11
    for p in pts[:5]:
        assert abs(fd_jacobian_det(lambda q: net_forward(net, q), p) - 1.0) < 1e-6


# --- convergence_study -----------------------------------------------------------


def test_convergence_harmonic_first_order():
    rep = convergence_study(make_field("harmonic2d"), 0.0, 1.0, [10, 20, 40, 80],
                            BOXH, n_samples=30)
    assert not rep.exact
    assert 0.8 <= rep.slope <= 1.2
    assert rep.h_values == (0.1, 0.05, 0.025, 0.0125)
    assert all(a > b for a, b in zip(rep.errors, rep.errors[1:]))


def test_convergence_zero_field_exact():
    rep = convergence_study(zero_field3(), 0.0, 1.0, [5, 10], BOX3, n_samples=10)
    assert rep.exact
    assert rep.slope is None
    assert all(e < 1e-12 for e in rep.errors)


def test_convergence_validation():
    with pytest.raises(ConfigError):
        convergence_study(make_field("harmonic2d"), 0.0, 1.0, [10], BOXH)
    with pytest.raises(ConfigError):
        convergence_study(make_field("harmonic2d"), 0.0, 1.0, [20, 10], BOXH)
