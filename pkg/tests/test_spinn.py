import numpy as np
import pytest

from pfspinn.dataio import Dataset, SnapshotPair
from pfspinn.errors import DomainError, NonFiniteLossError
from pfspinn.grid import apply_mobility, apply_operator_poly, make_grid, solve_resolvent
from pfspinn.mlp import MlpParams, mlp_forward, mlp_init, mlp_vjp
from pfspinn.model import DoubleWell, FloryHuggins, Learned, allen_cahn, cahn_hilliard
from pfspinn.spinn import (
    LossVariant,
    TrainConfig,
    evaluate_f,
    loss,
    loss_and_grad,
    loss_and_grad_flat,
    map_linear,
    map_rk4,
    train,
)
from pfspinn.stepper import step_rk4, step_stabilized

GRID = make_grid(16, 16, 2, 2)


def field(seed, amp=0.6, offset=0.0):
    x, y = GRID.mesh()
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, 4)
    out = c[0] * np.sin(np.pi * x) + c[1] * np.cos(np.pi * y)
    out += c[2] * np.sin(np.pi * (x + y)) + c[3] * np.cos(2 * np.pi * x)
    return offset + amp * out / np.abs(out).max()


def random_params(seed, sizes=(1, 20, 20, 1)):
    p = mlp_init(sizes, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for b in p.biases:
        b[:] = 0.2 * rng.standard_normal(b.shape)
    return p


class Shifted:
    """A bulk function that is not the double well, for generating mismatched data."""

    def __call__(self, phi):
        return 1.3 * phi**3 - 0.7 * phi + 0.2

    def derivative(self, phi):
        return 3.9 * phi**2 - 0.7


MODELS = {"ac": allen_cahn(0.1, 1.0), "ch": cahn_hilliard(0.1, 1.0)}


def make_data(model, n_pairs=2, delta=0.02, gen=None):
    gen = gen or Shifted()
    m = allen_cahn(0.1, 1.0, bulk=gen) if model.mobility.kind == "ac" else cahn_hilliard(0.1, 1.0, bulk=gen)
    pairs = []
    for i in range(n_pairs):
        phi1 = field(i, offset=0.1)
        pairs.append(SnapshotPair(phi1, map_linear(GRID, phi1, delta, 4, m), delta))
    return Dataset(GRID, pairs)


class TestOracleMaps:
    @pytest.mark.parametrize("model", MODELS.values(), ids=MODELS.keys())
    def test_single_substep_is_the_stepper(self, model):
        phi = field(0)
        np.testing.assert_array_equal(map_linear(GRID, phi, 0.01, 1, model), step_stabilized(GRID, phi, 0.01, model))
        np.testing.assert_array_equal(map_rk4(GRID, phi, 0.001, 1, model), step_rk4(GRID, phi, 0.001, model))

    @pytest.mark.parametrize("K", [2, 5])
    def test_recursion_unrolls(self, K):
        model = MODELS["ac"]
        phi = field(1)
        a, b = phi, phi
        for _ in range(K):
            a = step_stabilized(GRID, a, 0.03 / K, model)
            b = step_rk4(GRID, b, 0.03 / K, model)
        np.testing.assert_array_equal(map_linear(GRID, phi, 0.03, K, model), a)
        np.testing.assert_array_equal(map_rk4(GRID, phi, 0.03, K, model), b)

    @pytest.mark.parametrize("family", ["linear", "rk4"])
    def test_loss_vanishes_on_own_data(self, family):
        model = MODELS["ac"]
        maps = {"linear": map_linear, "rk4": map_rk4}
        phi1 = field(2)
        data = Dataset(GRID, [SnapshotPair(phi1, maps[family](GRID, phi1, 0.02, 3, model), 0.02)])
        assert loss(DoubleWell(), data, LossVariant(family, 3), model) == 0.0

    def test_network_in_map_matches_pointwise_network(self):
        p = random_params(3)
        model = allen_cahn(0.1, 1.0, bulk=Learned(p))
        phi = field(4)
        h = np.vectorize(lambda v: mlp_forward(p, v))(phi)
        expected = solve_resolvent(
            GRID,
            phi + 0.01 * apply_mobility(GRID, h - apply_operator_poly(GRID, phi, model.stabilizer), model.mobility),
            0.01,
            model.mobility,
            model.stabilizer,
            model.lg_poly,
        )
        np.testing.assert_allclose(map_linear(GRID, phi, 0.01, 1, model), expected, atol=1e-12)


def plain_sum_loss(theta, data, K, model, mu):
    """Sum of squared mismatches over all pairs and nodes plus the anchor, without normalization."""
    total = 0.0
    for pair in data.pairs:
        d = pair.delta / K
        r = pair.phi1
        for _ in range(K):
            h = mlp_forward(theta, r)
            rhs = r + d * apply_mobility(GRID, h - apply_operator_poly(GRID, r, model.stabilizer), model.mobility)
            r = solve_resolvent(GRID, rhs, d, model.mobility, model.stabilizer, model.lg_poly)
        total += np.sum((pair.phi2 - r) ** 2)
    return total + mu * mlp_forward(theta, 0.0) ** 2


@pytest.mark.parametrize("kind", ["ac", "ch"])
@pytest.mark.parametrize("K", [1, 4])
def test_loss_matches_naive_formula(kind, K):
    model = MODELS[kind]
    data = make_data(model)
    p = random_params(5)
    got = loss(p, data, LossVariant("linear", K, 3.0), model)
    expected = plain_sum_loss(p, data, K, model, 3.0) / (len(data) * GRID.nx * GRID.ny)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-15)


class TestNormalization:
    def test_duplicated_pair_leaves_loss_unchanged(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        twice = Dataset(GRID, data.pairs * 2)
        p = random_params(6)
        v = LossVariant("rk4", 2)
        assert loss(p, twice, v, model) == pytest.approx(loss(p, data, v, model), rel=1e-15)

    def test_mean_over_pairs(self):
        model = MODELS["ch"]
        data = make_data(model, 3)
        p = random_params(7)
        v = LossVariant("linear", 2)
        parts = [loss(p, data.subset([i]), v, model) for i in range(3)]
        assert loss(p, data, v, model) == pytest.approx(np.mean(parts), rel=1e-13)

    def test_per_node_mean(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        p = random_params(8)
        pred = map_linear(GRID, data.pairs[0].phi1, data.pairs[0].delta, 1, allen_cahn(0.1, 1.0, bulk=Learned(p)))
        plain_sum = np.sum((data.pairs[0].phi2 - pred) ** 2)
        assert loss(p, data, LossVariant("linear"), model) == pytest.approx(plain_sum / GRID.nx / GRID.ny, rel=1e-13)

    def test_anchor_term(self):
        model = MODELS["ch"]
        data = make_data(model, 1)
        p = random_params(9)
        base = loss(p, data, LossVariant("linear", 1, 0.0), model)
        anchored = loss(p, data, LossVariant("linear", 1, 1e3), model)
        assert anchored - base == pytest.approx(1e3 * mlp_forward(p, 0.0) ** 2 / GRID.nx / GRID.ny, rel=1e-10)

    def test_anchor_alone_on_empty_dataset(self):
        p = random_params(9)
        value, g = loss_and_grad_flat(p, Dataset(GRID, []), LossVariant("linear", 1, 7.0), MODELS["ch"])
        n0 = mlp_forward(p, 0.0)
        assert value == pytest.approx(7.0 * n0**2, rel=1e-14)
        _, expected = mlp_vjp(p, np.zeros(1), np.array([14.0 * n0]))
        np.testing.assert_allclose(g, expected.flatten(), rtol=1e-12)


def test_loss_and_grad_value_matches_loss():
    model = MODELS["ac"]
    data = make_data(model)
    p = random_params(10)
    for v in (LossVariant("linear", 3, 5.0), LossVariant("rk4", 2, 0.0)):
        value, g = loss_and_grad(p, data, v, model)
        assert value == pytest.approx(loss(p, data, v, model), rel=1e-12)
        assert isinstance(g, MlpParams) and g.size == p.size


def fd_check(p, data, variant, model, n_coords, seed):
    value, g = loss_and_grad_flat(p, data, variant, model)
    theta = p.flatten()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in rng.choice(theta.size, n_coords, replace=False):
        h = 1e-5 * max(1.0, abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        fp = loss(p.unflatten(theta + e), data, variant, model)
        fm = loss(p.unflatten(theta - e), data, variant, model)
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(fd - g[i]) / (abs(fd) + 1e-6 * value))
    return worst


@pytest.mark.parametrize("kind", ["ac", "ch"])
@pytest.mark.parametrize("family", ["linear", "rk4"])
@pytest.mark.parametrize("K", [1, 3])
def test_gradient_matches_finite_differences(kind, family, K):
    model = MODELS[kind]
    # CH steps stay inside the explicit RK4 stability region of the biharmonic term
    data = make_data(model, 2, delta=0.02 if kind == "ac" else 5e-4)
    p = random_params(11)
    assert fd_check(p, data, LossVariant(family, K, 10.0 if kind == "ch" else 0.0), model, 8, seed=K) < 1e-5


def test_gradient_is_scaled_plain_sum():
    # the whole loss, anchor included, is the plain sum divided by N nx ny
    model = MODELS["ch"]
    data = make_data(model, 2, delta=0.002)
    p = random_params(13)
    _, g = loss_and_grad_flat(p, data, LossVariant("linear", 2, 3.0), model)
    theta = p.flatten()
    scale = len(data) * GRID.nx * GRID.ny
    for i in np.random.default_rng(0).choice(theta.size, 5, replace=False):
        e = np.zeros_like(theta)
        e[i] = 1e-5
        fp = plain_sum_loss(p.unflatten(theta + e), data, 2, model, 3.0)
        fm = plain_sum_loss(p.unflatten(theta - e), data, 2, model, 3.0)
        fd = (fp - fm) / 2e-5
        assert abs(g[i] * scale - fd) <= 1e-5 * abs(fd) + 1e-9


def test_duplicated_pair_doubles_its_share():
    model = MODELS["ac"]
    data = make_data(model, 2)
    p, v = random_params(14), LossVariant("rk4", 2)
    _, g2 = loss_and_grad_flat(p, data, v, model)
    _, g3 = loss_and_grad_flat(p, Dataset(GRID, data.pairs + data.pairs[1:]), v, model)
    _, g_q = loss_and_grad_flat(p, data.subset([1]), v, model)
    np.testing.assert_allclose(3 * g3 - 2 * g2, g_q, rtol=1e-9, atol=1e-14)


def test_anchor_only_gradient():
    # with phi2 produced by the network itself, only the anchor contributes
    p = random_params(12)
    model = allen_cahn(0.1, 1.0)
    phi1 = field(3)
    phi2 = map_linear(GRID, phi1, 0.02, 1, allen_cahn(0.1, 1.0, bulk=Learned(p)))
    data = Dataset(GRID, [SnapshotPair(phi1, phi2, 0.02)])
    value, g = loss_and_grad_flat(p, data, LossVariant("linear", 1, 2.0), model)
    n0 = mlp_forward(p, 0.0)
    count = GRID.nx * GRID.ny
    assert value == pytest.approx(2.0 * n0**2 / count, rel=1e-12)
    _, expected = mlp_vjp(p, np.zeros(1), np.array([4.0 * n0 / count]))
    np.testing.assert_allclose(g, expected.flatten(), rtol=1e-9, atol=1e-14)


class TestTrain:
    def test_zero_iterations_returns_init(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        cfg = TrainConfig(LossVariant("linear"), adam_iters=0, lbfgs_enabled=False, seed=4)
        rep = train(data, model, cfg)
        np.testing.assert_array_equal(rep.final_params.flatten(), mlp_init(seed=4).flatten())
        assert rep.loss_history == []

    def test_seeded_runs_are_identical(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        cfg = TrainConfig(LossVariant("linear"), adam_iters=5, lbfgs_max_iters=5, seed=1)
        a, b = train(data, model, cfg), train(data, model, cfg)
        np.testing.assert_array_equal(a.final_params.flatten(), b.final_params.flatten())
        assert a.loss_history == b.loss_history

    def test_adam_reduces_loss(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        rep = train(data, model, TrainConfig(LossVariant("rk4"), adam_iters=50, lbfgs_enabled=False, adam_lr=1e-2))
        assert len(rep.loss_history) == 50
        assert rep.loss_history[-1] < rep.loss_history[0]

    def test_recovers_affine_reaction(self):
        # an affine network and affine data make the K=1 linear loss a convex quadratic
        class Affine:
            def __call__(self, phi):
                return 0.8 * phi - 0.3

        model = MODELS["ac"]
        data = make_data(model, 2, delta=0.05, gen=Affine())
        gen_model = allen_cahn(0.1, 1.0, bulk=Affine())
        pairs = [SnapshotPair(p.phi1, map_linear(GRID, p.phi1, 0.05, 1, gen_model), 0.05) for p in data.pairs]
        data = Dataset(GRID, pairs)
        cfg = TrainConfig(LossVariant("linear"), adam_iters=0, lbfgs_max_iters=200, layer_sizes=(1, 1), seed=0)
        rep = train(data, model, cfg)
        w, b = rep.final_params.weights[0].item(), rep.final_params.biases[0].item()
        assert w == pytest.approx(0.8, abs=1e-4)
        assert b == pytest.approx(-0.3, abs=1e-4)

    def test_blow_up_raises_non_finite(self):
        model = MODELS["ac"]
        data = make_data(model, 1)
        p = MlpParams((1, 1), [np.array([[1e300]])], [np.array([1e300])])
        with pytest.raises(NonFiniteLossError) as info, np.errstate(all="ignore"):
            train(data, model, TrainConfig(LossVariant("rk4"), adam_iters=3, layer_sizes=(1, 1)), init_params=p)
        assert info.value.iteration == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(adam_iters=-1)
        with pytest.raises(ValueError):
            TrainConfig(adam_lr=0.0)


@pytest.mark.parametrize("bad", [dict(family="euler"), dict(K=0), dict(K=1.5), dict(anchor_weight=-1.0)])
def test_loss_variant_validation(bad):
    with pytest.raises(ValueError):
        LossVariant(**bad)


class TestEvaluate:
    def test_zero_network_against_double_well(self):
        zero = mlp_init(seed=0).zeros_like()
        rep = evaluate_f(zero, DoubleWell(), (-1.0, 1.0, 200_001))
        assert rep.linf == pytest.approx(2 / (3 * np.sqrt(3)), rel=1e-9)
        np.testing.assert_array_equal(rep.learned, 0.0)

    def test_exact_truth_has_zero_error(self):
        rep = evaluate_f(DoubleWell(), DoubleWell(), (-0.95, 0.95, 11))
        assert rep.linf == 0.0 and rep.l2 == 0.0

    def test_l2_is_rms(self):
        p = MlpParams((1, 1), [np.array([[0.0]])], [np.array([0.5])])
        rep = evaluate_f(p, DoubleWell(), (-1.0, 1.0, 3))
        # samples at -1, 0, 1 where the double well vanishes
        assert rep.l2 == pytest.approx(0.5, abs=1e-15)

    def test_no_truth(self):
        rep = evaluate_f(random_params(1), None, (0, 1, 5))
        assert rep.linf is None and rep.truth is None

    @pytest.mark.parametrize("rng", [(0.0, 0.5, 10), (0.5, 1.0, 10), (-0.2, 0.9, 10)])
    def test_flory_huggins_domain(self, rng):
        with pytest.raises(DomainError):
            evaluate_f(random_params(1), FloryHuggins(), rng)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            evaluate_f(random_params(1), DoubleWell(), (1.0, -1.0, 10))
