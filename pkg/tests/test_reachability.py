import numpy as np
import pytest
from conftest import random_mlp
from exceptions import DimensionError, StarBlowupError
from reachability import network_reach, relu_approx, relu_exact
from star_sets import Box, StarSet, union_bounds
from surrogates import MLP, Normalizer


def relu_net(dim):
    # output = ReLU(input)
    return MLP([np.eye(dim), np.eye(dim)], [np.zeros(dim), np.zeros(dim)])


def test_exact_relu_of_straddling_box():
    stars = network_reach(relu_net(2), StarSet.from_box(Box([-1.0, -1.0], [1.0, 1.0])), mode = 'exact')
    assert len(stars) == 4
    box = union_bounds(stars)
    np.testing.assert_allclose(box.lower, [0.0, 0.0], atol = 1e-9)
    np.testing.assert_allclose(box.upper, [1.0, 1.0], atol = 1e-9)
    assert any(s.contains([0.0, 0.7]) for s in stars)
    assert not any(s.contains([-0.1, 0.5]) for s in stars)


def test_exact_keeps_positive_branch_first():
    stars = relu_exact([StarSet.from_box(Box([-1.0], [1.0]))])
    assert len(stars) == 2
    assert stars[0].bounds().upper[0] == pytest.approx(1.0)
    assert stars[1].bounds().upper[0] == pytest.approx(0.0)


def test_approx_triangle_bounds():
    stars = network_reach(relu_net(1), StarSet.from_box(Box([-1.0], [3.0])), mode = 'approx')
    assert len(stars) == 1
    box = stars[0].bounds()
    assert box.lower[0] == pytest.approx(0.0, abs = 1e-9)
    assert box.upper[0] == pytest.approx(3.0)
    # the triangle admits y = 0.75 at x = 0, which the exact ReLU does not
    assert stars[0].contains([0.75])


def test_inactive_and_active_neurons_are_not_split():
    positive = network_reach(relu_net(2), StarSet.from_box(Box([1.0, 2.0], [2.0, 3.0])), mode = 'exact')
    assert len(positive) == 1
    np.testing.assert_allclose(positive[0].bounds().lower, [1.0, 2.0])
    negative = relu_approx(StarSet.from_box(Box([-3.0], [-1.0])))
    np.testing.assert_allclose(negative.bounds().upper, [0.0])


def test_zero_weight_net_is_a_point():
    net = MLP([np.zeros((3, 2)), np.zeros((2, 3))], [np.ones(3), np.array([0.5, -0.5])])
    for mode in ('exact', 'approx'):
        stars = network_reach(net, StarSet.from_box(Box([-1.0, -1.0], [1.0, 1.0])), mode = mode)
        box = union_bounds(stars)
        np.testing.assert_allclose(box.lower, [0.5, -0.5], atol = 1e-9)
        np.testing.assert_allclose(box.upper, [0.5, -0.5], atol = 1e-9)


def test_linear_net_exact_equals_approx():
    net = MLP([np.array([[1.0, 2.0], [0.0, -1.0]])], [np.array([0.1, 0.2])])
    star = StarSet.from_box(Box([-1.0, 0.0], [1.0, 1.0]))
    exact = network_reach(net, star, mode = 'exact')
    approx = network_reach(net, star, mode = 'approx')
    np.testing.assert_allclose(union_bounds(exact).lower, approx[0].bounds().lower)
    np.testing.assert_allclose(union_bounds(exact).upper, approx[0].bounds().upper)


def test_blowup_guard():
    with pytest.raises(StarBlowupError) as info:
        network_reach(relu_net(3), StarSet.from_box(Box([-1.0] * 3, [1.0] * 3)), mode = 'exact', max_stars = 2)
    assert info.value.layer == 0
    assert isinstance(info.value.__cause__, StarBlowupError)


def test_input_dimension_checked():
    with pytest.raises(DimensionError):
        network_reach(relu_net(2), StarSet.from_box(Box([0.0], [1.0])))
    with pytest.raises(ValueError):
        network_reach(relu_net(1), StarSet.from_box(Box([0.0], [1.0])), mode = 'zonotope')


def check_soundness(rng, nets, samples):
    violations = 0
    for net in nets:
        box = Box(-np.ones(2), np.ones(2))
        star = StarSet.from_box(box)
        exact = network_reach(net, star, mode = 'exact')
        approx = network_reach(net, star, mode = 'approx')[0]
        for s0 in rng.uniform(box.lower, box.upper, size = (samples, 2)):
            y = net.forward(s0)
            in_exact = any(s.contains(y, tol = 1e-6) for s in exact)
            in_approx = approx.contains(y, tol = 1e-6)
            violations += (not in_exact) + (not in_approx)
    return violations


def test_sampled_outputs_lie_in_reach_sets(rng):
    nets = [random_mlp(rng, [2, 4, 3, 2]) for _ in range(4)]
    assert check_soundness(rng, nets, 40) == 0


@pytest.mark.slow
def test_sampled_outputs_lie_in_reach_sets_many_nets(rng):
    nets = [random_mlp(rng, [2, int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 5)), 2]) for _ in range(50)]
    assert check_soundness(rng, nets, 200) == 0


def test_normalizers_are_folded(rng):
    net = random_mlp(rng, [2, 3, 2])
    net.input_norm = Normalizer([2.0, 0.5], [0.1, -0.3])
    net.output_norm = Normalizer([3.0, 1.5], [1.0, 2.0])
    box = Box([-1.0, -1.0], [1.0, 1.0])
    stars = network_reach(net, StarSet.from_box(box), mode = 'exact')
    for s0 in rng.uniform(box.lower, box.upper, size = (30, 2)):
        assert any(s.contains(net.forward(s0), tol = 1e-6) for s in stars)


def test_blowup_guard_stops_splitting_early(monkeypatch):
    calls = []
    add_constraints = StarSet.add_constraints

    def counting(self, C, d):
        calls.append(1)
        return add_constraints(self, C, d)

    monkeypatch.setattr(StarSet, 'add_constraints', counting)
    with pytest.raises(StarBlowupError) as info:
        relu_exact([StarSet.from_box(Box(-np.ones(12), np.ones(12)))], max_stars = 8)
    assert info.value.limit == 8
    # 2 + 4 + 8 + 16 children, then the fourth dimension trips the limit
    assert len(calls) == 30


def test_blowup_budget_counts_earlier_stars():
    square = StarSet.from_box(Box(-np.ones(2), np.ones(2)))
    assert len(relu_exact([square], max_stars = 4)) == 4
    with pytest.raises(StarBlowupError):
        relu_exact([square, square], max_stars = 6)


def test_approx_star_contains_every_exact_star(rng):
    star = StarSet.from_box(Box(-np.ones(2), np.ones(2)))
    failures = 0
    for _ in range(20):
        net = random_mlp(rng, [2, 4, 2])
        approx = network_reach(net, star, mode = 'approx')[0]
        for piece in network_reach(net, star, mode = 'exact'):
            for point in piece.sample(20, rng):
                failures += not approx.contains(point, tol = 1e-6)
    assert failures == 0


def grid_images(net, spacing):
    axis = np.arange(-1.0, 1.0 + spacing / 2, spacing)
    grid = np.stack(np.meshgrid(axis, axis), axis = -1).reshape(-1, 2)
    return net.forward(grid)


@pytest.mark.parametrize('hidden', [1, 3, 6])
def test_exact_stars_hold_only_reachable_outputs(rng, hidden):
    spacing = 0.01
    star = StarSet.from_box(Box(-np.ones(2), np.ones(2)))
    for _ in range(3):
        net = random_mlp(rng, [2, hidden, 2])
        images = grid_images(net, spacing)
        # every input lies within half a grid diagonal of a grid point
        lipschitz = np.linalg.norm(net.weights[1], 2) * np.linalg.norm(net.weights[0], 2)
        radius = lipschitz * spacing * np.sqrt(2.0) / 2 + 1e-6
        for piece in network_reach(net, star, mode = 'exact'):
            points = piece.sample(50, rng)
            distances = np.linalg.norm(points[:, None, :] - images[None, :, :], axis = -1).min(axis = 1)
            assert np.all(distances <= radius)


def test_exact_star_count_is_bounded_by_straddling_neurons(rng):
    star = StarSet.from_box(Box(-np.ones(2), np.ones(2)))
    for _ in range(10):
        net = random_mlp(rng, [2, int(rng.integers(1, 7)), 2])
        W, b = net.affine_layers()[0]
        pre = star.affine_map(W, b).bounds()
        straddling = int(np.sum((pre.lower < 0) & (pre.upper > 0)))
        exact = network_reach(net, star, mode = 'exact')
        assert 1 <= len(exact) <= 2 ** straddling
