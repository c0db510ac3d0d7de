import numpy as np
import pytest
from exceptions import DimensionError, EmptySetError
from star_sets import Box, StarSet, concatenate, union_bounds


def triangle():
    # mu1 >= 0, mu2 >= 0, mu1 + mu2 <= 1 with identity basis
    return StarSet([0.0, 0.0], np.eye(2), [[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])


def random_polytope_star(rng, d = 3, m = 3):
    A = np.vstack([np.eye(m), -np.eye(m), rng.standard_normal((3, m))])
    b = np.concatenate([np.ones(2 * m), rng.uniform(0.2, 1.0, 3)])
    return StarSet(rng.standard_normal(d), rng.standard_normal((d, m)), A, b)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Box([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(DimensionError):
        Box([0.0], [1.0, 2.0])


def test_from_box_bounds_and_membership():
    star = StarSet.from_box(Box([-1.0, 2.0], [1.0, 4.0]))
    box = star.bounds()
    np.testing.assert_allclose(box.lower, [-1.0, 2.0])
    np.testing.assert_allclose(box.upper, [1.0, 4.0])
    assert star.contains([0.0, 3.0])
    assert star.contains([1.0, 4.0])
    assert not star.contains([1.1, 3.0])


def test_affine_map_of_box():
    star = StarSet.from_box(Box([-1.0, -1.0], [1.0, 1.0])).affine_map([[1.0, 1.0]], [0.5])
    box = star.bounds()
    assert box.lower[0] == pytest.approx(-1.5)
    assert box.upper[0] == pytest.approx(2.5)
    assert star.dim == 1
    with pytest.raises(DimensionError):
        star.affine_map(np.eye(2))


def test_minkowski_sum_of_boxes_adds_intervals():
    a = StarSet.from_box(Box([0.0, -1.0], [1.0, 1.0]))
    b = StarSet.from_box(Box([2.0, 0.0], [3.0, 0.5]))
    box = a.minkowski_sum(b).bounds()
    np.testing.assert_allclose(box.lower, [2.0, -1.0])
    np.testing.assert_allclose(box.upper, [4.0, 1.5])


def test_minkowski_sum_with_origin_point_is_identity():
    star = triangle()
    total = star.minkowski_sum(StarSet.point([0.0, 0.0]))
    np.testing.assert_allclose(total.bounds().lower, star.bounds().lower, atol = 1e-9)
    np.testing.assert_allclose(total.bounds().upper, star.bounds().upper, atol = 1e-9)
    assert total.contains([0.5, 0.5])
    assert not total.contains([0.6, 0.6])


def test_general_predicate_membership_and_bounds():
    star = triangle()
    box = star.bounds()
    np.testing.assert_allclose(box.lower, [0.0, 0.0], atol = 1e-9)
    np.testing.assert_allclose(box.upper, [1.0, 1.0], atol = 1e-9)
    assert star.contains([0.25, 0.25])
    assert not star.contains([0.6, 0.6])
    with pytest.raises(DimensionError):
        star.contains([0.1, 0.1, 0.1])


def test_empty_star():
    star = StarSet([0.0], [[1.0]], [[1.0], [-1.0]], [-1.0, -1.0])
    assert star.is_empty()
    assert not star.contains([0.0])
    with pytest.raises(EmptySetError):
        star.bounds()


def test_interval_bounds_contain_lp_bounds(rng):
    for _ in range(20):
        star = random_polytope_star(rng)
        lp = star.bounds(method = 'lp')
        outer = star.bounds(method = 'interval')
        assert outer.covers(lp, tol = 1e-9)


def test_samples_are_members(rng):
    for _ in range(10):
        star = random_polytope_star(rng)
        points = star.sample(50, rng)
        assert len(points) > 0
        assert all(star.contains(p) for p in points)


def test_point_star_contains_only_its_point():
    star = StarSet.point([1.0, -2.0])
    assert star.contains([1.0, -2.0])
    assert not star.contains([1.0, -1.9])


def test_concatenate_stacks_dimensions():
    a = StarSet.from_box(Box([0.0], [1.0]))
    b = triangle()
    joined = concatenate([a, b])
    assert joined.dim == 3
    assert joined.contains([0.5, 0.2, 0.2])
    assert not joined.contains([0.5, 0.6, 0.6])
    with pytest.raises(ValueError):
        concatenate([])


def test_reduce_predicate_keeps_the_set(rng):
    star = random_polytope_star(rng)
    reduced = star.reduce_predicate()
    np.testing.assert_allclose(reduced.bounds().lower, star.bounds().lower, atol = 1e-7)
    np.testing.assert_allclose(reduced.bounds().upper, star.bounds().upper, atol = 1e-7)
    for p in star.sample(30, rng):
        assert reduced.contains(p)


def test_union_bounds():
    box = union_bounds([StarSet.from_box(Box([0.0], [1.0])), StarSet.from_box(Box([2.0], [3.0]))])
    assert box.lower[0] == 0.0
    assert box.upper[0] == 3.0


def test_arrays_are_frozen():
    star = StarSet.from_box(Box([0.0], [1.0]))
    with pytest.raises(ValueError):
        star.center[0] = 5.0


def test_to_dict_preserves_membership():
    star = triangle()
    restored = StarSet.from_dict(star.to_dict())
    assert restored.contains([0.25, 0.25])
    assert not restored.contains([0.6, 0.6])
