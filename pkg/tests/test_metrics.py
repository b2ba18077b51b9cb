import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radar_enhance.metrics import (
    TrajectoryPair,
    UndefinedMetricError,
    ate,
    chamfer_one_way,
    hausdorff_one_way,
    nearest_distances,
    nearest_distances_brute,
    nearest_rank,
    rte,
    summarize,
)


def test_chamfer_examples():
    a = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert chamfer_one_way(a, a) == 0.0
    assert chamfer_one_way([[0, 0]], [[1, 0]]) == pytest.approx(0.5)
    assert chamfer_one_way([[0, 0], [2, 0]], [[0, 0]]) == pytest.approx(0.5)
    assert chamfer_one_way([[0, 0], [2, 0]], [[0, 0]], squared=True) == pytest.approx(1.0)


def test_hausdorff_examples():
    a = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert hausdorff_one_way(a, a) == 0.0
    assert hausdorff_one_way([[0, 0], [3, 0]], [[0, 0]]) == pytest.approx(3.0)
    assert hausdorff_one_way([[0, 0]], [[0, 1]]) == pytest.approx(1.0)


def test_one_way_is_not_symmetric():
    assert chamfer_one_way([[0, 0]], [[0, 0], [5, 0]]) == 0.0
    assert chamfer_one_way([[0, 0], [5, 0]], [[0, 0]]) > 0.0


@pytest.mark.parametrize("fn", [chamfer_one_way, hausdorff_one_way])
def test_empty_sets_are_undefined(fn):
    with pytest.raises(UndefinedMetricError):
        fn(np.zeros((0, 2)), [[0, 0]])
    with pytest.raises(UndefinedMetricError):
        fn([[0, 0]], [])


def test_extra_columns_are_ignored():
    assert chamfer_one_way([[0, 0, 5.0, 1.0]], [[1, 0]]) == pytest.approx(0.5)


clouds = st.integers(1, 40).flatmap(lambda n: arrays(np.float64, (n, 2), elements=st.floats(-20, 20)))


@settings(max_examples=300)
@given(clouds, clouds)
def test_index_matches_brute_force(a, b):
    np.testing.assert_allclose(nearest_distances(a, b), nearest_distances_brute(a, b), rtol=0, atol=1e-9)


@settings(max_examples=300)
@given(clouds)
def test_self_distance_is_zero(a):
    assert chamfer_one_way(a, a) == 0.0 and hausdorff_one_way(a, a) == 0.0


@settings(max_examples=300)
@given(clouds, clouds, st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi))
def test_rigid_invariance_and_ordering(a, b, tx, ty, th):
    c, s = math.cos(th), math.sin(th)
    R = np.array([[c, -s], [s, c]])
    t = np.array([tx, ty])
    cd, hd = chamfer_one_way(a, b), hausdorff_one_way(a, b)
    assert chamfer_one_way(a @ R.T + t, b @ R.T + t) == pytest.approx(cd, abs=1e-9)
    assert hausdorff_one_way(a @ R.T + t, b @ R.T + t) == pytest.approx(hd, abs=1e-9)
    # the max dominates the unhalved mean of the same distances
    assert hd >= 2 * cd - 1e-12


def test_ate_examples():
    g = np.array([[0, 0, 0], [1, 0, 0.5], [2, 1, 1.0]], dtype=float)
    tr, hd = ate(TrajectoryPair(g, g))
    assert np.all(tr == 0) and np.all(hd == 0)
    tr, _ = ate(TrajectoryPair(g + [0, 1, 0], g))
    np.testing.assert_allclose(tr, 1.0)
    _, hd = ate(TrajectoryPair([[0, 0, math.radians(179)]], [[0, 0, math.radians(-179)]]))
    assert hd[0] == pytest.approx(math.radians(2))


def test_rte_examples():
    g = np.column_stack([np.arange(6.0), np.zeros(6), np.linspace(-3, 3, 6)])
    tr, hd = rte(TrajectoryPair(g + [0.3, -2.0, 0.1], g))
    np.testing.assert_allclose(tr, 0.0, atol=1e-12)
    np.testing.assert_allclose(hd, 0.0, atol=1e-12)
    drift = g.copy()
    drift[:, 0] += 0.01 * np.arange(6)
    tr, _ = rte(TrajectoryPair(drift, g))
    np.testing.assert_allclose(tr, 0.01, atol=1e-12)
    with pytest.raises(ValueError):
        rte(TrajectoryPair(g[:1], g[:1]))
    with pytest.raises(ValueError):
        TrajectoryPair(g, g[:3])


def test_rte_heading_wraps():
    e = np.array([[0, 0, math.pi - 0.01], [0, 0, -math.pi + 0.01]])
    g = np.array([[0, 0, 0.0], [0, 0, 0.02]])
    _, hd = rte(TrajectoryPair(e, g))
    assert hd[0] == pytest.approx(0.0, abs=1e-12)


def test_summarize_examples():
    s = summarize(np.full(7, 0.25))
    assert s.mean == 0.25 and s.tail == 0.25
    s = summarize(np.arange(1, 11))
    assert s.tail == 9 and s.mean == 5.5
    s = summarize([3.5])
    assert s.mean == s.tail == 3.5
    with pytest.raises(ValueError):
        summarize([])


@settings(max_examples=300)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(0.01, 1.0))
def test_nearest_rank_is_an_element_with_enough_mass_below(xs, q):
    v = nearest_rank(xs, q)
    assert v in xs
    assert sum(x <= v for x in xs) >= q * len(xs) - 1e-9
    assert sum(x < v for x in xs) < q * len(xs) + 1e-9
