import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vnfpp.hypervolume import Normalizer, hypervolume, nondominated_mask, normalized_hypervolumes


def _mc_volume(points, ref, n=200_000, seed=0):
    rng = np.random.default_rng(seed)
    lo = points.min(axis=0)
    x = lo + rng.random((n, points.shape[1])) * (ref - lo)
    hit = np.any(np.all(points[None, :, :] <= x[:, None, :], axis=2), axis=1)
    return hit.mean() * np.prod(ref - lo)


def test_single_box():
    assert hypervolume([[0.5, 0.5, 0.5]], [1, 1, 1]) == pytest.approx(0.125)


def test_two_points_2d():
    assert hypervolume([[0.2, 0.8], [0.8, 0.2]], [1, 1]) == pytest.approx(0.28)


def test_dominated_point_changes_nothing():
    pts = np.array([[0.2, 0.8, 0.5], [0.8, 0.2, 0.3], [0.5, 0.5, 0.1]])
    base = hypervolume(pts, [1, 1, 1])
    assert hypervolume(np.vstack([pts, [0.9, 0.9, 0.9]]), [1, 1, 1]) == pytest.approx(base)


def test_point_outside_reference_is_dropped_with_warning():
    with pytest.warns(RuntimeWarning):
        v = hypervolume([[0.5, 0.5], [1.5, 0.1]], [1, 1])
    assert v == pytest.approx(0.25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert hypervolume([[2.0, 2.0]], [1, 1]) == 0.0


def test_exact_3d_against_monte_carlo():
    rng = np.random.default_rng(3)
    pts = rng.random((12, 3))
    ref = np.ones(3)
    exact = hypervolume(pts, ref)
    assert exact == pytest.approx(_mc_volume(pts, ref), abs=0.01)


def test_4d_against_inclusion_exclusion():
    a, b = np.array([0.2, 0.5, 0.3, 0.4]), np.array([0.6, 0.1, 0.5, 0.2])
    ref = np.ones(4)
    want = np.prod(ref - a) + np.prod(ref - b) - np.prod(ref - np.maximum(a, b))
    assert hypervolume([a, b], ref) == pytest.approx(want)


@settings(max_examples=80, deadline=None)
@given(arrays(float, (6, 3), elements=st.floats(0, 0.99)), arrays(float, 3, elements=st.floats(0, 0.99)))
def test_adding_a_point_never_decreases(pts, extra):
    ref = np.ones(3)
    assert hypervolume(np.vstack([pts, extra]), ref) >= hypervolume(pts, ref) - 1e-12


def test_nondominated_mask():
    pts = np.array([[1, 2], [2, 1], [2, 2], [1, 2]])
    assert nondominated_mask(pts).tolist() == [True, True, False, True]


def test_joint_normalisation():
    a = np.array([[1.0, 10.0, 100.0], [3.0, 30.0, 300.0]])
    b = np.array([[2.0, 20.0, 200.0]])
    norm = Normalizer.from_fronts([a, b])
    np.testing.assert_allclose(norm(a), [[0, 0, 0], [1, 1, 1]])
    hvs, _ = normalized_hypervolumes([a, b, np.empty((0, 3))])
    assert hvs[0] == pytest.approx(1.1**3) and hvs[2] == 0.0
    assert hvs[0] > hvs[1] > 0
