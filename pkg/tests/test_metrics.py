import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_assignment_count
from ulmsr.grid import InvalidParameterError, LocalizationSet
from ulmsr.metrics import greedy_pairs, match_localizations, render_map, resolution_probe


def locs(xy, frame=0):
    xy = np.asarray(xy, float).reshape(-1, 2)
    return LocalizationSet(np.full(len(xy), frame), xy[:, 0], xy[:, 1], np.ones(len(xy)))


def test_identical_sets():
    a = locs([[0, 0], [100, 50], [30, 30]])
    r = match_localizations(a, a)
    assert (r.precision, r.recall, r.rmse_um) == (1.0, 1.0, 0.0)


def test_empty_prediction():
    r = match_localizations(LocalizationSet(), locs([[1, 1]]))
    assert r.recall == 0 and r.false_positives == 0 and r.false_negatives == 1
    both = match_localizations(LocalizationSet(), LocalizationSet())
    assert both.precision == both.recall == 1.0


def test_greedy_prefers_nearer():
    tol = 31.25
    r = match_localizations(locs([[0.5 * tol, 0], [-0.9 * tol, 0]]), locs([[0, 0]]), tol)
    assert (r.true_positives, r.false_positives) == (1, 1)
    assert r.rmse_um == pytest.approx(0.5 * tol)


def test_frames_are_matched_separately():
    r = match_localizations(locs([[0, 0]], frame=1), locs([[0, 0]], frame=0))
    assert r.true_positives == 0


def test_bad_tolerance():
    with pytest.raises(InvalidParameterError):
        match_localizations(LocalizationSet(), LocalizationSet(), 0)


points = st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), max_size=7)


@given(points, points)
@settings(max_examples=80, deadline=None)
def test_match_properties(p, t):
    a, b = locs(p), locs(t)
    r1 = match_localizations(a, b, 20.0)
    r2 = match_localizations(b, a, 20.0)
    assert r1.true_positives == r2.true_positives
    assert (r1.precision, r1.recall) == (r2.recall, r2.precision)
    assert r1.rmse_um <= 20.0
    # greedy never exceeds, and on small draws comes close to, the optimal assignment
    best = best_assignment_count(p, t, 20.0)
    assert r1.true_positives <= best


def test_greedy_close_to_optimal_on_random_draws():
    rng = np.random.default_rng(0)
    greedy = optimal = 0
    for _ in range(200):
        p = rng.uniform(0, 100, (rng.integers(1, 9), 2))
        t = rng.uniform(0, 100, (rng.integers(1, 9), 2))
        greedy += len(greedy_pairs(p, t, 15.0))
        optimal += best_assignment_count(p, t, 15.0)
    assert greedy >= 0.95 * optimal


def test_render_constant_and_linear():
    assert np.all(render_map(np.full((4, 4), 3.0)) == 65535)
    acc = np.array([[0.0, 1.0], [2.0, 4.0]])
    np.testing.assert_array_equal(render_map(acc, gamma=1.0), np.round(acc / 4 * 65535).astype(np.uint16))
    assert not render_map(np.zeros((3, 3))).any()
    with pytest.raises(InvalidParameterError):
        render_map(-acc)


@given(st.integers(0, 1000), st.floats(0.2, 3))
@settings(max_examples=30, deadline=None)
def test_render_monotone(seed, gamma):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0, 10, (6, 6))
    b[0, 0] = 10
    a = b * rng.uniform(0, 1, b.shape)
    a[0, 0] = 10
    assert np.all(render_map(a, gamma) <= render_map(b, gamma))


def test_profile_single_and_two_vessels():
    img = np.zeros((20, 20))
    img[:, 9] = 1.0
    p = resolution_probe(img, (2, 10, 17, 10))
    assert p.n_peaks == 1 and p.dip_ratio == 0
    img[:, 12] = 0.8
    p = resolution_probe(img, (2, 10, 17, 10))
    assert p.n_peaks == 2 and p.dip_ratio == pytest.approx(1.0)


def test_profile_flat_region():
    p = resolution_probe(np.full((10, 10), 2.0), (1, 1, 8, 8))
    assert p.n_peaks == 0
    np.testing.assert_allclose(p.values, 2.0)


def test_profile_errors():
    with pytest.raises(InvalidParameterError):
        resolution_probe(np.ones((5, 5)), (1, 1, 1, 1))
    with pytest.raises(InvalidParameterError):
        resolution_probe(np.ones((5, 5)), (0, 0, 9, 0))


def test_profile_width_averages_parallel_lines():
    img = np.zeros((20, 20))
    img[5:15, 9] = 1.0
    img[12, 9] = 0.0
    thin = resolution_probe(img, (2, 12, 17, 12))
    wide = resolution_probe(img, (2, 12, 17, 12), width=5)
    assert thin.n_peaks == 0
    assert wide.n_peaks == 1 and wide.values.max() == pytest.approx(0.8)
    with pytest.raises(InvalidParameterError):
        resolution_probe(img, (2, 1, 17, 1), width=5)
