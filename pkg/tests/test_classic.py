import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ulmsr.classic import ClassicConfig, accumulate, centroid_localize, detect_maxima, localize_sequence, weighted_centroid
from ulmsr.grid import GridSpec, InvalidParameterError, LocalizationSet, SeedSpec
from ulmsr.metrics import match_localizations
from ulmsr.simgen import render_gaussians

GRID = GridSpec(32, 32, 4, 125.0)


def blob(x, y, sigma=1.0, shape=(32, 32), amp=1.0):
    return render_gaussians([x], [y], [amp], sigma, shape)


def test_single_blob_one_maximum():
    assert detect_maxima(blob(10.2, 7.8)) == [(10, 8)]


def test_two_blobs_two_maxima():
    f = blob(8, 12) + blob(18, 12)
    assert sorted(detect_maxima(f)) == [(8, 12), (18, 12)]


def test_constant_frame_empty():
    assert detect_maxima(np.full((16, 16), 3.0)) == []
    assert detect_maxima(np.zeros((16, 16))) == []


def test_plateau_is_not_a_strict_maximum():
    f = np.zeros((9, 9))
    f[4, 4:6] = 1.0
    assert detect_maxima(f) == []


def test_min_separation_pruning_keeps_brightest():
    f = np.zeros((20, 20))
    f[5, 5] = 1.0
    f[5, 7] = 0.9
    f[5, 12] = 0.8
    assert detect_maxima(f, ClassicConfig(0.1, 3.0, 1)) == [(5, 5), (12, 5)]


@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_affine_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    f = sum(blob(*rng.uniform(3, 28, 2), amp=rng.uniform(0.3, 1)) for _ in range(6))
    f = f + 0.02 * rng.standard_normal(f.shape)
    assert set(detect_maxima(f)) == set(detect_maxima(a * f + b))


def test_centroid_symmetric_blob_exact():
    loc = centroid_localize(blob(10, 5), (10, 5), grid=GRID)
    assert (loc.x_um, loc.y_um) == GRID.lr_to_um(10.0, 5.0)


def test_centroid_subpixel_accuracy():
    loc = centroid_localize(blob(10.3, 5.0), (10, 5), grid=GRID)
    x, y = GRID.um_to_lr(loc.x_um, loc.y_um)
    assert abs(x - 10.3) < 0.1 and abs(y - 5.0) < 0.1


def test_centroid_two_point_weighted_mean():
    assert weighted_centroid([1, 3], [0, 1]) == 0.75


def test_centroid_window_clipped_at_border():
    loc = centroid_localize(blob(0.0, 0.0), (0, 0), grid=GRID)
    x, y = GRID.um_to_lr(loc.x_um, loc.y_um)
    assert 0 <= x < 1 and 0 <= y < 1


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        ClassicConfig(detect_threshold_rel=0)
    with pytest.raises(InvalidParameterError):
        ClassicConfig(window_radius_px=0)


def test_accumulate_examples():
    assert not accumulate(LocalizationSet(), GRID).any()
    pts = LocalizationSet(np.zeros(5, int), np.full(5, 400.0), np.full(5, 300.0), np.full(5, 0.5))
    img = accumulate(pts, GRID)
    assert img.sum() == 5 and img[9, 12] == 5
    assert accumulate(pts, GRID, "intensity")[9, 12] == 2.5
    with pytest.raises(InvalidParameterError):
        accumulate(pts, GRID, "max")


@given(st.lists(st.tuples(st.floats(-500, 4500), st.floats(-500, 4500)), max_size=50))
def test_accumulate_conserves_count(points):
    xy = np.array(points, float).reshape(-1, 2)
    locs = LocalizationSet(np.zeros(len(xy), int), xy[:, 0], xy[:, 1], np.ones(len(xy)))
    img, dropped = accumulate(locs, GRID, return_dropped=True)
    inside = np.count_nonzero(GRID.contains_um(xy[:, 0], xy[:, 1]))
    assert img.sum() == inside and dropped == len(xy) - inside


def test_sparse_frames_high_recall():
    # sources at least 4 sigma apart
    rng = SeedSpec(11).rng(99)
    frames, truth_parts = [], []
    for t in range(20):
        pts = []
        while len(pts) < 5:
            p = rng.uniform(4, 27, 2)
            if all(np.hypot(*(p - q)) >= 4.0 for q in pts):
                pts.append(p)
        pts = np.array(pts)
        frames.append(render_gaussians(pts[:, 0], pts[:, 1], np.ones(5), 1.0, (32, 32)))
        x_um, y_um = GRID.lr_to_um(pts[:, 0], pts[:, 1])
        truth_parts.append(LocalizationSet(np.full(5, t), x_um, y_um, np.ones(5)))
    locs = localize_sequence(np.array(frames), ClassicConfig(), GRID)
    rep = match_localizations(locs, LocalizationSet.concat(truth_parts), 31.25)
    assert rep.recall >= 0.95
