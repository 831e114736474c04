"""Localization scoring against ground truth and super-resolution map rendering."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, signal

from .grid import InvalidParameterError, LocalizationSet


@dataclass(frozen=True)
class MatchReport:
    tolerance_um: float
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    rmse_um: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int, other_empty: bool) -> float:
    if den > 0:
        return num / den
    return 1.0 if other_empty else 0.0


def greedy_pairs(pred_xy, truth_xy, tolerance):
    """Match in ascending distance order; each point is used at most once."""
    if len(pred_xy) == 0 or len(truth_xy) == 0:
        return []
    d = np.hypot(pred_xy[:, None, 0] - truth_xy[None, :, 0], pred_xy[:, None, 1] - truth_xy[None, :, 1])
    pi, ti = np.nonzero(d <= tolerance)
    order = np.lexsort((ti, pi, d[pi, ti]))
    used_p, used_t, pairs = set(), set(), []
    for k in order:
        p, t = int(pi[k]), int(ti[k])
        if p in used_p or t in used_t:
            continue
        used_p.add(p)
        used_t.add(t)
        pairs.append((p, t, float(d[p, t])))
    return pairs


def match_localizations(pred: LocalizationSet, truth: LocalizationSet, tolerance_um: float = 31.25) -> MatchReport:
    """Per-frame greedy nearest-neighbor matching aggregated over frames."""
    if not tolerance_um > 0:
        raise InvalidParameterError("tolerance must be positive")
    tp, sq = 0, 0.0
    frames = np.union1d(pred.frame_index, truth.frame_index)
    for f in frames:
        p = pred.in_frame(f).xy()
        t = truth.in_frame(f).xy()
        pairs = greedy_pairs(p, t, tolerance_um)
        tp += len(pairs)
        sq += sum(d * d for _, _, d in pairs)
    fp = len(pred) - tp
    fn = len(truth) - tp
    precision = _ratio(tp, tp + fp, len(truth) == 0)
    recall = _ratio(tp, tp + fn, len(pred) == 0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    rmse = float(np.sqrt(sq / tp)) if tp else 0.0
    return MatchReport(float(tolerance_um), tp, fp, fn, precision, recall, f1, rmse)


def render_map(acc, gamma: float = 0.5, blur_sigma_px: float = 0.0) -> np.ndarray:
    """Display image: optional blur, divide by max, power-law gamma, 16-bit quantization."""
    acc = np.asarray(acc, dtype=float)
    if np.any(acc < 0):
        raise InvalidParameterError("accumulator must be non-negative")
    if not gamma > 0:
        raise InvalidParameterError("gamma must be positive")
    img = ndimage.gaussian_filter(acc, blur_sigma_px, mode="constant") if blur_sigma_px > 0 else acc
    peak = img.max() if img.size else 0.0
    if not peak > 0:
        return np.zeros(acc.shape, dtype=np.uint16)
    norm = np.clip(img / peak, 0.0, 1.0) ** gamma
    return np.round(norm * 65535).astype(np.uint16)


@dataclass
class Profile:
    distance: np.ndarray
    values: np.ndarray
    peaks: np.ndarray
    dip_ratio: float

    @property
    def n_peaks(self) -> int:
        return int(self.peaks.size)


def resolution_probe(img, line, step: float = 0.25, rel_prominence: float = 0.05, width: int = 1) -> Profile:
    """Bilinear intensity profile along ``line = (x0, y0, x1, y1)`` in pixel coordinates.

    With ``width > 1`` the profile is the mean of ``width`` parallel lines
    spaced one pixel apart, centered on the segment. Peaks need a
    prominence of ``rel_prominence * max(profile)``. The dip
    ratio is ``(lower_peak - min_between) / lower_peak`` for the two
    strongest peaks, 0 when fewer than two peaks exist.
    """
    img = np.asarray(img, dtype=float)
    x0, y0, x1, y1 = (float(v) for v in line)
    length = np.hypot(x1 - x0, y1 - y0)
    if length == 0:
        raise InvalidParameterError("degenerate probe segment")
    if width < 1:
        raise InvalidParameterError("probe width must be >= 1")
    h, w = img.shape
    nx, ny = -(y1 - y0) / length, (x1 - x0) / length
    offsets = np.arange(width) - (width - 1) / 2.0
    for o in offsets[[0, -1]]:
        for x, y in ((x0 + o * nx, y0 + o * ny), (x1 + o * nx, y1 + o * ny)):
            if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                raise InvalidParameterError("probe segment leaves the image")
    n = int(np.ceil(length / step)) + 1
    s = np.linspace(0.0, 1.0, n)
    xs = x0 + s[None, :] * (x1 - x0) + offsets[:, None] * nx
    ys = y0 + s[None, :] * (y1 - y0) + offsets[:, None] * ny
    vals = ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="nearest")
    vals = vals.reshape(width, n).mean(axis=0)
    top = vals.max()
    if top > 0:
        peaks, _ = signal.find_peaks(vals, prominence=rel_prominence * top)
    else:
        peaks = np.zeros(0, dtype=int)
    dip = 0.0
    if peaks.size >= 2:
        a, b = sorted(peaks[np.argsort(vals[peaks])[-2:]])
        lower = min(vals[a], vals[b])
        dip = float((lower - vals[a:b + 1].min()) / lower) if lower > 0 else 0.0
    return Profile(s * length, vals, peaks, dip)
