"""Classical ULM baseline: local maxima, intensity-weighted centroid, summation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, InvalidParameterError, Localization, LocalizationSet


@dataclass(frozen=True)
class ClassicConfig:
    detect_threshold_rel: float = 0.3
    min_separation_px: float = 2.0
    window_radius_px: int = 2

    def __post_init__(self):
        if not 0 < self.detect_threshold_rel <= 1:
            raise InvalidParameterError("detect_threshold_rel must lie in (0, 1]")
        if self.min_separation_px < 1 or self.window_radius_px < 1:
            raise InvalidParameterError("separation and window radius must be >= 1")


def detect_maxima(f, cfg: ClassicConfig = ClassicConfig()) -> list[tuple[int, int]]:
    """Strict 8-neighbor maxima, thresholded and pruned greedily by separation.

    The threshold is relative to the frame's intensity range,
    ``f - min(f) >= rel * (max(f) - min(f))``, which makes the detected set
    invariant to ``a * f + b`` for ``a > 0``. Returns ``(x, y)`` pixel pairs,
    brightest first.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.size == 0:
        raise InvalidParameterError("frame must be a nonempty 2-D array")
    lo, hi = f.min(), f.max()
    if not hi > lo:
        return []
    padded = np.pad(f, 1, constant_values=-np.inf)
    h, w = f.shape
    neigh = np.full(f.shape, -np.inf)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                neigh = np.maximum(neigh, padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w])
    cand = (f > neigh) & (f - lo >= cfg.detect_threshold_rel * (hi - lo))
    ys, xs = np.nonzero(cand)
    order = np.lexsort((xs, ys, -f[ys, xs]))
    accepted: list[tuple[int, int]] = []
    min_d2 = cfg.min_separation_px ** 2
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if all((x - ax) ** 2 + (y - ay) ** 2 >= min_d2 for ax, ay in accepted):
            accepted.append((x, y))
    return accepted


def weighted_centroid(weights, positions) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * np.asarray(positions, dtype=float)) / np.sum(w))


def centroid_localize(f, peak, cfg: ClassicConfig = ClassicConfig(), grid: GridSpec | None = None,
                      frame_index: int = 0) -> Localization:
    """Center of mass of the window around ``peak`` with window-minimum removed."""
    f = np.asarray(f, dtype=float)
    px, py = peak
    r = cfg.window_radius_px
    h, w = f.shape
    y0, y1 = max(py - r, 0), min(py + r + 1, h)
    x0, x1 = max(px - r, 0), min(px + r + 1, w)
    win = f[y0:y1, x0:x1]
    # zero-pad clipped windows to full size; pairing +d with -d makes the
    # offset exactly 0 for a symmetric window
    wts = np.zeros((2 * r + 1, 2 * r + 1))
    wts[y0 - py + r:y1 - py + r, x0 - px + r:x1 - px + r] = win - win.min()
    tot = wts.sum()
    cx, cy = float(px), float(py)
    if tot > 0:
        d = np.arange(1, r + 1)
        mx, my = wts.sum(axis=0), wts.sum(axis=1)
        cx += float(np.sum(d * (mx[r + d] - mx[r - d])) / tot)
        cy += float(np.sum(d * (my[r + d] - my[r - d])) / tot)
    if grid is None:
        grid = GridSpec(w, h, 1, 1.0)
    x_um, y_um = grid.lr_to_um(cx, cy)
    return Localization(frame_index, float(x_um), float(y_um), max(float(f[py, px]), 0.0))


def localize_frame(f, cfg: ClassicConfig, grid: GridSpec, frame_index: int = 0) -> LocalizationSet:
    return LocalizationSet.from_records([centroid_localize(f, p, cfg, grid, frame_index)
                                         for p in detect_maxima(f, cfg)])


def localize_sequence(frames, cfg: ClassicConfig = ClassicConfig(), grid: GridSpec | None = None) -> LocalizationSet:
    frames = np.asarray(getattr(frames, "frames", frames))
    if grid is None:
        grid = GridSpec(frames.shape[2], frames.shape[1], 1, 125.0)
    return LocalizationSet.concat([localize_frame(f, cfg, grid, t) for t, f in enumerate(frames)])


def accumulate(locs: LocalizationSet, grid: GridSpec, mode: str = "count", return_dropped: bool = False):
    """Sum localizations into the HR pixel containing each one.

    ``mode='count'`` adds 1 per localization, ``'intensity'`` adds its
    intensity. Localizations outside the field of view are dropped and
    counted.
    """
    if mode not in ("count", "intensity"):
        raise InvalidParameterError(f"unknown accumulation mode {mode!r}")
    img = np.zeros(grid.hr_shape)
    inside = grid.contains_um(locs.x_um, locs.y_um)
    col, row = grid.hr_pixel_of_um(locs.x_um[inside], locs.y_um[inside])
    weights = np.ones(col.size) if mode == "count" else locs.intensity[inside]
    np.add.at(img, (row, col), weights)
    dropped = int(np.count_nonzero(~inside))
    return (img, dropped) if return_dropped else img
