"""Frame-sequence preprocessing.

Order of operations in :func:`preprocess`: wash-out trim, subsequence split
on B-mode correlation, per-subsequence translation registration (estimated
on B-mode, applied to CEUS), then SVD clutter filtering of the CEUS frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .grid import DegenerateInputError, FrameSequence, InvalidParameterError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Roi:
    x0: int
    y0: int
    width: int
    height: int

    def check(self, shape):
        h, w = shape
        if self.x0 < 0 or self.y0 < 0 or self.x0 + self.width > w or self.y0 + self.height > h:
            raise InvalidParameterError(f"ROI {self} outside frame of shape {shape}")
        if self.width * self.height < 16:
            raise InvalidParameterError("ROI area must be at least 16 pixels")

    def slices(self):
        return np.s_[self.y0:self.y0 + self.height, self.x0:self.x0 + self.width]

    @classmethod
    def full(cls, shape):
        return cls(0, 0, shape[1], shape[0])

    @classmethod
    def parse(cls, text: str) -> "Roi":
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 4:
            raise InvalidParameterError("ROI must be 'x0,y0,w,h'")
        return cls(*parts)


@dataclass
class SubsequenceIndex:
    """Inclusive ``(start, end)`` frame ranges of kept subsequences."""

    ranges: list[tuple[int, int]] = field(default_factory=list)
    min_len: int = 1000
    corr_threshold: float = 0.90

    def __len__(self):
        return len(self.ranges)


def tic(seq) -> np.ndarray:
    """Time-intensity curve: mean intensity of each frame."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if frames.shape[0] == 0:
        raise InvalidParameterError("empty sequence")
    return frames.reshape(frames.shape[0], -1).mean(axis=1)


def washout_start(curve) -> int:
    """Index of the TIC maximum; ties go to the earliest frame."""
    curve = np.asarray(curve)
    if curve.size == 0:
        raise InvalidParameterError("empty TIC")
    return int(np.argmax(curve))


def ncc(a, b, roi: Roi | None = None) -> float:
    """Zero-normalized cross-correlation of two frames over a ROI."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if roi is not None:
        roi.check(a.shape)
        a, b = a[roi.slices()], b[roi.slices()]
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den <= 0 or not np.isfinite(den):
        raise DegenerateInputError("zero-variance ROI")
    return float(np.clip(np.sum(a * b) / den, -1.0, 1.0))


def split_subsequences(bmode, roi: Roi | None = None, corr_threshold: float = 0.90, min_len: int = 1000,
                       anchored: bool = False) -> SubsequenceIndex:
    """Group consecutive correlated frames into subsequences.

    Frames ``t`` and ``t+1`` share a subsequence iff their NCC exceeds
    ``corr_threshold``. With ``anchored=True`` each frame is compared with the
    first frame of the current run instead. Runs shorter than ``min_len`` are
    dropped.
    """
    frames = bmode.frames if isinstance(bmode, FrameSequence) else np.asarray(bmode)
    n = frames.shape[0]
    if roi is None:
        roi = Roi.full(frames.shape[1:])
    roi.check(frames.shape[1:])
    ranges = []
    start = 0
    for t in range(1, n + 1):
        if t < n:
            ref = frames[start] if anchored else frames[t - 1]
            try:
                linked = ncc(ref, frames[t], roi) > corr_threshold
            except DegenerateInputError:
                linked = False
            if linked:
                continue
        if t - start >= min_len:
            ranges.append((start, t - 1))
        start = t
    return SubsequenceIndex(ranges, min_len, corr_threshold)


def _parabolic_offset(cm, c0, cp) -> float:
    den = cm - 2.0 * c0 + cp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (cm - cp) / den, -0.5, 0.5))


def estimate_translation(ref, moving, max_shift: int | None = None) -> tuple[float, float]:
    """Sub-pixel shift ``(dx, dy)`` such that ``moving(p) ~ ref(p - d)``.

    The integer peak of the zero-padded, mean-removed cross-correlation is
    refined with a separable parabolic fit through its 4 neighbors.
    """
    a = np.asarray(ref, dtype=float)
    b = np.asarray(moving, dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError("frame shapes differ")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(np.sum(a * a)), np.sqrt(np.sum(b * b))
    if na == 0 or nb == 0:
        raise DegenerateInputError("cannot register a flat image")
    h, w = a.shape
    shape = (sfft.next_fast_len(2 * h, real=True), sfft.next_fast_len(2 * w, real=True))
    corr = sfft.irfft2(np.conj(sfft.rfft2(a, shape)) * sfft.rfft2(b, shape), shape) / (na * nb)
    if max_shift is None:
        max_shift = max(h, w) // 2
    lags_y = np.fft.fftfreq(shape[0], 1.0 / shape[0]).astype(int)
    lags_x = np.fft.fftfreq(shape[1], 1.0 / shape[1]).astype(int)
    valid = (np.abs(lags_y)[:, None] <= min(max_shift, h - 1)) & (np.abs(lags_x)[None, :] <= min(max_shift, w - 1))
    masked = np.where(valid, corr, -np.inf)
    iy, ix = np.unravel_index(np.argmax(masked), corr.shape)
    c0 = corr[iy, ix]
    fy = _parabolic_offset(corr[iy - 1, ix], c0, corr[(iy + 1) % shape[0], ix])
    fx = _parabolic_offset(corr[iy, ix - 1], c0, corr[iy, (ix + 1) % shape[1]])
    return float(lags_x[ix] + fx), float(lags_y[iy] + fy)


def apply_translation(f, dx: float, dy: float) -> np.ndarray:
    """Bilinear shift so that ``out(p) = f(p - d)``; samples from outside are 0."""
    f = np.asarray(f, dtype=float)
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise InvalidParameterError("shift must be finite")
    if dx == 0 and dy == 0:
        return f.copy()
    return ndimage.shift(f, (dy, dx), order=1, mode="constant", cval=0.0, prefilter=False)


def register_sequence(bmode, ceus=None, ref_index: int = 0):
    """Estimate per-frame shifts on B-mode against ``ref_index`` and undo them.

    Returns ``(shifts, corrected)`` where ``corrected`` is the CEUS stack (or
    the B-mode stack when no CEUS is given) with each frame shifted back.
    """
    b = bmode.frames if isinstance(bmode, FrameSequence) else np.asarray(bmode)
    target = b if ceus is None else (ceus.frames if isinstance(ceus, FrameSequence) else np.asarray(ceus))
    if target.shape[0] != b.shape[0]:
        raise InvalidParameterError("B-mode and CEUS frame counts differ")
    shifts = np.zeros((b.shape[0], 2))
    out = np.empty(target.shape, dtype=float)
    for t in range(b.shape[0]):
        if t != ref_index:
            shifts[t] = estimate_translation(b[ref_index], b[t])
        out[t] = apply_translation(target[t], -shifts[t, 0], -shifts[t, 1])
    return shifts, out


def svd_spectrum(seq) -> np.ndarray:
    """Singular values of the Casorati (pixels x frames) matrix."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    return np.linalg.svd(frames.reshape(frames.shape[0], -1).T.astype(float), compute_uv=False)


def svd_filter(ceus, n_low: int = 2, n_high: int = 0, return_spectrum: bool = False):
    """Spatiotemporal SVD clutter filter.

    Zeroes the ``n_low`` largest singular components (static tissue) and the
    ``n_high`` smallest (noise) of the Casorati matrix.
    """
    is_seq = isinstance(ceus, FrameSequence)
    frames = ceus.frames if is_seq else np.asarray(ceus)
    t, h, w = frames.shape
    if n_low < 0 or n_high < 0:
        raise InvalidParameterError("cutoffs must be non-negative")
    if n_low + n_high >= t:
        raise InvalidParameterError(f"insufficient frames: n_low + n_high = {n_low + n_high} >= {t}")
    cas = frames.reshape(t, -1).T.astype(float)
    u, s, vt = np.linalg.svd(cas, full_matrices=False)
    keep = np.zeros(s.size, dtype=bool)
    keep[n_low:s.size - n_high] = True
    out = ((u[:, keep] * s[keep]) @ vt[keep]).T.reshape(t, h, w)
    result = ceus.replace(out) if is_seq else out
    return (result, s) if return_spectrum else result


@dataclass
class PreprocessConfig:
    roi: tuple[int, int, int, int] | None = None
    corr_threshold: float = 0.90
    min_len: int = 1000
    anchored: bool = False
    washout: bool = True
    register: bool = True
    svd_low: int = 2
    svd_high: int = 0


@dataclass
class PreprocessResult:
    ceus: FrameSequence
    source_frames: np.ndarray
    washout_start: int
    subsequences: SubsequenceIndex
    shifts: np.ndarray
    singular_values: list[np.ndarray]

    def report(self) -> dict:
        return {
            "washout_start": self.washout_start,
            "subsequences": [list(r) for r in self.subsequences.ranges],
            "corr_threshold": self.subsequences.corr_threshold,
            "min_len": self.subsequences.min_len,
            "shifts_px": self.shifts.tolist(),
            "singular_values": [s.tolist() for s in self.singular_values],
            "n_output_frames": int(len(self.ceus)),
        }


def preprocess(ceus: FrameSequence, bmode: FrameSequence, cfg: PreprocessConfig) -> PreprocessResult:
    if len(ceus) != len(bmode) or ceus.shape != bmode.shape:
        raise InvalidParameterError("CEUS and B-mode sequences must be aligned frame for frame")
    start = washout_start(tic(ceus)) if cfg.washout else 0
    roi = Roi(*cfg.roi) if cfg.roi is not None else Roi.full(bmode.shape)
    idx = split_subsequences(bmode.frames[start:], roi, cfg.corr_threshold, cfg.min_len, cfg.anchored)
    idx.ranges = [(a + start, b + start) for a, b in idx.ranges]
    log.info("wash-out from frame %d, %d subsequence(s)", start, len(idx))

    outputs, sources, shifts, spectra = [], [], [], []
    for a, b in idx.ranges:
        c = ceus.frames[a:b + 1].astype(float)
        if cfg.register:
            sh, c = register_sequence(bmode.frames[a:b + 1], c)
        else:
            sh = np.zeros((b - a + 1, 2))
        filtered, s = svd_filter(c, cfg.svd_low, cfg.svd_high, return_spectrum=True)
        outputs.append(filtered)
        sources.append(np.arange(a, b + 1))
        shifts.append(sh)
        spectra.append(s)
    if outputs:
        frames = np.concatenate(outputs)
    else:
        frames = np.zeros((0,) + ceus.shape)
    return PreprocessResult(
        ceus.replace(frames),
        np.concatenate(sources) if sources else np.zeros(0, np.int64),
        start,
        idx,
        np.concatenate(shifts) if shifts else np.zeros((0, 2)),
        spectra,
    )
