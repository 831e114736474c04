"""Synthetic data: on-line training samples and vessel-phantom CEUS sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import (
    STREAM_PHANTOM,
    STREAM_TRAIN,
    FrameKind,
    FrameSequence,
    GridSpec,
    InvalidParameterError,
    LocalizationSet,
    PsfModel,
    SeedSpec,
)


def _check_range(name, lo, hi, positive=False):
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise InvalidParameterError(f"{name}: empty or invalid range [{lo}, {hi}]")
    if positive and lo <= 0:
        raise InvalidParameterError(f"{name}: lower bound must be > 0")


@dataclass(frozen=True)
class SampleDistributions:
    """Ranges that training scenes are drawn from (all uniform)."""

    n_sources: tuple[int, int] = (0, 40)
    intensity: tuple[float, float] = (0.3, 1.0)
    sigma_lr: tuple[float, float] = (0.7, 1.5)
    noise_std: tuple[float, float] = (0.0, 0.05)
    background_level: tuple[float, float] = (0.0, 0.1)

    def __post_init__(self):
        n0, n1 = self.n_sources
        if int(n0) != n0 or int(n1) != n1 or n0 < 0:
            raise InvalidParameterError("n_sources must be a non-negative integer range")
        _check_range("n_sources", n0, n1)
        _check_range("intensity", *self.intensity, positive=True)
        if self.intensity[1] > 1:
            raise InvalidParameterError("intensity range must lie in (0, 1]")
        _check_range("sigma_lr", *self.sigma_lr, positive=True)
        _check_range("noise_std", *self.noise_std)
        _check_range("background_level", *self.background_level)
        if self.noise_std[0] < 0:
            raise InvalidParameterError("noise_std must be non-negative")

    def replace(self, **kw) -> "SampleDistributions":
        d = dict(self.__dict__)
        d.update(kw)
        return SampleDistributions(**d)


@dataclass(eq=False)
class TrainingSample:
    input_lr: np.ndarray
    target_hr: np.ndarray
    truth: LocalizationSet
    sigma_lr: float
    noise_std: float
    background: float


def render_gaussians(x_lr, y_lr, amp, sigma_lr, shape) -> np.ndarray:
    """Sum of isotropic Gaussians evaluated analytically at LR pixel centers."""
    h, w = shape
    x_lr, y_lr, amp = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x_lr, y_lr, amp))
    if x_lr.size == 0:
        return np.zeros(shape)
    c = -0.5 / sigma_lr ** 2
    gx = np.exp(c * (np.arange(w)[None, :] - x_lr[:, None]) ** 2)
    gy = np.exp(c * (np.arange(h)[None, :] - y_lr[:, None]) ** 2)
    return (gy * amp[:, None]).T @ gx


def gen_sample(dist: SampleDistributions, grid: GridSpec, rng: np.random.Generator) -> TrainingSample:
    """Draw one scene: sparse HR target plus its blurred, noisy LR observation."""
    n_min, n_max = dist.n_sources
    hr_h, hr_w = grid.hr_shape
    if n_max > hr_h * hr_w:
        raise InvalidParameterError(f"n_max={n_max} exceeds the {hr_h * hr_w} HR pixels")
    n = int(rng.integers(n_min, n_max + 1))
    sigma = float(rng.uniform(*dist.sigma_lr))
    noise = float(rng.uniform(*dist.noise_std))
    background = float(rng.uniform(*dist.background_level))
    amps = rng.uniform(*dist.intensity, size=n)

    margin = 3.0 * sigma
    lo_x, hi_x = margin - 0.5, grid.lr_width - 0.5 - margin
    lo_y, hi_y = margin - 0.5, grid.lr_height - 0.5 - margin
    if n and (hi_x <= lo_x or hi_y <= lo_y):
        raise InvalidParameterError("grid too small for a 3-sigma source margin")

    xs = np.empty(n)
    ys = np.empty(n)
    taken: set[tuple[int, int]] = set()
    # reject draws that share an HR pixel so every source owns one target pixel
    for i in range(n):
        for _ in range(1000):
            x = rng.uniform(lo_x, hi_x)
            y = rng.uniform(lo_y, hi_y)
            x_um, y_um = grid.lr_to_um(x, y)
            key = tuple(int(v) for v in grid.hr_pixel_of_um(x_um, y_um))
            if key not in taken:
                break
        else:
            raise InvalidParameterError("could not place sources in distinct HR pixels")
        taken.add(key)
        xs[i], ys[i] = x, y

    x_um, y_um = grid.lr_to_um(xs, ys)
    col, row = grid.hr_pixel_of_um(x_um, y_um)
    target = np.zeros(grid.hr_shape)
    target[row, col] = amps

    img = render_gaussians(xs, ys, amps, sigma, grid.lr_shape)
    img += background
    if noise > 0:
        img += noise * rng.standard_normal(grid.lr_shape)
    truth = LocalizationSet(np.zeros(n, np.int64), x_um, y_um, amps)
    return TrainingSample(img, target, truth, sigma, noise, background)


def gen_batch(dist: SampleDistributions, grid: GridSpec, seed: SeedSpec, stream: int, index: int, size: int):
    """Batch of samples, each from its own substream ``(stream, index, i)``.

    Returns ``(inputs, targets, samples)`` with stacked arrays.
    """
    samples = [gen_sample(dist, grid, seed.rng(stream, index, i)) for i in range(size)]
    x = np.stack([s.input_lr for s in samples])
    y = np.stack([s.target_hr for s in samples])
    return x, y, samples


def gen_frames(dist: SampleDistributions, grid: GridSpec, seed: SeedSpec, n: int, stream: int = STREAM_TRAIN):
    """Independent samples stacked as a sequence, truth frame-indexed."""
    _, _, samples = gen_batch(dist, grid, seed, stream, 0, n)
    frames = np.stack([s.input_lr for s in samples])
    truth = LocalizationSet.concat([s.truth.with_frame_offset(i) for i, s in enumerate(samples)])
    return frames, truth, samples


# ---------------------------------------------------------------------------
# vessel phantom


@dataclass
class Vessel:
    polyline_um: np.ndarray
    radius_um: float
    flow_speed_um_per_frame: float
    bubble_rate: float

    def __post_init__(self):
        self.polyline_um = np.asarray(self.polyline_um, dtype=float).reshape(-1, 2)
        if self.polyline_um.shape[0] < 2:
            raise InvalidParameterError("vessel polyline needs at least two points")
        if not self.radius_um > 0:
            raise InvalidParameterError("vessel radius must be positive")
        if self.flow_speed_um_per_frame < 0 or self.bubble_rate < 0:
            raise InvalidParameterError("flow speed and bubble rate must be non-negative")
        seg = np.diff(self.polyline_um, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self._seg_len <= 0):
            raise InvalidParameterError("vessel polyline has a zero-length segment")
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self._dir = seg / self._seg_len[:, None]

    @property
    def length_um(self) -> float:
        return float(self._cum[-1])

    def point(self, s, offset):
        """Position at arc length ``s`` displaced by ``offset`` along the segment normal."""
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        d = self._dir[k]
        p = self.polyline_um[k] + d * (s - self._cum[k])[:, None]
        normal = np.column_stack([-d[:, 1], d[:, 0]])
        return p + normal * np.asarray(offset, dtype=float)[:, None]

    def to_dict(self):
        return {
            "polyline_um": self.polyline_um.tolist(),
            "radius_um": self.radius_um,
            "flow_speed_um_per_frame": self.flow_speed_um_per_frame,
            "bubble_rate": self.bubble_rate,
        }


@dataclass
class VesselPhantom:
    """Vessel network plus static tissue and rigid in-plane motion.

    ``drift_um_per_frame`` is a constant per-frame translation; frame ``t`` is
    displaced by ``t * drift`` unless ``displacement_um`` (shape ``(T, 2)``)
    gives absolute displacements. Truth positions are reported in scene
    coordinates, i.e. the frame-0 reference used by registration.
    """

    vessels: list[Vessel] = field(default_factory=list)
    tissue_background: np.ndarray | None = None
    drift_um_per_frame: tuple[float, float] = (0.0, 0.0)
    displacement_um: np.ndarray | None = None
    tissue_residual: float = 0.05
    tissue_contrast: float = 0.3
    noise_std: float = 0.01
    bmode_noise_std: float = 0.0
    bubble_amplitude: tuple[float, float] = (0.5, 1.0)
    prefill: bool = True

    def validate(self, grid: GridSpec):
        w, h = grid.extent_um
        for v in self.vessels:
            p = v.polyline_um
            if np.any(p < 0) or np.any(p[:, 0] > w) or np.any(p[:, 1] > h):
                raise InvalidParameterError("vessel polyline leaves the grid extent")
        if self.tissue_background is not None and np.shape(self.tissue_background) != grid.lr_shape:
            raise InvalidParameterError("tissue_background shape does not match the LR grid")
        _check_range("bubble_amplitude", *self.bubble_amplitude, positive=True)

    def displacement(self, n_frames: int) -> np.ndarray:
        if self.displacement_um is not None:
            d = np.asarray(self.displacement_um, dtype=float).reshape(-1, 2)
            if d.shape[0] < n_frames:
                raise InvalidParameterError("displacement_um shorter than n_frames")
            return d[:n_frames]
        return np.arange(n_frames)[:, None] * np.asarray(self.drift_um_per_frame, dtype=float)[None, :]

    def to_dict(self):
        return {
            "vessels": [v.to_dict() for v in self.vessels],
            "drift_um_per_frame": list(self.drift_um_per_frame),
            "displacement_um": None if self.displacement_um is None else np.asarray(self.displacement_um).tolist(),
            "tissue_residual": self.tissue_residual,
            "tissue_contrast": self.tissue_contrast,
            "noise_std": self.noise_std,
            "bmode_noise_std": self.bmode_noise_std,
            "bubble_amplitude": list(self.bubble_amplitude),
            "prefill": self.prefill,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"vessels", "drift_um_per_frame", "displacement_um", "tissue_residual", "tissue_contrast",
                 "noise_std", "bmode_noise_std", "bubble_amplitude", "prefill"}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown phantom keys: {sorted(unknown)}")
        vessels = [Vessel(**v) for v in d.pop("vessels", [])]
        for k in ("drift_um_per_frame", "bubble_amplitude"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(vessels=vessels, **d)


def make_tissue(grid: GridSpec, rng: np.random.Generator, contrast: float = 0.3, smooth_px: float = 1.5):
    """Smooth random texture with mean 1, used as the static tissue image."""
    tex = gaussian_filter(rng.standard_normal(grid.lr_shape), smooth_px, mode="wrap")
    tex /= tex.std()
    return 1.0 + contrast * tex


def gen_phantom_sequence(ph: VesselPhantom, grid: GridSpec, n_frames: int, psf: PsfModel, seed: SeedSpec,
                         frame_rate_hz: float = 25.0):
    """Simulate flowing bubbles in the phantom.

    Returns ``(ceus, bmode, truth)``.
    """
    from .preprocess import apply_translation

    if n_frames < 1:
        raise InvalidParameterError("n_frames must be >= 1")
    ph.validate(grid)
    rng = seed.rng(STREAM_PHANTOM, 0)
    tissue = ph.tissue_background
    if tissue is None:
        tissue = make_tissue(grid, seed.rng(STREAM_PHANTOM, 1), ph.tissue_contrast)
    tissue = np.asarray(tissue, dtype=float)
    disp = ph.displacement(n_frames)

    # per vessel: arc length, normal offset, amplitude of each live bubble
    state = [(np.zeros(0), np.zeros(0), np.zeros(0)) for _ in ph.vessels]
    if ph.prefill:
        for i, v in enumerate(ph.vessels):
            if v.flow_speed_um_per_frame > 0:
                k = rng.poisson(v.bubble_rate * v.length_um / v.flow_speed_um_per_frame)
                state[i] = (rng.uniform(0, v.length_um, k),
                            rng.uniform(-v.radius_um, v.radius_um, k),
                            rng.uniform(*ph.bubble_amplitude, k))

    ceus = np.empty((n_frames,) + grid.lr_shape)
    bmode = np.empty((n_frames,) + grid.lr_shape)
    truth_parts = []
    for t in range(n_frames):
        xs, ys, amps = [], [], []
        for i, v in enumerate(ph.vessels):
            s, off, a = state[i]
            k = rng.poisson(v.bubble_rate)
            if k:
                s = np.concatenate([s, rng.uniform(0, max(v.flow_speed_um_per_frame, 0.0), k)])
                off = np.concatenate([off, rng.uniform(-v.radius_um, v.radius_um, k)])
                a = np.concatenate([a, rng.uniform(*ph.bubble_amplitude, k)])
            keep = s <= v.length_um
            s, off, a = s[keep], off[keep], a[keep]
            if s.size:
                p = v.point(s, off)
                xs.append(p[:, 0])
                ys.append(p[:, 1])
                amps.append(a)
            state[i] = (s + v.flow_speed_um_per_frame, off, a)
        x_um = np.concatenate(xs) if xs else np.zeros(0)
        y_um = np.concatenate(ys) if ys else np.zeros(0)
        amp = np.concatenate(amps) if amps else np.zeros(0)
        truth_parts.append(LocalizationSet(np.full(x_um.size, t), x_um, y_um, amp))

        dx_px, dy_px = disp[t] / grid.lr_pixel_um
        x_lr, y_lr = grid.um_to_lr(x_um + disp[t, 0], y_um + disp[t, 1])
        moved = apply_translation(tissue, dx_px, dy_px) if (dx_px or dy_px) else tissue
        frame = render_gaussians(x_lr, y_lr, amp * psf.amplitude, psf.sigma_lr, grid.lr_shape)
        frame += ph.tissue_residual * moved
        if ph.noise_std > 0:
            frame += ph.noise_std * rng.standard_normal(grid.lr_shape)
        ceus[t] = frame
        b = moved
        if ph.bmode_noise_std > 0:
            b = b + ph.bmode_noise_std * rng.standard_normal(grid.lr_shape)
        bmode[t] = b

    truth = LocalizationSet.concat(truth_parts)
    return (FrameSequence(ceus, frame_rate_hz, FrameKind.CEUS, grid.lr_pixel_um),
            FrameSequence(bmode, frame_rate_hz, FrameKind.BMODE, grid.lr_pixel_um),
            truth)
