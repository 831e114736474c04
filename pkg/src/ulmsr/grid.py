"""Shared data model: grids, frames, PSFs, localizations and seeding."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class InvalidParameterError(ValueError):
    """Raised when a model parameter is outside its valid range."""


class DegenerateInputError(ValueError):
    """Raised when an input carries no usable signal (flat image, zero variance)."""


HR_PIXEL_UM = 31.25


@dataclass(frozen=True)
class GridSpec:
    """Low-resolution acquisition grid plus an integer upsampling factor.

    Physical coordinates put the center of LR pixel ``(i, j)`` at
    ``((j + 0.5) * lr_pixel_um, (i + 0.5) * lr_pixel_um)``. The HR grid covers
    the same extent with ``upsample`` times more pixels per axis.
    """

    lr_width: int = 32
    lr_height: int = 32
    upsample: int = 4
    lr_pixel_um: float = HR_PIXEL_UM * 4

    def __post_init__(self):
        if self.lr_width < 1 or self.lr_height < 1:
            raise InvalidParameterError("grid dimensions must be positive")
        if int(self.upsample) != self.upsample or self.upsample < 1:
            raise InvalidParameterError("upsample must be an integer >= 1")
        if not self.lr_pixel_um > 0:
            raise InvalidParameterError("lr_pixel_um must be positive")

    @classmethod
    def from_hr_pixel(cls, lr_width=32, lr_height=32, upsample=4, hr_pixel_um=HR_PIXEL_UM):
        return cls(lr_width, lr_height, upsample, hr_pixel_um * upsample)

    @property
    def hr_pixel_um(self) -> float:
        return self.lr_pixel_um / self.upsample

    @property
    def hr_width(self) -> int:
        return self.lr_width * self.upsample

    @property
    def hr_height(self) -> int:
        return self.lr_height * self.upsample

    @property
    def lr_shape(self) -> tuple[int, int]:
        return (self.lr_height, self.lr_width)

    @property
    def hr_shape(self) -> tuple[int, int]:
        return (self.hr_height, self.hr_width)

    @property
    def extent_um(self) -> tuple[float, float]:
        """Physical (width, height) of the field of view."""
        return (self.lr_width * self.lr_pixel_um, self.lr_height * self.lr_pixel_um)

    def with_shape(self, lr_width: int, lr_height: int) -> "GridSpec":
        return GridSpec(lr_width, lr_height, self.upsample, self.lr_pixel_um)

    # coordinate conversions; pixel-index coordinates put pixel centers on integers
    def lr_to_um(self, x_lr, y_lr):
        return ((np.asarray(x_lr) + 0.5) * self.lr_pixel_um,
                (np.asarray(y_lr) + 0.5) * self.lr_pixel_um)

    def um_to_lr(self, x_um, y_um):
        return (np.asarray(x_um) / self.lr_pixel_um - 0.5,
                np.asarray(y_um) / self.lr_pixel_um - 0.5)

    def hr_to_um(self, x_hr, y_hr):
        return ((np.asarray(x_hr) + 0.5) * self.hr_pixel_um,
                (np.asarray(y_hr) + 0.5) * self.hr_pixel_um)

    def um_to_hr(self, x_um, y_um):
        return (np.asarray(x_um) / self.hr_pixel_um - 0.5,
                np.asarray(y_um) / self.hr_pixel_um - 0.5)

    def hr_pixel_of_um(self, x_um, y_um):
        """Integer (col, row) of the HR pixel containing a physical point."""
        return (np.floor(np.asarray(x_um) / self.hr_pixel_um).astype(np.int64),
                np.floor(np.asarray(y_um) / self.hr_pixel_um).astype(np.int64))

    def contains_um(self, x_um, y_um):
        w, h = self.extent_um
        x_um, y_um = np.asarray(x_um), np.asarray(y_um)
        return (x_um >= 0) & (x_um < w) & (y_um >= 0) & (y_um < h)


def lr_to_hr_coords(x_lr, y_lr, grid: GridSpec):
    """Map LR pixel-index coordinates to HR pixel-index coordinates.

    The center of LR pixel 0 lands at the center of its r x r HR block,
    i.e. ``x_hr = r * x_lr + (r - 1) / 2``.
    """
    r = grid.upsample
    off = (r - 1) / 2.0
    return r * np.asarray(x_lr, dtype=float) + off, r * np.asarray(y_lr, dtype=float) + off


def hr_to_lr_coords(x_hr, y_hr, grid: GridSpec):
    r = grid.upsample
    off = (r - 1) / 2.0
    return (np.asarray(x_hr, dtype=float) - off) / r, (np.asarray(y_hr, dtype=float) - off) / r


class FrameKind(str, enum.Enum):
    BMODE = "BMode"
    CEUS = "Ceus"


def check_frame(data) -> np.ndarray:
    """Validate a 2-D finite raster and return it as a float array."""
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(float)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidParameterError(f"frame must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("frame contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Time-ordered stack of frames, shape ``(n_frames, height, width)``."""

    frames: np.ndarray
    frame_rate_hz: float = 25.0
    kind: FrameKind = FrameKind.CEUS
    pixel_um: float = HR_PIXEL_UM * 4

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise InvalidParameterError(f"expected (T, H, W) stack, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidParameterError("sequence contains non-finite values")
        if not self.frame_rate_hz > 0:
            raise InvalidParameterError("frame_rate_hz must be positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "kind", FrameKind(self.kind))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, idx):
        return self.frames[idx]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    def replace(self, frames) -> "FrameSequence":
        return FrameSequence(frames, self.frame_rate_hz, self.kind, self.pixel_um)

    def slice(self, start: int, stop: int) -> "FrameSequence":
        return self.replace(self.frames[start:stop])


@dataclass(frozen=True)
class PsfModel:
    """Isotropic Gaussian point spread function, width in LR pixels."""

    sigma_lr: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.sigma_lr > 0 or not math.isfinite(self.sigma_lr):
            raise InvalidParameterError(f"sigma_lr must be positive, got {self.sigma_lr}")
        if not math.isfinite(self.amplitude):
            raise InvalidParameterError("amplitude must be finite")

    def profile(self, d_lr):
        """1-D factor of the PSF at LR-pixel offsets ``d_lr``."""
        return np.exp(-np.square(d_lr) / (2.0 * self.sigma_lr ** 2))


def sample_psf(psf: PsfModel, grid: GridSpec, target: str = "LR", radius_px: int | None = None) -> np.ndarray:
    """Sample the PSF on a ``(2R+1)^2`` kernel centered on a pixel of the target grid."""
    if not psf.sigma_lr > 0:
        raise InvalidParameterError("sigma must be positive")
    target = target.upper()
    if target not in ("LR", "HR"):
        raise InvalidParameterError(f"target must be LR or HR, got {target!r}")
    sigma = psf.sigma_lr * (grid.upsample if target == "HR" else 1)
    min_radius = math.ceil(3 * sigma)
    if radius_px is None:
        radius_px = min_radius
    if radius_px < min_radius:
        raise InvalidParameterError(f"radius_px={radius_px} < ceil(3 sigma)={min_radius}")
    d = np.arange(-radius_px, radius_px + 1, dtype=float)
    g = np.exp(-d ** 2 / (2 * sigma ** 2))
    return psf.amplitude * np.outer(g, g)


@dataclass(frozen=True)
class Localization:
    frame_index: int
    x_um: float
    y_um: float
    intensity: float = 1.0


@dataclass(eq=False)
class LocalizationSet:
    """Column store of localizations (one row per detected or true source)."""

    frame_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    x_um: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_um: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intensity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64).reshape(-1)
        self.x_um = np.asarray(self.x_um, dtype=float).reshape(-1)
        self.y_um = np.asarray(self.y_um, dtype=float).reshape(-1)
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        n = self.frame_index.size
        if not (self.x_um.size == self.y_um.size == self.intensity.size == n):
            raise InvalidParameterError("localization columns differ in length")

    @classmethod
    def from_records(cls, records: Sequence[Localization]) -> "LocalizationSet":
        if not records:
            return cls()
        return cls(
            [r.frame_index for r in records],
            [r.x_um for r in records],
            [r.y_um for r in records],
            [r.intensity for r in records],
        )

    @classmethod
    def concat(cls, sets: Sequence["LocalizationSet"]) -> "LocalizationSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls()
        return cls(
            np.concatenate([s.frame_index for s in sets]),
            np.concatenate([s.x_um for s in sets]),
            np.concatenate([s.y_um for s in sets]),
            np.concatenate([s.intensity for s in sets]),
        )

    def __len__(self) -> int:
        return self.frame_index.size

    def __iter__(self) -> Iterator[Localization]:
        for f, x, y, a in zip(self.frame_index, self.x_um, self.y_um, self.intensity):
            yield Localization(int(f), float(x), float(y), float(a))

    def in_frame(self, index: int) -> "LocalizationSet":
        return self.subset(self.frame_index == index)

    def subset(self, mask) -> "LocalizationSet":
        return LocalizationSet(self.frame_index[mask], self.x_um[mask], self.y_um[mask], self.intensity[mask])

    def with_frame_offset(self, offset: int) -> "LocalizationSet":
        return LocalizationSet(self.frame_index + offset, self.x_um, self.y_um, self.intensity)

    def xy(self) -> np.ndarray:
        return np.column_stack([self.x_um, self.y_um])


@dataclass(frozen=True)
class SeedSpec:
    """Counter-based seeding.

    Child streams are derived with numpy's ``SeedSequence`` hash:
    ``SeedSequence(entropy=master_seed, spawn_key=stream_id)``, so a
    substream depends only on ``(master_seed, stream_id)`` and never on the
    order in which streams were requested.
    """

    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise InvalidParameterError("master_seed must fit in an unsigned 64-bit integer")

    def seed_sequence(self, *stream_id: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=tuple(int(s) for s in stream_id))

    def rng(self, *stream_id: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence(*stream_id)))


# fixed stream-id namespaces, one per consumer
STREAM_TRAIN = 1
STREAM_VALID = 2
STREAM_PHANTOM = 3
STREAM_INIT = 4
STREAM_POWER = 5
STREAM_EVAL = 6
