"""Learned super-resolution ultrasound localization microscopy."""

from .grid import (
    DegenerateInputError,
    FrameKind,
    FrameSequence,
    GridSpec,
    InvalidParameterError,
    Localization,
    LocalizationSet,
    PsfModel,
    SeedSpec,
    lr_to_hr_coords,
    hr_to_lr_coords,
    sample_psf,
)

__version__ = "0.1.0"
