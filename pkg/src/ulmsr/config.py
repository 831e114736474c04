"""Pipeline configuration: one nested, self-describing JSON document.

Every default is either a value reported for the clinical study (wash-out
and subsequencing thresholds, loss weights, ADAM settings, 31.25 um HR
pixel, 25 Hz frame rate) or a declared engineering choice.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field

from .classic import ClassicConfig
from .grid import GridSpec, HR_PIXEL_UM, InvalidParameterError, PsfModel
from .ista import IstaConfig
from .net import InferConfig, NetConfig, TrainConfig
from .preprocess import PreprocessConfig
from .simgen import SampleDistributions


class ConfigError(ValueError):
    """Invalid or unknown configuration key or value."""


@dataclass(frozen=True)
class GridConfig:
    lr_width: int = 32
    lr_height: int = 32
    upsample: int = 4
    hr_pixel_um: float = HR_PIXEL_UM

    def spec(self) -> GridSpec:
        return GridSpec.from_hr_pixel(self.lr_width, self.lr_height, self.upsample, self.hr_pixel_um)


@dataclass(frozen=True)
class SimulateConfig:
    n_frames: int = 6286
    frame_rate_hz: float = 25.0
    psf_sigma_lr: float = 1.0
    phantom: str | None = None


@dataclass(frozen=True)
class EvaluateConfig:
    tolerance_um: float = HR_PIXEL_UM


@dataclass(frozen=True)
class RenderConfig:
    gamma: float = 0.5
    blur_sigma_px: float = 0.0
    accumulate_mode: str = "count"


@dataclass(frozen=True)
class IstaStageConfig:
    lam: float = 0.01
    mu: float | None = None
    max_iters: int = 5000
    tol: float = 1e-8
    nonneg: bool = True
    psf_sigma_lr: float = 1.0
    detect_threshold: float = 0.1

    def solver(self) -> IstaConfig:
        return IstaConfig(self.lam, self.mu, self.max_iters, self.tol, self.nonneg)

    def psf(self) -> PsfModel:
        return PsfModel(self.psf_sigma_lr)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    distributions: SampleDistributions = field(default_factory=SampleDistributions)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    ista: IstaStageConfig = field(default_factory=IstaStageConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    classic: ClassicConfig = field(default_factory=ClassicConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _build(cls, data, "")

    def override(self, section: str, **values) -> "PipelineConfig":
        """Copy with keys of one section replaced (``None`` values are ignored)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        if section == "":
            return _build(type(self), {**self.to_dict(), **values}, "")
        d = self.to_dict()
        if section not in d:
            raise ConfigError(f"unknown config section {section!r}")
        d[section] = {**d[section], **values}
        return _build(type(self), d, "")


SMALL_TRAIN = dict(batch_size=16, epochs=100, steps_per_epoch=50)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(f'{path}{k}' for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        key = f"{path}{name}"
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, key + ".")
        else:
            kwargs[name] = _coerce(tp, value, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(tp, value, key):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{key}: null not allowed")
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, key) if len(inner) == 1 else value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        if len(args) == 2 and args[1] is not Ellipsis and len(value) != 2:
            raise ConfigError(f"{key}: expected 2 values")
        return tuple(_coerce(args[0], v, key) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if tp is str and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string")
    return value


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def published_defaults(cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Resolved values of the settings fixed by the clinical study."""
    return {
        "lambda": cfg.train.lam,
        "gauss_sigma_px": cfg.train.gauss_sigma_px,
        "adam_beta1": cfg.train.adam_beta1,
        "adam_beta2": cfg.train.adam_beta2,
        "learning_rate": cfg.train.lr,
        "batch_size": cfg.train.batch_size,
        "epochs": cfg.train.epochs,
        "n_blocks": cfg.net.n_blocks,
        "corr_threshold": cfg.preprocess.corr_threshold,
        "min_subsequence_len": cfg.preprocess.min_len,
        "hr_pixel_um": cfg.grid.spec().hr_pixel_um,
        "frame_rate_hz": cfg.simulate.frame_rate_hz,
    }
