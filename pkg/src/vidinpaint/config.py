"""Experiment configuration: an INI-style file of flat keys grouped in sections."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .masks import StrokeMaskConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    video: str = ""
    mask: str = ""
    output: str = "out"
    ground_truth: str = ""
    # schedule
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # plan
    interval_length: int = 50
    total_iterations: int = 40_000
    # model
    channels: int = 32
    mixed_precision: bool = False
    # masks
    masks: StrokeMaskConfig = field(default_factory=StrokeMaskConfig)
    # training
    clip_length: int = 20
    learning_rate: float = 1e-4
    seed: int | None = None
    checkpoint_every: int = 1
    retain_checkpoints: bool = False
    # inference
    inference_window: int | None = None
    sample_batch: int = 8
    # metrics
    psnr: bool = True
    ssim: bool = True
    diversity: bool = True
    plugins: tuple = ()

    def train_config(self) -> TrainConfig:
        return TrainConfig(channels=self.channels, clip_len=self.clip_length,
                           learning_rate=self.learning_rate, masks=self.masks,
                           mixed_precision=self.mixed_precision,
                           inference_window=self.inference_window)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def validate(self, need_inputs: bool = True) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("training.seed is required")
        if need_inputs:
            for key in ("video", "mask"):
                value = getattr(self, key)
                if not value or not Path(value).is_dir():
                    raise ConfigError(f"paths.{key} does not exist: {value!r}")
            if self.ground_truth and not Path(self.ground_truth).is_dir():
                raise ConfigError(f"paths.ground_truth does not exist: {self.ground_truth!r}")
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ConfigError("schedule needs 0 < beta_start < beta_end < 1")
        if self.timesteps < 2:
            raise ConfigError("schedule.timesteps must be >= 2")
        if not 1 <= self.interval_length <= self.timesteps:
            raise ConfigError("plan.interval_length must lie in [1, timesteps]")
        if self.total_iterations < 0 or self.channels < 1 or self.clip_length < 1:
            raise ConfigError("iterations, channels and clip_length must be positive")
        if self.checkpoint_every < 1:
            raise ConfigError("training.checkpoint_every must be >= 1")
        return self


# section -> [(key, attribute, kind)]
_MASK_KEYS = [("strokes", "strokes_per_clip", int), ("brush_width", "brush_width", int),
              ("walk_steps", "walk_steps", int), ("segment_length", "segment_length", int),
              ("drift_per_frame", "drift_per_frame", float)]

LAYOUT = {
    "paths": [("video", str), ("mask", str), ("output", str), ("ground_truth", str)],
    "schedule": [("timesteps", int), ("beta_start", float), ("beta_end", float)],
    "plan": [("interval_length", int), ("total_iterations", int)],
    "model": [("channels", int), ("mixed_precision", bool)],
    "training": [("clip_length", int), ("learning_rate", float), ("seed", int),
                 ("checkpoint_every", int), ("retain_checkpoints", bool)],
    "inference": [("inference_window", int), ("sample_batch", int)],
    "metrics": [("psnr", bool), ("ssim", bool), ("diversity", bool), ("plugins", tuple)],
}


def _parse(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if kind is str:
            return raw
        if raw == "":
            return None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def from_parser(parser: configparser.ConfigParser, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    values = {}
    known = set(LAYOUT) | {"masks"}
    unknown = [s for s in parser.sections() if s not in known]
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    for section, keys in LAYOUT.items():
        if not parser.has_section(section):
            continue
        allowed = {k for k, _ in keys}
        extra = set(parser[section]) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
        for key, kind in keys:
            if key in parser[section]:
                values[key] = _parse(kind, parser[section][key], f"{section}.{key}")
    if parser.has_section("masks"):
        sec = parser["masks"]
        mask_values = dataclasses.asdict(cfg.masks)
        allowed = {f"{k}_{end}" for k, _, _ in _MASK_KEYS for end in ("min", "max")}
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [masks]: {sorted(extra)}")
        for key, attr, kind in _MASK_KEYS:
            lo, hi = mask_values[attr]
            if f"{key}_min" in sec:
                lo = _parse(kind, sec[f"{key}_min"], f"masks.{key}_min")
            if f"{key}_max" in sec:
                hi = _parse(kind, sec[f"{key}_max"], f"masks.{key}_max")
            mask_values[attr] = (lo, hi)
        try:
            values["masks"] = StrokeMaskConfig(**mask_values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return dataclasses.replace(cfg, **values)


def to_parser(cfg: ExperimentConfig) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in LAYOUT.items():
        parser[section] = {key: _format(getattr(cfg, key)) for key, _ in keys}
    parser["masks"] = {}
    for key, attr, _ in _MASK_KEYS:
        lo, hi = getattr(cfg.masks, attr)
        parser["masks"][f"{key}_min"] = _format(lo)
        parser["masks"][f"{key}_max"] = _format(hi)
    return parser


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return from_parser(parser, base)


def dumps(cfg: ExperimentConfig) -> str:
    import io
    buf = io.StringIO()
    to_parser(cfg).write(buf)
    return buf.getvalue()


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text(), base)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path


TOY_MASKS = StrokeMaskConfig(strokes_per_clip=(1, 3), brush_width=(4, 12), walk_steps=(3, 8),
                             segment_length=(4, 16), drift_per_frame=(0.0, 1.5))

PRESETS = {
    "texture": ExperimentConfig(seed=0),
    "object-removal": ExperimentConfig(total_iterations=200_000, seed=0),
    # desk scale: 4 intervals x 500 iterations; betas scaled by 1000 / T so alpha_bar[T] stays ~0.
    # The short budget needs a larger step size than the full-scale 1e-4 to overfit the texture.
    "toy": ExperimentConfig(timesteps=200, beta_start=5e-4, beta_end=0.1, interval_length=50,
                            total_iterations=2000, channels=16, clip_length=16, masks=TOY_MASKS,
                            learning_rate=5e-4,
                            mixed_precision=True, retain_checkpoints=True, seed=0),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return dataclasses.replace(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
