"""Run configuration: dataclasses, INI-style serialization, dotted-key overrides.

An empty config trains the synthetic ellipsoid setup with the published
optimizer hyperparameters; every field can be overridden from a file or
from ``section.key=value`` strings.
"""

from __future__ import annotations

import dataclasses
import io
import math
from configparser import ConfigParser
from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass
class LossWeights:
    """Scalar weights applied to the individual training loss terms."""

    image_r1: float = 10.0
    pose: float = 15.0
    image_mask_gan: float = 0.5
    image_mask_r1: float = 10.0
    eikonal: float = 0.1
    minimal_surface: float = 0.05


@dataclass
class ModelConfig:
    regions: int = 3
    noise_dim: int = 256
    style_dim: int = 128
    geo_hidden_dim: int = 64
    geo_feature_dim: int = 64
    tex_hidden_dim: int = 64
    tex_feature_dim: int = 64
    first_omega: float = 30.0
    density_beta_init: float = 0.1


@dataclass
class CameraConfig:
    """Orbit camera prior: look-at origin, y-up, fixed radius."""

    radius: float = 1.0
    fov_degrees: float = 12.0
    near_scale: float = 0.88
    far_scale: float = 1.12
    # Pose prior. "gaussian" truncates at two standard deviations.
    pose_prior: str = "uniform"
    azimuth_std: float = 0.3
    elevation_std: float = 0.15
    azimuth_range: float = 0.45
    elevation_range: float = 0.2

    @property
    def fov(self) -> float:
        return math.radians(self.fov_degrees)

    @property
    def near(self) -> float:
        return self.near_scale * self.radius

    @property
    def far(self) -> float:
        return self.far_scale * self.radius


@dataclass
class DataConfig:
    dataset: str = "toy"  # "toy" or "celeba"
    root: str = ""
    toy_seed: int = 0
    toy_size: int = 128


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)

    lr_generator: float = 2e-5
    lr_image_disc: float = 2e-4
    lr_image_mask_disc: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.9
    batch_size: int = 4
    total_steps: int = 2000
    resolution: int = 32
    samples_per_ray: int = 18
    eikonal_points: int = 512
    disc_base_channels: int = 32
    disc_max_channels: int = 256
    seed: int = 0
    device: str = "cpu"
    checkpoint_every: int = 500
    log_every: int = 1

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_ini(Path(path).read_text())

    def to_ini(self) -> str:
        parser = ConfigParser()
        for section, obj in self._sections():
            parser.add_section(section)
            for name in _field_types(obj):
                parser.set(section, name, repr(getattr(obj, name)))
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "TrainConfig":
        parser = ConfigParser()
        parser.read_string(text)
        config = cls()
        for section in parser.sections():
            target = config._section_object(section)
            for key, raw in parser.items(section):
                _assign(target, section, key, raw)
        return config

    def apply_overrides(self, overrides: list[str]) -> None:
        """Apply ``section.key=value`` strings in order."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            dotted, raw = item.split("=", 1)
            parts = dotted.strip().split(".")
            if len(parts) == 1:
                section, key = "train", parts[0]
            elif len(parts) == 2:
                section, key = parts
            else:
                raise ConfigError(f"override key {dotted!r} has too many components")
            target = self._section_object(section)
            _assign(target, section, key, raw.strip())

    def _sections(self):
        return [
            ("model", self.model),
            ("camera", self.camera),
            ("loss", self.loss),
            ("data", self.data),
            ("train", self),
        ]

    def _section_object(self, section: str):
        for name, obj in self._sections():
            if name == section:
                return obj
        raise ConfigError(f"unknown config section {section!r}")


class ConfigError(ValueError):
    pass


_SCALAR_FIELDS = {}


def _field_types(obj):
    key = type(obj)
    if key not in _SCALAR_FIELDS:
        _SCALAR_FIELDS[key] = {
            f.name: f.type for f in fields(obj) if f.type in ("int", "float", "str", "bool", int, float, str, bool)
        }
    return _SCALAR_FIELDS[key]


def _assign(target, section: str, key: str, raw: str) -> None:
    types = _field_types(target)
    if key not in types:
        raise ConfigError(f"unknown config key {section}.{key}")
    kind = types[key]
    kind = {int: "int", float: "float", str: "str", bool: "bool"}.get(kind, kind)
    raw = raw.strip().strip("'\"")
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
        elif kind == "bool":
            if raw.lower() not in ("true", "false", "0", "1"):
                raise ValueError(raw)
            value = raw.lower() in ("true", "1")
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
    setattr(target, key, value)


def replace(config: TrainConfig, **kwargs) -> TrainConfig:
    """Shallow-copy a config with top-level field replacements."""
    clone = TrainConfig.from_ini(config.to_ini())
    for key, value in kwargs.items():
        setattr(clone, key, value)
    return clone
