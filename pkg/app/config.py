from pathlib import Path
from typing import Any, Dict, Literal, Tuple, Union

import yaml
from pydantic import BaseModel, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.utils.errors import ConfigurationError, StorageError


class Settings(BaseSettings):
    """Application settings"""

    # Runtime Settings
    LOG_LEVEL: str = "INFO"
    NUM_THREADS: int = 1

    # Evaluation Settings
    MISS_THRESHOLD: float = 2.0
    LOW_SPEED_THRESHOLD: float = 0.1

    # Encoding Settings
    MAX_MAP_POINTS: int = 10
    HEADING_WINDOW: int = 5
    STATIONARY_THRESHOLD: float = 0.1

    # Benchmark Settings
    BENCH_WARMUP: int = 3
    BENCH_REPEATS: int = 20

    model_config = SettingsConfigDict(env_file=".env", env_prefix="SIMPL_", extra="ignore")


settings = Settings()


class TrainingConfig(BaseModel):
    """Model architecture plus optimization schedule.

    Defaults follow the full-size setup (D=128, 4 layers, 8 heads, K=6, quintic
    curves over a 3 s horizon sampled at 10 Hz).
    """

    # Model Settings
    embed_dim: int = 128
    sft_layers: int = 4
    heads: int = 8
    modes: int = 6
    degree: int = 5
    horizon: int = 30
    history: int = 20
    dt: float = 0.1
    rpe_update: bool = True
    parameterization: Literal["bezier", "monomial", "raw"] = "bezier"
    dtype: Literal["float32", "float64"] = "float32"

    # Loss Settings
    omega: float = 0.8
    margin: float = 0.2
    yaw_loss: bool = True

    # Training Settings
    lr: float = 1e-3
    lr_decay_epoch: int = 40
    lr_decay_factor: float = 0.1
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_consistency(self) -> "TrainingConfig":
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim={self.embed_dim} must be a positive multiple of heads={self.heads}")
        if self.sft_layers < 1:
            raise ValueError("sft_layers must be >= 1")
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.horizon < 1 or self.history < 1:
            raise ValueError("horizon and history must be >= 1")
        if self.parameterization != "raw" and self.horizon < self.degree + 1:
            raise ValueError("horizon must provide at least degree + 1 samples")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.margin < 0 or self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("margin, lr and epochs must be non-negative, batch_size positive")
        return self

    @property
    def tau_max(self) -> float:
        return self.horizon * self.dt

    def architecture(self) -> Dict[str, Any]:
        """Subset of fields that determines the parameter layout of a model"""
        keys = ("embed_dim", "sft_layers", "heads", "modes", "degree", "horizon",
                "history", "dt", "rpe_update", "parameterization", "dtype")
        return {key: getattr(self, key) for key in keys}


class GeneratorConfig(BaseModel):
    """Synthetic lane-following scene generator settings"""

    seed: int = 0
    num_scenes: int = 256
    agents_per_scene: Tuple[int, int] = (1, 4)
    lanes_per_scene: Tuple[int, int] = (1, 3)
    speed_range: Tuple[float, float] = (5.0, 15.0)
    curvature_range: Tuple[float, float] = (0.01, 0.03)
    noise_std: float = 0.2
    history: int = 20
    horizon: int = 30
    dt: float = 0.1
    arc_fraction: float = 0.4
    lane_spacing: float = 1.0
    region_size: float = 200.0

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_ranges(self) -> "GeneratorConfig":
        for name in ("agents_per_scene", "lanes_per_scene", "speed_range", "curvature_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} lower bound exceeds upper bound")
        if self.agents_per_scene[0] < 1 or self.lanes_per_scene[0] < 1:
            raise ValueError("every scene needs at least one agent and one lane")
        if self.speed_range[0] <= 0 or self.curvature_range[0] < 0:
            raise ValueError("speeds must be positive and curvatures non-negative")
        if self.noise_std < 0 or self.dt <= 0 or self.history < 2 or self.horizon < 1:
            raise ValueError("noise_std >= 0, dt > 0, history >= 2, horizon >= 1 required")
        if not 0.0 <= self.arc_fraction <= 1.0:
            raise ValueError("arc_fraction must lie in [0, 1]")
        travel = self.speed_range[1] * (self.history + self.horizon) * self.dt
        if self.lane_length > self.region_size or travel > self.region_size:
            raise ValueError("speed * (H + T) * dt must keep agents inside the region")
        return self

    @property
    def lane_length(self) -> float:
        """Lanes are at least twice the longest future displacement plus the history span"""
        v_max = self.speed_range[1]
        return 2.0 * v_max * self.horizon * self.dt + v_max * self.history * self.dt


def _load_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise StorageError(f"config file not found: {path}") from e
    except OSError as e:
        raise StorageError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise StorageError(f"config file {path} is not valid YAML/JSON: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return raw


def build_training_config(source: str = "defaults", **fields: Any) -> TrainingConfig:
    """Validated training config; None-valued fields keep their defaults"""
    try:
        return TrainingConfig(**{key: value for key, value in fields.items() if value is not None})
    except ValidationError as e:
        raise ConfigurationError(f"invalid training config {source}: {e}") from e


def load_training_config(path: Union[str, Path], **overrides: Any) -> TrainingConfig:
    """Read and validate a training config file"""
    raw = _load_mapping(path)
    raw.update({key: value for key, value in overrides.items() if value is not None})
    return build_training_config(str(path), **raw)


def build_generator_config(source: str = "defaults", **fields: Any) -> GeneratorConfig:
    try:
        return GeneratorConfig(**{key: value for key, value in fields.items() if value is not None})
    except ValidationError as e:
        raise ConfigurationError(f"invalid generator config {source}: {e}") from e


def load_generator_config(path: Union[str, Path], **overrides: Any) -> GeneratorConfig:
    """Read and validate a generator config file"""
    raw = _load_mapping(path)
    raw.update({key: value for key, value in overrides.items() if value is not None})
    return build_generator_config(str(path), **raw)
