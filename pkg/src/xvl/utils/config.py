"""Configuration loading from environment and a flat YAML file."""

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from xvl.utils.errors import ConfigError


@dataclass
class DataConfig:
    """Synthetic corpus generation settings."""

    n_studies: int = 2000
    num_classes: int = 6
    multi_finding_rate: float = 0.25
    train_split: float = 0.8
    val_split: float = 0.1
    data_seed: int = 0


@dataclass
class ModelConfig:
    """Architecture dimensions (desk scale by default)."""

    image_size: int = 32
    patch_size: int = 8
    dim: int = 128
    embed_dim: int = 64
    vision_layers: int = 2
    text_layers: int = 2
    fusion_layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    dropout: float = 0.0
    max_len: int = 120
    sentence_max_len: int = 32
    temp_init: float = 0.07
    temp_min: float = 0.01
    temp_max: float = 0.5
    positional: bool = True
    norm_eps: float = 1e-12
    # Pixel statistics of the synthetic corpus, used to standardize images
    pixel_mean: float = 0.13
    pixel_std: float = 0.15

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass
class TrainConfig:
    """Optimization settings."""

    epochs: int = 5
    warmup_epochs: int = 2
    batch_size: int = 10
    lr_init: float = 1e-5
    lr_peak: float = 1e-4
    decay: str = "cosine"
    weight_decay: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    lambda_dist: float = 0.4
    dist_warmup_epochs: int = 1
    momentum: float = 0.995
    sim_threshold: float = 0.9
    queue_size: int = 4096
    mask_rate: float = 0.15
    seed: int = 0
    deterministic: bool = True
    train_fraction: float = 1.0
    checkpoint_every: int = 0
    max_steps: int = 0
    use_mlm: bool = True
    use_distillation: bool = True
    use_sentence_contrastive: bool = True
    use_similarity_constraint: bool = True
    use_imc: bool = True

    def validate(self) -> tuple[bool, list[str]]:
        """Check ranges and orderings."""
        errors = []
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            errors.append("warmup_epochs must be in [0, epochs]")
        if self.batch_size < 2:
            errors.append("batch_size must be >= 2")
        if not 0 < self.lr_init <= self.lr_peak:
            errors.append("need 0 < lr_init <= lr_peak")
        if self.decay not in ("cosine", "none"):
            errors.append("decay must be 'cosine' or 'none'")
        if not 0.0 <= self.lambda_dist <= 1.0:
            errors.append("lambda_dist must be in [0, 1]")
        if self.dist_warmup_epochs < 0:
            errors.append("dist_warmup_epochs must be >= 0")
        if not 0.0 < self.momentum < 1.0:
            errors.append("momentum must be in (0, 1)")
        if self.queue_size < 0:
            errors.append("queue_size must be >= 0")
        if not 0.0 <= self.mask_rate <= 1.0:
            errors.append("mask_rate must be in [0, 1]")
        if not 0.0 < self.train_fraction <= 1.0:
            errors.append("train_fraction must be in (0, 1]")
        return len(errors) == 0, errors


@dataclass
class EvalConfig:
    """Zero-shot evaluation and statistics settings."""

    n_bootstrap: int = 1000
    alpha: float = 0.05
    eval_seed: int = 0
    score_fn: str = "itm"
    theta_corr: float = 0.5
    gradcam_layer: int = -1
    error_p: float = 0.05
    eval_batch_size: int = 64


SECTIONS = ("data", "model", "train", "eval")

ENV_OVERRIDES = {
    "XVL_SEED": "seed",
    "XVL_EPOCHS": "epochs",
    "XVL_BATCH_SIZE": "batch_size",
    "XVL_QUEUE_SIZE": "queue_size",
}


@dataclass
class XVLConfig:
    """Full configuration: four flat sections plus runtime flags."""

    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # Runtime
    config_path: Path | None = None
    verbose: bool = False
    dry_run: bool = False

    def _owner(self, key: str) -> Any:
        for section in SECTIONS:
            obj = getattr(self, section)
            if key in {f.name for f in fields(obj)}:
                return obj
        raise ConfigError(f"Unknown configuration key: {key}")

    def get(self, key: str) -> Any:
        return getattr(self._owner(key), key)

    def set(self, key: str, value: Any) -> None:
        """Set a flat key, coercing strings to the field's type."""
        owner = self._owner(key)
        current = getattr(owner, key)
        setattr(owner, key, _coerce(key, value, current))

    def update(self, values: dict[str, Any]) -> None:
        for key, value in values.items():
            if value is not None:
                self.set(key, value)

    def flatten(self) -> dict[str, Any]:
        """Flat key/value snapshot (the config file format)."""
        flat: dict[str, Any] = {}
        for section in SECTIONS:
            flat.update(asdict(getattr(self, section)))
        return flat

    def to_dict(self) -> dict:
        return {section: asdict(getattr(self, section)) for section in SECTIONS}

    def dump(self, path: Path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.flatten(), f, sort_keys=True)

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "XVLConfig":
        config = cls()
        config.update(flat)
        return config


def _coerce(key: str, value: Any, current: Any) -> Any:
    if isinstance(current, bool):
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return bool(value)
    try:
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: cannot convert {value!r} to {type(current).__name__}") from e
    return str(value)


def parse_override(text: str) -> tuple[str, str]:
    """Split a `key=value` override."""
    if "=" not in text:
        raise ConfigError(f"Override must look like key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip().replace("-", "_"), value.strip()


def load_config(config_path: Path | None = None) -> XVLConfig:
    """Load configuration from an optional YAML file and environment variables.

    Configuration is loaded in order (later overrides earlier):
    1. Default values
    2. ~/.xvl/config.yaml, or the explicit config_path
    3. Environment variables (XVL_*)

    CLI flags are applied afterwards by the commands.
    """
    config = XVLConfig()

    if config_path is None:
        default_path = Path.home() / ".xvl" / "config.yaml"
        if default_path.exists():
            config_path = default_path

    if config_path and config_path.exists():
        config.config_path = config_path
        with open(config_path) as f:
            yaml_config = yaml.safe_load(f) or {}
        if not isinstance(yaml_config, dict):
            raise ConfigError(f"{config_path}: expected a flat key/value mapping")
        for key, value in yaml_config.items():
            if isinstance(value, dict):
                raise ConfigError(f"{config_path}: nested section {key!r} is not allowed")
            config.set(key, value)

    for env_name, key in ENV_OVERRIDES.items():
        if env_value := os.getenv(env_name):
            config.set(key, env_value.strip())

    return config
