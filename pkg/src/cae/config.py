"""Flat key-value application config with typed validation.

File format: one ``key = value`` per line, ``#`` comments. Unknown keys are
rejected. CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .losses import DiscriminatorLossWeights, GeneratorLossWeights
from .trainer import TrainConfig

__all__ = ["AppConfig", "ConfigError", "load_config", "save_config"]


class ConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    dataset_root: str = ""
    image_side: int = 64
    channels: int = 1
    code_dim: int = 8
    base_width: int = 32
    class_downsamples: int = 5
    iterations: int = 2000
    batch_pairs: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    flip_probability: float = 0.5
    seed: int = 0
    recon_image_weight: float = 10.0
    recon_class_code_weight: float = 1.0
    recon_indiv_code_weight: float = 1.0
    cycle_weight: float = 10.0
    adversarial_weight: float = 1.0
    classification_weight: float = 1.0
    disc_adversarial_weight: float = 1.0
    disc_classification_weight: float = 2.0
    checkpoint_every: int = 1000
    deterministic: bool = True
    service_port: int = 8000
    classifier: str = "discriminator"  # probe:<path> | cmd:<command> | http:<url> | discriminator
    path_steps: int = 10

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_pairs=self.batch_pairs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            image_side=self.image_side,
            channels=self.channels,
            code_dim=self.code_dim,
            base_width=self.base_width,
            class_downsamples=self.class_downsamples,
            flip_probability=self.flip_probability,
            gen_weights=GeneratorLossWeights(
                recon_image=self.recon_image_weight,
                recon_class_code=self.recon_class_code_weight,
                recon_indiv_code=self.recon_indiv_code_weight,
                cycle=self.cycle_weight,
                adversarial=self.adversarial_weight,
                classification=self.classification_weight,
            ),
            disc_weights=DiscriminatorLossWeights(
                adversarial=self.disc_adversarial_weight,
                classification=self.disc_classification_weight,
            ),
            checkpoint_every=self.checkpoint_every,
            deterministic=self.deterministic,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(AppConfig)}


def _coerce(key: str, raw: str):
    target = _FIELD_TYPES[key]
    raw = raw.strip()
    if target == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if target == "int":
            return int(raw)
        if target == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {target}, got {raw!r}") from None
    return raw


def load_config(path: str | Path, overrides: dict | None = None) -> AppConfig:
    cfg = AppConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def save_config(cfg: AppConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(AppConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
