"""Model presets and the flat dotted-key training configuration."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelPreset:
    name: str
    image_size: int
    squeeze: int            # codec space-to-depth factor; style has 3*squeeze^2 channels
    text_len: int           # T
    text_dim: int           # D (word and sentence feature width)
    z_dim: int
    cond_dim: int
    sg_hidden: tuple[int, int]
    ca_channels: int        # C1
    ca_side: int            # H1 = W1
    sa_channels: int        # C2
    sa_side: int            # H2 = W2
    disc_channels: tuple[int, ...]   # image trunk, one entry per stride-2 block
    disc_style_hidden: tuple[int, ...]
    disc_joint: int

    @property
    def style_channels(self) -> int:
        return 3 * self.squeeze ** 2

    @property
    def feature_side(self) -> int:
        return self.image_size // self.squeeze


PRESETS: dict[str, ModelPreset] = {
    "paper": ModelPreset(
        name="paper", image_size=256, squeeze=4, text_len=18, text_dim=256, z_dim=100,
        cond_dim=100, sg_hidden=(256, 128), ca_channels=128, ca_side=16, sa_channels=256,
        sa_side=8, disc_channels=(32, 64, 128, 256, 256, 256), disc_style_hidden=(256, 128),
        disc_joint=128),
    "desk": ModelPreset(
        name="desk", image_size=64, squeeze=4, text_len=12, text_dim=64, z_dim=100,
        cond_dim=100, sg_hidden=(128, 64), ca_channels=32, ca_side=8, sa_channels=64,
        sa_side=4, disc_channels=(16, 32, 64, 64), disc_style_hidden=(64, 64), disc_joint=32),
    # gradient-check scale: 12 style channels, 8x8 images
    "tiny": ModelPreset(
        name="tiny", image_size=8, squeeze=2, text_len=4, text_dim=8, z_dim=8, cond_dim=8,
        sg_hidden=(16, 16), ca_channels=8, ca_side=2, sa_channels=8, sa_side=1,
        disc_channels=(8,), disc_style_hidden=(16,), disc_joint=8),
}


def get_preset(name: str) -> ModelPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _key(name: str, default, help: str):
    return field(default=default, metadata={"key": name, "help": help})


@dataclass
class TrainConfig:
    preset: str = _key("model.preset", "desk", "model size preset (paper|desk|tiny)")
    variant: str = _key("model.variant", "full", "full two-stage model, or 'stage1' (no second stage)")
    mixing_seed: int = _key("codec.mixing_seed", 0, "seed of the codec's orthogonal channel mixing")
    batch_size: int = _key("trainer.batch_size", 4, "batch size B")
    lambda_style: float = _key("trainer.lambda", 0.1, "weight of the Pearson style loss")
    lr_g: float = _key("trainer.lr_g", 0.0002, "generator learning rate")
    lr_d: float = _key("trainer.lr_d", 0.0002, "discriminator learning rate")
    lr_t: float = _key("trainer.lr_t", 0.002, "text encoder learning rate")
    beta1: float = _key("trainer.beta1", 0.5, "Adam beta1")
    beta2: float = _key("trainer.beta2", 0.999, "Adam beta2")
    epochs: int = _key("trainer.epochs", 160, "training epochs")
    max_steps: int = _key("trainer.max_steps", 0, "stop after this many steps (0: run all epochs)")
    seed: int = _key("trainer.seed", 1, "master seed for all random streams")
    checkpoint_every: int = _key("trainer.checkpoint_every", 100, "steps between checkpoints (0: final only)")
    eval_every: int = _key("trainer.eval_every", 50, "steps between evaluations (0: never)")
    manifest: str = _key("data.manifest", "", "training manifest (JSON lines)")
    val_manifest: str = _key("data.val_manifest", "", "validation manifest; empty means the training manifest")
    augment: bool = _key("data.augment", True, "random crop/flip on the training split")
    out_dir: str = _key("output.dir", "runs/default", "directory for checkpoints, traces and samples")

    @property
    def model(self) -> ModelPreset:
        return get_preset(self.preset)

    # -- dotted-key round trip -----------------------------------------------
    @classmethod
    def keys(cls) -> dict[str, dataclasses.Field]:
        return {f.metadata["key"]: f for f in fields(cls)}

    def to_flat(self) -> dict[str, Any]:
        return {f.metadata["key"]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "TrainConfig":
        cfg = cls()
        cfg.update(flat)
        return cfg

    def update(self, flat: dict[str, Any]) -> None:
        known = self.keys()
        for key, value in flat.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            f = known[key]
            setattr(self, f.name, _coerce(value, type(f.default), key))
        if self.variant not in ("full", "stage1"):
            raise ConfigError(f"model.variant must be 'full' or 'stage1', got {self.variant!r}")
        get_preset(self.preset)

    def apply_overrides(self, overrides: list[str]) -> None:
        flat = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            k, v = item.split("=", 1)
            flat[k.strip()] = v.strip()
        self.update(flat)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            flat = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: config must be a JSON object of dotted keys")
        return cls.from_flat(flat)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n")


def _coerce(value, typ, key):
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    try:
        if typ is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {typ.__name__}") from None
