"""Flat `key = value` run configuration: parsing, defaults, validation.

The format is line-based: one `key = value` per line, `#` starts a comment,
blank lines are ignored.  Unknown keys are rejected; missing keys take the
documented defaults.  The fingerprint of a configuration is the SHA-256 of
its canonical serialization (every key, sorted, defaults included), so two
configs that resolve to the same effective values share a fingerprint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # corpus selection
    corpus: str = "synthetic"            # synthetic | idx
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    classes: int = 4
    train_per_class: int = 400
    test_per_class: int = 100
    image_shape: tuple[int, int, int] = (1, 16, 16)
    # style source
    style_image: str = ""                # path; empty -> procedural texture
    style_kind: str = "stripes"
    style_size: int = 64
    style_seed: int = 7
    style_patch_count: int = 256
    forged_style_image: str = ""
    forged_style_kind: str = "blobs"
    forged_style_seed: int = 13
    # optimization
    seed: int = 0
    batch_size: int = 32
    learning_rate: float = 0.05
    learning_rate_generator: float = 0.02
    momentum: float = 0.9
    optimizer: str = "momentum"
    epochs_featurenet: int = 6
    epochs_generator: int = 12
    epochs_baseline: int = 8
    epochs_license: int = 16
    # license loss
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.25
    margin: float = 1.0
    phi: float = 1.0
    cosine_epsilon: float = 1e-8
    gram_layers: tuple[int, ...] = (0, 1, 2)
    # generator loss
    content_weight: float = 1.0
    style_weight: float = 40.0
    tv_weight: float = 0.5
    content_layer: int = 1
    style_layers: tuple[int, ...] = (0, 1, 2)
    # attack knobs
    leak_size: int = 64
    finetune_budget: int = 200
    finetune_learning_rate: float = 0.01
    # artifact inputs produced by earlier commands
    featurenet_checkpoint: str = ""
    generator_checkpoint: str = ""
    forged_generator_checkpoint: str = ""
    baseline_checkpoint: str = ""
    license_checkpoint: str = ""
    licensed_train_data: str = ""        # directory holding licensed_train_*.npy
    licensed_test_data: str = ""

    def validate(self) -> None:
        if self.corpus not in ("synthetic", "idx"):
            raise ConfigError(f"corpus must be 'synthetic' or 'idx', got {self.corpus!r}")
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("per-class counts must be >= 0")
        c, h, w = self.image_shape
        if c < 1 or h < 8 or w < 8:
            raise ConfigError("image_shape needs >= 1 channel and spatial dims >= 8")
        if self.style_kind not in ("stripes", "blobs", "checker", "rings"):
            raise ConfigError(f"unknown style_kind {self.style_kind!r}")
        if self.forged_style_kind not in ("stripes", "blobs", "checker", "rings"):
            raise ConfigError(f"unknown forged_style_kind {self.forged_style_kind!r}")
        if self.style_size < max(h, w):
            raise ConfigError("style_size must cover the image shape")
        if self.style_patch_count < 1:
            raise ConfigError("style_patch_count must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.learning_rate_generator <= 0 \
                or self.finetune_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.optimizer not in ("momentum", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for name in ("epochs_featurenet", "epochs_generator", "epochs_baseline",
                     "epochs_license", "leak_size", "finetune_budget"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("weights must be non-negative")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.phi < 0:
            raise ConfigError("phi must be non-negative")
        if self.cosine_epsilon <= 0:
            raise ConfigError("cosine_epsilon must be positive")
        if self.content_weight < 0 or self.style_weight < 0 or self.tv_weight < 0:
            raise ConfigError("weights must be non-negative")
        if not 0 <= self.content_layer <= 2:
            raise ConfigError("content_layer must be one of 0, 1, 2")
        for name in ("gram_layers", "style_layers"):
            layers = getattr(self, name)
            if not layers or any(not 0 <= l <= 2 for l in layers):
                raise ConfigError(f"{name} must be a non-empty subset of 0,1,2")
        for name in _PATH_KEYS:
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} points to a missing path: {value}")


_PATH_KEYS = ("idx_train_images", "idx_train_labels", "idx_test_images",
              "idx_test_labels", "style_image", "forged_style_image",
              "featurenet_checkpoint", "generator_checkpoint",
              "forged_generator_checkpoint", "baseline_checkpoint",
              "license_checkpoint", "licensed_train_data", "licensed_test_data")


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if name == "image_shape":
            parts = [int(p) for p in raw.lower().split("x")]
            if len(parts) != 3:
                raise ValueError("expected CxHxW")
            return tuple(parts)
        # remaining tuples are comma-separated layer indices
        return tuple(int(p) for p in raw.split(",") if p.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"malformed value for {name}: {raw!r} ({exc})") from exc


def _field_types() -> dict[str, type]:
    types: dict[str, type] = {}
    for f in fields(RunConfig):
        if f.type.startswith("tuple"):
            types[f.name] = tuple
        else:
            types[f.name] = {"int": int, "float": float, "str": str}[f.type]
    return types


_FIELD_TYPES = _field_types()


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, _FIELD_TYPES[key], raw))
    cfg.validate()
    return cfg


def parse_config(path) -> RunConfig:
    """Parse and validate a config file; missing keys take the defaults."""
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def apply_override(cfg: RunConfig, key: str, raw: str) -> None:
    """Apply one `key=value` override (same coercion rules as the file)."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    setattr(cfg, key, _coerce(key, _FIELD_TYPES[key], raw))


def config_text(cfg: RunConfig) -> str:
    """Canonical serialization: every key, sorted, one per line."""
    lines = []
    for name in sorted(_FIELD_TYPES):
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            if name == "image_shape":
                value = "x".join(str(v) for v in value)
            else:
                value = ",".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def config_fingerprint(cfg: RunConfig) -> str:
    """Hex digest identifying the effective configuration."""
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()[:16]
