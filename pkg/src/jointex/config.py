"""Flat JSON run configuration.

Every key has a default except ``train_path`` and ``dev_path``, which
``train`` requires. Unknown keys are rejected. Seed precedence is
command-line flag, then the config file, then ``JOINTEX_SEED``, then 0.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import ModelConfig, normalize_mode
from .trainer import AdvConfig, TrainConfig

SEED_ENV = "JOINTEX_SEED"
REQUIRED_FOR_TRAIN = ("train_path", "dev_path")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    embeddings_path: str | None = None
    output_dir: str = "runs/default"
    checkpoint_name: str = "best.ckpt"
    # model
    mode: str = "NER-CRF"
    word_dim: int = 50
    char_dim: int = 25
    char_hidden: int = 25
    hidden: int = 64
    label_dim: int = 25
    rel_hidden: int = 64
    dropout: float = 0.1
    constrain_bio: bool = True
    rel_threshold: float = 0.5
    label_source: str = "predicted"
    train_word_embeddings: bool = True
    # trainer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 30
    max_epochs: int = 100
    batch_size: int = 1
    eval_mode: str = "S"
    eval_train: bool = False
    target_f1: float | None = None
    seed: int | None = None
    # adversarial training
    adv: bool = False
    alpha: float = 1e-3
    norm_scope: str = "sentence"

    def validate(self) -> "RunConfig":
        try:
            normalize_mode(self.mode)
            self.model_config()
            self.adv_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for key in ("patience", "max_epochs", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval_mode not in ("S", "B", "R"):
            raise ConfigError(f"eval_mode must be S, B or R, got {self.eval_mode!r}")
        return self

    def require_corpora(self) -> None:
        for key in REQUIRED_FOR_TRAIN:
            if not getattr(self, key):
                raise ConfigError(f"missing required config key '{key}'")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            mode=self.mode, word_dim=self.word_dim, char_dim=self.char_dim, char_hidden=self.char_hidden,
            hidden=self.hidden, label_dim=self.label_dim, rel_hidden=self.rel_hidden, dropout=self.dropout,
            constrain_bio=self.constrain_bio, rel_threshold=self.rel_threshold, label_source=self.label_source,
            train_word_embeddings=self.train_word_embeddings,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps, max_epochs=self.max_epochs,
            patience=self.patience, batch_size=self.batch_size, eval_mode=self.eval_mode,
            eval_train=self.eval_train, target_f1=self.target_f1, seed=self.effective_seed,
        )

    def adv_config(self) -> AdvConfig:
        return AdvConfig(enabled=self.adv, alpha=self.alpha, norm_scope=self.norm_scope)

    @property
    def effective_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get(SEED_ENV)
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        return 0

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.output_dir) / self.checkpoint_name

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self, path) -> None:
        """Write the effective config (seed resolved) as JSON."""
        d = self.to_dict()
        d["seed"] = self.effective_seed
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    t = _FIELD_TYPES[key]
    if value is None:
        if "None" in t:
            return None
        raise ConfigError(f"config key '{key}' may not be null")
    if t.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{key}' must be a boolean")
        return value
    if t.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{key}' must be an integer")
        return value
    if t.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"config key '{key}' must be a string")
    return value


def config_from_dict(d: dict, base_dir=None) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in d.items()}
    cfg = RunConfig(**values)
    if base_dir is not None:
        for key in ("train_path", "dev_path", "test_path", "embeddings_path", "output_dir"):
            v = getattr(cfg, key)
            if v and not Path(v).is_absolute():
                setattr(cfg, key, os.path.normpath(Path(base_dir) / v))
    return cfg.validate()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config; relative paths resolve against the config file's directory."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return config_from_dict(raw, base_dir=p.resolve().parent)
