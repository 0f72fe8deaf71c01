"""JSON experiment configuration with strict schema validation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .layers import LayerInit
from .network import METHODS, Architecture
from .training import TrainConfig

DATASETS = ("mnist", "logreg", "clusters")


class ConfigError(ValueError):
    """The configuration file is missing, unreadable or invalid."""


_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "method": {"enum": list(METHODS)},
        "dataset": {"enum": list(DATASETS)},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_images": {"type": "string"},
                "train_labels": {"type": "string"},
                "val_images": {"type": "string"},
                "val_labels": {"type": "string"},
                "limit": {"type": ["integer", "null"], "minimum": 1},
                "n": _POS_INT,
                "samples_per_class": _POS_INT,
                "test_per_class": _POS_INT,
            },
        },
        "hidden": {"type": "array", "items": _POS_INT},
        "prior_sigma": _POS_NUM,
        "prior_alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "flow_length": _POS_INT,
        "flow_hidden": {"type": "array", "items": _POS_INT, "minItems": 1},
        "p_drop": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "base_mean": {"type": "number"},
        "base_sigma": _POS_NUM,
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "weight_std": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "sigma": _POS_NUM,
                "logit_low": {"type": "number"},
                "logit_high": {"type": "number"},
                "bias_sigma": _POS_NUM,
            },
        },
        "epochs": _NONNEG_INT,
        "batch_size": _POS_INT,
        "learning_rate": _POS_NUM,
        "mc_samples": _POS_INT,
        "checkpoint_every": _NONNEG_INT,
        "eval_samples": _POS_INT,
        "eval_mode": {"enum": ["full", "median", "lrt"]},
        "repetitions": _POS_INT,
        "seed": _NONNEG_INT,
        "output_dir": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    method: str = "lbbnn-flow"
    dataset: str = "mnist"
    data: dict = field(default_factory=dict)
    hidden: list[int] = field(default_factory=lambda: [400, 600])
    prior_sigma: float = 1.0
    prior_alpha: float = 0.1
    flow_length: int = 2
    flow_hidden: list[int] = field(default_factory=lambda: [250, 250])
    p_drop: float = 0.5
    base_mean: float = 0.0
    base_sigma: float = 1.0
    init: dict = field(default_factory=dict)
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 1e-3
    mc_samples: int = 1
    checkpoint_every: int = 0
    eval_samples: int = 100
    eval_mode: str = "full"
    repetitions: int = 1
    seed: int = 0
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        validate(d)
        return cls(**d)

    def replace(self, **changes) -> "ExperimentConfig":
        merged = {**self.to_dict(), **{k: v for k, v in changes.items() if v is not None}}
        return ExperimentConfig.from_dict(merged)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def likelihood(self) -> str:
        return "categorical" if self.dataset != "logreg" else "bernoulli"

    def architecture(self, n_in: int, n_out: int) -> Architecture:
        return Architecture(n_in=n_in, hidden=tuple(self.hidden), n_out=n_out, method=self.method,
                            prior_sigma=self.prior_sigma, prior_alpha=self.prior_alpha,
                            flow_length=self.flow_length, flow_hidden=tuple(self.flow_hidden),
                            p_drop=self.p_drop, init=LayerInit(**self.init),
                            base_mean=self.base_mean, base_sigma=self.base_sigma)

    def train_config(self, seed: int, checkpoint_path: str | None = None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed,
                           likelihood=self.likelihood, mc_samples=self.mc_samples,
                           checkpoint_every=self.checkpoint_every,
                           checkpoint_path=checkpoint_path)


def validate(d) -> None:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    init = d.get("init", {})
    if init.get("logit_low", -0.5) > init.get("logit_high", 0.5):
        raise ConfigError("invalid config at init: logit_low exceeds logit_high")


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a JSON config; keys it omits keep the values of ``base``."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    validate(raw)
    defaults = (base or ExperimentConfig()).to_dict()
    merged = {**defaults, **raw}
    for key in ("data", "init"):
        merged[key] = {**defaults[key], **raw.get(key, {})}
    return ExperimentConfig.from_dict(merged)
