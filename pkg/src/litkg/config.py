"""Experiment configuration: model layers, training runs, and literal flags."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

AGGREGATORS = ("gcn", "sage", "bi", "gin")
_AGG_ALIASES = {"graphsage": "sage", "bi-interaction": "bi", "biinteraction": "bi",
                "bi_interaction": "bi"}
LITERAL_MODES = {"none": (False, False), "numeric": (True, False),
                 "text": (False, True), "both": (True, True)}


class ConfigError(ValueError):
    pass


def normalize_aggregator(name: str) -> str:
    key = name.lower()
    key = _AGG_ALIASES.get(key, key)
    if key not in AGGREGATORS:
        raise ConfigError(f"unknown aggregator {name!r}; choose from {AGGREGATORS}")
    return key


@dataclass
class LayerConfig:
    aggregator: str = "bi"
    n_layers: int = 1
    embed_dim: int = 300
    hidden_dim: int = 32
    dropout: float = 0.1
    residual_identity: bool = False
    alpha: float = 0.1
    lambda_rc: float = 4.0
    gin_epsilon: Union[float, str] = 0.0

    def __post_init__(self):
        self.aggregator = normalize_aggregator(self.aggregator)
        self.validate()

    def validate(self) -> None:
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.lambda_rc <= 0:
            raise ConfigError("lambda_rc must be positive")
        if self.residual_identity and self.embed_dim != self.hidden_dim:
            raise ConfigError("residual/identity mapping needs embed_dim == hidden_dim")
        if isinstance(self.gin_epsilon, str) and self.gin_epsilon != "learnable":
            raise ConfigError("gin_epsilon must be a number or 'learnable'")

    @property
    def learnable_epsilon(self) -> bool:
        return self.gin_epsilon == "learnable"


@dataclass
class TrainRunConfig:
    phase: str = "pretrain"
    batch_size: int = 1024
    epochs: int = 20
    patience: int = 5
    lr: float = 1e-4
    lambda_reg: float = 1e-5
    negatives: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"phase must be 'pretrain' or 'finetune', got {self.phase!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0 or self.lambda_reg < 0:
            raise ConfigError("lr and lambda_reg must be nonnegative")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")


@dataclass
class ExperimentConfig:
    """Everything one pipeline run needs, serialisable as JSON."""
    model: LayerConfig = field(default_factory=LayerConfig)
    pretrain: TrainRunConfig = field(default_factory=lambda: TrainRunConfig(phase="pretrain"))
    finetune: TrainRunConfig = field(default_factory=lambda: TrainRunConfig(phase="finetune"))
    use_numeric: bool = True
    use_text: bool = True
    use_pretrain: bool = True
    finetune_negatives: int = 3
    split: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    records: Optional[str] = None
    kg: Optional[str] = None
    pretrained: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = LayerConfig(**self.model)
        if isinstance(self.pretrain, dict):
            self.pretrain = TrainRunConfig(**{"phase": "pretrain", **self.pretrain})
        if isinstance(self.finetune, dict):
            self.finetune = TrainRunConfig(**{"phase": "finetune", **self.finetune})
        self.split = tuple(self.split)
        if self.finetune_negatives < 1:
            raise ConfigError("finetune_negatives must be >= 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split must be three ratios summing to 1")

    @property
    def literals(self) -> str:
        for name, flags in LITERAL_MODES.items():
            if flags == (self.use_numeric, self.use_text):
                return name
        raise AssertionError("unreachable")

    def with_literals(self, mode: str) -> "ExperimentConfig":
        if mode not in LITERAL_MODES:
            raise ConfigError(f"literals must be one of {sorted(LITERAL_MODES)}")
        num, txt = LITERAL_MODES[mode]
        return dataclasses.replace(self, use_numeric=num, use_text=txt)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["split"] = list(self.split)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
