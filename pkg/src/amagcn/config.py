"""Run configuration: model hyperparameters plus experiment settings and paths."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ABLATIONS, AmaGcnConfig, config_hash

GRAPH_MODES = ("pswe", "manual", "random", "fixed")


@dataclass
class RunConfig:
    # model (defaults from the published hyperparameter table)
    mla_layers: int = 5
    adu_layers: int = 2
    hidden_dim: int = 16
    cheb_order: int = 3
    dropout: float = 0.3
    lr_mla: float = 0.005
    lr_adu: float = 0.05
    weight_decay: float = 0.0005
    epochs: int = 300
    lam: float = 1.0
    xi: float = 1e-6
    sigma: float = 1.0
    ablation: str = "full"
    # experiment
    seed: int = 0
    folds: int = 10
    graph_mode: str = "pswe"
    manual_measures: list[str] = field(default_factory=list)
    paper_faithful: bool = False
    ridge_reg: float = 1.0
    jobs: int = 1
    # paths
    phenotypes: str | None = None
    measures: str | None = None
    features: str | None = None
    graph: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigError(f"unknown graph mode {self.graph_mode!r}; choose from {GRAPH_MODES}")
        if self.folds < 2:
            raise ConfigError("at least two folds are required")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.ridge_reg <= 0:
            raise ConfigError("ridge_reg must be positive")
        self.model()
        if isinstance(self.manual_measures, str):
            self.manual_measures = [s for s in self.manual_measures.split(",") if s]

    def model(self) -> AmaGcnConfig:
        names = {f.name for f in fields(AmaGcnConfig)}
        return AmaGcnConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        """Fully resolved settings: ablation switches are applied to the model fields."""
        d = asdict(self)
        d.update(self.model().to_dict())
        return d

    def experiment_dict(self) -> dict:
        """Everything that affects results (paths, jobs and output dir excluded)."""
        d = self.to_dict()
        for k in ("phenotypes", "measures", "features", "graph", "out", "jobs"):
            d.pop(k)
        return d

    def hash(self) -> str:
        return config_hash(self.experiment_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def replace(self, **changes) -> "RunConfig":
        d = asdict(self)
        d.update(changes)
        return RunConfig(**d)
