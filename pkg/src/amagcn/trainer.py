"""Cross-validated experiments: fold plans, ACC/AUC, ablation and measure sweeps,
and the feature-only ridge baseline."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import pswe
from .config import RunConfig
from .errors import ConfigError, DataError
from .model import predict, train
from .seeding import derive_rng
from .spectral import PopulationGraph, basis_from_adjacency

logger = logging.getLogger(__name__)


@dataclass
class FoldPlan:
    fold_assignments: np.ndarray
    seed: int

    @property
    def k(self) -> int:
        return int(self.fold_assignments.max()) + 1

    def masks(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        held_out = self.fold_assignments == fold
        return ~held_out, held_out


def kfold_split(n: int, k: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then contiguous chunks whose sizes differ by at most one."""
    if n < k:
        raise DataError(f"cannot split {n} nodes into {k} folds")
    order = derive_rng(seed, "folds").permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(order, k)):
        assignment[chunk] = fold
    return FoldPlan(assignment, seed)


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _auc(z: np.ndarray, labels: np.ndarray) -> float | None:
    """Binary AUC on the class-1 score, macro one-vs-rest for more classes."""
    n_classes = z.shape[1]
    present = np.unique(labels)
    if len(present) < 2:
        return None
    if n_classes == 2:
        return compute_auc(z[:, 1], labels == 1)
    return float(np.mean([compute_auc(z[:, c], labels == c) for c in present]))


@dataclass
class VariantMetrics:
    name: str
    fold_acc: list[float]
    fold_auc: list[float | None]
    info: dict = field(default_factory=dict)

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.fold_acc))

    @property
    def mean_auc(self) -> float | None:
        vals = [a for a in self.fold_auc if a is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mean_acc": self.mean_acc,
            "mean_auc": self.mean_auc,
            "fold_acc": self.fold_acc,
            "fold_auc": self.fold_auc,
            "info": self.info,
        }


@dataclass
class MetricsReport:
    variants: list[VariantMetrics]
    config: dict
    config_hash: str
    seed: int

    def __getitem__(self, name: str) -> VariantMetrics:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "variants": [v.to_dict() for v in self.variants],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "fold", "acc", "auc"])
            for v in self.variants:
                for f, (acc, auc) in enumerate(zip(v.fold_acc, v.fold_auc)):
                    w.writerow([v.name, f, repr(acc), "" if auc is None else repr(auc)])

    def merged(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(self.variants + other.variants, self.config, self.config_hash, self.seed)


# --------------------------------------------------------------- graphs


def fold_adjacency(
    table: pswe.PhenotypeTable,
    train_rows: np.ndarray,
    config: RunConfig,
    adjacency: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Adjacency for one fold.

    PSWE counts use only ``train_rows`` labels unless ``config.paper_faithful``.
    Quantitative intervals never use labels and are resolved on the full table.
    """
    mode = config.graph_mode
    if config.ablation == "noP" and mode == "pswe":
        mode = "manual"
    if mode == "fixed":
        if adjacency is None:
            raise ConfigError("graph mode 'fixed' needs an adjacency matrix")
        return adjacency, {"graph": "fixed"}
    if mode == "random":
        return pswe.random_adjacency(len(table), derive_rng(config.seed, "random-graph")), {
            "graph": "random"
        }
    intervals = pswe.resolve_intervals(table)
    if mode == "manual":
        if not config.manual_measures:
            raise ConfigError("manual graph mode (and the noP ablation) need manual_measures")
        scores = pswe.manual_scores(table, config.manual_measures, intervals)
    else:
        source = table if config.paper_faithful else table.subset(train_rows)
        scores = pswe.score_measures(source, intervals)
        if config.ablation == "noW":
            scores = pswe.unit_weights(scores)
    info = {
        "graph": mode,
        "selected": {s.measure: s.pms_score for s in scores if s.selected},
    }
    return pswe.build_adjacency(table, scores, intervals), info


# ---------------------------------------------------------- experiments


def _fold_seed(seed: int, fold: int) -> int:
    return int(derive_rng(seed, "fold", fold).integers(2**62))


FoldCallback = Callable[[int, object, list], None]


def run_cross_validation(
    table: pswe.PhenotypeTable,
    features: np.ndarray,
    config: RunConfig,
    adjacency: np.ndarray | None = None,
    name: str | None = None,
    on_fold: FoldCallback | None = None,
) -> MetricsReport:
    """k-fold evaluation of AMA-GCN: train on k-1 folds, score the held-out fold.

    Every fold trains on the full graph with the held-out nodes unlabeled
    (transductive setting). ``on_fold(fold, params, history)`` receives each
    trained model, e.g. to write checkpoints.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(table):
        raise DataError(
            f"feature matrix has {features.shape[0]} rows for {len(table)} subjects"
        )
    plan = kfold_split(len(table), config.folds, config.seed)
    model_config = config.model()

    def run_fold(fold: int):
        train_mask, val_mask = plan.masks(fold)
        adj, info = fold_adjacency(table, np.flatnonzero(train_mask), config, adjacency)
        graph = PopulationGraph(adj, features, table.labels, train_mask, val_mask, table.n_classes)
        basis = basis_from_adjacency(adj, model_config.cheb_order)
        params, history = train(graph, basis, model_config, _fold_seed(config.seed, fold))
        pred, z = predict(graph, basis, params, model_config)
        acc = float(np.mean(pred[val_mask] == table.labels[val_mask]))
        auc = _auc(z[val_mask], table.labels[val_mask])
        if on_fold is not None:
            on_fold(fold, params, history)
        logger.info("%s fold %d: acc=%.4f auc=%s", name or config.ablation, fold, acc, auc)
        return acc, auc, info

    folds = range(config.folds)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(run_fold, folds))
    else:
        results = [run_fold(f) for f in folds]
    variant = VariantMetrics(
        name or config.ablation,
        [r[0] for r in results],
        [r[1] for r in results],
        {"folds": [r[2] for r in results]},
    )
    return MetricsReport([variant], config.experiment_dict(), config.hash(), config.seed)


def ridge_baseline(
    features: np.ndarray, labels: np.ndarray, folds: FoldPlan, reg: float = 1.0
) -> VariantMetrics:
    """Closed-form ridge regression on +-1 targets with an unpenalized intercept.

    Two classes use one output thresholded at 0 (its raw value is the AUC score);
    more classes use one-vs-rest outputs and argmax.
    """
    if reg <= 0:
        raise ConfigError("ridge regularization must be positive")
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(x)):
        raise DataError("features must be finite")
    n_classes = int(labels.max()) + 1
    targets = np.where(np.eye(n_classes)[labels] > 0, 1.0, -1.0)
    accs, aucs = [], []
    for fold in range(folds.k):
        train_mask, test_mask = folds.masks(fold)
        xt, tt = x[train_mask], targets[train_mask]
        mu, tmu = xt.mean(axis=0), tt.mean(axis=0)
        xc = xt - mu
        w = np.linalg.solve(xc.T @ xc + reg * np.eye(x.shape[1]), xc.T @ (tt - tmu))
        out = (x[test_mask] - mu) @ w + tmu
        y = labels[test_mask]
        if n_classes == 2:
            score = out[:, 1]
            pred = (score > 0).astype(int)
            aucs.append(compute_auc(score, y == 1) if len(np.unique(y)) == 2 else None)
        else:
            pred = np.argmax(out, axis=1)
            aucs.append(_auc(out, y))
        accs.append(float(np.mean(pred == y)))
    return VariantMetrics("ridge", accs, aucs, {"reg": reg})


def _with_ridge(report: MetricsReport, features, table, config: RunConfig) -> MetricsReport:
    plan = kfold_split(len(table), config.folds, config.seed)
    ridge = ridge_baseline(features, table.labels, plan, config.ridge_reg)
    report.variants.append(ridge)
    return report


def run_ablation_sweep(
    table: pswe.PhenotypeTable,
    features: np.ndarray,
    config: RunConfig,
    variants=("full", "noP", "noW", "noA", "noS"),
) -> MetricsReport:
    """One cross-validation per ablation variant, plus the ridge baseline."""
    report = None
    for v in variants:
        part = run_cross_validation(table, features, config.replace(ablation=v), name=v)
        report = part if report is None else report.merged(part)
    report.config, report.config_hash = config.experiment_dict(), config.hash()
    return _with_ridge(report, features, table, config)


def run_measure_sweep(
    table: pswe.PhenotypeTable, features: np.ndarray, config: RunConfig
) -> MetricsReport:
    """Single-measure graphs versus a random graph versus the full PSWE graph.

    Rows: ``pswe`` (selected measures, scored per fold), ``measure:<name>`` for
    every measure on its own with unit weight, ``random``, and ``ridge``.
    """
    if not table.measures:
        raise DataError("the table has no measures")
    rows = [run_cross_validation(table, features, config.replace(graph_mode="pswe", ablation="full"), name="pswe")]
    for m in table.measures:
        cfg = config.replace(graph_mode="manual", manual_measures=[m.name], ablation="full")
        rows.append(run_cross_validation(table, features, cfg, name=f"measure:{m.name}"))
    rows.append(
        run_cross_validation(
            table, features, config.replace(graph_mode="random", ablation="full"), name="random"
        )
    )
    report = rows[0]
    for r in rows[1:]:
        report = report.merged(r)
    report.config, report.config_hash = config.experiment_dict(), config.hash()
    return _with_ridge(report, features, table, config)
