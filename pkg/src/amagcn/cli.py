"""Command-line entry point.

Settings resolve as: built-in defaults, then command-line flags, then the
``--config`` JSON file (the file wins). The resolved configuration is echoed to
stderr and written next to every output together with its hash.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataio, pswe
from .config import RunConfig
from .errors import AmaGcnError, ConfigError, DataError, NumericError
from .model import ABLATIONS, predict, save_checkpoint, train
from .seeding import derive_rng
from .spectral import PopulationGraph, basis_from_adjacency, normalized_laplacian
from .trainer import (
    _auc,
    fold_adjacency,
    kfold_split,
    run_ablation_sweep,
    run_cross_validation,
    run_measure_sweep,
)

log = logging.getLogger("amagcn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# flag name -> RunConfig field
_RUN_FLAGS = {
    "phenotypes": "phenotypes",
    "measures": "measures",
    "features": "features",
    "graph": "graph",
    "out": "out",
    "seed": "seed",
    "ablation": "ablation",
    "mode": "graph_mode",
    "paper_faithful": "paper_faithful",
    "jobs": "jobs",
    "manual_measures": "manual_measures",
    "epochs": "epochs",
    "folds": "folds",
}


def _add_run_flags(p: argparse.ArgumentParser, data=True, training=False):
    p.add_argument("--config", help="JSON run config; its values override flags")
    if data:
        p.add_argument("--phenotypes", help="phenotype CSV (subject_id,label,<measures>...)")
        p.add_argument("--measures", help="measure spec JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("pswe", "manual", "random"), help="graph construction mode")
    p.add_argument("--manual-measures", help="comma-separated measures for manual mode / noP")
    p.add_argument("--paper-faithful", action="store_true", default=None,
                   help="score measures with all labels instead of training-fold labels")
    if training:
        p.add_argument("--features", help="feature matrix (CSV or binary container)")
        p.add_argument("--graph", help="precomputed adjacency (dense CSV or TSV edge list)")
        p.add_argument("--ablation", choices=ABLATIONS)
        p.add_argument("--jobs", type=int, help="folds trained concurrently")
        p.add_argument("--epochs", type=int)
        p.add_argument("--folds", type=int)


def _resolve_config(args) -> RunConfig:
    values = {}
    for flag, fname in _RUN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[fname] = v
    if isinstance(values.get("manual_measures"), str):
        values["manual_measures"] = [s for s in values["manual_measures"].split(",") if s]
    if getattr(args, "config", None):
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if "lambda" in file_values:
            file_values["lam"] = file_values.pop("lambda")
        values.update(file_values)
    return RunConfig.from_dict(values)


def _echo(config: RunConfig, out: Path | None) -> None:
    payload = {"config": config.to_dict(), "config_hash": config.hash()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        (out / "config.json").write_text(text + "\n")


def _out_dir(config: RunConfig) -> Path:
    if not config.out:
        raise ConfigError("--out is required")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_table(config: RunConfig) -> pswe.PhenotypeTable:
    if not config.phenotypes or not config.measures:
        raise ConfigError("--phenotypes and --measures are required")
    table = dataio.load_phenotypes(config.phenotypes, config.measures)
    if table.dropped:
        print(f"dropped {table.dropped} subject(s) with empty cells", file=sys.stderr)
    return table


def _load_features(config: RunConfig, table) -> np.ndarray:
    if not config.features:
        raise ConfigError("--features is required")
    x = dataio.load_features(config.features)
    if x.shape[0] != len(table):
        raise DataError(
            f"{config.features}: {x.shape[0]} feature rows for {len(table)} subjects"
        )
    return x


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    if args.spec:
        try:
            spec = dataio.SynthSpec(**json.loads(Path(args.spec).read_text()))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from None
    else:
        overrides = {
            f.name: getattr(args, f.name)
            for f in fields(dataio.SynthSpec)
            if getattr(args, f.name, None) is not None
        }
        spec = dataio.SynthSpec(**overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, features = dataio.generate_synthetic(spec)
    paths = dataio.write_dataset(table, features, out / args.name)
    truth = {
        "spec": spec.to_dict(),
        "informative": spec.informative(),
        "noise": spec.noise(),
        "files": {k: str(v) for k, v in paths.items()},
    }
    print(json.dumps(truth, indent=2))
    return 0


def cmd_select_measures(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    _echo(config, out)
    table = _load_table(config)
    scores = pswe.score_measures(table)
    report = {
        "config_hash": config.hash(),
        "n_subjects": len(table),
        "dropped": table.dropped,
        "measures": [s.to_dict() for s in scores],
        "selected": [s.measure for s in scores if s.selected],
    }
    text = json.dumps(report, indent=2)
    (out / "measures_report.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_build_graph(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    _echo(config, out)
    table = _load_table(config)
    everyone = np.arange(len(table))
    # a standalone graph uses every label; cross-validation rebuilds it per fold
    adj, info = fold_adjacency(table, everyone, config.replace(paper_faithful=True))
    dataio.save_matrix_csv(adj, out / "adjacency.csv")
    dataio.save_edge_list(adj, out / "edges.tsv")
    info["config_hash"] = config.hash()
    info["n_nodes"] = len(table)
    info["n_edges"] = int(np.count_nonzero(np.triu(adj, 1)))
    (out / "graph_info.json").write_text(json.dumps(info, indent=2) + "\n")
    if args.dump_laplacian:
        dataio.save_matrix_csv(normalized_laplacian(adj), args.dump_laplacian)
    print(json.dumps(info, indent=2))
    return 0


def _fixed_graph(config: RunConfig):
    if not config.graph:
        return None
    return dataio.load_adjacency(config.graph)


class _Writer:
    """Collects per-fold logs and checkpoints under the output directory."""

    def __init__(self, out: Path, config: RunConfig):
        self.out = out
        self.config = config
        (out / "checkpoints").mkdir(exist_ok=True)
        self.logs: dict[int, list] = {}

    def __call__(self, fold, params, history):
        save_checkpoint(
            self.out / "checkpoints" / f"fold{fold}.ckpt", params, self.config.model(), self.config.seed
        )
        self.logs[fold] = history

    def flush(self, name="train_log.ndjson"):
        with open(self.out / name, "w") as fh:
            for fold in sorted(self.logs):
                for rec in self.logs[fold]:
                    fh.write(json.dumps({"fold": fold, **rec}, sort_keys=True) + "\n")


def _check_finite(report) -> None:
    for v in report.variants:
        if not np.all(np.isfinite(v.fold_acc)):
            raise NumericError(f"non-finite metrics for {v.name}")


def cmd_cross_validate(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    adjacency = _fixed_graph(config)
    if adjacency is not None:
        config = config.replace(graph_mode="fixed")
    _echo(config, out)
    table = _load_table(config)
    features = _load_features(config, table)
    writer = _Writer(out, config)
    report = run_cross_validation(table, features, config, adjacency, on_fold=writer)
    _check_finite(report)
    writer.flush()
    (out / "report.json").write_text(report.to_json())
    report.write_csv(out / "report.csv")
    v = report.variants[0]
    print(json.dumps({"variant": v.name, "mean_acc": v.mean_acc, "mean_auc": v.mean_auc,
                      "config_hash": report.config_hash}))
    return 0


def cmd_train(args) -> int:
    """Train once, holding out one fold of the plan as the validation set."""
    config = _resolve_config(args)
    out = _out_dir(config)
    adjacency = _fixed_graph(config)
    if adjacency is not None:
        config = config.replace(graph_mode="fixed")
    _echo(config, out)
    table = _load_table(config)
    features = _load_features(config, table)
    plan = kfold_split(len(table), config.folds, config.seed)
    train_mask, val_mask = plan.masks(args.holdout_fold)
    adj, info = fold_adjacency(table, np.flatnonzero(train_mask), config, adjacency)
    model_config = config.model()
    graph = PopulationGraph(adj, features, table.labels, train_mask, val_mask, table.n_classes)
    basis = basis_from_adjacency(adj, model_config.cheb_order)
    seed = int(derive_rng(config.seed, "train").integers(2**62))
    with open(out / "train_log.ndjson", "w") as fh:
        params, history = train(
            graph, basis, model_config, seed,
            log=lambda rec: fh.write(json.dumps(rec, sort_keys=True) + "\n"),
        )
    save_checkpoint(out / "model.ckpt", params, model_config, seed)
    pred, z = predict(graph, basis, params, model_config)
    result = {
        "config_hash": config.hash(),
        "holdout_fold": args.holdout_fold,
        "val_acc": float(np.mean(pred[val_mask] == table.labels[val_mask])),
        "val_auc": _auc(z[val_mask], table.labels[val_mask]),
        "graph": info,
        "final_loss": history[-1] if history else None,
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    (out / "report.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    _echo(config, out)
    table = _load_table(config)
    features = _load_features(config, table)
    if args.kind == "measures":
        report = run_measure_sweep(table, features, config)
    else:
        report = run_ablation_sweep(table, features, config)
    _check_finite(report)
    (out / "report.json").write_text(report.to_json())
    report.write_csv(out / "report.csv")
    for v in report.variants:
        auc = "n/a" if v.mean_auc is None else f"{v.mean_auc:.4f}"
        print(f"{v.name:32s} acc={v.mean_acc:.4f} auc={auc}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amagcn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted synthetic population")
    p.add_argument("--spec", help="SynthSpec JSON (overrides the individual flags)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="synthetic", help="file name prefix")
    for f in fields(dataio.SynthSpec):
        kind = float if f.type in ("float",) else int
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-measures", help="score and select phenotypic measures")
    _add_run_flags(p)
    p.set_defaults(func=cmd_select_measures)

    p = sub.add_parser("build-graph", help="write the population adjacency")
    _add_run_flags(p)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--dump-laplacian", help="also write the normalized Laplacian as CSV")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train once with one fold held out")
    _add_run_flags(p, training=True)
    p.add_argument("--holdout-fold", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cross-validate", help="k-fold cross-validation")
    _add_run_flags(p, training=True)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("sweep", help="measure or ablation sweep")
    _add_run_flags(p, training=True)
    p.add_argument("--kind", choices=("measures", "ablations"), default="measures")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except AmaGcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
