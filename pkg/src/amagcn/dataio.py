"""Reading and writing phenotype tables, measure specs and feature matrices,
plus the synthetic population generator."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .container import is_container, read_container, write_container
from .errors import DataError
from .pswe import NON_QUANTITATIVE, QUANTITATIVE, MeasureSpec, PhenotypeTable
from .seeding import derive_rng

logger = logging.getLogger(__name__)


# ------------------------------------------------------------ measure specs


def load_measures(path) -> list[MeasureSpec]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise DataError(f"{path}: expected a JSON array of measure declarations")
    measures = [MeasureSpec.from_dict(d) for d in raw]
    names = [m.name for m in measures]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate measure names")
    return measures


def save_measures(measures, path) -> None:
    Path(path).write_text(json.dumps([m.to_dict() for m in measures], indent=2) + "\n")


# ---------------------------------------------------------------- phenotypes


def load_phenotypes(path, measure_spec_path) -> PhenotypeTable:
    """Read a phenotype CSV typed by a measure-spec JSON.

    Rows with an empty label or measure cell are dropped; the number dropped is
    stored on the returned table as ``dropped``.
    """
    measures = load_measures(measure_spec_path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["subject_id", "label"]:
            raise DataError(f"{path}: header must start with subject_id,label")
        columns = {name: i for i, name in enumerate(header)}
        missing = [m.name for m in measures if m.name not in columns]
        if missing:
            raise DataError(f"{path}: measure column(s) {missing} missing from header")
        extra = set(header[2:]) - {m.name for m in measures}
        if extra:
            logger.info("ignoring columns without a measure declaration: %s", sorted(extra))

        ids, labels = [], []
        values = {m.name: [] for m in measures}
        dropped = 0
        needed = [0, 1] + [columns[m.name] for m in measures]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            cells = [row[i].strip() for i in needed]
            if any(c == "" for c in cells):
                dropped += 1
                continue
            try:
                label = int(cells[1])
            except ValueError:
                raise DataError(f"{path}: line {lineno}, column 'label': not an integer") from None
            parsed = {}
            for m in measures:
                cell = row[columns[m.name]].strip()
                if m.quantitative:
                    try:
                        parsed[m.name] = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: line {lineno}, column {m.name!r}: "
                            f"cannot parse {cell!r} as a number"
                        ) from None
                else:
                    parsed[m.name] = cell
            ids.append(cells[0])
            labels.append(label)
            for k, v in parsed.items():
                values[k].append(v)
    if dropped:
        logger.info("dropped %d subject(s) with empty cells", dropped)
    if not ids:
        raise DataError(f"{path}: no complete rows")
    dupes = {s for s in ids if ids.count(s) > 1} if len(set(ids)) != len(ids) else set()
    if dupes:
        raise DataError(f"{path}: duplicate subject_id(s) {sorted(dupes)[:5]}")
    return PhenotypeTable(ids, np.array(labels), values, measures, dropped=dropped)


def save_phenotypes(table: PhenotypeTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label"] + [m.name for m in table.measures])
        for i, sid in enumerate(table.subject_ids):
            row = [sid, int(table.labels[i])]
            for m in table.measures:
                v = table.values[m.name][i]
                row.append(repr(float(v)) if m.quantitative else v)
            writer.writerow(row)


# ------------------------------------------------------------------ features


def load_features(path) -> np.ndarray:
    """Dense CSV (no header) or the binary array container."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if is_container(path):
        arrays, _ = read_container(path)
        if "features" not in arrays:
            raise DataError(f"{path}: container has no 'features' array")
        x = arrays["features"]
    else:
        try:
            x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    if x.ndim != 2:
        raise DataError(f"{path}: feature matrix must be 2-D")
    bad = np.argwhere(~np.isfinite(x))
    if len(bad):
        r, c = bad[0]
        raise DataError(f"{path}: non-finite feature value at row {r}, column {c}")
    return x


def save_features(x: np.ndarray, path) -> None:
    """Binary container for ``.bin`` paths, full-precision CSV otherwise."""
    if str(path).endswith(".bin"):
        write_container(path, {"features": x}, {"kind": "features"})
    else:
        np.savetxt(path, x, delimiter=",", fmt="%.17g")


def save_matrix_csv(x: np.ndarray, path) -> None:
    np.savetxt(path, x, delimiter=",", fmt="%.17g")


def save_edge_list(adjacency: np.ndarray, path) -> None:
    """``i<TAB>j<TAB>weight`` for every positive edge with ``i < j``."""
    iu, ju = np.nonzero(np.triu(adjacency, k=1) > 0)
    with open(path, "w") as fh:
        for i, j in zip(iu, ju):
            fh.write(f"{i}\t{j}\t{float(adjacency[i, j])!r}\n")


def load_adjacency(path) -> np.ndarray:
    """Dense CSV adjacency, or an edge list when the file is tab-separated."""
    text = Path(path).read_text()
    first = text.split("\n", 1)[0]
    if "\t" not in first:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    rows = [line.split("\t") for line in text.splitlines() if line.strip()]
    n = 1 + max(max(int(i), int(j)) for i, j, _ in rows)
    adj = np.zeros((n, n))
    for i, j, w in rows:
        adj[int(i), int(j)] = adj[int(j), int(i)] = float(w)
    return adj


# ----------------------------------------------------------------- synthetic


@dataclass
class SynthSpec:
    """Planted synthetic population.

    Informative categorical measures give each class a preferred token, drawn with
    probability ``purity``. Informative quantitative measures put class 0 in the
    middle of the value range and the other classes in the tails, so the
    interquartile interval separates them. Noise measures ignore the label.
    Features are Gaussian blobs whose class means lie ``class_separation`` apart.
    """

    n: int = 300
    classes: int = 2
    informative_quant: int = 2
    informative_cat: int = 2
    noise_quant: int = 1
    noise_cat: int = 2
    class_separation: float = 2.0
    purity: float = 0.9
    m: int = 32
    noise_tokens: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise DataError("at least two classes are required")
        if self.n < self.classes:
            raise DataError("need at least one subject per class")
        counts = (self.informative_quant, self.informative_cat, self.noise_quant, self.noise_cat)
        if min(counts) < 0 or sum(counts) < 1:
            raise DataError("at least one measure is required")
        if not 1.0 / self.classes <= self.purity <= 1.0:
            raise DataError("purity must lie in [1/classes, 1]")
        if self.class_separation < 0 or self.m < 1:
            raise DataError("class_separation >= 0 and m >= 1 are required")

    def measure_names(self) -> dict[str, list[str]]:
        return {
            "informative_quant": [f"inf_quant_{i}" for i in range(self.informative_quant)],
            "informative_cat": [f"inf_cat_{i}" for i in range(self.informative_cat)],
            "noise_quant": [f"noise_quant_{i}" for i in range(self.noise_quant)],
            "noise_cat": [f"noise_cat_{i}" for i in range(self.noise_cat)],
        }

    def informative(self) -> list[str]:
        names = self.measure_names()
        return names["informative_quant"] + names["informative_cat"]

    def noise(self) -> list[str]:
        names = self.measure_names()
        return names["noise_quant"] + names["noise_cat"]

    def to_dict(self) -> dict:
        return asdict(self)


TAIL_OFFSET = 5.0


def generate_synthetic(spec: SynthSpec) -> tuple[PhenotypeTable, np.ndarray]:
    n, p = spec.n, spec.classes
    names = spec.measure_names()
    rng = derive_rng(spec.seed, "synth", "labels")
    labels = rng.permutation(np.arange(n) % p)

    measures, values = [], {}
    for i, name in enumerate(names["informative_quant"]):
        r = derive_rng(spec.seed, "synth", name)
        z = r.normal(size=n)
        sign = r.choice([-1.0, 1.0], size=n)
        offset = np.where(labels == 0, 0.0, sign * (TAIL_OFFSET + 2.0 * (labels - 1)))
        values[name] = 50.0 + 6.0 * (z + offset)
        measures.append(MeasureSpec(name, QUANTITATIVE))
    for name in names["informative_cat"]:
        r = derive_rng(spec.seed, "synth", name)
        keep = r.random(n) < spec.purity
        other = (labels + r.integers(1, p, size=n)) % p if p > 1 else labels
        values[name] = np.array([f"v{t}" for t in np.where(keep, labels, other)], dtype=object)
        measures.append(MeasureSpec(name, NON_QUANTITATIVE))
    for name in names["noise_quant"]:
        r = derive_rng(spec.seed, "synth", name)
        values[name] = 50.0 + 6.0 * r.normal(size=n)
        measures.append(MeasureSpec(name, QUANTITATIVE))
    for name in names["noise_cat"]:
        r = derive_rng(spec.seed, "synth", name)
        tokens = r.integers(0, spec.noise_tokens, size=n)
        values[name] = np.array([f"s{t}" for t in tokens], dtype=object)
        measures.append(MeasureSpec(name, NON_QUANTITATIVE))

    r = derive_rng(spec.seed, "synth", "features")
    frame, _ = np.linalg.qr(r.normal(size=(max(spec.m, p), p)))
    means = (spec.class_separation / np.sqrt(2.0)) * frame[: spec.m].T
    features = means[labels] + r.normal(size=(n, spec.m))

    width = len(str(n - 1))
    ids = [f"s{i:0{width}d}" for i in range(n)]
    table = PhenotypeTable(ids, labels, values, measures, n_classes=p)
    return table, features


def write_dataset(table: PhenotypeTable, features: np.ndarray, prefix) -> dict[str, Path]:
    prefix = str(prefix)
    paths = {
        "phenotypes": Path(prefix + ".phenotypes.csv"),
        "measures": Path(prefix + ".measures.json"),
        "features": Path(prefix + ".features.bin"),
    }
    save_phenotypes(table, paths["phenotypes"])
    save_measures(table.measures, paths["measures"])
    save_features(features, paths["features"])
    return paths
