"""Phenotypic measure selection and weight encoding.

Scores every phenotypic measure by how well its values separate the classes,
keeps the measures whose score reaches the mean, and turns the surviving
measures into a weighted population adjacency matrix.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

QUANTITATIVE = "quantitative"
NON_QUANTITATIVE = "non-quantitative"
KINDS = (QUANTITATIVE, NON_QUANTITATIVE)

DEFAULT_THETA = 0.5
DEFAULT_DELTA = 0.2


@dataclass(frozen=True)
class MeasureSpec:
    """Declaration of one phenotypic measure.

    ``theta`` applies to categorical measures, ``delta`` and ``interval`` to
    quantitative ones. ``interval`` is a ``(low, high)`` pair or ``"auto"``.
    """

    name: str
    kind: str
    theta: float | None = None
    delta: float | None = None
    interval: tuple[float, float] | str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"measure {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == NON_QUANTITATIVE:
            if self.delta is not None or self.interval is not None:
                raise DataError(
                    f"measure {self.name!r}: delta/interval only apply to quantitative measures"
                )
            if self.theta is None:
                object.__setattr__(self, "theta", DEFAULT_THETA)
            if self.theta < 0:
                raise DataError(f"measure {self.name!r}: theta must be nonnegative")
        else:
            if self.theta is not None:
                raise DataError(f"measure {self.name!r}: theta only applies to categorical measures")
            if self.delta is None:
                object.__setattr__(self, "delta", DEFAULT_DELTA)
            if self.delta < 0:
                raise DataError(f"measure {self.name!r}: delta must be nonnegative")
            if self.interval is None:
                object.__setattr__(self, "interval", "auto")
            elif isinstance(self.interval, str):
                if self.interval != "auto":
                    raise DataError(f"measure {self.name!r}: interval must be [lo, hi] or 'auto'")
            else:
                lo, hi = (float(x) for x in self.interval)
                if not lo <= hi:
                    raise DataError(f"measure {self.name!r}: interval low {lo} exceeds high {hi}")
                object.__setattr__(self, "interval", (lo, hi))

    @property
    def quantitative(self) -> bool:
        return self.kind == QUANTITATIVE

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind}
        if self.quantitative:
            out["delta"] = self.delta
            out["interval"] = self.interval if isinstance(self.interval, str) else list(self.interval)
        else:
            out["theta"] = self.theta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureSpec":
        interval = d.get("interval")
        if isinstance(interval, list):
            if len(interval) != 2:
                raise DataError(f"measure {d.get('name')!r}: interval needs two endpoints")
            interval = tuple(interval)
        try:
            return cls(
                name=str(d["name"]),
                kind=d["kind"],
                theta=d.get("theta"),
                delta=d.get("delta"),
                interval=interval,
            )
        except KeyError as exc:
            raise DataError(f"measure spec entry missing field {exc}") from None


@dataclass
class PhenotypeTable:
    """Per-subject labels and measure values.

    ``values`` maps measure name to a length-n array: float64 for quantitative
    measures, an object array of string tokens for categorical ones.
    """

    subject_ids: list[str]
    labels: np.ndarray
    values: dict[str, np.ndarray]
    measures: list[MeasureSpec]
    n_classes: int | None = None
    dropped: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.subject_ids)
        if self.labels.shape != (n,):
            raise DataError(f"{n} subjects but {self.labels.shape[0]} labels")
        if len(set(self.subject_ids)) != n:
            raise DataError("duplicate subject_id")
        if n and self.labels.min() < 0:
            raise DataError("labels must be 0-based nonnegative integers")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if n else 0
        if n and self.n_classes < 2:
            raise DataError("at least two classes are required")
        if n and self.labels.max() >= self.n_classes:
            raise DataError("label exceeds declared class count")
        typed = {}
        for m in self.measures:
            if m.name not in self.values:
                raise DataError(f"no values for measure {m.name!r}")
            col = self.values[m.name]
            if m.quantitative:
                col = np.asarray(col, dtype=np.float64)
                if not np.all(np.isfinite(col)):
                    raise DataError(f"measure {m.name!r} has missing or non-finite values")
            else:
                col = np.asarray([str(v) for v in col], dtype=object)
                if any(v == "" for v in col):
                    raise DataError(f"measure {m.name!r} has empty cells")
            if col.shape != (n,):
                raise DataError(f"measure {m.name!r} has {col.shape[0]} values for {n} subjects")
            typed[m.name] = col
        self.values = typed

    def __len__(self) -> int:
        return len(self.subject_ids)

    def measure(self, name: str | MeasureSpec) -> MeasureSpec:
        key = name.name if isinstance(name, MeasureSpec) else name
        for m in self.measures:
            if m.name == key:
                return m
        raise DataError(f"unknown measure {key!r}")

    def subset(self, rows: Sequence[int] | np.ndarray) -> "PhenotypeTable":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return PhenotypeTable(
            subject_ids=[self.subject_ids[i] for i in rows],
            labels=self.labels[rows],
            values={k: v[rows] for k, v in self.values.items()},
            measures=list(self.measures),
            n_classes=self.n_classes,
        )

    def with_measures(self, measures: Iterable[MeasureSpec]) -> "PhenotypeTable":
        measures = list(measures)
        return PhenotypeTable(
            subject_ids=list(self.subject_ids),
            labels=self.labels,
            values={m.name: self.values[m.name] for m in measures},
            measures=measures,
            n_classes=self.n_classes,
        )


@dataclass
class MeasureScore:
    measure: str
    count: float
    pms_score: float
    interval: tuple[float, float] | None = None

    @property
    def selected(self) -> bool:
        return self.pms_score > 0

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "count": None if np.isnan(self.count) else self.count,
            "pms_score": self.pms_score,
            "selected": self.selected,
            "interval": None if self.interval is None else list(self.interval),
        }


def _resolve(table: PhenotypeTable, measure: str | MeasureSpec, kind: str) -> MeasureSpec:
    spec = table.measure(measure)
    if isinstance(measure, MeasureSpec):
        spec = measure
    if spec.kind != kind:
        raise DataError(f"measure {spec.name!r} is {spec.kind}, expected {kind}")
    return spec


def count_nonquantitative(table: PhenotypeTable, measure: str | MeasureSpec) -> float:
    """Discriminative count of a categorical measure.

    Every (value, class) cell with a nonzero count ``n_pu`` contributes
    ``n_pu`` when ``(n_u - n_pu) / n_pu < theta``; the total is divided by the
    number of distinct values observed.
    """
    spec = _resolve(table, measure, NON_QUANTITATIVE)
    col = table.values[spec.name]
    if len(col) == 0:
        return 0.0
    tokens, inverse = np.unique(col.astype(str), return_inverse=True)
    cells = np.zeros((len(tokens), table.n_classes), dtype=np.int64)
    np.add.at(cells, (inverse, table.labels), 1)
    per_value = cells.sum(axis=1, keepdims=True)
    present = cells > 0
    ratio = np.divide(per_value - cells, cells, out=np.full(cells.shape, np.inf), where=present)
    passing = present & (ratio < spec.theta)
    return float(cells[passing].sum()) / len(tokens)


def derive_interval(table: PhenotypeTable, measure: str | MeasureSpec) -> tuple[float, float]:
    """Interquartile range (linear-interpolation quantiles) of a quantitative measure.

    Raises ``DataError`` for fewer than four values or a zero-width range.
    """
    spec = _resolve(table, measure, QUANTITATIVE)
    col = table.values[spec.name]
    if len(col) < 4:
        raise DataError(f"measure {spec.name!r}: fewer than 4 values, supply its interval explicitly")
    lo, hi = np.quantile(col, [0.25, 0.75])
    if lo == hi:
        raise DataError(f"measure {spec.name!r}: degenerate quartiles, supply its interval explicitly")
    return float(lo), float(hi)


def resolve_interval(table: PhenotypeTable, measure: str | MeasureSpec) -> tuple[float, float]:
    spec = _resolve(table, measure, QUANTITATIVE)
    if spec.interval == "auto":
        return derive_interval(table, spec)
    return spec.interval


def count_quantitative(
    table: PhenotypeTable,
    measure: str | MeasureSpec,
    interval: tuple[float, float] | None = None,
) -> float:
    """Discriminative count of a quantitative measure.

    ``n_ps`` is the number of class-p subjects whose value lies strictly outside
    the closed ``interval``; class p contributes ``n_ps`` when
    ``(n_p - n_ps) / n_ps < delta``.
    """
    spec = _resolve(table, measure, QUANTITATIVE)
    if len(table) == 0:
        raise DataError("empty table")
    lo, hi = resolve_interval(table, spec) if interval is None else interval
    if not lo <= hi:
        raise DataError(f"invalid interval [{lo}, {hi}]")
    col = table.values[spec.name]
    outside = (col < lo) | (col > hi)
    n_p = np.bincount(table.labels, minlength=table.n_classes)
    n_ps = np.bincount(table.labels[outside], minlength=table.n_classes)
    present = n_ps > 0
    ratio = np.divide(n_p - n_ps, n_ps, out=np.full(n_p.shape, np.inf), where=present)
    return float(n_ps[present & (ratio < spec.delta)].sum())


def compute_pms_scores(counts: Sequence[tuple[str, float]]) -> list[MeasureScore]:
    """Turn per-measure counts into PMS-scores.

    A measure scores ``H * count / total`` when ``H * count >= total`` and zero
    otherwise. Scores are not renormalized after the zeroing.
    """
    if not counts:
        raise DataError("no measures to score")
    h = len(counts)
    total = float(sum(c for _, c in counts))
    if total == 0:
        warnings.warn("every measure has a zero count; no measure is selected", RuntimeWarning)
        return [MeasureScore(name, float(c), 0.0) for name, c in counts]
    return [
        MeasureScore(name, float(c), h * c / total if h * c >= total else 0.0)
        for name, c in counts
    ]


def score_measures(
    table: PhenotypeTable,
    intervals: dict[str, tuple[float, float]] | None = None,
) -> list[MeasureScore]:
    """Count and score every measure of ``table``.

    ``intervals`` pins the quantitative intervals (e.g. resolved once on the full
    table before scoring a training subset); missing entries are resolved on
    ``table`` itself.
    """
    intervals = dict(intervals or {})
    counts = []
    for m in table.measures:
        if m.quantitative:
            if m.name not in intervals:
                intervals[m.name] = resolve_interval(table, m)
            counts.append((m.name, count_quantitative(table, m, intervals[m.name])))
        else:
            counts.append((m.name, count_nonquantitative(table, m)))
    scores = compute_pms_scores(counts)
    for s in scores:
        s.interval = intervals.get(s.measure)
    return scores


def resolve_intervals(table: PhenotypeTable) -> dict[str, tuple[float, float]]:
    return {m.name: resolve_interval(table, m) for m in table.measures if m.quantitative}


def similarity_nonquantitative(a, b) -> float:
    return 1.0 if a == b else 0.0


def similarity_quantitative(v: float, w: float, interval: tuple[float, float]) -> float:
    lo, hi = interval
    if (v < lo or v > hi) and (w < lo or w > hi):
        return 1.0
    d = abs(v - w)
    if d < hi - lo:
        return float(np.exp(-np.cbrt(d)))
    return 0.0


def _quantitative_kernel(col: np.ndarray, interval: tuple[float, float]) -> np.ndarray:
    lo, hi = interval
    outside = (col < lo) | (col > hi)
    d = np.abs(col[:, None] - col[None, :])
    k = np.where(d < hi - lo, np.exp(-np.cbrt(d)), 0.0)
    k[outside[:, None] & outside[None, :]] = 1.0
    return k


def _nonquantitative_kernel(col: np.ndarray) -> np.ndarray:
    _, codes = np.unique(col.astype(str), return_inverse=True)
    return (codes[:, None] == codes[None, :]).astype(np.float64)


def build_adjacency(
    table: PhenotypeTable,
    scores: Sequence[MeasureScore],
    intervals: dict[str, tuple[float, float]] | None = None,
) -> np.ndarray:
    """Weighted population adjacency from the selected measures.

    ``A[v, w] = sum_h score_h * similarity_h(v, w)`` off the diagonal; the
    diagonal is zero. Only the upper triangle is evaluated and then mirrored,
    so the result is exactly symmetric.
    """
    chosen = [s for s in scores if s.selected]
    if not chosen:
        raise DataError(
            "empty graph: no measure was selected; supply a manual measure list instead"
        )
    n = len(table)
    iu = np.triu_indices(n, k=1)
    upper = np.zeros(len(iu[0]))
    for s in chosen:
        spec = table.measure(s.measure)
        col = table.values[spec.name]
        if spec.quantitative:
            interval = s.interval
            if interval is None:
                interval = (intervals or {}).get(spec.name) or resolve_interval(table, spec)
            kernel = _quantitative_kernel(col, interval)
        else:
            kernel = _nonquantitative_kernel(col)
        upper += s.pms_score * kernel[iu]
    adj = np.zeros((n, n))
    adj[iu] = upper
    adj.T[iu] = upper
    return adj


def manual_scores(
    table: PhenotypeTable,
    names: Sequence[str],
    intervals: dict[str, tuple[float, float]] | None = None,
) -> list[MeasureScore]:
    """Unit weights on a user-chosen list of measures."""
    if not names:
        raise DataError("manual mode needs at least one measure")
    intervals = intervals or {}
    out = []
    for name in names:
        spec = table.measure(name)
        interval = None
        if spec.quantitative:
            interval = intervals.get(name) or resolve_interval(table, spec)
        out.append(MeasureScore(name, float("nan"), 1.0, interval))
    return out


def unit_weights(scores: Sequence[MeasureScore]) -> list[MeasureScore]:
    """Keep the selection, drop the weights (every selected measure gets 1)."""
    return [
        MeasureScore(s.measure, s.count, 1.0 if s.selected else 0.0, s.interval) for s in scores
    ]


def random_adjacency(n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric graph with i.i.d. uniform(0, 1) weights and zero diagonal."""
    iu = np.triu_indices(n, k=1)
    upper = rng.uniform(0.0, 1.0, size=len(iu[0]))
    adj = np.zeros((n, n))
    adj[iu] = upper
    adj.T[iu] = upper
    return adj
