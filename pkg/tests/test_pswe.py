import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amagcn import pswe
from amagcn.errors import DataError
from amagcn.pswe import (
    MeasureScore,
    MeasureSpec,
    PhenotypeTable,
    build_adjacency,
    compute_pms_scores,
    count_nonquantitative,
    count_quantitative,
    derive_interval,
    similarity_nonquantitative,
    similarity_quantitative,
)

import oracles


def cat_table(cells, theta=0.5, n_classes=2):
    """cells: {token: per-class counts}"""
    labels, tokens = [], []
    for tok, counts in cells.items():
        for cls, c in enumerate(counts):
            labels += [cls] * c
            tokens += [tok] * c
    ids = [f"s{i}" for i in range(len(labels))]
    m = MeasureSpec("k", "non-quantitative", theta=theta)
    return PhenotypeTable(ids, labels, {"k": tokens}, [m], n_classes)


def quant_table(per_class, delta=0.2, interval=(40.0, 60.0)):
    labels, values = [], []
    for cls, vals in enumerate(per_class):
        labels += [cls] * len(vals)
        values += list(vals)
    ids = [f"s{i}" for i in range(len(labels))]
    m = MeasureSpec("q", "quantitative", delta=delta, interval=interval)
    return PhenotypeTable(ids, labels, {"q": values}, [m])


class TestMeasureSpec:
    def test_defaults(self):
        assert MeasureSpec("a", "non-quantitative").theta == 0.5
        q = MeasureSpec("b", "quantitative")
        assert q.delta == 0.2 and q.interval == "auto"

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="non-quantitative", delta=0.1),
            dict(kind="non-quantitative", interval=(0, 1)),
            dict(kind="quantitative", theta=0.5),
            dict(kind="quantitative", interval=(2, 1)),
            dict(kind="ordinal"),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DataError):
            MeasureSpec("x", **kwargs)

    def test_dict_round_trip(self):
        for m in (MeasureSpec("a", "quantitative", interval=(1, 2)), MeasureSpec("b", "non-quantitative")):
            assert MeasureSpec.from_dict(m.to_dict()) == m


class TestCountNonQuantitative:
    def test_worked_example(self):
        t = cat_table({"A": (9, 1), "B": (2, 8)})
        assert oracles.count_nonquantitative(t.labels, list(t.values["k"]), 2, 0.5) == 8.5
        assert count_nonquantitative(t, "k") == 8.5

    def test_pure_single_value(self):
        t = cat_table({"A": (12, 0)})
        assert count_nonquantitative(t, "k") == 12

    def test_even_split(self):
        t = cat_table({"A": (5, 5), "B": (3, 3), "C": (1, 1)})
        assert count_nonquantitative(t, "k") == 0

    def test_errors(self):
        t = cat_table({"A": (3, 3)})
        with pytest.raises(DataError, match="unknown"):
            count_nonquantitative(t, "nope")
        q = quant_table([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(DataError, match="expected non-quantitative"):
            count_nonquantitative(q, "q")


class TestCountQuantitative:
    def test_worked_example(self):
        c1 = [10.0] * 45 + [50.0] * 5
        c2 = [70.0] * 30 + [50.0] * 20
        t = quant_table([c1, c2])
        assert oracles.count_quantitative(t.labels, t.values["q"], 2, 0.2, 40, 60) == 45
        assert count_quantitative(t, "q", (40.0, 60.0)) == 45

    def test_interval_covers_everything(self):
        t = quant_table([[41.0, 50.0], [55.0, 59.0]])
        assert count_quantitative(t, "q", (0.0, 100.0)) == 0

    def test_everything_outside(self):
        t = quant_table([[1.0, 2.0, 3.0], [90.0, 91.0]])
        assert count_quantitative(t, "q", (40.0, 60.0)) == 5

    def test_endpoints_are_inside(self):
        t = quant_table([[40.0, 60.0], [39.0, 61.0]])
        assert count_quantitative(t, "q", (40.0, 60.0)) == 2

    def test_errors(self):
        with pytest.raises(DataError):
            count_quantitative(cat_table({"A": (1, 1)}), "k", (0, 1))
        empty = PhenotypeTable([], [], {"q": []}, [MeasureSpec("q", "quantitative")], n_classes=2)
        with pytest.raises(DataError, match="empty"):
            count_quantitative(empty, "q", (0, 1))


class TestDeriveInterval:
    def _table(self, values):
        return quant_table([values[: len(values) // 2], values[len(values) // 2 :]], interval="auto")

    def test_uniform(self):
        values = [float(v) for v in range(1, 101)]
        lo, hi = derive_interval(self._table(values), "q")
        assert (lo, hi) == (25.75, 75.25)
        assert lo == oracles.quantile_linear(values, 0.25)
        assert hi == oracles.quantile_linear(values, 0.75)

    def test_two_point_mass(self):
        assert derive_interval(self._table([0.0, 0.0, 100.0, 100.0]), "q") == (0.0, 100.0)

    @pytest.mark.parametrize("values", [[5.0] * 10, [1.0, 2.0, 3.0]])
    def test_degenerate(self, values):
        with pytest.raises(DataError, match="supply its interval"):
            derive_interval(self._table(values), "q")


class TestPmsScores:
    def test_worked_example(self):
        scores = compute_pms_scores([("a", 60), ("b", 30), ("c", 30)])
        assert [s.pms_score for s in scores] == [1.5, 0.0, 0.0]
        assert [s.selected for s in scores] == [True, False, False]

    def test_equal_counts(self):
        assert [s.pms_score for s in compute_pms_scores([("a", 7), ("b", 7), ("c", 7)])] == [1, 1, 1]

    def test_single_measure(self):
        assert compute_pms_scores([("a", 3.5)])[0].pms_score == 1.0

    def test_all_zero_warns(self):
        with pytest.warns(RuntimeWarning, match="zero count"):
            scores = compute_pms_scores([("a", 0), ("b", 0)])
        assert all(s.pms_score == 0 for s in scores)

    @given(
        st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=10),
        st.floats(0.01, 100),
    )
    def test_properties(self, counts, scale):
        if sum(counts) == 0:
            return
        named = [(str(i), c) for i, c in enumerate(counts)]
        scores = compute_pms_scores(named)
        h = len(counts)
        for s in scores:
            assert s.pms_score == 0 or s.pms_score >= 1 - 1e-12
            assert s.selected == (s.pms_score > 0)
        assert sum(s.pms_score * s.count for s in scores if s.selected) <= h * max(counts) * (1 + 1e-12)
        if max(counts) > sum(counts) / h:
            assert any(s.selected for s in scores)
        rescaled = compute_pms_scores([(n, c * scale) for n, c in named])
        for a, b in zip(scores, rescaled):
            assert a.pms_score == pytest.approx(b.pms_score, rel=1e-9, abs=1e-12)


class TestSimilarity:
    def test_kronecker(self):
        assert similarity_nonquantitative("site_A", "site_A") == 1
        assert similarity_nonquantitative("site_A", "site_B") == 0
        assert similarity_nonquantitative("M", "M") == 1

    def test_quantitative_cases(self):
        assert similarity_quantitative(10, 200, (40, 60)) == 1.0
        assert similarity_quantitative(50, 50, (40, 60)) == 1.0
        assert abs(similarity_quantitative(50, 58, (40, 60)) - math.exp(-2)) < 1e-12
        assert similarity_quantitative(45, 70, (40, 60)) == 0.0

    def test_both_outside_wins_over_distance(self):
        # |v - w| = 1 < 20 would give exp(-1) under the distance branch
        assert similarity_quantitative(30, 31, (40, 60)) == 1.0

    @settings(max_examples=300)
    @given(
        st.floats(-100, 100),
        st.floats(-100, 100),
        st.floats(-100, 100),
        st.floats(0, 50),
    )
    def test_bounds(self, v, w, lo, width):
        g = similarity_quantitative(v, w, (lo, lo + width))
        assert 0.0 <= g <= 1.0


class TestBuildAdjacency:
    def _pair_table(self):
        d = math.log(2.0) ** 3  # exp(-cbrt(d)) == 0.5
        m = [MeasureSpec("c", "non-quantitative"), MeasureSpec("q", "quantitative", interval=(0.0, 10.0))]
        return PhenotypeTable(["a", "b"], [0, 1], {"c": ["x", "x"], "q": [5.0, 5.0 + d]}, m)

    def test_worked_example(self):
        t = self._pair_table()
        scores = [MeasureScore("c", 1, 1.5), MeasureScore("q", 1, 1.2, (0.0, 10.0))]
        a = build_adjacency(t, scores)
        assert a[0, 1] == pytest.approx(2.1, abs=1e-12)
        assert a[0, 0] == a[1, 1] == 0

    def test_identical_and_disjoint(self):
        m = [MeasureSpec("c", "non-quantitative"), MeasureSpec("q", "quantitative", interval=(0.0, 1.0))]
        t = PhenotypeTable(
            ["a", "b", "c"], [0, 1, 1], {"c": ["x", "x", "y"], "q": [0.5, 0.5, 5.0]}, m
        )
        scores = [MeasureScore("c", 1, 1.3), MeasureScore("q", 1, 2.0, (0.0, 1.0))]
        a = build_adjacency(t, scores)
        assert a[0, 1] == 3.3
        assert a[0, 2] == 0.0 and a[1, 2] == 0.0

    def test_unselected_measures_ignored(self):
        t = self._pair_table()
        a = build_adjacency(t, [MeasureScore("c", 1, 2.0), MeasureScore("q", 0, 0.0)])
        assert a[0, 1] == 2.0

    def test_empty_selection(self):
        t = self._pair_table()
        with pytest.raises(DataError, match="empty graph"):
            build_adjacency(t, [MeasureScore("c", 0, 0.0)])

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            t = oracles.random_table(rng, 25, 4, 2)
            intervals = {m.name: m.interval for m in t.measures if m.quantitative}
            weights = {m.name: float(rng.uniform(0.5, 3)) for m in t.measures}
            scores = [MeasureScore(n, 1, w, intervals.get(n)) for n, w in weights.items()]
            a = build_adjacency(t, scores)
            np.testing.assert_allclose(a, oracles.adjacency(t, weights, intervals), rtol=1e-13, atol=1e-13)
            assert np.array_equal(a, a.T)
            assert np.all(np.diag(a) == 0)
            assert a.min() >= 0 and a.max() <= sum(weights.values()) + 1e-12


class TestRandomizedOracles:
    def test_counts_and_scores(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            t = oracles.random_table(rng, int(rng.integers(10, 120)), int(rng.integers(1, 7)), int(rng.integers(2, 4)))
            counts = []
            for m in t.measures:
                col = t.values[m.name]
                if m.quantitative:
                    got = count_quantitative(t, m.name, m.interval)
                    want = oracles.count_quantitative(t.labels, col, t.n_classes, m.delta, *m.interval)
                else:
                    got = count_nonquantitative(t, m.name)
                    want = oracles.count_nonquantitative(t.labels, list(col), t.n_classes, m.theta)
                assert got == want
                counts.append(got)
            if sum(counts):
                got = [s.pms_score for s in compute_pms_scores(list(zip("abcdef", counts)))]
                assert got == oracles.pms_scores(counts)


class TestPlanted:
    def test_pure_versus_balanced(self):
        n = 40
        labels = np.arange(n) % 2
        pure = np.where(labels == 0, "x", "y")
        balanced = np.array(["a", "a", "b", "b"] * (n // 4))
        m = [MeasureSpec("pure", "non-quantitative"), MeasureSpec("bal", "non-quantitative")]
        t = PhenotypeTable([str(i) for i in range(n)], labels, {"pure": pure, "bal": balanced}, m)
        assert count_nonquantitative(t, "pure") == n / 2
        assert count_nonquantitative(t, "bal") == 0
        scores = pswe.score_measures(t)
        assert [s.selected for s in scores] == [True, False]

    def test_manual_and_unit_weights(self):
        t = cat_table({"A": (4, 0), "B": (0, 4)})
        manual = pswe.manual_scores(t, ["k"])
        assert manual[0].pms_score == 1.0
        a = build_adjacency(t, manual)
        assert set(np.unique(a)) == {0.0, 1.0}
        unit = pswe.unit_weights([MeasureScore("k", 4, 1.7), MeasureScore("z", 0, 0.0)])
        assert [s.pms_score for s in unit] == [1.0, 0.0]


def test_random_adjacency():
    a = pswe.random_adjacency(6, np.random.default_rng(0))
    b = pswe.random_adjacency(6, np.random.default_rng(0))
    assert np.array_equal(a, b)
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)
    assert a.min() >= 0 and a.max() <= 1
