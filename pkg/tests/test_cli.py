import hashlib
import json
import warnings

import numpy as np
import pytest

from amagcn import cli, dataio
from amagcn.container import read_container
from amagcn.dataio import SynthSpec, generate_synthetic


@pytest.fixture(autouse=True)
def _quiet_clamp():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def dataset(tmp_path):
    table, x = generate_synthetic(SynthSpec(n=60, m=6, seed=1))
    paths = dataio.write_dataset(table, x, tmp_path / "d")
    return {k: str(v) for k, v in paths.items()}


def data_args(dataset, *keys):
    out = []
    for k in keys:
        out += [f"--{k}", dataset[k]]
    return out


class TestSynth:
    def test_default_files(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path), "--name", "ref"]) == 0
        truth = json.loads(capsys.readouterr().out)
        table = dataio.load_phenotypes(tmp_path / "ref.phenotypes.csv", tmp_path / "ref.measures.json")
        assert len(table) == SynthSpec().n == truth["spec"]["n"]
        assert dataio.load_features(tmp_path / "ref.features.bin").shape == (300, 32)
        assert truth["noise"] == SynthSpec().noise()

    def test_seed_changes_files(self, tmp_path):
        cli.main(["synth", "--out", str(tmp_path / "a"), "--n", "40", "--seed", "1"])
        cli.main(["synth", "--out", str(tmp_path / "b"), "--n", "40", "--seed", "2"])
        for suffix in ("phenotypes.csv", "features.bin"):
            assert digest(tmp_path / "a" / f"synthetic.{suffix}") != digest(tmp_path / "b" / f"synthetic.{suffix}")

    def test_spec_file(self, tmp_path, capsys):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"n": 50, "m": 3}))
        cli.main(["synth", "--out", str(tmp_path), "--spec", str(spec)])
        assert json.loads(capsys.readouterr().out)["spec"]["n"] == 50

    def test_pure_ground_truth_is_recovered(self, tmp_path, capsys):
        cli.main(["synth", "--out", str(tmp_path), "--purity", "1.0", "--name", "p"])
        truth = json.loads(capsys.readouterr().out)
        cli.main([
            "select-measures", "--phenotypes", str(tmp_path / "p.phenotypes.csv"),
            "--measures", str(tmp_path / "p.measures.json"), "--out", str(tmp_path / "sel"),
        ])
        report = json.loads((tmp_path / "sel" / "measures_report.json").read_text())
        selected = [m["measure"] for m in report["measures"] if m["selected"]]
        assert selected == truth["informative"]

    def test_invalid_spec_exit_code(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path), "--purity", "0.1"]) == 2


class TestSelectMeasures:
    def test_single_measure_alpha_one(self, tmp_path, dataset):
        specs = json.loads(open(dataset["measures"]).read())
        one = tmp_path / "one.json"
        one.write_text(json.dumps([s for s in specs if s["name"] == "inf_cat_0"]))
        cli.main(["select-measures", "--phenotypes", dataset["phenotypes"], "--measures", str(one),
                  "--out", str(tmp_path / "o")])
        report = json.loads((tmp_path / "o" / "measures_report.json").read_text())
        assert [m["pms_score"] for m in report["measures"]] == [1.0]

    def test_empty_after_filter(self, tmp_path, dataset):
        lines = open(dataset["phenotypes"]).read().splitlines()
        blank = tmp_path / "blank.csv"
        blank.write_text(lines[0] + "\n" + "\n".join(l.rsplit(",", 1)[0] + "," for l in lines[1:]) + "\n")
        code = cli.main(["select-measures", "--phenotypes", str(blank), "--measures", dataset["measures"],
                         "--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_file(self, tmp_path):
        code = cli.main(["select-measures", "--phenotypes", str(tmp_path / "x.csv"),
                         "--measures", str(tmp_path / "m.json"), "--out", str(tmp_path)])
        assert code == 2

    def test_config_echo(self, tmp_path, dataset, capsys):
        cli.main(["select-measures", *data_args(dataset, "phenotypes", "measures"), "--out", str(tmp_path / "o")])
        echo = json.loads(capsys.readouterr().err.split("\n}\n")[0] + "\n}")
        assert echo["config"]["epochs"] == 300 and len(echo["config_hash"]) == 64
        saved = json.loads((tmp_path / "o" / "config.json").read_text())
        assert saved["config_hash"] == echo["config_hash"]


class TestBuildGraph:
    def _build(self, tmp_path, dataset, name, *extra):
        out = tmp_path / name
        assert cli.main(["build-graph", *data_args(dataset, "phenotypes", "measures"), "--out", str(out), *extra]) == 0
        return out

    def test_pswe_bounds(self, tmp_path, dataset):
        out = self._build(tmp_path, dataset, "g", "--dump-laplacian", str(tmp_path / "lap.csv"))
        a = dataio.load_adjacency(out / "adjacency.csv")
        info = json.loads((out / "graph_info.json").read_text())
        np.testing.assert_array_equal(a, a.T)
        assert np.all(np.diag(a) == 0)
        assert a.max() <= sum(info["selected"].values()) + 1e-12
        np.testing.assert_array_equal(dataio.load_adjacency(out / "edges.tsv"), a)
        lap = np.loadtxt(tmp_path / "lap.csv", delimiter=",")
        np.testing.assert_allclose(np.diag(lap)[a.sum(axis=1) > 0], 1.0)

    def test_random_same_seed(self, tmp_path, dataset):
        a = self._build(tmp_path, dataset, "r1", "--mode", "random", "--seed", "3")
        b = self._build(tmp_path, dataset, "r2", "--mode", "random", "--seed", "3")
        c = self._build(tmp_path, dataset, "r3", "--mode", "random", "--seed", "4")
        assert digest(a / "adjacency.csv") == digest(b / "adjacency.csv") != digest(c / "adjacency.csv")

    def test_manual_kronecker_blocks(self, tmp_path, dataset):
        out = self._build(tmp_path, dataset, "m", "--mode", "manual", "--manual-measures", "noise_cat_0")
        a = dataio.load_adjacency(out / "adjacency.csv")
        tokens = np.asarray(dataio.load_phenotypes(dataset["phenotypes"], dataset["measures"]).values["noise_cat_0"])
        order = np.argsort(tokens, kind="stable")
        blocks = a[np.ix_(order, order)] + np.eye(len(a))
        sizes = np.unique(tokens, return_counts=True)[1]
        want = np.zeros_like(blocks)
        start = 0
        for s in sizes:
            want[start : start + s, start : start + s] = 1
            start += s
        np.testing.assert_array_equal(blocks, want)

    def test_unknown_manual_measure(self, tmp_path, dataset):
        code = cli.main(["build-graph", *data_args(dataset, "phenotypes", "measures"), "--out", str(tmp_path),
                         "--mode", "manual", "--manual-measures", "nope"])
        assert code in (1, 2)


class TestTraining:
    def test_train_outputs(self, tmp_path, dataset):
        out = tmp_path / "t"
        code = cli.main(["train", *data_args(dataset, "phenotypes", "measures", "features"),
                         "--out", str(out), "--epochs", "4", "--folds", "3"])
        assert code == 0
        log = [json.loads(l) for l in (out / "train_log.ndjson").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [0, 1, 2, 3]
        arrays, meta = read_container(out / "model.ckpt")
        assert meta["config_hash"] and "gc0.w0" in arrays

    def test_cross_validate_determinism(self, tmp_path, dataset):
        args = [*data_args(dataset, "phenotypes", "measures", "features"), "--epochs", "3", "--folds", "3"]
        cli.main(["cross-validate", *args, "--out", str(tmp_path / "a")])
        cli.main(["cross-validate", *args, "--out", str(tmp_path / "b")])
        for rel in ("report.json", "report.csv", "checkpoints/fold0.ckpt", "checkpoints/fold2.ckpt"):
            assert digest(tmp_path / "a" / rel) == digest(tmp_path / "b" / rel), rel
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["variants"][0]["name"] == "full"

    def test_nos_echoes_lambda_zero(self, tmp_path, dataset, capsys):
        cli.main(["cross-validate", *data_args(dataset, "phenotypes", "measures", "features"), "--epochs", "2",
                  "--folds", "2", "--ablation", "noS", "--out", str(tmp_path / "s")])
        assert '"lam": 0' in capsys.readouterr().err
        report = json.loads((tmp_path / "s" / "report.json").read_text())
        assert report["config"]["lam"] == 0

    def test_config_file_overrides_flags(self, tmp_path, dataset):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"epochs": 2, "folds": 2}))
        cli.main(["cross-validate", *data_args(dataset, "phenotypes", "measures", "features"), "--epochs", "9",
                  "--config", str(cfg), "--out", str(tmp_path / "c")])
        report = json.loads((tmp_path / "c" / "report.json").read_text())
        assert report["config"]["epochs"] == 2 and len(report["variants"][0]["fold_acc"]) == 2

    def test_unknown_config_key(self, tmp_path, dataset):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"epochz": 2}))
        code = cli.main(["cross-validate", *data_args(dataset, "phenotypes", "measures", "features"),
                         "--config", str(cfg), "--out", str(tmp_path / "c")])
        assert code == 1

    def test_feature_row_mismatch(self, tmp_path, dataset):
        bad = tmp_path / "x.csv"
        dataio.save_features(np.zeros((10, 2)), bad)
        code = cli.main(["cross-validate", *data_args(dataset, "phenotypes", "measures"), "--features", str(bad),
                         "--epochs", "1", "--out", str(tmp_path / "c")])
        assert code == 2

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["cross-validate", "--epochs", "many"])
        assert exc.value.code == 1

    def test_ablation_sweep(self, tmp_path, dataset):
        code = cli.main(["sweep", "--kind", "ablations", *data_args(dataset, "phenotypes", "measures", "features"),
                         "--manual-measures", "noise_cat_0", "--epochs", "2", "--folds", "2",
                         "--out", str(tmp_path / "s")])
        assert code == 0
        names = [v["name"] for v in json.loads((tmp_path / "s" / "report.json").read_text())["variants"]]
        assert names == ["full", "noP", "noW", "noA", "noS", "ridge"]
