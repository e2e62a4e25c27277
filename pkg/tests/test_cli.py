import csv
import json

import numpy as np
import pytest

from pfspinn.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, stabilizer_spec
from pfspinn.dataio import read_dataset, read_model_document

GEN = ["gen-data", "--grid", "16", "--eps", "0.1", "--mobility", "1", "--fine-dt", "1e-3", "--seed", "3"]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "d.spnn"
    assert main(GEN + ["--pairs", "2", "--t-start", "0,0.01", "--delta", "0.01", "--out", str(path)]) == EXIT_OK
    return path


def test_gen_data_writes_dataset_and_sidecar(dataset):
    ds = read_dataset(dataset)
    assert len(ds) == 2 and ds.grid.shape == (16, 16)
    assert [p.delta for p in ds.pairs] == [0.01, 0.01]
    side = json.loads(dataset.with_name("d.spnn.json").read_text())
    assert side["prng"] == "numpy.random.Philox"
    assert side["args"]["seed"] == 3
    assert side["meta"]["generator"]["model"]["mobility"] == {"kind": "ac", "M": 1.0}


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(GEN + ["--t-random", "0:0.02", "--pairs", "3", "--out", str(tmp_path / f"{name}.spnn")]) == 0
    assert (tmp_path / "a.spnn").read_bytes() == (tmp_path / "b.spnn").read_bytes()
    t = read_dataset(tmp_path / "a.spnn").meta["t_start"]
    assert len(t) == 3 and all(0 <= v <= 0.02 for v in t)


@pytest.mark.parametrize(
    "extra",
    [
        ["--grid", "127"],
        ["--eps", "-1"],
        ["--init", "gaussian:1"],
        ["--pairs", "2", "--delta", "0.1,0.2,0.3"],
        ["--model", "ch-fh"],
    ],
)
def test_gen_data_validation(tmp_path, extra, capsys):
    argv = GEN + extra + ["--out", str(tmp_path / "x.spnn")]
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_VALIDATION
    assert not (tmp_path / "x.spnn").exists()


def test_train_eval_pipeline(dataset, tmp_path, capsys):
    model = tmp_path / "m.json"
    argv = ["train", "--data", str(dataset), "--adam-iters", "200", "--lbfgs-iters", "5", "--out", str(model)]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "iter    100" in out and "iter    200" in out
    doc = read_model_document(model)
    assert doc["meta"]["stabilizer"] == "s0=2"
    assert doc["meta"]["config"]["variant"]["anchor_weight"] == 0.0

    curve = tmp_path / "c.csv"
    assert main(["eval", "--model-file", str(model), "--range", "-1:1:21", "--out", str(curve)]) == 0
    out = capsys.readouterr().out
    assert "Linf" in out and "data phi-range" in out
    with open(curve, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["phi", "f_learned", "f_true"] and len(rows) == 22

    assert main(["eval", "--model-file", str(model), "--truth", "none", "--range", "0:1:5", "--out", str(curve)]) == 0
    with open(curve, newline="") as fh:
        assert next(csv.reader(fh)) == ["phi", "f_learned"]


def test_train_is_reproducible(dataset, tmp_path):
    argv = ["train", "--data", str(dataset), "--loss", "rk4", "--adam-iters", "10", "--no-lbfgs"]
    argv += ["--out", str(tmp_path / "m.json")]
    outputs = []
    for _ in range(2):
        assert main(argv) == 0
        outputs.append((tmp_path / "m.json").read_bytes() + (tmp_path / "m.json.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_train_ch_defaults(tmp_path):
    path = tmp_path / "ch.spnn"
    argv = ["gen-data", "--model", "ch-dw", "--grid", "16", "--eps", "0.05", "--mobility", "1"]
    argv += ["--init", "random:0.001:0.2", "--fine-dt", "1e-4", "--delta", "1e-3", "--out", str(path)]
    assert main(argv) == 0
    assert read_dataset(path).meta["generator"]["scheme"] == "pc"
    model = tmp_path / "m.json"
    assert main(["train", "--data", str(path), "--adam-iters", "2", "--no-lbfgs", "--out", str(model)]) == 0
    meta = read_model_document(model)["meta"]
    assert meta["stabilizer"] == "s1=-2"
    assert meta["config"]["variant"]["anchor_weight"] == 1e3


@pytest.mark.parametrize("text, coeffs", [("s0=2", (2.0,)), ("s1=-2", (0.0, -2.0)), ("s0=1,s2=0.5", (1.0, 0.0, 0.5))])
def test_stabilizer_spec(text, coeffs):
    assert stabilizer_spec(text) == coeffs


@pytest.mark.parametrize("extra", [["--k", "0"], ["--stab", "c0=2"], ["--stab", "s9=1"], ["--lr", "0"]])
def test_train_validation(dataset, tmp_path, extra):
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", str(dataset), "--out", str(tmp_path / "m.json")] + extra)
    assert info.value.code == EXIT_VALIDATION


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.spnn"), "--out", str(tmp_path / "m.json")]) == EXIT_IO


def test_train_corrupt_dataset(dataset, tmp_path):
    dataset.write_bytes(b"XXXXXXXX" + dataset.read_bytes()[8:])
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "m.json")]) == EXIT_IO


def test_train_blow_up_is_numerical(dataset, tmp_path):
    # an absurd interface width makes the explicit RK4 map overflow
    argv = ["train", "--data", str(dataset), "--loss", "rk4", "--eps", "1e40", "--adam-iters", "5", "--no-lbfgs"]
    with np.errstate(all="ignore"):
        assert main(argv + ["--out", str(tmp_path / "m.json")]) == EXIT_NUMERICAL


def test_eval_flory_huggins_domain(dataset, tmp_path):
    model = tmp_path / "m.json"
    assert main(["train", "--data", str(dataset), "--adam-iters", "0", "--no-lbfgs", "--out", str(model)]) == 0
    argv = ["eval", "--model-file", str(model), "--truth", "flory-huggins", "--range", "0:1:11"]
    assert main(argv + ["--out", str(tmp_path / "c.csv")]) == EXIT_VALIDATION


def test_eval_bad_model_file(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"layer_sizes": [1, 1]}))
    assert main(["eval", "--model-file", str(tmp_path / "m.json"), "--out", str(tmp_path / "c.csv")]) == EXIT_IO


class TestSimulate:
    def run(self, tmp_path, *extra):
        argv = ["simulate", "--grid", "16", "--eps", "0.05", "--mobility", "1", "--dt", "1e-3"]
        argv += ["--out-dir", str(tmp_path)]
        return main(argv + list(extra))

    def diagnostics(self, tmp_path):
        with open(tmp_path / "diagnostics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time", "energy", "mass"]
        return np.array(rows[1:], dtype=float)

    def test_stationary_state(self, tmp_path):
        assert self.run(tmp_path, "--init", "random:0:1", "--t-end", "0.01", "--snapshots", "0,0.005") == 0
        for name in ("snapshot_00000000.spnn", "snapshot_00000005.spnn"):
            pair = read_dataset(tmp_path / name).pairs[0]
            np.testing.assert_array_equal(pair.phi1, 1.0)
            np.testing.assert_array_equal(pair.phi2, 1.0)
            assert pair.delta == 1e-3

    def test_ch_mass_column(self, tmp_path):
        extra = ["--model", "ch-dw", "--init", "random:0.1:0.2", "--t-end", "0.2", "--scheme", "stabilized"]
        assert self.run(tmp_path, *extra) == 0
        d = self.diagnostics(tmp_path)
        assert len(d) == 21
        assert np.ptp(d[:, 2]) < 1e-10

    def test_ac_energy_column(self, tmp_path):
        extra = ["--init", "random:0.5", "--t-end", "0.1", "--scheme", "stabilized", "--diag-every", "1"]
        assert self.run(tmp_path, *extra) == 0
        e = self.diagnostics(tmp_path)[:, 1]
        assert np.all(np.diff(e) <= 1e-8)

    def test_misaligned_snapshot(self, tmp_path):
        assert self.run(tmp_path, "--snapshots", "0.0005") == EXIT_VALIDATION

    def test_blow_up_reports_step(self, tmp_path, capsys):
        with np.errstate(all="ignore"):
            code = main(["simulate", "--grid", "16", "--eps", "0.1", "--mobility", "10", "--dt", "0.5", "--t-end", "10",
                         "--init", "random:50", "--scheme", "rk4", "--out-dir", str(tmp_path)])
        assert code == EXIT_NUMERICAL
        assert "step=" in capsys.readouterr().err
