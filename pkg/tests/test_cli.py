import csv
import json

import numpy as np
import pytest

from qmesh.cli import main
from qmesh.data import load_csv
from qmesh.vqc import QuantumGasClassifier


def run(argv, capsys):
    code = main([*argv, "--quiet"])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--per-class", "8", "--classes", "2", "--spread", "0.03", "--seed", "1",
                 "--out", str(d), "--quiet"]) == 0
    return d / "dataset.csv"


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", str(dataset), "--layers", "1", "--eta", "0.1", "-K", "6", "--test-fraction", "0.25",
                 "--out", str(out), "--quiet"])
    assert code == 0
    return out


# --------------------------------------------------------------------------
# train


def test_train_outputs(trained):
    metrics = json.loads((trained / "metrics.json").read_text())
    assert 0.0 <= metrics["macro_f1"] <= 1.0
    assert metrics["n_train"] + metrics["n_test"] == 16
    model = json.loads((trained / "model.json").read_text())
    assert model["layers"] == 1 and len(model["params"]) == 21
    rows = list(csv.reader((trained / "trace.csv").open()))
    assert rows[0] == ["iteration", "eta_k", "cost"]
    assert 1 <= len(rows) - 1 <= 6
    assert float(rows[1][1]) == 0.1
    assert json.loads((trained / "config.json").read_text())["train"]["max_iters"] == 6


def test_single_iteration_trace(dataset, tmp_path, capsys):
    code, _, _ = run(["train", str(dataset), "--layers", "1", "-K", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 2


def test_train_rerun_is_byte_identical(dataset, trained, tmp_path, capsys):
    code, _, _ = run(["train", str(dataset), "--layers", "1", "--eta", "0.1", "-K", "6", "--test-fraction", "0.25",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    for name in ("trace.csv", "model.json", "metrics.json"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_train_missing_file_exits_2(tmp_path, capsys):
    code, _, err = run(["train", str(tmp_path / "nope.csv"), "--out", str(tmp_path)], capsys)
    assert code == 2 and "cannot read" in err


# --------------------------------------------------------------------------
# predict and evaluate


def test_predict_input_file(trained, dataset, tmp_path, capsys):
    code, out, _ = run(["predict", str(trained / "model.json"), "--input", str(dataset), "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 16
    first = json.loads(lines[0])
    assert set(first) == {"probs", "label"}
    assert sum(first["probs"].values()) <= 1 + 1e-12
    assert (tmp_path / "predictions.jsonl").read_text() == out


def test_predict_row_matches_estimator(trained, dataset, tmp_path, capsys):
    ds = load_csv(dataset)
    row = ",".join(repr(float(v)) for v in ds.X[0])
    code, out, _ = run(["predict", str(trained / "model.json"), "--row", row, "--out", str(tmp_path)], capsys)
    assert code == 0
    clf = QuantumGasClassifier.load(trained / "model.json")
    assert json.loads(out)["label"] == clf.predict(ds.X[:1])[0]
    assert np.allclose(list(json.loads(out)["probs"].values()), clf.predict_proba(ds.X[:1])[0])


def test_predict_malformed_row_exits_2(trained, tmp_path, capsys):
    code, out, err = run(["predict", str(trained / "model.json"), "--row", "1,2,x,4,5,6,7", "--out", str(tmp_path)], capsys)
    assert code == 2 and out == ""
    assert "column 3" in err


def test_predict_wrong_arity_exits_2(trained, tmp_path, capsys):
    code, _, err = run(["predict", str(trained / "model.json"), "--row", "1,2,3", "--out", str(tmp_path)], capsys)
    assert code == 2 and "expected 7" in err


def test_evaluate(trained, dataset, tmp_path, capsys):
    code, _, _ = run(["evaluate", str(trained / "model.json"), str(dataset), "--out", str(tmp_path)], capsys)
    assert code == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert sum(c["support"] for c in m["per_class"].values()) == 16


# --------------------------------------------------------------------------
# protocol


def _protocol(tmp_path, capsys, *extra):
    code, _, err = run(["protocol", "--seed", "7", "--shots", "1000", "--out", str(tmp_path), *extra], capsys)
    return code, err


def test_protocol_single_vehicle(tmp_path, capsys):
    code, _ = _protocol(tmp_path, capsys)
    assert code == 0
    doc = json.loads((tmp_path / "protocol.json").read_text())
    assert sum(doc["histograms"]["Z"].values()) == 1000
    assert set(doc["histograms"]) == {"Z", "X", "Y"}
    assert doc["entanglement"][0]["concurrence"] >= 0.99


def test_protocol_noise_lowers_fidelity(tmp_path, capsys):
    _protocol(tmp_path / "a", capsys, "--probe-trajectories", "400")
    _protocol(tmp_path / "b", capsys, "--probe-trajectories", "400", "--noise", "0.2")
    fa = json.loads((tmp_path / "a" / "protocol.json").read_text())["teleport_fidelities"][0]
    fb = json.loads((tmp_path / "b" / "protocol.json").read_text())["teleport_fidelities"][0]
    assert fa > fb


def test_protocol_rerun_identical(tmp_path, capsys):
    args = ["--vehicles", "2", "--shots", "50", "--marginal", "1,4", "--noise", "0.05"]
    _protocol(tmp_path / "a", capsys, *args)
    _protocol(tmp_path / "b", capsys, *args)
    a = (tmp_path / "a" / "protocol.json").read_bytes()
    assert a == (tmp_path / "b" / "protocol.json").read_bytes()
    assert set(json.loads(a)["marginals"]["Z"]) <= {"00", "01", "10", "11"}


def test_protocol_capacity_error(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QMESH_MAX_QUBITS", "12")
    code, err = _protocol(tmp_path, capsys, "--vehicles", "5")
    assert code == 2 and "3n = 15" in err


# --------------------------------------------------------------------------
# gradcheck, stats, export, timing


def test_gradcheck_pass(tmp_path, capsys):
    code, out, _ = run(["gradcheck", "--probes", "3", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("PASS")
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["max_abs_diff"] <= 1e-6 and rep["n_probes"] == 3


def test_gradcheck_corrupt_fails(tmp_path, capsys):
    code, out, _ = run(["gradcheck", "--probes", "2", "--corrupt", "--out", str(tmp_path)], capsys)
    assert code == 1 and out.startswith("FAIL")
    assert json.loads((tmp_path / "gradcheck.json").read_text())["max_abs_diff"] > 1e-3


def test_stats(dataset, tmp_path, capsys):
    code, _, _ = run(["stats", str(dataset), "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "stats.json").read_text())
    assert doc["n_records"] == 16 and len(doc["sensors"]) == 7


def test_export_pairs(dataset, tmp_path, capsys):
    code, _, _ = run(["export-pairs", str(dataset), "--sensors", "MQ2,MQ7,MQ135", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert len((tmp_path / "pairs.csv").read_text().splitlines()) == 1 + 3 * 16


def test_timing(trained, dataset, tmp_path, capsys):
    code, _, _ = run(["timing", str(trained / "model.json"), str(dataset), "--sizes", "4,8",
                      "--baseline", "logistic", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "timing.csv").open()))
    assert [(r["method"], r["n_rows"]) for r in rows] == [("vqc", "4"), ("vqc", "8"), ("logistic", "4"), ("logistic", "8")]


# --------------------------------------------------------------------------
# configuration layering


def test_config_echo_and_layering(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "protocol": {"shots": 20, "n_vehicles": 2}}))
    code = main(["protocol", "--config", str(cfg), "--shots", "10", "--out", str(tmp_path / "o")])
    _, err = capsys.readouterr()
    assert code == 0
    echoed = json.loads(err.splitlines()[0])
    assert echoed["seed"] == 3
    assert echoed["protocol"]["shots"] == 10 and echoed["protocol"]["n_vehicles"] == 2
    assert echoed == json.loads((tmp_path / "o" / "config.json").read_text())


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    code, _, err = run(["protocol", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "not valid JSON" in err
