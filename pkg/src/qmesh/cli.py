"""Command-line front end.

Every subcommand resolves its configuration as built-in defaults, then an
optional ``--config`` JSON file, then explicit flags (later wins). The
effective configuration is written to ``<out>/config.json`` before any work
starts. Exit codes: 0 success, 1 internal error or failed check, 2 bad input.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .exceptions import QmeshError, ValidationError

DEFAULTS = {
    "seed": 0,
    "out": "qmesh-out",
    "data": {"test_fraction": 0.2, "label_column": None, "aliases": {}},
    "encoder": {"layers": 2, "angle_scale": math.pi / 2},
    "train": {"eta": 0.05, "epsilon": 1e-6, "max_iters": 200, "shift": math.pi / 2,
              "gradient_mode": "ParameterShift"},
    "noise": {"p_depolarizing": 0.0, "policy": "AfterEveryGate"},
    "protocol": {"n_vehicles": 1, "rounds": 1, "shots": 1024, "bases": ["Z", "X", "Y"],
                 "qpe_ancillas": 0, "qpe_phase": math.pi / 2, "reset_per_round": False,
                 "probe_trajectories": None, "marginal": None},
    "gradcheck": {"n_probes": 10, "n_qubits": 4, "layers": [1, 2], "n_samples": 5, "corrupt": False},
    "synthetic": {"n_per_class": 100, "n_classes": 3, "spread": 0.05},
    "timing": {"sizes": [20, 40, 60, 80, 100], "repeats": 1, "baseline": None},
    "export": {"sensors": None},
}

SECTIONS = {
    "train": ("data", "encoder", "train"),
    "predict": (),
    "evaluate": ("data",),
    "protocol": ("noise", "protocol"),
    "gradcheck": ("gradcheck", "train"),
    "stats": ("data",),
    "export-pairs": ("data", "export"),
    "synth": ("synthetic",),
    "timing": ("data", "timing"),
}


class _Echo:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args, file=sys.stderr)


def _csv_strings(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _flag(parser, *names, key, **kw):
    """Register a flag that overrides ``key`` (``section.field``) only when given."""
    parser.add_argument(*names, dest="set:" + key, default=argparse.SUPPRESS, **kw)


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "aliases":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"config {args.config} must hold a JSON object")
        cfg = _merge(cfg, doc)
    for dest, value in vars(args).items():
        if not dest.startswith("set:"):
            continue
        path = dest[4:].split(".")
        node = cfg
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    keep = {"command": args.command, "seed": cfg["seed"], "out": cfg["out"]}
    for s in SECTIONS[args.command]:
        keep[s] = cfg[s]
    return keep


def _write_json(path: Path, doc) -> Path:
    return atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_dataset(cfg: dict, path):
    from .data import load_csv

    d = cfg["data"]
    return load_csv(path, d.get("label_column"), d.get("aliases") or None)


# --------------------------------------------------------------------------
# commands


def cmd_train(args, cfg, out: Path, echo) -> int:
    from .data import split
    from .vqc import QuantumGasClassifier

    ds = _load_dataset(cfg, args.dataset)
    train, test = split(ds, cfg["data"]["test_fraction"], cfg["seed"])
    t, e = cfg["train"], cfg["encoder"]
    clf = QuantumGasClassifier(
        layers=e["layers"], angle_scale=e["angle_scale"], eta=t["eta"], epsilon=t["epsilon"],
        max_iter=t["max_iters"], shift=t["shift"], gradient_mode=t["gradient_mode"],
        random_state=cfg["seed"],
    )

    def progress(row):
        if row.iteration % 10 == 0:
            echo(f"iter {row.iteration:4d}  eta {row.eta_k:.5f}  cost {row.cost:.6f}")

    clf.fit(train.X, train.y, callback=progress)
    clf.save(out / "model.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "eta_k", "cost"])
    for r in clf.cost_trace_:
        w.writerow([r.iteration, repr(r.eta_k), repr(r.cost)])
    atomic_write_text(out / "trace.csv", buf.getvalue())
    metrics = {
        "train": clf.evaluate(train.X, train.y).to_dict(),
        "test": clf.evaluate(test.X, test.y).to_dict(),
        "initial_cost": clf.cost_trace_[0].cost,
        "final_cost": clf.final_cost_,
        "n_iter": clf.n_iter_,
        "n_train": len(train),
        "n_test": len(test),
    }
    metrics["macro_f1"] = metrics["test"]["macro_f1"]
    _write_json(out / "metrics.json", metrics)
    echo(f"test macro-F1 {metrics['macro_f1']:.4f}; wrote {out / 'model.json'}")
    return 0


def _predict_rows(args) -> np.ndarray:
    from .data import load_readings

    if args.row is None:
        return load_readings(args.input)
    vals = []
    for j, cell in enumerate(args.row.split(","), start=1):
        try:
            vals.append(float(cell))
        except ValueError:
            raise ValidationError(f"--row: row 1, column {j}: non-numeric value {cell.strip()!r}") from None
    return np.array([vals])


def cmd_predict(args, cfg, out: Path, echo) -> int:
    from .vqc import predict

    model = _load_model(args.model)
    rows = _predict_rows(args)
    n = model.encoder.n_qubits
    if rows.shape[1] != n:
        raise ValidationError(f"expected {n} readings per row, got {rows.shape[1]}")
    lines = []
    for r in rows:
        res = predict(model, r)
        lines.append(json.dumps({"probs": res["probs"], "label": res["label"]}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "predictions.jsonl", text)
    sys.stdout.write(text)
    return 0


def _load_model(path):
    from .vqc import VqcModel

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model {path} is not valid JSON: {exc}") from exc
    return VqcModel.from_dict(doc)


def cmd_evaluate(args, cfg, out: Path, echo) -> int:
    from .vqc import evaluate

    model = _load_model(args.model)
    ds = _load_dataset(cfg, args.dataset)
    m = evaluate(model, ds.X, list(ds.y))
    _write_json(out / "metrics.json", m.to_dict())
    echo(f"macro-F1 {m.macro_f1:.4f} on {len(ds)} records")
    return 0


def cmd_protocol(args, cfg, out: Path, echo) -> int:
    from .noise import NoiseModel
    from .protocol import ProtocolConfig, run_protocol

    p = dict(cfg["protocol"])
    marginal = p.pop("marginal", None)
    pc = ProtocolConfig(noise=NoiseModel.from_dict(cfg["noise"]), seed=cfg["seed"], **p)
    res = run_protocol(pc)
    doc = res.to_dict()
    if marginal:
        doc["marginals"] = {b.value: res.marginal(b, marginal).to_dict() for b in pc.bases}
    _write_json(out / "protocol.json", doc)
    echo(f"mean teleport fidelity {np.mean(res.teleport_fidelities):.6f}; wrote {out / 'protocol.json'}")
    return 0


def cmd_gradcheck(args, cfg, out: Path, echo) -> int:
    from .vqc import gradcheck

    g = cfg["gradcheck"]
    rep = gradcheck(g["n_probes"], g["n_qubits"], tuple(g["layers"]), g["n_samples"], cfg["seed"],
                    cfg["train"]["shift"], corrupt=g["corrupt"])
    _write_json(out / "gradcheck.json", rep)
    verdict = "PASS" if rep["passed"] else "FAIL"
    print(f"{verdict} max_abs_diff={rep['max_abs_diff']:.3e} threshold={rep['threshold']:.0e} n_probes={rep['n_probes']}")
    return 0 if rep["passed"] else 1


def cmd_stats(args, cfg, out: Path, echo) -> int:
    from .data import summary_stats

    ds = _load_dataset(cfg, args.dataset)
    doc = {"n_records": len(ds), "class_counts": ds.class_counts(), "sensors": summary_stats(ds)}
    _write_json(out / "stats.json", doc)
    for s, v in doc["sensors"].items():
        echo(f"{s:6s} min {v['min']:10.3f} max {v['max']:10.3f} mean {v['mean']:10.3f} var {v['variance']:12.3f}")
    return 0


def cmd_export_pairs(args, cfg, out: Path, echo) -> int:
    from .data import export_pairdata

    ds = _load_dataset(cfg, args.dataset)
    path = export_pairdata(ds, out / "pairs.csv", cfg["export"]["sensors"])
    echo(f"wrote {path}")
    return 0


def cmd_synth(args, cfg, out: Path, echo) -> int:
    from .data import save_csv, synthetic_clusters

    s = cfg["synthetic"]
    ds = synthetic_clusters(s["n_per_class"], s["n_classes"], s["spread"], cfg["seed"])
    path = save_csv(ds, out / "dataset.csv")
    echo(f"wrote {len(ds)} records to {path}")
    return 0


def cmd_timing(args, cfg, out: Path, echo) -> int:
    from .timing import time_predictions, write_timing_csv
    from .vqc import QuantumGasClassifier

    clf = QuantumGasClassifier.from_model(_load_model(args.model))
    ds = _load_dataset(cfg, args.dataset)
    predictors = {"vqc": clf.predict}
    t = cfg["timing"]
    if t.get("baseline") == "logistic":
        from sklearn.linear_model import LogisticRegression
        from sklearn.pipeline import make_pipeline
        from sklearn.preprocessing import MinMaxScaler

        base = make_pipeline(MinMaxScaler(), LogisticRegression(max_iter=1000)).fit(ds.X, ds.y)
        predictors["logistic"] = base.predict
    elif t.get("baseline"):
        raise ValidationError(f"unknown baseline {t['baseline']!r}; available: logistic")
    rows = time_predictions(predictors, ds.X, t["sizes"], t["repeats"])
    write_timing_csv(rows, out / "timing.csv")
    for r in rows:
        echo(f"{r.method:9s} n={r.n_rows:4d} {r.seconds_per_row * 1e3:9.3f} ms/row")
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "protocol": cmd_protocol,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
    "export-pairs": cmd_export_pairs,
    "synth": cmd_synth,
    "timing": cmd_timing,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration overrides")
    _flag(common, "--seed", key="seed", type=int, help="run seed (default 0)")
    _flag(common, "--out", key="out", help="output directory (default ./qmesh-out)")
    common.add_argument("--quiet", action="store_true", help="only print primary results")

    data = argparse.ArgumentParser(add_help=False)
    _flag(data, "--label-column", key="data.label_column", help="header of the label column")

    parser = argparse.ArgumentParser(prog="qmesh", description="Quantum gas classification and entanglement protocol toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data], help="fit a classifier on a sensor CSV")
    p.add_argument("dataset")
    _flag(p, "--test-fraction", key="data.test_fraction", type=float)
    _flag(p, "--layers", key="encoder.layers", type=int)
    _flag(p, "--angle-scale", key="encoder.angle_scale", type=float)
    _flag(p, "--eta", key="train.eta", type=float)
    _flag(p, "--epsilon", key="train.epsilon", type=float)
    _flag(p, "--max-iters", "-K", key="train.max_iters", type=int)
    _flag(p, "--shift", key="train.shift", type=float)
    _flag(p, "--gradient-mode", key="train.gradient_mode", choices=["ParameterShift", "FiniteDifference"])

    p = sub.add_parser("predict", parents=[common], help="class probabilities as JSON lines")
    p.add_argument("model")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--row", help="comma-separated readings in sensor order")
    g.add_argument("--input", help="CSV with sensor columns")

    p = sub.add_parser("evaluate", parents=[common, data], help="metrics of a saved model on a labelled CSV")
    p.add_argument("model")
    p.add_argument("dataset")

    p = sub.add_parser("protocol", parents=[common], help="simulate the multi-vehicle protocol")
    _flag(p, "--vehicles", "-n", key="protocol.n_vehicles", type=int)
    _flag(p, "--rounds", "-R", key="protocol.rounds", type=int)
    _flag(p, "--shots", key="protocol.shots", type=int)
    _flag(p, "--bases", key="protocol.bases", type=_csv_strings, help="e.g. Z,X,Y")
    _flag(p, "--noise", key="noise.p_depolarizing", type=float, help="depolarizing probability")
    _flag(p, "--policy", key="noise.policy", choices=["AfterEveryGate", "AfterEncodingOnly", "None"])
    _flag(p, "--qpe-ancillas", key="protocol.qpe_ancillas", type=int)
    _flag(p, "--qpe-phase", key="protocol.qpe_phase", type=float)
    _flag(p, "--reset-per-round", key="protocol.reset_per_round", action="store_const", const=True)
    _flag(p, "--probe-trajectories", key="protocol.probe_trajectories", type=int)
    _flag(p, "--marginal", key="protocol.marginal", type=lambda s: [int(x) for x in _csv_strings(s)],
          help="also report counts over these qubits, e.g. 2,5,8,11")

    p = sub.add_parser("gradcheck", parents=[common], help="parameter-shift vs finite differences")
    _flag(p, "--probes", key="gradcheck.n_probes", type=int)
    _flag(p, "--corrupt", key="gradcheck.corrupt", action="store_const", const=True,
          help="negative test: shift 0.1 with a pi/2 divisor")

    p = sub.add_parser("stats", parents=[common, data], help="per-sensor summary statistics")
    p.add_argument("dataset")

    p = sub.add_parser("export-pairs", parents=[common, data], help="tidy CSV of all sensor pairs")
    p.add_argument("dataset")
    _flag(p, "--sensors", key="export.sensors", type=_csv_strings)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clustered sensor CSV")
    _flag(p, "--per-class", key="synthetic.n_per_class", type=int)
    _flag(p, "--classes", key="synthetic.n_classes", type=int)
    _flag(p, "--spread", key="synthetic.spread", type=float)

    p = sub.add_parser("timing", parents=[common, data], help="per-row prediction latency report")
    p.add_argument("model")
    p.add_argument("dataset")
    _flag(p, "--sizes", key="timing.sizes", type=lambda s: [int(x) for x in _csv_strings(s)])
    _flag(p, "--repeats", key="timing.repeats", type=int)
    _flag(p, "--baseline", key="timing.baseline", choices=["logistic"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    echo = _Echo(args.quiet)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        _write_json(out / "config.json", cfg)
        echo(json.dumps(cfg, sort_keys=True))
        return COMMANDS[args.command](args, cfg, out, echo)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QmeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
