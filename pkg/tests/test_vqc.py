import json
import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.metrics import f1_score, precision_score, recall_score

from qmesh.encoding import EncoderConfig, build_ansatz, encode, n_ansatz_params
from qmesh.exceptions import TrainingError, ValidationError
from qmesh.vqc import (
    ClassProjectors,
    QuantumGasClassifier,
    TrainConfig,
    VqcModel,
    classification_metrics,
    cost,
    cost_from_states,
    final_state,
    gradcheck,
    gradient,
    label_qubits,
    predict,
    predict_normalized,
    sampled_class_probabilities,
    train,
)

TOY_ROWS = [[0.1, 0.2], [0.2, 0.1], [0.3, 0.25], [0.15, 0.35], [0.7, 0.8], [0.8, 0.7], [0.9, 0.75], [0.75, 0.9]]
TOY_LABELS = [0, 0, 0, 0, 1, 1, 1, 1]


def oracle_cost(params, rows, targets, cfg, n_classes):
    """Per-sample circuit runs and an explicit projector sum."""
    bits = label_qubits(n_classes)
    total = 0.0
    for row, j in zip(rows, targets):
        psi = build_ansatz(params, cfg).run(encode(row, cfg)).amplitudes
        f = sum(abs(psi[i]) ** 2 for i in range(len(psi)) if i % 2**bits == j)
        total += (1.0 - f) ** 2
    return total


def oracle_gradient(params, rows, targets, cfg, n_classes, h=1e-5):
    g = np.zeros(len(params))
    for k in range(len(params)):
        up, dn = params.copy(), params.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (oracle_cost(up, rows, targets, cfg, n_classes) - oracle_cost(dn, rows, targets, cfg, n_classes)) / (2 * h)
    return g


def _model(n=2, layers=1, classes=(0, 1), params=None, seed=0):
    cfg = EncoderConfig(n, layers)
    if params is None:
        params = np.random.default_rng(seed).uniform(-math.pi, math.pi, n_ansatz_params(cfg))
    return VqcModel(cfg, params, {c: i for i, c in enumerate(classes)})


# --------------------------------------------------------------------------
# cost on hand-made states


def _states(*vecs):
    return np.array([np.asarray(v, dtype=complex) / np.linalg.norm(v) for v in vecs])


def test_cost_zero_when_state_matches_target():
    # zero ansatz angles leave only the iSWAP, which fixes |00>
    cfg = EncoderConfig(2, 1)
    assert cost_from_states(np.zeros(6), cfg, _states([1, 0, 0, 0]), np.array([0]), 2) == 0.0


def test_cost_one_when_orthogonal():
    cfg = EncoderConfig(2, 1)
    # iSWAP|01> = i|10>, orthogonal to target |01>
    assert cost_from_states(np.zeros(6), cfg, _states([0, 1, 0, 0]), np.array([1]), 2) == pytest.approx(1.0)


def test_cost_two_half_fidelities():
    cfg = EncoderConfig(2, 1)
    bell = [1, 0, 0, 1]
    c = cost_from_states(np.zeros(6), cfg, _states(bell, bell), np.array([0, 0]), 2)
    assert c == pytest.approx(0.5, abs=1e-15)


def test_cost_matches_oracle():
    rng = np.random.default_rng(3)
    m = _model(n=4, layers=2, classes=("a", "b", "c"), seed=3)
    rows = rng.random((5, 4))
    labels = ["a", "c", "b", "b", "a"]
    expected = oracle_cost(m.params, rows, m.target_indices(labels), m.encoder, 3)
    assert cost(m, zip(rows, labels)) == pytest.approx(expected, abs=1e-12)


def test_cost_rejects_unknown_class():
    with pytest.raises(ValidationError, match="not in class_map"):
        cost(_model(), [([0.1, 0.2], 7)])


def test_cost_non_negative():
    rng = np.random.default_rng(8)
    for s in range(5):
        m = _model(n=3, layers=1, seed=s)
        assert cost(m, zip(rng.random((4, 3)), [0, 1, 1, 0])) >= 0.0


# --------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("layers", [1, 2])
def test_shift_gradient_matches_oracle(layers):
    rng = np.random.default_rng(10 + layers)
    m = _model(n=4, layers=layers, classes=(0, 1, 2), seed=layers)
    rows = rng.random((5, 4))
    labels = [0, 1, 2, 1, 0]
    g = gradient(m, zip(rows, labels), TrainConfig())
    ref = oracle_gradient(m.params.copy(), rows, m.target_indices(labels), m.encoder, 3)
    assert np.max(np.abs(g - ref)) <= 1e-6


def test_finite_difference_mode_agrees():
    rng = np.random.default_rng(4)
    m = _model(n=3, layers=1, seed=4)
    data = list(zip(rng.random((3, 3)), [0, 1, 0]))
    ps = gradient(m, data, TrainConfig())
    fd = gradient(m, data, TrainConfig(gradient_mode="FiniteDifference"))
    assert np.max(np.abs(ps - fd)) <= 1e-6


def test_gradient_zero_when_every_sample_is_perfect():
    # with zero ansatz angles, |00> stays |00>; a state-level check of the stationary point
    from qmesh.vqc import shift_gradient_from_states

    cfg = EncoderConfig(2, 1)
    c, g = shift_gradient_from_states(np.zeros(6), cfg, _states([1, 0, 0, 0]), np.array([0]), 1)
    assert c == 0.0
    assert np.max(np.abs(g)) <= 1e-8


def test_duplicating_samples_doubles_gradient():
    rng = np.random.default_rng(5)
    m = _model(n=3, layers=2, seed=5)
    data = list(zip(rng.random((3, 3)), [0, 1, 1]))
    g1 = gradient(m, data, TrainConfig())
    g2 = gradient(m, data + data, TrainConfig())
    assert np.max(np.abs(g2 - 2 * g1)) <= 1e-10


def test_gradcheck_report():
    rep = gradcheck(n_probes=4)
    assert set(rep) >= {"max_abs_diff", "threshold", "n_probes"}
    assert rep["passed"] and rep["max_abs_diff"] <= 1e-6


def test_gradcheck_catches_corrupted_shift():
    rep = gradcheck(n_probes=2, corrupt=True)
    assert rep["max_abs_diff"] > 1e-3 and not rep["passed"]


# --------------------------------------------------------------------------
# training


def test_learning_rate_schedule():
    assert TrainConfig(eta=0.4).eta_at(3) == 0.2
    cfg = TrainConfig(eta=0.3, max_iters=7, epsilon=1e-300)
    _, trace = train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)
    assert [r.eta_k for r in trace] == [0.3 / math.sqrt(k + 1) for k in range(len(trace))]


def test_single_iteration_takes_one_step():
    m = _model()
    cfg = TrainConfig(eta=0.1, max_iters=1, epsilon=1e9, seed=2)
    trained, trace = train(m, zip(TOY_ROWS, TOY_LABELS), cfg)
    assert len(trace) == 1
    from qmesh.vqc import init_params

    theta0 = init_params(m.encoder, 2)
    g = gradient(VqcModel(m.encoder, theta0, m.class_map), zip(TOY_ROWS, TOY_LABELS), cfg)
    assert np.allclose(trained.params, theta0 - 0.1 * g, atol=1e-15)


def test_epsilon_stops_early():
    cfg = TrainConfig(eta=1e-9, max_iters=50, epsilon=1e-3)
    _, trace = train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)
    assert len(trace) == 2


def test_toy_task_halves_cost():
    cfg = TrainConfig(eta=0.1, max_iters=200, seed=0)
    _, trace = train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)
    assert len(trace) <= 200
    assert trace[-1].cost < 0.5 * trace[0].cost


def test_training_is_deterministic():
    cfg = TrainConfig(eta=0.1, max_iters=15, seed=4)
    _, a = train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)
    _, b = train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)
    assert a == b


def test_non_finite_cost_aborts():
    cfg = TrainConfig(eta=1e308, max_iters=5, seed=0)
    with pytest.raises(TrainingError, match="non-finite"):
        train(_model(), zip(TOY_ROWS, TOY_LABELS), cfg)


def test_train_config_validation():
    for bad in (dict(eta=0), dict(epsilon=-1), dict(max_iters=0), dict(shift=math.pi)):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


# --------------------------------------------------------------------------
# prediction


def test_projectors_partition():
    pr = ClassProjectors.build(3, 3)
    assert pr.masks.shape == (3, 8)
    assert not np.any(pr.masks.sum(axis=0) > 1)       # orthogonal
    assert pr.masks.sum() == 6                       # index 3 mod 4 left unassigned


def test_basis_state_gives_certain_class():
    pr = ClassProjectors.build(4, 2)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1
        assert np.array_equal(pr.probabilities(e)[0], np.eye(4)[j])


def test_uniform_state_gives_equal_probabilities():
    pr = ClassProjectors.build(4, 2)
    assert np.allclose(pr.probabilities(np.full(4, 0.5)), 0.25)


def test_predict_bounds_residual_and_argmax():
    m = _model(n=3, layers=2, classes=("x", "y", "z"), seed=6)
    m = VqcModel(m.encoder, m.params, m.class_map, {"a": [0, 10], "b": [0, 10], "c": [0, 10]})
    out = predict(m, [1.0, 5.0, 9.0])
    p = np.array(list(out["probs"].values()))
    assert np.all((p >= 0) & (p <= 1))
    assert p.sum() + out["residual"] == pytest.approx(1.0, abs=1e-12)
    assert out["label"] == list(out["probs"])[int(np.argmax(p))]
    with pytest.raises(ValidationError, match="expected 3"):
        predict(m, [1.0, 2.0])


def test_sampled_probabilities_agree_with_exact():
    m = _model(n=3, layers=2, classes=(0, 1, 2), seed=11)
    row = [0.2, 0.5, 0.9]
    exact = predict_normalized(m, [row])[0][0]
    sampled = sampled_class_probabilities(m, row, 10_000, seed=1)
    assert np.max(np.abs(sampled - exact)) <= 0.02
    assert np.allclose(m.projectors.probabilities(final_state(m, row).amplitudes)[0], exact)


def test_model_json_round_trip():
    m = VqcModel(EncoderConfig(2, 1), np.arange(6.0), {"No Gas": 0, "Perfume": 1}, {"MQ2": [1.0, 2.0], "MQ3": [0.0, 4.0]}, 5)
    doc = json.loads(json.dumps(m.to_dict()))
    assert set(doc) >= {"version", "n_qubits", "layers", "angle_scale", "params", "class_map", "norm_constants", "seed"}
    back = VqcModel.from_dict(doc)
    assert back.class_map == m.class_map and np.array_equal(back.params, m.params)
    doc["version"] = 99
    with pytest.raises(ValidationError):
        VqcModel.from_dict(doc)


def test_model_validation():
    with pytest.raises(ValidationError):
        VqcModel(EncoderConfig(2, 1), np.zeros(5), {0: 0})
    with pytest.raises(ValidationError):
        VqcModel(EncoderConfig(2, 1), np.zeros(6), {0: 0, 1: 0})


# --------------------------------------------------------------------------
# metrics


def test_metrics_perfect_class():
    m = classification_metrics([0] * 13, [0] * 13, [0, 1])
    assert (m.precision[0], m.recall[0], m.f1[0], m.support[0]) == (1.0, 1.0, 1.0, 13)


def test_metrics_zero_division_convention():
    m = classification_metrics([0, 0, 1, 1], [1, 1, 1, 1], [0, 1])
    assert (m.precision[0], m.recall[0], m.f1[0]) == (0.0, 0.0, 0.0)


def test_metrics_match_confusion_formulas():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 60)
    p = np.where(rng.random(60) < 0.7, y, rng.integers(0, 3, 60))
    m = classification_metrics(y, p, [0, 1, 2])
    cm = m.confusion
    assert np.array_equal(cm.sum(axis=1), m.support)
    tp = np.diag(cm).astype(float)
    prec = tp / cm.sum(axis=0)
    rec = tp / cm.sum(axis=1)
    assert np.allclose(m.precision, prec, atol=1e-12)
    assert np.allclose(m.recall, rec, atol=1e-12)
    assert np.allclose(m.f1, 2 * prec * rec / (prec + rec), atol=1e-12)
    assert m.macro_f1 == pytest.approx(f1_score(y, p, average="macro"), abs=1e-12)
    assert np.allclose(m.precision, precision_score(y, p, average=None))
    assert np.allclose(m.recall, recall_score(y, p, average=None))


# --------------------------------------------------------------------------
# estimator


def _toy_raw():
    X = np.array(TOY_ROWS) * 100 + 300
    y = np.array(["low"] * 4 + ["high"] * 4)
    return X, y


def test_estimator_params_and_clone():
    clf = QuantumGasClassifier(layers=1, eta=0.2)
    params = clf.get_params()
    assert params["layers"] == 1 and params["eta"] == 0.2
    assert clone(clf).get_params() == params


def test_estimator_fit_predict_save_load(tmp_path):
    X, y = _toy_raw()
    clf = QuantumGasClassifier(layers=1, eta=0.1, max_iter=80, random_state=0).fit(X, y)
    assert list(clf.classes_) == ["high", "low"]
    assert clf.n_iter_ == len(clf.cost_trace_) <= 80
    assert clf.score(X, y) == 1.0
    proba = clf.predict_proba(X)
    assert proba.shape == (8, 2)
    assert np.allclose(proba.sum(axis=1) + clf.unassigned_probability(X), 1.0)
    path = tmp_path / "model.json"
    clf.save(path)
    again = QuantumGasClassifier.load(path)
    assert np.array_equal(again.predict_proba(X), proba)
    assert list(again.predict(X)) == list(clf.predict(X))


def test_estimator_rejects_wrong_width():
    X, y = _toy_raw()
    clf = QuantumGasClassifier(layers=1, max_iter=2).fit(X, y)
    with pytest.raises(ValidationError, match="expected 2"):
        clf.predict(np.ones((1, 3)))
