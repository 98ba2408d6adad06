"""Variational quantum classifier trained on a fidelity cost.

Each class ``j`` is assigned the computational basis state ``|j>`` of a
label register made of the lowest ``ceil(log2 c)`` qubits. Training minimizes

    C(theta) = sum_i (1 - F_i)^2,    F_i = <y_i| rho_label(U(theta)|lambda_i>) |y_i>

by gradient descent with step ``eta_k = eta / sqrt(k + 1)``. Prediction
reports ``Tr[Pi_j rho]`` where ``Pi_j`` projects onto every basis state whose
low bits spell ``j``; probabilities need not sum to one when the class count
is not a power of two, and the leftover mass is reported separately.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support
from sklearn.utils.validation import check_array, check_is_fitted

from ._io import atomic_write_text
from ._rng import substream
from .encoding import (
    EncoderConfig,
    SensorScaler,
    ansatz_layout,
    build_ansatz,
    encode_batch,
    n_ansatz_params,
)
from .exceptions import TrainingError, ValidationError
from .sim import StateVector, _apply_matrix, apply_circuit, gate_matrix, measure

FD_STEP = 1e-5
GRADCHECK_THRESHOLD = 1e-6
MODEL_VERSION = 1


class GradientMode(str, enum.Enum):
    PARAMETER_SHIFT = "ParameterShift"
    FINITE_DIFFERENCE = "FiniteDifference"


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.05
    epsilon: float = 1e-6
    max_iters: int = 200
    seed: int = 0
    shift: float = math.pi / 2
    gradient_mode: GradientMode = GradientMode.PARAMETER_SHIFT

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if int(self.max_iters) < 1:
            raise ValidationError("max_iters must be >= 1")
        if abs(math.sin(self.shift)) < 1e-12:
            raise ValidationError("shift must not be a multiple of pi")
        object.__setattr__(self, "gradient_mode", GradientMode(self.gradient_mode))
        object.__setattr__(self, "max_iters", int(self.max_iters))

    def eta_at(self, k: int) -> float:
        return self.eta / math.sqrt(k + 1)


def label_qubits(n_classes: int) -> int:
    return max(1, math.ceil(math.log2(n_classes))) if n_classes > 1 else 1


@dataclass(frozen=True)
class ClassProjectors:
    """Boolean masks over basis indices, one row per class."""

    masks: np.ndarray

    @classmethod
    def build(cls, n_classes: int, n_qubits: int) -> "ClassProjectors":
        bits = label_qubits(n_classes)
        if bits > n_qubits:
            raise ValidationError(f"{n_classes} classes need {bits} qubits, register has {n_qubits}")
        low = np.arange(2**n_qubits) & (2**bits - 1)
        return cls(np.stack([low == j for j in range(n_classes)]))

    @property
    def n_classes(self) -> int:
        return self.masks.shape[0]

    def probabilities(self, amps: np.ndarray) -> np.ndarray:
        """``Tr[Pi_j |psi><psi|]`` for each row of ``amps``; shape ``(m, c)``."""
        p = np.abs(np.atleast_2d(amps)) ** 2
        return p @ self.masks.T.astype(float)


@dataclass(frozen=True)
class VqcModel:
    encoder: EncoderConfig
    params: np.ndarray
    class_map: dict
    norm_constants: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float).reshape(-1)
        expected = n_ansatz_params(self.encoder)
        if params.size != expected:
            raise ValidationError(f"model needs {expected} parameters, got {params.size}")
        if len(set(self.class_map.values())) != len(self.class_map):
            raise ValidationError("class_map must send distinct classes to distinct targets")
        object.__setattr__(self, "params", params)

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    @property
    def projectors(self) -> ClassProjectors:
        return ClassProjectors.build(self.n_classes, self.encoder.n_qubits)

    def target_indices(self, labels: Sequence) -> np.ndarray:
        try:
            return np.array([self.class_map[lab] for lab in labels], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"class {exc.args[0]!r} not in class_map") from None

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "n_qubits": self.encoder.n_qubits,
            "layers": self.encoder.layers,
            "angle_scale": self.encoder.angle_scale,
            "params": [float(p) for p in self.params],
            "class_map": {str(k): int(v) for k, v in self.class_map.items()},
            "classes": list(self.class_map),
            "norm_constants": self.norm_constants,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VqcModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported model version {doc.get('version')!r}")
        labels = doc.get("classes", list(doc["class_map"]))
        class_map = {lab: int(doc["class_map"][str(lab)]) for lab in labels}
        encoder = EncoderConfig(doc["n_qubits"], doc["layers"], doc["angle_scale"])
        return cls(encoder, np.array(doc["params"], dtype=float), class_map, doc.get("norm_constants", {}), doc.get("seed", 0))


# --------------------------------------------------------------------------
# cost and gradients on pre-encoded states


def _final_states(params: np.ndarray, config: EncoderConfig, states: np.ndarray) -> np.ndarray:
    return apply_circuit_batch(states, build_ansatz(params, config).gates, config.n_qubits)


def apply_circuit_batch(states: np.ndarray, gates, n: int) -> np.ndarray:
    psi = states
    for g in gates:
        psi = _apply_matrix(psi, g.matrix(), g.qubits, n)
    return psi


def label_fidelities(final: np.ndarray, targets: np.ndarray, label_bits: int) -> np.ndarray:
    """``<j|rho_label|j>`` per row: probability that the low ``label_bits`` qubits read ``j``.

    Equals ``|<j|psi>|^2`` when the label register is the whole register.
    """
    m = final.shape[0]
    p = (np.abs(final) ** 2).reshape(m, -1, 2**label_bits).sum(axis=1)
    return p[np.arange(m), targets]


def cost_from_states(params, config: EncoderConfig, states: np.ndarray, targets: np.ndarray, label_bits: int) -> float:
    final = _final_states(np.asarray(params, dtype=float), config, states)
    return math.fsum((1.0 - label_fidelities(final, targets, label_bits)) ** 2)


def shift_gradient_from_states(
    params,
    config: EncoderConfig,
    states: np.ndarray,
    targets: np.ndarray,
    label_bits: int,
    shift: float = math.pi / 2,
    *,
    denominator_shift: float | None = None,
) -> tuple[float, np.ndarray]:
    """Cost and parameter-shift gradient.

    For every angle ``theta_j`` the circuit is re-run with ``theta_j +/-
    shift`` and ``dF/dtheta_j = (F+ - F-) / (2 sin shift)``, chained through
    ``d(1 - F)^2 / dF``. Shifted runs restart from the cached state just
    before gate ``j``. ``denominator_shift`` exists only to build
    deliberately inconsistent gradients for negative tests.
    """
    params = np.asarray(params, dtype=float)
    n = config.n_qubits
    layout = ansatz_layout(config)
    mats = [gate_matrix(kind, None if idx is None else params[idx]) for kind, _, idx in layout]

    prefix = []
    psi = states
    for (_, qubits, _), mat in zip(layout, mats):
        prefix.append(psi)
        psi = _apply_matrix(psi, mat, qubits, n)
    fid = label_fidelities(psi, targets, label_bits)
    cost = math.fsum((1.0 - fid) ** 2)

    denom = 2.0 * math.sin(shift if denominator_shift is None else denominator_shift)
    dfid = np.zeros((states.shape[0], params.size))
    for pos, (kind, qubits, idx) in enumerate(layout):
        if idx is None:
            continue
        shifted = []
        for sign in (1.0, -1.0):
            phi = _apply_matrix(prefix[pos], gate_matrix(kind, params[idx] + sign * shift), qubits, n)
            for (_, q2, _), mat in zip(layout[pos + 1:], mats[pos + 1:]):
                phi = _apply_matrix(phi, mat, q2, n)
            shifted.append(label_fidelities(phi, targets, label_bits))
        dfid[:, idx] += (shifted[0] - shifted[1]) / denom
    grad = (-2.0 * (1.0 - fid)) @ dfid
    return cost, grad


def finite_difference_gradient_from_states(params, config, states, targets, label_bits: int, step: float = FD_STEP) -> tuple[float, np.ndarray]:
    """Central differences of the directly simulated cost."""
    params = np.asarray(params, dtype=float)
    grad = np.empty(params.size)
    for j in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[j] += step
        dn[j] -= step
        c_up = cost_from_states(up, config, states, targets, label_bits)
        c_dn = cost_from_states(dn, config, states, targets, label_bits)
        grad[j] = (c_up - c_dn) / (2 * step)
    return cost_from_states(params, config, states, targets, label_bits), grad


# --------------------------------------------------------------------------
# model-level operations (rows are already normalized)


def _unpack(model: VqcModel, data) -> tuple[np.ndarray, np.ndarray, int]:
    data = list(data)
    if not data:
        raise ValidationError("data must not be empty")
    rows = np.array([np.asarray(r, dtype=float) for r, _ in data])
    targets = model.target_indices([lab for _, lab in data])
    return encode_batch(rows, model.encoder), targets, label_qubits(model.n_classes)


def cost(model: VqcModel, data) -> float:
    """Fidelity cost over ``(normalized row, label)`` pairs."""
    states, targets, bits = _unpack(model, data)
    return cost_from_states(model.params, model.encoder, states, targets, bits)


def gradient(model: VqcModel, data, config: TrainConfig) -> np.ndarray:
    states, targets, bits = _unpack(model, data)
    return _cost_and_grad(model.params, model.encoder, states, targets, bits, config)[1]


def _cost_and_grad(params, encoder, states, targets, label_bits, config: TrainConfig):
    if config.gradient_mode is GradientMode.FINITE_DIFFERENCE:
        return finite_difference_gradient_from_states(params, encoder, states, targets, label_bits)
    return shift_gradient_from_states(params, encoder, states, targets, label_bits, config.shift)


def init_params(encoder: EncoderConfig, seed: int) -> np.ndarray:
    return substream(seed, "vqc.init").uniform(-math.pi, math.pi, n_ansatz_params(encoder))


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    eta_k: float
    cost: float


def train_states(params, encoder: EncoderConfig, states, targets, label_bits: int, config: TrainConfig, callback=None):
    """Gradient descent on pre-encoded states; returns ``(params, trace)``.

    Iteration ``k`` records ``(k, eta_k, C(theta_k))`` and then steps,
    unless ``|C_k - C_{k-1}| <= epsilon`` (converged: stop without
    stepping). At most ``max_iters`` steps are taken.
    """
    theta = np.array(params, dtype=float)
    trace: list[TraceRow] = []
    prev = None
    for k in range(config.max_iters):
        c, g = _cost_and_grad(theta, encoder, states, targets, label_bits, config)
        if not math.isfinite(c) or not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite cost or gradient at iteration {k} (cost={c!r})")
        eta_k = config.eta_at(k)
        trace.append(TraceRow(k, eta_k, c))
        if callback is not None:
            callback(trace[-1])
        if prev is not None and abs(c - prev) <= config.epsilon:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            theta = theta - eta_k * g
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"non-finite parameters after step {k}")
        prev = c
    return theta, trace


def train(model: VqcModel, data, config: TrainConfig, *, warm_start: bool = False):
    """Train on ``(normalized row, label)`` pairs.

    Starting parameters are drawn uniformly from ``[-pi, pi]`` using
    ``config.seed`` unless ``warm_start`` keeps ``model.params``.
    """
    states, targets, bits = _unpack(model, data)
    theta0 = model.params if warm_start else init_params(model.encoder, config.seed)
    theta, trace = train_states(theta0, model.encoder, states, targets, bits, config)
    return replace(model, params=theta, seed=config.seed), trace


def final_state(model: VqcModel, normalized_row) -> StateVector:
    amps = encode_batch(np.atleast_2d(normalized_row), model.encoder)[0]
    return apply_circuit(StateVector._trusted(amps, model.encoder.n_qubits), build_ansatz(model.params, model.encoder))


def scaler_for(model: VqcModel) -> SensorScaler:
    if not model.norm_constants:
        raise ValidationError("model has no normalization constants")
    return SensorScaler.from_constants(model.norm_constants)


def predict_normalized(model: VqcModel, rows) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and unassigned mass for normalized rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.encoder.n_qubits:
        raise ValidationError(f"expected {model.encoder.n_qubits} values per row, got {rows.shape[1]}")
    final = _final_states(model.params, model.encoder, encode_batch(rows, model.encoder))
    probs = np.clip(model.projectors.probabilities(final), 0.0, 1.0)
    residual = np.clip(1.0 - probs.sum(axis=1), 0.0, 1.0)
    return probs, residual


def predict(model: VqcModel, raw_row) -> dict:
    """Probabilities for one raw sensor row, scaled with the stored constants.

    Returns ``{"probs": {label: p}, "label": argmax, "residual": mass}``;
    ties go to the lowest class index.
    """
    raw = np.asarray(raw_row, dtype=float).reshape(-1)
    if raw.size != model.encoder.n_qubits:
        raise ValidationError(f"expected {model.encoder.n_qubits} readings, got {raw.size}")
    norm = scaler_for(model).transform(raw[None, :])
    probs, residual = predict_normalized(model, norm)
    labels = list(model.class_map)
    order = sorted(labels, key=model.class_map.__getitem__)
    p = {lab: float(probs[0, model.class_map[lab]]) for lab in order}
    best = order[int(np.argmax(probs[0]))]
    return {"probs": p, "label": best, "residual": float(residual[0])}


def sampled_class_probabilities(model: VqcModel, normalized_row, shots: int, seed=0) -> np.ndarray:
    """Class probabilities estimated from a Z-basis histogram."""
    hist = measure(final_state(model, normalized_row), "Z", shots, seed)
    masks = model.projectors.masks
    out = np.zeros(model.n_classes)
    for key, v in hist.counts.items():
        out += masks[:, int(key, 2)] * v
    return out / shots


# --------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    labels: list
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def to_dict(self) -> dict:
        return {
            "labels": [str(x) for x in self.labels],
            "confusion": self.confusion.tolist(),
            "per_class": {
                str(lab): {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, lab in enumerate(self.labels)
            },
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
        }


def classification_metrics(y_true, y_pred, labels: Sequence) -> Metrics:
    """Confusion matrix and per-class scores; 0/0 scores are 0."""
    if len(y_true) == 0:
        raise ValidationError("test set must not be empty")
    labels = list(labels)
    cm = confusion_matrix(y_true, y_pred, labels=labels)
    p, r, f, s = precision_recall_fscore_support(y_true, y_pred, labels=labels, zero_division=0)
    return Metrics(labels, cm, p, r, f, s)


def evaluate(model: VqcModel, raw_rows, labels) -> Metrics:
    raw = np.atleast_2d(np.asarray(raw_rows, dtype=float))
    probs, _ = predict_normalized(model, scaler_for(model).transform(raw))
    order = sorted(model.class_map, key=model.class_map.__getitem__)
    pred = [order[i] for i in np.argmax(probs, axis=1)]
    return classification_metrics(list(labels), pred, order)


# --------------------------------------------------------------------------
# gradient check


def gradcheck(
    n_probes: int = 10,
    n_qubits: int = 4,
    layers: Sequence[int] = (1, 2),
    n_samples: int = 5,
    seed: int = 0,
    shift: float = math.pi / 2,
    *,
    corrupt: bool = False,
) -> dict:
    """Compare parameter-shift against central finite differences.

    Each probe draws a random model, random normalized rows and random
    labels. With ``corrupt`` the shift is 0.1 while the divisor still
    assumes ``pi/2``, which must be caught.
    """
    rng = substream(seed, "gradcheck")
    worst = 0.0
    layers = list(layers)
    for probe in range(n_probes):
        enc = EncoderConfig(n_qubits, layers[probe % len(layers)])
        params = rng.uniform(-math.pi, math.pi, n_ansatz_params(enc))
        rows = rng.random((n_samples, n_qubits))
        n_classes = min(3, 2**n_qubits)
        bits = label_qubits(n_classes)
        targets = rng.integers(0, n_classes, n_samples)
        states = encode_batch(rows, enc)
        if corrupt:
            _, ps = shift_gradient_from_states(params, enc, states, targets, bits, 0.1, denominator_shift=math.pi / 2)
        else:
            _, ps = shift_gradient_from_states(params, enc, states, targets, bits, shift)
        _, fd = finite_difference_gradient_from_states(params, enc, states, targets, bits)
        worst = max(worst, float(np.max(np.abs(ps - fd))))
    return {
        "max_abs_diff": worst,
        "threshold": GRADCHECK_THRESHOLD,
        "n_probes": int(n_probes),
        "corrupt": bool(corrupt),
        "passed": worst <= GRADCHECK_THRESHOLD,
    }


# --------------------------------------------------------------------------
# estimator


class QuantumGasClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn classifier wrapping scaling, encoding and the trained ansatz.

    Parameters
    ----------
    layers : int, default=2
        Repetitions of both the feature map and the ansatz.
    angle_scale : float, default=pi/2
        Normalized value ``s`` becomes rotation angle ``angle_scale * s``.
    eta : float, default=0.05
        Initial learning rate; iteration ``k`` uses ``eta / sqrt(k + 1)``.
        The cost is a sum over samples, so scale ``eta`` down for large sets.
    epsilon : float, default=1e-6
        Stop once the cost changes by at most this much between iterations.
    max_iter : int, default=200
    shift : float, default=pi/2
        Parameter-shift offset.
    gradient_mode : {"ParameterShift", "FiniteDifference"}
    random_state : int, default=0
    sensor_names : sequence of str or None
        Names stored with the normalization constants.

    Attributes
    ----------
    classes_ : ndarray
    model_ : VqcModel
    cost_trace_ : list of TraceRow
    n_iter_ : int
    """

    def __init__(
        self,
        layers=2,
        angle_scale=math.pi / 2,
        eta=0.05,
        epsilon=1e-6,
        max_iter=200,
        shift=math.pi / 2,
        gradient_mode="ParameterShift",
        random_state=0,
        sensor_names=None,
    ):
        self.layers = layers
        self.angle_scale = angle_scale
        self.eta = eta
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.shift = shift
        self.gradient_mode = gradient_mode
        self.random_state = random_state
        self.sensor_names = sensor_names

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.eta, self.epsilon, self.max_iter, int(self.random_state), self.shift, self.gradient_mode)

    def fit(self, X, y, callback=None):
        names = self.sensor_names
        if names is None and hasattr(X, "columns"):
            names = [str(c) for c in X.columns]
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        scaler = SensorScaler(sensor_names=names).fit(X)
        self.scaler_ = scaler
        self.classes_ = np.unique(y)
        n_classes = len(self.classes_)
        encoder = EncoderConfig(X.shape[1], self.layers, self.angle_scale)
        if label_qubits(n_classes) > encoder.n_qubits:
            raise ValidationError(f"{n_classes} classes need more qubits than {encoder.n_qubits} features")
        class_map = {_plain(lab): i for i, lab in enumerate(self.classes_)}
        config = self._train_config()
        params = init_params(encoder, config.seed)
        model = VqcModel(encoder, params, class_map, scaler.norm_constants(), config.seed)
        states = encode_batch(scaler.transform(X), encoder)
        targets = model.target_indices([_plain(v) for v in y])
        bits = label_qubits(n_classes)
        theta, trace = train_states(params, encoder, states, targets, bits, config, callback)
        self.model_ = replace(model, params=theta)
        self.cost_trace_ = trace
        self.n_iter_ = len(trace)
        self.final_cost_ = cost_from_states(theta, encoder, states, targets, bits)
        self.n_features_in_ = X.shape[1]
        return self

    def _probs(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} readings per row, got {X.shape[1]}")
        return predict_normalized(self.model_, self.scaler_.transform(X))

    def predict_proba(self, X):
        """``Tr[Pi_j rho]`` per class; rows may sum to less than one."""
        return self._probs(X)[0]

    def unassigned_probability(self, X):
        return self._probs(X)[1]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y) -> Metrics:
        return classification_metrics(list(np.asarray(y)), list(self.predict(X)), list(self.classes_))

    def to_dict(self) -> dict:
        check_is_fitted(self, "model_")
        doc = self.model_.to_dict()
        doc["seed"] = int(self.random_state)
        return doc

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_model(cls, model: VqcModel) -> "QuantumGasClassifier":
        clf = cls(layers=model.encoder.layers, angle_scale=model.encoder.angle_scale, random_state=model.seed)
        clf.model_ = model
        clf.scaler_ = scaler_for(model)
        clf.classes_ = np.array(sorted(model.class_map, key=model.class_map.__getitem__))
        clf.n_features_in_ = model.encoder.n_qubits
        return clf

    @classmethod
    def load(cls, path) -> "QuantumGasClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_model(VqcModel.from_dict(json.load(fh)))


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value

