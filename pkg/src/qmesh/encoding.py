"""From raw sensor rows to encoded quantum states.

Pipeline: per-column Min-Max scaling into [0, 1], a linear angle map
``theta_i = angle_scale * s_i``, then an entangled feature map repeated
``layers`` times. Each layer applies ``exp(-i theta_i X)`` on every qubit, a
ring of CZ gates, and finally a Hadamard on every qubit. The trainable ansatz
lives here too because it shares the register layout.

``exp(-i theta X)`` turns the Bloch vector by ``2 theta``, so the default
``angle_scale = pi / 2`` sweeps the polar range exactly once. With ``pi``
the two ends of a column land on the same single-qubit state.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ValidationError
from .sim import GateKind, QuantumCircuit, StateVector, _apply_matrix, gate_matrix, new_state

SENSOR_NAMES = ("MQ2", "MQ3", "MQ5", "MQ6", "MQ7", "MQ8", "MQ135")


class ConstantColumnWarning(UserWarning):
    """A column had ``max == min``; its normalized entries were set to 0."""


class EntanglementSkippedWarning(UserWarning):
    """A one-qubit register has no entangling layer."""


@dataclass(frozen=True)
class EncoderConfig:
    n_qubits: int = 7
    layers: int = 2
    angle_scale: float = math.pi / 2

    def __post_init__(self):
        if int(self.n_qubits) < 1:
            raise ValidationError("n_qubits must be >= 1")
        if int(self.layers) < 1:
            raise ValidationError("layers must be >= 1")
        if not math.isfinite(self.angle_scale):
            raise ValidationError("angle_scale must be finite")
        object.__setattr__(self, "n_qubits", int(self.n_qubits))
        object.__setattr__(self, "layers", int(self.layers))
        object.__setattr__(self, "angle_scale", float(self.angle_scale))


# --------------------------------------------------------------------------
# normalization


@dataclass
class NormalizedMatrix:
    values: np.ndarray
    col_min: np.ndarray
    col_max: np.ndarray
    sensor_names: tuple[str, ...] = ()
    constant_columns: tuple[int, ...] = field(default=())

    def constants(self) -> dict[str, list[float]]:
        return {
            name: [float(lo), float(hi)]
            for name, lo, hi in zip(self.sensor_names, self.col_min, self.col_max)
        }


def default_sensor_names(n: int) -> tuple[str, ...]:
    return SENSOR_NAMES if n == len(SENSOR_NAMES) else tuple(f"x{i}" for i in range(n))


def scale_columns(values: np.ndarray, col_min: np.ndarray, col_max: np.ndarray, *, clip: bool = True) -> np.ndarray:
    """Affine-map columns with fixed constants; constant columns become 0."""
    values = np.asarray(values, dtype=float)
    span = col_max - col_min
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    out = (values - col_min) / safe
    out[..., constant] = 0.0
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def min_max_normalize(raw, sensor_names: Sequence[str] | None = None) -> NormalizedMatrix:
    """Columnwise Min-Max scaling of an ``m x n`` matrix into [0, 1]."""
    values = np.asarray(raw, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ValidationError(f"expected a non-empty 2-D matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("sensor matrix contains non-finite values")
    names = tuple(sensor_names) if sensor_names is not None else default_sensor_names(values.shape[1])
    if len(names) != values.shape[1]:
        raise ValidationError(f"{len(names)} sensor names for {values.shape[1]} columns")
    col_min = values.min(axis=0)
    col_max = values.max(axis=0)
    constant = tuple(int(i) for i in np.flatnonzero(col_max == col_min))
    if constant:
        warnings.warn(
            f"constant column(s) {[names[i] for i in constant]} normalized to 0.0",
            ConstantColumnWarning,
            stacklevel=2,
        )
    scaled = scale_columns(values, col_min, col_max, clip=False)
    return NormalizedMatrix(scaled, col_min, col_max, names, constant)


class SensorScaler(TransformerMixin, BaseEstimator):
    """Min-Max scaler that keeps training constants and clamps unseen rows.

    Parameters
    ----------
    clip : bool, default=True
        Clamp transformed values into [0, 1]; rows outside the training
        range otherwise map outside the unit interval.
    sensor_names : sequence of str or None
        Column names for :meth:`norm_constants`; taken from a DataFrame's
        columns when omitted.
    """

    def __init__(self, clip=True, sensor_names=None):
        self.clip = clip
        self.sensor_names = sensor_names

    def fit(self, X, y=None):
        names = self.sensor_names
        if names is None and hasattr(X, "columns"):
            names = [str(c) for c in X.columns]
        X = check_array(X, dtype=float)
        norm = min_max_normalize(X, names)
        self.data_min_ = norm.col_min
        self.data_max_ = norm.col_max
        self.sensor_names_ = norm.sensor_names
        self.constant_columns_ = norm.constant_columns
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return scale_columns(X, self.data_min_, self.data_max_, clip=self.clip)

    def norm_constants(self) -> dict[str, list[float]]:
        check_is_fitted(self, "data_min_")
        return {
            name: [float(lo), float(hi)]
            for name, lo, hi in zip(self.sensor_names_, self.data_min_, self.data_max_)
        }

    @classmethod
    def from_constants(cls, constants: dict[str, Sequence[float]], clip=True) -> "SensorScaler":
        scaler = cls(clip=clip)
        scaler.sensor_names_ = tuple(constants)
        scaler.data_min_ = np.array([float(v[0]) for v in constants.values()])
        scaler.data_max_ = np.array([float(v[1]) for v in constants.values()])
        scaler.constant_columns_ = tuple(int(i) for i in np.flatnonzero(scaler.data_min_ == scaler.data_max_))
        scaler.n_features_in_ = len(constants)
        return scaler


# --------------------------------------------------------------------------
# circuits


def angles_from_row(row, config: EncoderConfig) -> np.ndarray:
    row = np.asarray(row, dtype=float).reshape(-1)
    return config.angle_scale * row


def ring_pairs(n: int) -> list[tuple[int, int]]:
    """Distinct nearest-neighbour pairs ``(i, i+1 mod n)``."""
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def _warn_single_qubit(config: EncoderConfig) -> None:
    if config.n_qubits < 2:
        warnings.warn("one-qubit register: entangling layer skipped", EntanglementSkippedWarning, stacklevel=3)


def build_feature_map(theta, config: EncoderConfig) -> QuantumCircuit:
    """Per layer: RotPaper(theta_i) on qubit i, a CZ ring, then H on every qubit."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    n = config.n_qubits
    if theta.size != n:
        raise ValidationError(f"expected {n} angles, got {theta.size}")
    _warn_single_qubit(config)
    circ = QuantumCircuit(n)
    for _ in range(config.layers):
        for q in range(n):
            circ.rot(theta[q], q, tag="encoding")
        for a, b in ring_pairs(n):
            circ.cz(a, b, tag="encoding")
        for q in range(n):
            circ.h(q, tag="encoding")
    return circ


def n_ansatz_params(config: EncoderConfig) -> int:
    return config.layers * 3 * config.n_qubits


def ansatz_layout(config: EncoderConfig) -> list[tuple[GateKind, tuple[int, ...], int | None]]:
    """Gate skeleton of the ansatz as ``(kind, qubits, parameter index)``.

    Parameters are layer-major: ``[Ry x n | Rz x n | CPHASE x n]`` per
    layer. CPHASE ``i`` couples ``(i, i+1 mod n)``; on two qubits both
    CPHASE angles act on the same pair, and on one qubit the CPHASE
    slots exist but drive no gate. Each layer ends with fixed iSWAPs on
    ``(0,1), (2,3), ...``.
    """
    n = config.n_qubits
    out = []
    for m in range(config.layers):
        base = 3 * n * m
        for q in range(n):
            out.append((GateKind.RY, (q,), base + q))
        for q in range(n):
            out.append((GateKind.RZ, (q,), base + n + q))
        if n >= 2:
            for i in range(n):
                out.append((GateKind.CPHASE, (i, (i + 1) % n), base + 2 * n + i))
        for a in range(0, n - 1, 2):
            out.append((GateKind.ISWAP, (a, a + 1), None))
    return out


def build_ansatz(params, config: EncoderConfig) -> QuantumCircuit:
    params = np.asarray(params, dtype=float).reshape(-1)
    expected = n_ansatz_params(config)
    if params.size != expected:
        raise ValidationError(
            f"ansatz with n_qubits={config.n_qubits}, layers={config.layers} "
            f"expects {expected} parameters, got {params.size}"
        )
    circ = QuantumCircuit(config.n_qubits)
    for kind, qubits, idx in ansatz_layout(config):
        if kind is GateKind.RY:
            circ.ry(params[idx], qubits[0])
        elif kind is GateKind.RZ:
            circ.rz(params[idx], qubits[0])
        elif kind is GateKind.CPHASE:
            circ.cphase(params[idx], *qubits)
        else:
            circ.iswap(*qubits)
    return circ


def encode(row, config: EncoderConfig) -> StateVector:
    """Encoded state of one normalized row, starting from ``|0...0>``."""
    circ = build_feature_map(angles_from_row(row, config), config)
    return circ.run(new_state(config.n_qubits))


def _rot_batch(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    return out


def encode_batch(rows, config: EncoderConfig) -> np.ndarray:
    """Encode many normalized rows at once; returns ``(m, 2**n)`` amplitudes.

    Same gates as :func:`encode`, with the per-row rotations applied as a
    batched matrix product.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n = config.n_qubits
    if rows.shape[1] != n:
        raise ValidationError(f"expected rows of {n} values, got {rows.shape[1]}")
    _warn_single_qubit(config)
    theta = config.angle_scale * rows
    psi = np.zeros((rows.shape[0], 2**n), dtype=np.complex128)
    psi[:, 0] = 1.0
    h = gate_matrix(GateKind.H)
    cz = gate_matrix(GateKind.CZ)
    for _ in range(config.layers):
        for q in range(n):
            t = psi.reshape((psi.shape[0],) + (2,) * n)
            t = np.moveaxis(t, n - q, 1)
            shape = t.shape
            t = np.matmul(_rot_batch(theta[:, q]), t.reshape(shape[0], 2, -1))
            psi = np.moveaxis(t.reshape(shape), 1, n - q).reshape(psi.shape)
        for a, b in ring_pairs(n):
            psi = _apply_matrix(psi, cz, (a, b), n)
        for q in range(n):
            psi = _apply_matrix(psi, h, (q,), n)
    return np.ascontiguousarray(psi)


class EntangledFeatureMap(TransformerMixin, BaseEstimator):
    """Transformer from normalized rows to encoded state amplitudes.

    ``transform`` returns a complex array of shape ``(n_samples, 2**n_features)``.
    """

    def __init__(self, layers=2, angle_scale=math.pi / 2):
        self.layers = layers
        self.angle_scale = angle_scale

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.config_ = EncoderConfig(X.shape[1], self.layers, self.angle_scale)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=float)
        return encode_batch(X, self.config_)
