"""Single-qubit depolarizing noise, exact or sampled as Pauli trajectories.

The channel on one qubit is

    rho -> (1 - p) rho + p/3 (X rho X + Y rho Y + Z rho Z)

applied independently to every qubit a noisy gate touches. ``p = 3/4``
sends any single-qubit state to ``I/2``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from ._rng import as_generator
from .exceptions import ValidationError
from .sim import (
    PAULI,
    DensityMatrix,
    GateKind,
    GateOp,
    QuantumCircuit,
    _check_qubits,
    _conjugate,
    apply_gate_density,
    to_density,
    new_state,
)

DEFAULT_P = 0.05


class NoisePolicy(str, enum.Enum):
    AFTER_EVERY_GATE = "AfterEveryGate"
    AFTER_ENCODING_ONLY = "AfterEncodingOnly"
    NONE = "None"


@dataclass(frozen=True)
class NoiseModel:
    p_depolarizing: float = DEFAULT_P
    policy: NoisePolicy = NoisePolicy.AFTER_EVERY_GATE

    def __post_init__(self):
        p = float(self.p_depolarizing)
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"depolarizing probability must lie in [0, 1], got {p}")
        object.__setattr__(self, "p_depolarizing", p)
        object.__setattr__(self, "policy", NoisePolicy(self.policy))

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(0.0, NoisePolicy.NONE)

    @property
    def active(self) -> bool:
        return self.policy is not NoisePolicy.NONE and self.p_depolarizing > 0.0

    def is_noisy(self, gate: GateOp) -> bool:
        if self.policy is NoisePolicy.NONE:
            return False
        if self.policy is NoisePolicy.AFTER_ENCODING_ONLY:
            return gate.tag == "encoding"
        return True

    def to_dict(self) -> dict:
        return {"p_depolarizing": self.p_depolarizing, "policy": self.policy.value}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        return cls(doc.get("p_depolarizing", DEFAULT_P), doc.get("policy", NoisePolicy.AFTER_EVERY_GATE))


def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"depolarizing probability must lie in [0, 1], got {p}")
    return p


def apply_depolarizing(rho: DensityMatrix, qubit: int, p: float) -> DensityMatrix:
    """Exact depolarizing channel with strength ``p`` on ``qubit``."""
    p = _check_p(p)
    (qubit,) = _check_qubits([qubit], rho.n_qubits)
    if p == 0.0:
        return rho
    n = rho.n_qubits
    m = rho.entries
    twirl = sum(_conjugate(m, PAULI[k], (qubit,), n) for k in "XYZ")
    return DensityMatrix._trusted((1.0 - p) * m + (p / 3.0) * twirl, n)


def noisy_gates(gates: Iterable[GateOp], model: NoiseModel, rng: np.random.Generator) -> Iterator[GateOp]:
    """Yield ``gates`` with random Pauli errors inserted after noisy locations.

    Both draws (error or not, which Pauli) are taken at every noisy location
    whatever ``p`` is, so one seed gives nested error sets across a sweep of
    ``p`` values.
    """
    p = model.p_depolarizing
    for g in gates:
        yield g
        if not model.is_noisy(g) or p == 0.0:
            continue
        for q in g.qubits:
            u = rng.random()
            k = int(rng.integers(3))
            if u < p:
                yield GateOp((GateKind.X, GateKind.Y, GateKind.Z)[k], q, tag="noise")


def sample_noisy_circuit(circuit: QuantumCircuit, model: NoiseModel, seed=0) -> QuantumCircuit:
    """One Monte-Carlo trajectory of ``circuit`` under ``model``.

    After each noisy gate, every qubit it touches independently receives a
    uniformly chosen X, Y or Z with probability ``p``. Averaging outcome
    distributions over many seeds converges to the exact channel.
    """
    rng = as_generator(seed)
    return QuantumCircuit(circuit.n_qubits, list(noisy_gates(circuit.gates, model, rng)))


def simulate_density(circuit: QuantumCircuit, model: NoiseModel | None = None, initial: DensityMatrix | None = None) -> DensityMatrix:
    """Evolve a density matrix through ``circuit`` with the exact channel."""
    rho = initial if initial is not None else to_density(new_state(circuit.n_qubits))
    for g in circuit:
        rho = apply_gate_density(rho, g)
        if model is not None and model.is_noisy(g) and model.p_depolarizing > 0.0:
            for q in g.qubits:
                rho = apply_depolarizing(rho, q, model.p_depolarizing)
    return rho
