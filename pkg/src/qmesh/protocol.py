"""Multi-vehicle entanglement protocol and entanglement diagnostics.

Vehicle ``i`` owns three qubits ``{3i, 3i+1, 3i+2}``. One round of the
protocol is

1. a Bell pair on ``(3i, 3i+1)`` and a Hadamard (the one-qubit QFT) on
   ``3i+2``, for every vehicle;
2. for every ordered pair ``(i, j)``, ``i != j``, a Toffoli with controls
   ``3i+1, 3j+1`` and target ``3i``, optionally followed by phase estimation
   on shared ancillas;
3. teleportation of ``3i`` through ``(3i+1, 3i+2)`` for every vehicle.

Finally every vehicle qubit is measured in the Z, X and Y bases. Mid-circuit
measurements collapse the state vector, so each shot is one sampled
trajectory; depolarizing noise is unravelled into random Paulis along it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._rng import as_generator, substream
from .exceptions import CapacityError, ValidationError
from .noise import NoiseModel, NoisePolicy, noisy_gates
from .sim import (
    Basis,
    DensityMatrix,
    GateKind,
    GateOp,
    MeasurementHistogram,
    QuantumCircuit,
    StateVector,
    _check_qubits,
    apply_circuit,
    apply_gate,
    bitstring,
    marginal_probabilities,
    max_qubits,
    measure_qubit,
    new_state,
    purify_if_pure,
    qft_circuit,
    reduced_density,
    rotate_to_basis,
    uhlmann_fidelity,
)

QUBITS_PER_VEHICLE = 3
BELL_CHECK_THRESHOLD = 0.99


class WeakEntanglementWarning(UserWarning):
    """A teleportation resource pair is not (close to) maximally entangled."""


class PhaseEstimationSkippedWarning(UserWarning):
    """Phase estimation was requested with no ancillas."""


# --------------------------------------------------------------------------
# entanglement measures


_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def concurrence(rho: DensityMatrix | StateVector) -> float:
    """Wootters concurrence of a two-qubit state.

    ``C = max(0, l1 - l2 - l3 - l4)`` where ``l_k`` are the square roots of
    the eigenvalues of ``rho (Y x Y) rho* (Y x Y)``, sorted descending.
    """
    if isinstance(rho, StateVector):
        rho = DensityMatrix._trusted(np.outer(rho.amplitudes, rho.amplitudes.conj()), rho.n_qubits)
    if rho.n_qubits != 2:
        raise ValidationError(f"concurrence needs a two-qubit state, got {rho.n_qubits} qubits")
    m = rho.entries
    tilde = _YY @ m.conj() @ _YY
    ev = np.linalg.eigvals(m @ tilde).real
    lam = np.sort(np.sqrt(np.clip(ev, 0.0, None)))[::-1]
    return float(min(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]), 1.0))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """``-Tr(rho log2 rho)`` in bits, with ``0 log 0 = 0``."""
    w = np.clip(np.linalg.eigvalsh(rho.entries), 0.0, None)
    w = w[w > 1e-15]
    return float(max(0.0, -np.sum(w * np.log2(w))))


def entanglement_entropy(state: StateVector, subsystem: Iterable[int]) -> float:
    """Entropy in bits of the reduced state on ``subsystem``.

    Raises
    ------
    ValidationError
        ``subsystem`` is empty or covers the whole register.
    """
    sub = tuple(sorted(set(int(q) for q in subsystem)))
    if not sub:
        raise ValidationError("subsystem must not be empty")
    _check_qubits(sub, state.n_qubits)
    if len(sub) == state.n_qubits:
        raise ValidationError("subsystem must be a proper subset of the register")
    # the smaller side gives the same spectrum more cheaply
    rest = tuple(q for q in range(state.n_qubits) if q not in sub)
    side = sub if len(sub) <= len(rest) else rest
    return von_neumann_entropy(reduced_density(state, side))


@dataclass(frozen=True)
class EntanglementReport:
    concurrence: float
    entropy_bits: float
    partition: str

    def to_dict(self) -> dict:
        return {"concurrence": self.concurrence, "entropy_bits": self.entropy_bits, "partition": self.partition}


def entanglement_report(state: StateVector, pair: tuple[int, int]) -> EntanglementReport:
    """Concurrence of ``pair`` and the entropy of its first qubit."""
    a, b = pair
    rho = reduced_density(state, (a, b))
    others = [q for q in range(state.n_qubits) if q != a]
    return EntanglementReport(
        concurrence(rho),
        entanglement_entropy(state, [a]) if others else 0.0,
        f"{{{a}}} | {{{', '.join(map(str, others))}}}",
    )


# --------------------------------------------------------------------------
# primitives


def _run(state: StateVector, gates: Iterable[GateOp], noise: NoiseModel | None, rng) -> StateVector:
    if noise is not None and noise.active:
        gates = noisy_gates(gates, noise, rng)
    for g in gates:
        state = apply_gate(state, g)
    return state


def bell_circuit(n_qubits: int, q1: int, q2: int, tag: str = "") -> QuantumCircuit:
    return QuantumCircuit(n_qubits).h(q1, tag=tag).cx(q1, q2, tag=tag)


def prepare_bell(state: StateVector, q1: int, q2: int, *, check: bool = False,
                 noise: NoiseModel | None = None, rng=None) -> StateVector:
    """H on ``q1`` then CX(q1 -> q2); maps ``|00>`` to ``(|00> + |11>)/sqrt 2``.

    With ``check=True`` both qubits must start in ``|0>``.
    """
    if q1 == q2:
        raise ValidationError("Bell preparation needs two distinct qubits")
    _check_qubits([q1, q2], state.n_qubits)
    if check:
        p = marginal_probabilities(state, [q1, q2])
        if p[0] < 1.0 - 1e-10:
            raise ValidationError(f"qubits {q1}, {q2} are not both in |0>")
    return _run(state, bell_circuit(state.n_qubits, q1, q2).gates, noise, rng)


@dataclass(frozen=True)
class TeleportResult:
    classical_bits: tuple[int, int]
    output: DensityMatrix
    fidelity_vs_input: float

    @property
    def output_state(self) -> StateVector | None:
        """Target qubit as a state vector, or ``None`` when it is mixed."""
        return purify_if_pure(self.output)


def teleport(message_qubit: int, bell_pair: tuple[int, int], state: StateVector, rng=None, *,
             outcomes: tuple[int, int] | None = None, noise: NoiseModel | None = None,
             check: bool = False) -> tuple[StateVector, TeleportResult]:
    """Teleport ``message_qubit`` onto ``bell_pair[1]``.

    CX(message -> bell_1) and H(message), then Z measurements give
    ``a`` (bell_1) and ``b`` (message), and bell_2 is corrected with
    ``X^a`` followed by ``Z^b``.

    Parameters
    ----------
    rng : int or Generator, optional
        Drives the measurement outcomes and, under ``noise``, the Pauli errors.
    outcomes : (a, b), optional
        Force a measurement branch instead of sampling it.
    check : bool
        Warn if the resource pair has concurrence below 0.99.
    """
    m, (b1, b2) = message_qubit, bell_pair
    _check_qubits([m, b1, b2], state.n_qubits)
    if check:
        c = concurrence(reduced_density(state, (b1, b2)))
        if c < BELL_CHECK_THRESHOLD:
            warnings.warn(f"resource pair ({b1}, {b2}) has concurrence {c:.3f}", WeakEntanglementWarning, stacklevel=2)
    rng = substream(0, "protocol.teleport") if rng is None else as_generator(rng)
    before = reduced_density(state, [m])
    n = state.n_qubits
    state = _run(state, QuantumCircuit(n).cx(m, b1).h(m).gates, noise, rng)
    fa, fb = outcomes if outcomes is not None else (None, None)
    a, state = measure_qubit(state, b1, rng, outcome=fa)
    b, state = measure_qubit(state, m, rng, outcome=fb)
    fix = QuantumCircuit(n)
    if a:
        fix.x(b2)
    if b:
        fix.z(b2)
    state = _run(state, fix.gates, noise, rng)
    after = reduced_density(state, [b2])
    return state, TeleportResult((a, b), after, uhlmann_fidelity(before, after))


def qpe_circuit(n_qubits: int, ancillas: Sequence[int], target: int, phase: float) -> QuantumCircuit:
    """Phase estimation of ``diag(1, e^{i phase})`` on ``target``.

    ``ancillas[k]`` carries weight ``2^k`` in the readout.
    """
    anc = list(ancillas)
    circ = QuantumCircuit(n_qubits)
    for q in anc:
        circ.h(q)
    for k, q in enumerate(anc):
        circ.cphase(math.remainder((2**k) * phase, 2 * math.pi), q, target)
    circ.extend(qft_circuit(n_qubits, anc, inverse=True).gates)
    return circ


def qpe(state: StateVector, ancillas: Sequence[int], target: int, phase: float) -> StateVector:
    """Apply phase estimation; measuring ``ancillas`` then reads ``phase / 2 pi``."""
    anc = tuple(ancillas)
    if not anc:
        warnings.warn("no ancillas given; phase estimation skipped", PhaseEstimationSkippedWarning, stacklevel=2)
        return state
    if target in anc:
        raise ValidationError("target must not be one of the ancillas")
    _check_qubits([*anc, target], state.n_qubits)
    return apply_circuit(state, qpe_circuit(state.n_qubits, anc, target, phase))


# --------------------------------------------------------------------------
# the protocol


@dataclass(frozen=True)
class ProtocolConfig:
    """Settings for :func:`run_protocol`.

    ``qpe_ancillas = 0`` leaves phase estimation out. ``shots`` is the number
    of trajectories; each yields one sample per basis.
    """

    n_vehicles: int = 1
    rounds: int = 1
    qpe_ancillas: int = 0
    qpe_phase: float = math.pi / 2
    noise: NoiseModel = field(default_factory=NoiseModel.noiseless)
    shots: int = 1024
    seed: int = 0
    bases: tuple = ("Z", "X", "Y")
    reset_per_round: bool = False
    probe_trajectories: int | None = None

    def __post_init__(self):
        for name in ("n_vehicles", "rounds", "shots"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if int(self.qpe_ancillas) < 0:
            raise ValidationError("qpe_ancillas must be >= 0")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseModel.from_dict(self.noise))
        bases = tuple(Basis(b) for b in self.bases)
        if not bases:
            raise ValidationError("at least one measurement basis is required")
        object.__setattr__(self, "bases", bases)
        cap = max_qubits()
        if self.n_qubits > cap:
            raise CapacityError(
                f"{self.n_vehicles} vehicles need 3n = {self.register_qubits} qubits"
                + (f" plus {self.qpe_ancillas} ancillas" if self.qpe_ancillas else "")
                + f", above the statevector limit of {cap} (set QMESH_MAX_QUBITS to raise it)"
            )

    @property
    def register_qubits(self) -> int:
        return QUBITS_PER_VEHICLE * self.n_vehicles

    @property
    def n_qubits(self) -> int:
        return self.register_qubits + int(self.qpe_ancillas)

    def to_dict(self) -> dict:
        return {
            "n_vehicles": self.n_vehicles,
            "rounds": self.rounds,
            "qpe_ancillas": self.qpe_ancillas,
            "qpe_phase": self.qpe_phase,
            "noise": self.noise.to_dict(),
            "shots": self.shots,
            "seed": self.seed,
            "bases": [b.value for b in self.bases],
            "reset_per_round": self.reset_per_round,
            "probe_trajectories": self.probe_trajectories,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in doc.items() if k in known})


def vehicle_qubits(i: int) -> tuple[int, int, int]:
    return (3 * i, 3 * i + 1, 3 * i + 2)


def vehicle_pairs(n: int) -> list[tuple[int, int]]:
    """Ordered pairs: ``(i, j)`` with ``i < j`` first, then the reversed ones."""
    fwd = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return fwd + [(j, i) for i, j in fwd]


def preparation_circuit(config: ProtocolConfig) -> QuantumCircuit:
    circ = QuantumCircuit(config.n_qubits)
    for i in range(config.n_vehicles):
        q0, q1, q2 = vehicle_qubits(i)
        circ.extend(bell_circuit(config.n_qubits, q0, q1, tag="encoding").gates)
        circ.h(q2, tag="encoding")
    return circ


def coupling_circuit(config: ProtocolConfig) -> QuantumCircuit:
    circ = QuantumCircuit(config.n_qubits)
    for i, j in vehicle_pairs(config.n_vehicles):
        circ.ccx(3 * i + 1, 3 * j + 1, 3 * i)
    return circ


def _reset_ancillas(state: StateVector, ancillas: Sequence[int], rng) -> StateVector:
    for q in ancillas:
        bit, state = measure_qubit(state, q, rng)
        if bit:
            state = apply_gate(state, GateOp(GateKind.X, q))
    return state


def protocol_trajectory(config: ProtocolConfig, rng: np.random.Generator) -> StateVector:
    """One sampled run of all rounds, returned just before the final readout."""
    n = config.n_qubits
    noise = config.noise if config.noise.active else None
    anc = list(range(config.register_qubits, n))
    prep = preparation_circuit(config).gates
    coupling = coupling_circuit(config).gates
    state = new_state(n)
    for r in range(config.rounds):
        if r and config.reset_per_round:
            state = new_state(n)
        state = _run(state, prep, noise, rng)
        if anc:
            for g in coupling:
                state = _run(state, [g], noise, rng)
                target = g.targets[0]
                state = _run(state, qpe_circuit(n, anc, target, config.qpe_phase).gates, noise, rng)
                state = _reset_ancillas(state, anc, rng)
        else:
            state = _run(state, coupling, noise, rng)
        for i in range(config.n_vehicles):
            q0, q1, q2 = vehicle_qubits(i)
            state, _ = teleport(q0, (q1, q2), state, rng, noise=noise)
    return state


def _sample_register(state: StateVector, basis: Basis, qubits: Sequence[int], rng) -> str:
    probs = marginal_probabilities(rotate_to_basis(state, basis), qubits)
    probs = np.clip(probs, 0.0, None)
    k = int(rng.choice(len(probs), p=probs / probs.sum()))
    return bitstring(k, len(qubits))


def sample_protocol(config: ProtocolConfig) -> dict[Basis, MeasurementHistogram]:
    """Histograms over the vehicle qubits, one per configured basis."""
    rng = substream(config.seed, "protocol.trajectories")
    reg = list(range(config.register_qubits))
    counts: dict[Basis, dict[str, int]] = {b: {} for b in config.bases}
    for _ in range(config.shots):
        state = protocol_trajectory(config, rng)
        for b in config.bases:
            key = _sample_register(state, b, reg, rng)
            counts[b][key] = counts[b].get(key, 0) + 1
    return {b: MeasurementHistogram(b, config.shots, dict(sorted(c.items()))) for b, c in counts.items()}


def haar_qubit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def teleport_probe(noise: NoiseModel | None, trajectories: int, seed: int = 0, name: str = "probe") -> float:
    """Mean fidelity of teleporting Haar-random qubits through fresh Bell pairs.

    Each trajectory draws its message, its noise and its measurement outcomes
    from separate streams, so probes that differ only in ``noise`` share the
    same messages and error locations.
    """
    if trajectories < 1:
        raise ValidationError("trajectories must be >= 1")
    msg_rng = substream(seed, f"protocol.{name}.message")
    noise_rng = substream(seed, f"protocol.{name}.noise")
    meas_rng = substream(seed, f"protocol.{name}.measure")
    active = noise is not None and noise.active
    total = 0.0
    for _ in range(trajectories):
        psi = StateVector(np.concatenate([haar_qubit(msg_rng), np.zeros(6)]))
        state = _run(psi, bell_circuit(3, 1, 2, tag="encoding").gates, noise if active else None, noise_rng)
        before = reduced_density(psi, [0])
        state = _run(state, QuantumCircuit(3).cx(0, 1).h(0).gates, noise if active else None, noise_rng)
        a, state = measure_qubit(state, 1, meas_rng)
        b, state = measure_qubit(state, 0, meas_rng)
        fix = QuantumCircuit(3)
        if a:
            fix.x(2)
        if b:
            fix.z(2)
        state = _run(state, fix.gates, noise if active else None, noise_rng)
        total += uhlmann_fidelity(before, reduced_density(state, [2]))
    return total / trajectories


def teleport_noise_sweep(p_values: Sequence[float], trajectories: int = 2000, seed: int = 0,
                         policy: NoisePolicy | str = NoisePolicy.AFTER_EVERY_GATE) -> list[float]:
    """Mean probe fidelity for each depolarizing strength in ``p_values``."""
    return [teleport_probe(NoiseModel(p, policy), trajectories, seed) for p in p_values]


@dataclass
class ProtocolResult:
    config: ProtocolConfig
    histograms: dict
    teleport_fidelities: list
    entanglement: list

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "histograms": {b.value: h.to_dict() for b, h in self.histograms.items()},
            "teleport_fidelities": list(self.teleport_fidelities),
            "entanglement": [dict(vehicle=i, **e.to_dict()) for i, e in enumerate(self.entanglement)],
        }

    def marginal(self, basis: Basis | str, qubits: Sequence[int]) -> MeasurementHistogram:
        return self.histograms[Basis(basis)].marginal(qubits)


def prepared_state(config: ProtocolConfig) -> StateVector:
    """Noiseless register after the first preparation stage."""
    return apply_circuit(new_state(config.n_qubits), preparation_circuit(config))


def run_protocol(config: ProtocolConfig) -> ProtocolResult:
    """Run the protocol and collect histograms and diagnostics.

    ``teleport_fidelities[i]`` is a probe of vehicle ``i``'s link: a
    Haar-random qubit teleported through a fresh Bell pair under the
    configured noise, averaged over ``probe_trajectories`` (default
    ``shots``) runs. The entanglement entries describe each vehicle's Bell
    pair in the noiseless state before coupling.
    """
    hist = sample_protocol(config)
    prep = prepared_state(config)
    ent = [entanglement_report(prep, vehicle_qubits(i)[:2]) for i in range(config.n_vehicles)]
    traj = config.probe_trajectories or config.shots
    fids = [teleport_probe(config.noise, traj, config.seed, name=f"vehicle{i}") for i in range(config.n_vehicles)]
    return ProtocolResult(config, hist, fids, ent)
