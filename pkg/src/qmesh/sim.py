"""Dense statevector and density-matrix simulation of small qubit registers.

Conventions used throughout the package:

* qubit 0 is the least-significant bit of the amplitude index;
* bitstrings (histogram keys) print the highest qubit first;
* a gate acting on qubits ``(q_0, ..., q_{k-1})`` (controls first, then
  targets) uses a local ``2^k x 2^k`` matrix in which ``q_0`` is the most
  significant local bit, so ``CX`` has the textbook matrix with the control
  on the left.
"""
from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._rng import as_generator
from .exceptions import CapacityError, QubitIndexError, ValidationError

DEFAULT_MAX_QUBITS = 20
MAX_DENSITY_QUBITS = 10
NORM_ATOL = 1e-10


def max_qubits() -> int:
    """Statevector qubit cap; ``QMESH_MAX_QUBITS`` overrides the default of 20."""
    raw = os.environ.get("QMESH_MAX_QUBITS")
    if raw is None:
        return DEFAULT_MAX_QUBITS
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"QMESH_MAX_QUBITS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValidationError("QMESH_MAX_QUBITS must be >= 1")
    return value


def _check_capacity(n_qubits: int, limit: int, what: str = "statevector") -> None:
    if not 1 <= n_qubits <= limit:
        raise CapacityError(
            f"{what} register of {n_qubits} qubits outside supported range 1..{limit}"
        )


# --------------------------------------------------------------------------
# low-level kernel


def _apply_matrix(psi: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Apply ``mat`` to ``qubits`` of every row of ``psi`` (shape ``(..., 2**n)``)."""
    k = len(qubits)
    lead = psi.shape[:-1]
    t = psi.reshape((-1,) + (2,) * n)
    axes = [n - q for q in qubits]
    front = list(range(1, k + 1))
    t = np.moveaxis(t, axes, front)
    shape = t.shape
    t = np.matmul(mat, t.reshape(shape[0], 2**k, -1))
    t = np.moveaxis(t.reshape(shape), front, axes)
    return np.ascontiguousarray(t).reshape(lead + (2**n,))


def _apply_left(rho: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    return _apply_matrix(rho.T, mat, qubits, n).T


def _conjugate(rho: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Return ``U rho U^dagger`` with ``U`` acting on ``qubits``."""
    half = _apply_left(rho, mat, qubits, n)
    return _apply_left(half.conj().T, mat, qubits, n).conj().T


# --------------------------------------------------------------------------
# states


class StateVector:
    """Pure state of ``n_qubits`` qubits stored as ``2**n`` complex amplitudes."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, amplitudes, *, normalize: bool = False):
        amps = np.array(amplitudes, dtype=np.complex128).reshape(-1)
        size = amps.size
        n = size.bit_length() - 1
        if size < 2 or 2**n != size:
            raise ValidationError(f"amplitude count {size} is not a power of two >= 2")
        _check_capacity(n, max_qubits())
        norm = float(np.vdot(amps, amps).real)
        if normalize:
            if norm == 0.0:
                raise ValidationError("cannot normalize the zero vector")
            amps = amps / math.sqrt(norm)
        elif abs(norm - 1.0) > NORM_ATOL:
            raise ValidationError(f"state norm^2 is {norm!r}, expected 1")
        amps.setflags(write=False)
        self.n_qubits = n
        self.amplitudes = amps

    @classmethod
    def _trusted(cls, amps: np.ndarray, n: int) -> "StateVector":
        obj = cls.__new__(cls)
        amps = np.asarray(amps, dtype=np.complex128)
        amps.setflags(write=False)
        obj.n_qubits = n
        obj.amplitudes = amps
        return obj

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateVector):
            return NotImplemented
        return self.n_qubits == other.n_qubits and np.array_equal(self.amplitudes, other.amplitudes)

    __hash__ = None

    @property
    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    def tensor(self, other: "StateVector") -> "StateVector":
        """Return ``self (x) other`` with ``other`` on the low qubits."""
        return StateVector._trusted(np.kron(self.amplitudes, other.amplitudes), self.n_qubits + other.n_qubits)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_qubits": self.n_qubits,
                "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "StateVector":
        doc = json.loads(text)
        amps = [complex(re, im) for re, im in doc["amplitudes"]]
        state = cls(amps)
        if state.n_qubits != doc["n_qubits"]:
            raise ValidationError("n_qubits does not match amplitude count")
        return state


class DensityMatrix:
    """Mixed state of at most 10 qubits stored as a dense ``2**n x 2**n`` matrix."""

    __slots__ = ("n_qubits", "entries")

    def __init__(self, entries, *, check: bool = True):
        mat = np.array(entries, dtype=np.complex128)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError(f"density matrix must be square, got shape {mat.shape}")
        size = mat.shape[0]
        n = size.bit_length() - 1
        if size < 2 or 2**n != size:
            raise ValidationError(f"dimension {size} is not a power of two >= 2")
        _check_capacity(n, MAX_DENSITY_QUBITS, "density-matrix")
        if check:
            if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
                raise ValidationError("density matrix is not Hermitian")
            tr = np.trace(mat).real
            if abs(tr - 1.0) > 1e-10:
                raise ValidationError(f"density matrix trace is {tr!r}, expected 1")
            if np.linalg.eigvalsh(mat).min() < -1e-9:
                raise ValidationError("density matrix has a negative eigenvalue")
        mat.setflags(write=False)
        self.n_qubits = n
        self.entries = mat

    @classmethod
    def _trusted(cls, mat: np.ndarray, n: int) -> "DensityMatrix":
        obj = cls.__new__(cls)
        mat = np.asarray(mat, dtype=np.complex128)
        mat.setflags(write=False)
        obj.n_qubits = n
        obj.entries = mat
        return obj

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        _check_capacity(n_qubits, MAX_DENSITY_QUBITS, "density-matrix")
        d = 2**n_qubits
        return cls._trusted(np.eye(d) / d, n_qubits)

    def __repr__(self) -> str:
        return f"DensityMatrix(n_qubits={self.n_qubits})"

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def probabilities(self) -> np.ndarray:
        p = np.clip(np.diag(self.entries).real, 0.0, None)
        return p / p.sum()

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


def new_state(n_qubits: int) -> StateVector:
    """Return ``|0...0>`` on ``n_qubits`` qubits."""
    _check_capacity(int(n_qubits), max_qubits())
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector._trusted(amps, int(n_qubits))


def basis_state(n_qubits: int, index: int) -> StateVector:
    _check_capacity(int(n_qubits), max_qubits())
    if not 0 <= index < 2**n_qubits:
        raise QubitIndexError(f"basis index {index} out of range for {n_qubits} qubits")
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector._trusted(amps, int(n_qubits))


# --------------------------------------------------------------------------
# gates


class GateKind(str, enum.Enum):
    H = "H"
    X = "X"
    Y = "Y"
    Z = "Z"
    S = "S"
    SDG = "Sdg"
    CX = "CX"
    CZ = "CZ"
    CPHASE = "CPHASE"
    TOFFOLI = "Toffoli"
    ISWAP = "iSWAP"
    RY = "Ry"
    RZ = "Rz"
    ROT = "RotPaper"
    CRZ = "ControlledRz"


# kind -> (n_controls, n_targets, parameterized)
_ARITY = {
    GateKind.H: (0, 1, False),
    GateKind.X: (0, 1, False),
    GateKind.Y: (0, 1, False),
    GateKind.Z: (0, 1, False),
    GateKind.S: (0, 1, False),
    GateKind.SDG: (0, 1, False),
    GateKind.CX: (1, 1, False),
    GateKind.CZ: (1, 1, False),
    GateKind.CPHASE: (1, 1, True),
    GateKind.TOFFOLI: (2, 1, False),
    GateKind.ISWAP: (0, 2, False),
    GateKind.RY: (0, 1, True),
    GateKind.RZ: (0, 1, True),
    GateKind.ROT: (0, 1, True),
    GateKind.CRZ: (1, 1, True),
}

_SQ2 = 1.0 / math.sqrt(2.0)
_FIXED = {
    GateKind.H: np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=np.complex128),
    GateKind.X: np.array([[0, 1], [1, 0]], dtype=np.complex128),
    GateKind.Y: np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    GateKind.Z: np.array([[1, 0], [0, -1]], dtype=np.complex128),
    GateKind.S: np.array([[1, 0], [0, 1j]], dtype=np.complex128),
    GateKind.SDG: np.array([[1, 0], [0, -1j]], dtype=np.complex128),
    GateKind.CX: np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
    ),
    GateKind.CZ: np.diag([1, 1, 1, -1]).astype(np.complex128),
    GateKind.ISWAP: np.array(
        [[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=np.complex128
    ),
}
_TOFFOLI = np.eye(8, dtype=np.complex128)
_TOFFOLI[6:, 6:] = [[0, 1], [1, 0]]
_FIXED[GateKind.TOFFOLI] = _TOFFOLI
for _m in _FIXED.values():
    _m.setflags(write=False)

PAULI = {"X": _FIXED[GateKind.X], "Y": _FIXED[GateKind.Y], "Z": _FIXED[GateKind.Z]}


def gate_matrix(kind: GateKind, param: float | None = None) -> np.ndarray:
    """Unitary for ``kind`` in the local ordering (controls, then targets)."""
    kind = GateKind(kind)
    if kind in _FIXED:
        return _FIXED[kind]
    t = float(param)
    if kind is GateKind.RY:
        c, s = math.cos(t / 2), math.sin(t / 2)
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind is GateKind.RZ:
        return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])
    if kind is GateKind.ROT:
        # exp(-i t X): the explicit 2x2 encoding rotation
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)
    if kind is GateKind.CPHASE:
        return np.diag([1, 1, 1, np.exp(1j * t)])
    if kind is GateKind.CRZ:
        return np.diag([1, 1, np.exp(-0.5j * t), np.exp(0.5j * t)])
    raise ValidationError(f"no matrix for gate kind {kind}")  # pragma: no cover


@dataclass(frozen=True)
class GateOp:
    """One gate: kind, target and control qubits, optional angle.

    ``tag`` is free-form metadata; the noise module treats gates tagged
    ``"encoding"`` as the state-preparation stage.
    """

    kind: GateKind
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    param: float | None = None
    tag: str = ""

    def __post_init__(self):
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", tuple(int(q) for q in _as_tuple(self.targets)))
        object.__setattr__(self, "controls", tuple(int(q) for q in _as_tuple(self.controls)))
        n_c, n_t, parameterized = _ARITY[kind]
        if len(self.controls) != n_c or len(self.targets) != n_t:
            raise ValidationError(
                f"{kind.value} takes {n_c} control(s) and {n_t} target(s), "
                f"got {len(self.controls)} and {len(self.targets)}"
            )
        if parameterized:
            if self.param is None or not math.isfinite(float(self.param)):
                raise ValidationError(f"{kind.value} requires a finite angle")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise ValidationError(f"{kind.value} takes no angle")
        qs = self.qubits
        if len(set(qs)) != len(qs):
            raise ValidationError(f"{kind.value} qubits must be distinct, got {qs}")
        if min(qs) < 0:
            raise QubitIndexError(f"negative qubit index in {qs}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.controls + self.targets

    def matrix(self) -> np.ndarray:
        return gate_matrix(self.kind, self.param)

    def validate(self, n_qubits: int) -> None:
        if max(self.qubits) >= n_qubits:
            raise QubitIndexError(
                f"{self.kind.value} on qubits {self.qubits} invalid for {n_qubits}-qubit register"
            )

    def inverse(self) -> "GateOp":
        kind = self.kind
        if kind is GateKind.S:
            return GateOp(GateKind.SDG, self.targets, self.controls, tag=self.tag)
        if kind is GateKind.SDG:
            return GateOp(GateKind.S, self.targets, self.controls, tag=self.tag)
        if kind is GateKind.ISWAP:
            raise ValidationError("iSWAP inverse is not a member of the gate set")
        if self.param is not None:
            return GateOp(kind, self.targets, self.controls, -self.param, self.tag)
        return self


def _as_tuple(x) -> tuple:
    if isinstance(x, (int, np.integer)):
        return (int(x),)
    return tuple(x)


@dataclass
class QuantumCircuit:
    """Ordered gate program on a fixed-width register."""

    n_qubits: int
    gates: list[GateOp] = field(default_factory=list)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValidationError("circuit needs at least one qubit")
        for g in self.gates:
            g.validate(self.n_qubits)
        self.gates = list(self.gates)

    def __len__(self) -> int:
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def append(self, gate: GateOp) -> "QuantumCircuit":
        gate.validate(self.n_qubits)
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[GateOp]) -> "QuantumCircuit":
        for g in gates:
            self.append(g)
        return self

    def _add(self, kind, targets, controls=(), param=None, tag=""):
        return self.append(GateOp(kind, targets, controls, param, tag))

    def h(self, q, tag=""):
        return self._add(GateKind.H, q, tag=tag)

    def x(self, q, tag=""):
        return self._add(GateKind.X, q, tag=tag)

    def y(self, q, tag=""):
        return self._add(GateKind.Y, q, tag=tag)

    def z(self, q, tag=""):
        return self._add(GateKind.Z, q, tag=tag)

    def s(self, q, tag=""):
        return self._add(GateKind.S, q, tag=tag)

    def sdg(self, q, tag=""):
        return self._add(GateKind.SDG, q, tag=tag)

    def cx(self, c, t, tag=""):
        return self._add(GateKind.CX, t, c, tag=tag)

    def cz(self, c, t, tag=""):
        return self._add(GateKind.CZ, t, c, tag=tag)

    def cphase(self, phi, c, t, tag=""):
        return self._add(GateKind.CPHASE, t, c, phi, tag)

    def ccx(self, c1, c2, t, tag=""):
        return self._add(GateKind.TOFFOLI, t, (c1, c2), tag=tag)

    def iswap(self, a, b, tag=""):
        return self._add(GateKind.ISWAP, (a, b), tag=tag)

    def ry(self, theta, q, tag=""):
        return self._add(GateKind.RY, q, param=theta, tag=tag)

    def rz(self, theta, q, tag=""):
        return self._add(GateKind.RZ, q, param=theta, tag=tag)

    def rot(self, theta, q, tag=""):
        return self._add(GateKind.ROT, q, param=theta, tag=tag)

    def crz(self, theta, c, t, tag=""):
        return self._add(GateKind.CRZ, t, c, theta, tag)

    def inverse(self) -> "QuantumCircuit":
        return QuantumCircuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def run(self, state: StateVector | None = None) -> StateVector:
        if state is None:
            state = new_state(self.n_qubits)
        elif state.n_qubits != self.n_qubits:
            raise ValidationError(
                f"circuit width {self.n_qubits} does not match state width {state.n_qubits}"
            )
        return apply_circuit(state, self)

    def unitary(self) -> np.ndarray:
        d = 2**self.n_qubits
        # rows of the batch are the images of basis vectors
        out = np.eye(d, dtype=np.complex128)
        for g in self.gates:
            out = _apply_matrix(out, g.matrix(), g.qubits, self.n_qubits)
        return out.T


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Return ``gate`` applied to ``state``; the input is not modified."""
    gate.validate(state.n_qubits)
    amps = _apply_matrix(state.amplitudes, gate.matrix(), gate.qubits, state.n_qubits)
    return StateVector._trusted(amps, state.n_qubits)


def apply_circuit(state: StateVector, circuit: QuantumCircuit | Iterable[GateOp]) -> StateVector:
    n = state.n_qubits
    amps = state.amplitudes
    for g in circuit:
        g.validate(n)
        amps = _apply_matrix(amps, g.matrix(), g.qubits, n)
    return StateVector._trusted(amps, n)


def apply_gate_density(rho: DensityMatrix, gate: GateOp) -> DensityMatrix:
    gate.validate(rho.n_qubits)
    out = _conjugate(rho.entries, gate.matrix(), gate.qubits, rho.n_qubits)
    return DensityMatrix._trusted(out, rho.n_qubits)


def apply_unitary(state: StateVector, mat: np.ndarray, qubits: Sequence[int]) -> StateVector:
    """Apply an arbitrary ``2^k x 2^k`` unitary (first listed qubit most significant)."""
    qubits = _check_qubits(qubits, state.n_qubits)
    mat = np.asarray(mat, dtype=np.complex128)
    if mat.shape != (2 ** len(qubits),) * 2:
        raise ValidationError(f"matrix shape {mat.shape} does not fit {len(qubits)} qubits")
    return StateVector._trusted(_apply_matrix(state.amplitudes, mat, qubits, state.n_qubits), state.n_qubits)


def _check_qubits(qubits: Iterable[int], n: int) -> tuple[int, ...]:
    qs = tuple(int(q) for q in qubits)
    if len(set(qs)) != len(qs):
        raise ValidationError(f"duplicate qubit indices in {qs}")
    for q in qs:
        if not 0 <= q < n:
            raise QubitIndexError(f"qubit {q} out of range for {n}-qubit register")
    return qs


# --------------------------------------------------------------------------
# Fourier transform


def qft_circuit(n_qubits: int, qubits: Sequence[int], *, inverse: bool = False) -> QuantumCircuit:
    """Gate-level QFT on ``qubits`` (``qubits[0]`` is the low bit of the sub-register).

    Hadamards and controlled phases, followed by the bit-reversal swaps
    (each swap as three CX), so the unitary equals the DFT matrix with
    ``omega = exp(2 pi i / 2^m)``.
    """
    qubits = _check_qubits(qubits, n_qubits)
    m = len(qubits)
    circ = QuantumCircuit(n_qubits)
    for j in range(m - 1, -1, -1):
        circ.h(qubits[j])
        for k in range(j - 1, -1, -1):
            circ.cphase(math.pi / 2 ** (j - k), qubits[k], qubits[j])
    for i in range(m // 2):
        a, b = qubits[i], qubits[m - 1 - i]
        circ.cx(a, b).cx(b, a).cx(a, b)
    return circ.inverse() if inverse else circ


def apply_qft(state: StateVector, qubits: Sequence[int], *, inverse: bool = False) -> StateVector:
    if not qubits:
        raise ValidationError("QFT needs at least one qubit")
    return apply_circuit(state, qft_circuit(state.n_qubits, qubits, inverse=inverse))


# --------------------------------------------------------------------------
# measurement


class Basis(str, enum.Enum):
    Z = "Z"
    X = "X"
    Y = "Y"


@dataclass
class MeasurementHistogram:
    basis: Basis
    shots: int
    counts: dict[str, int]

    def __post_init__(self):
        self.basis = Basis(self.basis)
        total = sum(self.counts.values())
        if total != self.shots:
            raise ValidationError(f"counts sum to {total}, expected {self.shots} shots")

    def frequencies(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}

    def marginal(self, qubits: Sequence[int]) -> "MeasurementHistogram":
        """Counts over ``qubits`` only; keys print ``qubits`` highest first."""
        out: dict[str, int] = {}
        order = sorted(qubits, reverse=True)
        for key, v in self.counts.items():
            n = len(key)
            sub = "".join(key[n - 1 - q] for q in order)
            out[sub] = out.get(sub, 0) + v
        return MeasurementHistogram(self.basis, self.shots, dict(sorted(out.items())))

    def merge(self, other: "MeasurementHistogram") -> "MeasurementHistogram":
        if other.basis != self.basis:
            raise ValidationError("cannot merge histograms from different bases")
        out = dict(self.counts)
        for k, v in other.counts.items():
            out[k] = out.get(k, 0) + v
        return MeasurementHistogram(self.basis, self.shots + other.shots, dict(sorted(out.items())))

    def to_dict(self) -> dict:
        return dict(self.counts)


def bitstring(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


def rotate_to_basis(state: StateVector, basis: Basis | str) -> StateVector:
    basis = Basis(basis)
    if basis is Basis.Z:
        return state
    n = state.n_qubits
    circ = QuantumCircuit(n)
    for q in range(n):
        if basis is Basis.Y:
            circ.sdg(q)
        circ.h(q)
    return apply_circuit(state, circ)


def sample_counts(probs: np.ndarray, shots: int, rng: np.random.Generator, n_qubits: int) -> dict[str, int]:
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    draws = rng.multinomial(shots, p)
    return {bitstring(int(i), n_qubits): int(draws[i]) for i in np.flatnonzero(draws)}


def measure(state: StateVector, basis: Basis | str = "Z", shots: int = 1024, seed=0) -> MeasurementHistogram:
    """Sample ``shots`` outcomes of measuring every qubit in ``basis``.

    X-basis: H on every qubit then a Z measurement. Y-basis: Sdg then H.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if int(shots) < 1:
        raise ValidationError("shots must be >= 1")
    rotated = rotate_to_basis(state, basis)
    counts = sample_counts(rotated.probabilities(), int(shots), as_generator(seed), state.n_qubits)
    return MeasurementHistogram(Basis(basis), int(shots), counts)


def measure_qubit(state: StateVector, qubit: int, rng=None, *, outcome: int | None = None) -> tuple[int, StateVector]:
    """Projective Z measurement of one qubit; returns ``(bit, collapsed state)``.

    Pass ``outcome`` to post-select a branch instead of sampling it.
    """
    (qubit,) = _check_qubits([qubit], state.n_qubits)
    n = state.n_qubits
    t = state.amplitudes.reshape((2,) * n)
    axis = n - 1 - qubit
    p1 = float(np.sum(np.abs(np.take(t, 1, axis=axis)) ** 2))
    if outcome is None:
        outcome = int(as_generator(rng).random() < p1)
    prob = p1 if outcome else 1.0 - p1
    if prob <= 1e-15:
        raise ValidationError(f"outcome {outcome} on qubit {qubit} has zero probability")
    out = np.zeros_like(t)
    idx = [slice(None)] * n
    idx[axis] = outcome
    out[tuple(idx)] = t[tuple(idx)] / math.sqrt(prob)
    return outcome, StateVector._trusted(out.reshape(-1), n)


def marginal_probabilities(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Exact outcome distribution over ``qubits`` (``qubits[0]`` is the low bit)."""
    qubits = _check_qubits(qubits, state.n_qubits)
    n = state.n_qubits
    p = (np.abs(state.amplitudes) ** 2).reshape((2,) * n)
    axes = [n - 1 - q for q in reversed(qubits)]
    p = np.moveaxis(p, axes, list(range(len(qubits))))
    return p.reshape(2 ** len(qubits), -1).sum(axis=1)


# --------------------------------------------------------------------------
# mixed states


def to_density(state: StateVector) -> DensityMatrix:
    _check_capacity(state.n_qubits, MAX_DENSITY_QUBITS, "density-matrix")
    a = state.amplitudes
    return DensityMatrix._trusted(np.outer(a, a.conj()), state.n_qubits)


def _trace_out(t: np.ndarray, n: int, keep: tuple[int, ...]) -> np.ndarray:
    """Partial trace of an operator tensor of shape ``(2,)*2n``."""
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows = [letters[i] for i in range(n)]
    cols = [letters[n + i] for i in range(n)]
    keep_axes = sorted((n - 1 - q for q in keep))
    for ax in range(n):
        if ax not in keep_axes:
            cols[ax] = rows[ax]
    out = "".join(rows[a] for a in keep_axes) + "".join(cols[a] for a in keep_axes)
    k = len(keep)
    return np.einsum("".join(rows) + "".join(cols) + "->" + out, t).reshape(2**k, 2**k)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    """Reduce ``rho`` to the qubits in ``keep``.

    The kept qubits are relabelled in ascending order, so the smallest kept
    index becomes qubit 0 of the result.
    """
    keep = tuple(sorted(set(int(q) for q in keep)))
    if not keep:
        raise ValidationError("keep set must not be empty")
    _check_qubits(keep, rho.n_qubits)
    n = rho.n_qubits
    if len(keep) == n:
        return rho
    t = rho.entries.reshape((2,) * (2 * n))
    return DensityMatrix._trusted(_trace_out(t, n, keep), len(keep))


def reduced_density(state: StateVector, keep: Iterable[int]) -> DensityMatrix:
    """Reduced state of ``keep`` computed straight from amplitudes.

    Avoids forming the full ``4^n`` density matrix, so it works on registers
    larger than the density-matrix cap as long as ``keep`` is small.
    """
    keep = tuple(sorted(set(int(q) for q in keep)))
    if not keep:
        raise ValidationError("keep set must not be empty")
    _check_qubits(keep, state.n_qubits)
    n = state.n_qubits
    _check_capacity(len(keep), MAX_DENSITY_QUBITS, "density-matrix")
    t = state.amplitudes.reshape((2,) * n)
    axes = [n - 1 - q for q in reversed(keep)]
    t = np.moveaxis(t, axes, list(range(len(keep)))).reshape(2 ** len(keep), -1)
    return DensityMatrix._trusted(t @ t.conj().T, len(keep))


# --------------------------------------------------------------------------
# fidelities


def fidelity(pure: StateVector, rho: DensityMatrix) -> float:
    """Root fidelity ``sqrt(<psi|rho|psi>)`` of a pure state against a mixed one."""
    if pure.n_qubits != rho.n_qubits:
        raise ValidationError(
            f"dimension mismatch: {pure.n_qubits}-qubit state vs {rho.n_qubits}-qubit density"
        )
    a = pure.amplitudes
    val = float(np.vdot(a, rho.entries @ a).real)
    return math.sqrt(min(max(val, 0.0), 1.0))


def overlap_fidelity(a: StateVector, b: StateVector) -> float:
    """Squared overlap ``|<a|b>|^2`` of two pure states."""
    if a.n_qubits != b.n_qubits:
        raise ValidationError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    return min(float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2), 1.0)


def uhlmann_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``; reduces to ``|<a|b>|^2`` for pure inputs."""
    if rho.n_qubits != sigma.n_qubits:
        raise ValidationError("dimension mismatch")
    w, v = np.linalg.eigh(rho.entries)
    if w[-1] >= 1.0 - 1e-12:
        # rank one: F = <psi|sigma|psi>, avoiding square roots of round-off eigenvalues
        psi = v[:, -1]
        return float(min(max(np.vdot(psi, sigma.entries @ psi).real, 0.0), 1.0))
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    inner = np.linalg.eigvalsh(root @ sigma.entries @ root)
    return float(min(np.sum(np.sqrt(np.clip(inner, 0.0, None))) ** 2, 1.0))


def purify_if_pure(rho: DensityMatrix, atol: float = 1e-9) -> StateVector | None:
    """Return the state vector of a rank-one ``rho``, else ``None``."""
    w, v = np.linalg.eigh(rho.entries)
    if w[-1] < 1.0 - atol:
        return None
    vec = v[:, -1]
    k = int(np.argmax(np.abs(vec)))
    vec = vec * (abs(vec[k]) / vec[k])
    return StateVector(vec, normalize=True)
