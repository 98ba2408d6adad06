import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmesh.exceptions import ValidationError
from qmesh.noise import (
    NoiseModel,
    NoisePolicy,
    apply_depolarizing,
    sample_noisy_circuit,
    simulate_density,
)
from qmesh.sim import DensityMatrix, GateKind, QuantumCircuit, measure, new_state, to_density

from conftest import embed_operator, random_state_vector

PAULIS = [
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]]),
    np.diag([1.0, -1.0]).astype(complex),
]


def kraus_depolarize(rho, qubit, n, p):
    """Oracle: explicit Kraus sum with full-register operators."""
    ops = [np.sqrt(1 - p) * np.eye(2**n)] + [np.sqrt(p / 3) * embed_operator(P, [qubit], n) for P in PAULIS]
    return sum(K @ rho @ K.conj().T for K in ops)


def random_density(n, rng, rank=3):
    vs = [random_state_vector(n, rng) for _ in range(rank)]
    w = rng.dirichlet(np.ones(rank))
    return sum(wi * np.outer(v, v.conj()) for wi, v in zip(w, vs))


def test_p_zero_is_identity(rng):
    rho = DensityMatrix(random_density(2, rng))
    out = apply_depolarizing(rho, 1, 0.0)
    assert np.max(np.abs(out.entries - rho.entries)) <= 1e-12


def test_three_quarters_fully_depolarizes(rng):
    for _ in range(5):
        rho = DensityMatrix(random_density(1, rng, rank=2))
        assert np.max(np.abs(apply_depolarizing(rho, 0, 0.75).entries - np.eye(2) / 2)) <= 1e-12


def test_diagonal_on_zero():
    out = apply_depolarizing(to_density(new_state(1)), 0, 0.1)
    assert np.allclose(np.diag(out.entries).real, [1 - 0.2 / 3, 0.2 / 3], atol=1e-15)


def test_rejects_bad_probability():
    rho = to_density(new_state(1))
    for p in (-0.1, 1.5):
        with pytest.raises(ValidationError):
            apply_depolarizing(rho, 0, p)
        with pytest.raises(ValidationError):
            NoiseModel(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_matches_kraus_oracle_and_stays_physical(n, p, seed):
    rng = np.random.default_rng(seed)
    rho = random_density(n, rng)
    q = int(rng.integers(n))
    out = apply_depolarizing(DensityMatrix(rho), q, p)
    assert np.max(np.abs(out.entries - kraus_depolarize(rho, q, n, p))) <= 1e-12
    assert abs(np.trace(out.entries) - 1) <= 1e-12
    assert np.max(np.abs(out.entries - out.entries.conj().T)) <= 1e-12
    assert np.linalg.eigvalsh(out.entries).min() >= -1e-12


def test_channel_is_linear(rng):
    a, b = random_density(2, rng), random_density(2, rng)
    alpha = 0.3
    mix = apply_depolarizing(DensityMatrix(alpha * a + (1 - alpha) * b), 0, 0.2).entries
    sep = alpha * apply_depolarizing(DensityMatrix(a), 0, 0.2).entries + (1 - alpha) * apply_depolarizing(DensityMatrix(b), 0, 0.2).entries
    assert np.max(np.abs(mix - sep)) <= 1e-12


def test_sample_p_zero_is_unchanged():
    circ = QuantumCircuit(2).h(0).cx(0, 1)
    out = sample_noisy_circuit(circ, NoiseModel(0.0), seed=3)
    assert out.gates == circ.gates


def test_sample_p_one_inserts_everywhere():
    circ = QuantumCircuit(3).h(0).cx(0, 1).ccx(0, 1, 2)
    out = sample_noisy_circuit(circ, NoiseModel(1.0), seed=3)
    noise = [g for g in out.gates if g.tag == "noise"]
    assert len(noise) == 1 + 2 + 3
    assert all(g.kind in (GateKind.X, GateKind.Y, GateKind.Z) for g in noise)
    # each error sits right after its gate, on that gate's qubits
    i = 0
    for g in circ.gates:
        assert out.gates[i] == g
        assert [e.targets[0] for e in out.gates[i + 1:i + 1 + len(g.qubits)]] == list(g.qubits)
        i += 1 + len(g.qubits)


def test_sample_is_deterministic():
    circ = QuantumCircuit(2).h(0).cx(0, 1)
    m = NoiseModel(0.3)
    assert sample_noisy_circuit(circ, m, 9).gates == sample_noisy_circuit(circ, m, 9).gates


def test_policies():
    circ = QuantumCircuit(2).h(0, tag="encoding").cx(0, 1)
    only_enc = sample_noisy_circuit(circ, NoiseModel(1.0, NoisePolicy.AFTER_ENCODING_ONLY), 0)
    assert sum(g.tag == "noise" for g in only_enc.gates) == 1
    off = sample_noisy_circuit(circ, NoiseModel(1.0, "None"), 0)
    assert off.gates == circ.gates
    assert not NoiseModel.noiseless().active


def test_model_round_trip():
    m = NoiseModel(0.07, "AfterEncodingOnly")
    assert NoiseModel.from_dict(m.to_dict()) == m


def test_trajectories_converge_to_exact_channel():
    circ = QuantumCircuit(2).h(0).cx(0, 1)
    model = NoiseModel(0.05)
    exact = simulate_density(circ, model).probabilities()
    n_traj = 10_000
    rng = np.random.default_rng(2024)
    counts = np.zeros(4)
    for _ in range(n_traj):
        traj = sample_noisy_circuit(circ, model, rng)
        key = next(iter(measure(traj.run(), "Z", 1, rng).counts))
        counts[int(key, 2)] += 1
    tv = 0.5 * np.abs(counts / n_traj - exact).sum()
    assert tv <= 0.02


def test_simulate_density_noiseless_matches_statevector():
    circ = QuantumCircuit(3).h(0).cx(0, 2).ry(0.4, 1).cz(1, 2)
    psi = circ.run().amplitudes
    assert np.allclose(simulate_density(circ).entries, np.outer(psi, psi.conj()), atol=1e-12)
