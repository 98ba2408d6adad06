import numpy as np
import pytest


def embed_operator(mat, qubits, n):
    """Full 2^n operator of a local gate, built entry by entry.

    ``qubits[0]`` is the most significant bit of the local index; qubit q is
    bit q of the global index. Deliberately written with plain loops so it
    shares nothing with the simulator's tensor reshapes.
    """
    k = len(qubits)
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        local_in = 0
        for pos, q in enumerate(qubits):
            local_in |= ((col >> q) & 1) << (k - 1 - pos)
        for local_out in range(2**k):
            row = col
            for pos, q in enumerate(qubits):
                bit = (local_out >> (k - 1 - pos)) & 1
                row = (row & ~(1 << q)) | (bit << q)
            out[row, col] += mat[local_out, local_in]
    return out


def random_state_vector(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict = {}


class _Recorder:
    def __init__(self, key: str, title: str):
        self.key, self.title = key, title
        _CRITERIA[key] = ("FAIL", title, "did not complete")

    def check(self, ok: bool, detail: str):
        _CRITERIA[self.key] = ("PASS" if ok else "FAIL", self.title, detail)
        assert ok, f"criterion {self.key}: {detail}"

    def skip(self, reason: str):
        _CRITERIA[self.key] = ("SKIP", self.title, reason)
        pytest.skip(reason)


@pytest.fixture
def criterion():
    """Factory: ``criterion("3", "gradient correctness")`` returns a recorder."""
    return _Recorder


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        verdict, title, detail = _CRITERIA[key]
        terminalreporter.write_line(f"[{verdict}] {key:>3} {title}: {detail}")
