import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lattice_qms.algebra import LocalSuperoperator

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FROZEN = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def frozen():
    return json.loads(FROZEN.read_text())


def decode(blob) -> np.ndarray:
    return np.asarray(blob["re"]) + 1j * np.asarray(blob["im"])


def superop_table(sop: LocalSuperoperator) -> np.ndarray:
    """``T[i, j, k, l] = (S(E_ij))_kl``, the convention-free form of the oracles."""
    d = sop.hilbert_dim
    out = np.zeros((d, d, d, d), complex)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), complex)
            e[i, j] = 1
            out[i, j] = sop(e)
    return out


def random_matrix(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def random_state(rng, d):
    a = random_matrix(rng, d)
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# acceptance verdicts, filled by test_acceptance and printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
