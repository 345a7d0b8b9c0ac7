import numpy as np
import pytest

from sparselq.system import AgentPartition, LtiSystem
from sparselq.wac import SwingParams, synth_power_system, wac_weights

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_stable_system(rng, nodes=((2, 1), (2, 1), (2, 1)), shift=0.5):
    """Random system with Hurwitz A (so K = 0 is stabilizing)."""
    m = sum(a for a, _ in nodes)
    q = sum(b for _, b in nodes)
    A = rng.standard_normal((m, m))
    A -= (np.max(np.linalg.eigvals(A).real) + shift) * np.eye(m)
    B = rng.standard_normal((m, q))
    D = rng.standard_normal((m, 1))
    return LtiSystem(A, B, D, tuple(nodes))


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def four_node():
    part = AgentPartition((2, 2))
    system = synth_power_system(SwingParams.random(4, seed=1), part)
    w, aw = wac_weights(system, part)
    return system, part, w, aw


@pytest.fixture(scope="session")
def eight_node():
    part = AgentPartition((2, 2, 2, 2))
    system = synth_power_system(SwingParams.random(8, seed=1), part)
    w, aw = wac_weights(system, part)
    return system, part, w, aw
