import numpy as np
import pytest

from armor.mdp_core import PolicyTable, TabularMDP

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, text: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_state_chain():
    """s0 -> s1 under a0, self-loops otherwise; reward 1 in s1; gamma 0.5; start in s0."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMDP(P, R, 0.5, np.array([1.0, 0.0]))


@pytest.fixture
def always_a0():
    return PolicyTable.deterministic([0, 0], 2)
