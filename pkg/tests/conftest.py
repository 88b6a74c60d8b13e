import numpy as np
import pytest

from qlhom.mesh import MeshHierarchy
from qlhom.random_field import FieldModel, draw_sample, restrict_to_fine


@pytest.fixture(scope="session")
def toy():
    """Coarse 0, eps 1, fine 2: small enough for dense oracles."""
    return MeshHierarchy(0, 1, 2)


@pytest.fixture(scope="session")
def small():
    """Coarse 1, eps 2, fine 3."""
    return MeshHierarchy(1, 2, 3)


def random_fine_field(h, idx=0, seed=0, alpha=1.0, beta=10.0):
    return restrict_to_fine(draw_sample(FieldModel(alpha, beta, h.eps_level, seed), h, idx), h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
