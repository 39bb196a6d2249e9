import numpy as np
import pytest

from ensmhd.mesh import barycentric_refine, build_structured_square
from ensmhd.stepper import Discretization

# pass/fail lines of the acceptance criteria, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, description, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:>2} [{status}] {description}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_mesh():
    """Barycentric-refined 2x2 unit square (24 triangles)."""
    return barycentric_refine(build_structured_square(2))


@pytest.fixture(scope="session")
def tiny_disc(tiny_mesh):
    return Discretization.from_mesh(tiny_mesh)


@pytest.fixture(scope="session")
def small_disc():
    """Barycentric-refined 4x4 unit square discretization."""
    return Discretization.from_mesh(barycentric_refine(build_structured_square(4)))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
