import numpy as np
import pytest

from epmlab.spectral import solve
from epmlab.torus import ModelParams, PotentialSpec, TorusGrid


def _solve(eps, h, P, pot, m, n=1):
    return solve(ModelParams(eps, h, tuple(P), pot), TorusGrid(n, m))


@pytest.fixture(scope="session")
def free_sol():
    return _solve(1.0, 1.0, (0.0,), PotentialSpec.zero(1), 64)


@pytest.fixture(scope="session")
def cos_sol():
    return _solve(0.5, 0.5, (0.0,), PotentialSpec.cosine(1), 128)


@pytest.fixture(scope="session")
def tilted_sol():
    """Non-reversible: tilt plus potential."""
    return _solve(0.5, 0.5, (0.5,), PotentialSpec.cosine(1), 64)


@pytest.fixture(scope="session")
def corr_sol():
    """Weak potential, slow mixing: lambda_2 near 0.78."""
    return _solve(0.5, 0.1, (0.0,), PotentialSpec.cosine(1, 0.2), 128)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str) -> None:
    """Log one acceptance verdict; shown in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
