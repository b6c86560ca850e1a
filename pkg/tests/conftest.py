import numpy as np
import pytest

from qlase.model import ModelParams

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def params():
    return ModelParams(n_dots=25)


def random_state(rng, dim, scale=1.0):
    """Random state with real Hermitian entries (n, m, cvv, d4 for the TPM)."""
    x = scale * (rng.normal(size=dim) + 1j * rng.normal(size=dim))
    real = (2, 3, 8, 10) if dim == 12 else (2, 3)
    for k in real:
        x[k] = abs(x[k].real)
    x[2] = rng.uniform(0.1, 0.9)
    return x
