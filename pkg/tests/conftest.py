import numpy as np
import pytest
from hypothesis import settings

from idvkit.linalg import make_rng
from idvkit.operators import random_affine_with_fixed_displacement

settings.register_profile("default", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("default")

ZOO_SEED = 20240101
ZOO_SIZE = 20


def make_zoo(size: int = ZOO_SIZE, seed: int = ZOO_SEED):
    """Seeded random nonexpansive affine operators with attained displacement."""
    rng = make_rng(seed)
    zoo = []
    for _ in range(size):
        dim = int(rng.integers(2, 9))
        zoo.append(random_affine_with_fixed_displacement(dim, rng))
    return zoo


@pytest.fixture(scope="session")
def zoo():
    return make_zoo()


@pytest.fixture
def rng():
    return make_rng(12345)


def sq(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ x)


# one status line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
