import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stackwave.domain import Discretization, Grid, ProblemConfig

settings.register_profile(
    "repo",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def report(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_disc(k=0.3, T=1.0, sigma=10.0, ny=16, nt=None, cfl=0.5, **kw):
    cfg = ProblemConfig(k=k, T=T, sigma=sigma, **kw)
    grid = Grid(ny, nt, cfl) if nt else Grid.for_config(cfg, ny, cfl)
    return Discretization(cfg, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def disc():
    return make_disc()
