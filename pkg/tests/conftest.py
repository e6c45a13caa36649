import numpy as np
import pytest

from dyngame.model import rollout
from dyngame.problems import build
from dyngame.solver import SolveOptions, solve


@pytest.fixture(scope="session")
def owner_dog_setup():
    return build("owner-dog")


@pytest.fixture(scope="session")
def owner_dog_runs(owner_dog_setup):
    """The reference runs: lambda=30 for 300 iterations from zero input, both methods."""
    problem, x0, u0 = owner_dog_setup
    opts = dict(lam=30.0, max_iters=300, residual_tol=1e-4, capture_iterates=True)
    return {m: solve(problem, x0, u0, SolveOptions(method=m, **opts)) for m in ("newton", "ddp")}


@pytest.fixture(scope="session")
def owner_dog_star(owner_dog_setup, owner_dog_runs):
    """Equilibrium controls: the lambda=30 warm-up polished with unregularized Newton."""
    problem, x0, _ = owner_dog_setup
    warm = owner_dog_runs["newton"].trajectory.controls
    rep = solve(problem, x0, warm, SolveOptions(lam=0.0, max_iters=50, residual_tol=1e-12))
    assert rep.residual.inf_norm < 1e-10
    return rollout(problem, x0, rep.trajectory.controls)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
