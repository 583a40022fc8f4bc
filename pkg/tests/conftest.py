import numpy as np
import pytest

from sparse_hjb import hjb_solver as hs
from sparse_hjb import problems
from sparse_hjb.acceptance import MC_DT, SCALAR_GRID


def _solve(spec, grid=SCALAR_GRID, **kw):
    K = hs.aligned_time_steps(spec, grid, MC_DT)
    return hs.solve_backward(spec, grid, hs.SolverConfig(time_steps=K, **kw))


@pytest.fixture(scope="session")
def det_problem():
    spec = problems.scalar_linear(c=1.0, sigma=0.0, T=1.0)
    return spec, _solve(spec)


@pytest.fixture(scope="session")
def sto_problem():
    spec = problems.scalar_linear(c=1.0, sigma=0.1, T=1.0)
    return spec, _solve(spec)


@pytest.fixture(scope="session")
def zero_problem():
    spec = problems.custom_linear([[1.0]], [[1.0]], [[0.1]], [[0.0]], 1.0, [-1.0], [1.0])
    grid = hs.SpatialGrid(-2.0, 2.0, 81)
    return spec, hs.solve_backward(spec, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def record_criterion(request):
    """Append one PASS/FAIL line for the terminal summary and echo it."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(number, results):
        ok = all(r.passed for r in results)
        parts = "; ".join(f"{r.name}: measured={r.measured:.6g} tol={r.tolerance:.6g} {r.detail}".strip() for r in results)
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {parts}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
