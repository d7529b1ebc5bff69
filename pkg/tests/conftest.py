import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vdbelief.scenarios import factory_model, factory_prior, random_model  # noqa: E402
from vdbelief.solver import solve_finite, solve_infinite  # noqa: E402

# (seed, variables, observations, horizon, discount): small finite models whose
# value functions stay a handful of vectors per stage, so every lattice scheme
# can be bounded and executed quickly.
REGRESSION_FINITE = [
    (1, 2, 2, 3, 1.0),
    (2, 2, 2, 3, 1.0),
    (0, 2, 1, 2, 1.0),
    (4, 2, 2, 3, 0.9),
    (0, 3, 2, 3, 1.0),
    (0, 3, 1, 3, 1.0),
    (2, 3, 2, 2, 0.9),
]

# Discounted infinite-horizon models that converge within a second.
REGRESSION_INFINITE = [
    (0, 2, 1, 0.9),
    (1, 2, 1, 0.9),
    (0, 3, 1, 0.8),
    (0, 2, 2, 0.7),
]

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def factory():
    return factory_model()


@pytest.fixture(scope="session")
def factory_stages(factory):
    return solve_finite(factory)


@pytest.fixture(scope="session")
def uniform_fm(factory):
    return factory_prior(factory, 0.5)


@pytest.fixture(scope="session")
def finite_models():
    out = []
    for seed, nv, nz, h, g in REGRESSION_FINITE:
        m = random_model(seed, nv, nz, h, discount=g)
        out.append((f"m{seed}-v{nv}-z{nz}-h{h}-g{g}", m, solve_finite(m)))
    return out


@pytest.fixture(scope="session")
def infinite_models():
    out = []
    for seed, nv, nz, g in REGRESSION_INFINITE:
        m = random_model(seed, nv, nz, "infinite", discount=g)
        out.append((f"m{seed}-v{nv}-z{nz}-g{g}", m, solve_infinite(m, 1e-3)))
    return out


@pytest.fixture(scope="session")
def lattice_bounds(finite_models):
    """name → (model, stages, tester, rows); one row of uniform-assignment bounds per lattice node."""
    from vdbelief.bounds import SwitchTester, e_bound_finite, u_bound_for_assignment
    from vdbelief.lattice import SchemeAssignment, enumerate_lattice

    out = {}
    for name, m, stages in finite_models:
        tester = SwitchTester(m)
        rows = []
        for node in enumerate_lattice(m.var_names):
            a = SchemeAssignment.uniform(stages, node.scheme)
            rows.append({"node": node, "assignment": a,
                         "U_paper": u_bound_for_assignment(stages, a, tester, "paper").value,
                         "U_time": u_bound_for_assignment(stages, a, tester, "time").value,
                         "E": e_bound_finite(stages, a, tester)})
        out[name] = (m, stages, tester, rows)
    return out


@pytest.fixture(scope="session")
def regression_searches(finite_models, infinite_models):
    """Every greedy search on the regression models: each bound kind at every budget.

    Yields a list of (model name, model, target, kind, budget, SearchResult).
    """
    from vdbelief.bounds import SwitchTester
    from vdbelief.lattice import greedy_search

    out = []
    for name, m, stages in finite_models:
        tester = SwitchTester(m)
        n = len(m.var_names)
        for kind in ("U_finite", "E_finite"):
            for c in range(n, 2 ** n):
                out.append((name, m, stages, kind, c, greedy_search(m, stages, kind, c, tester)))
    for name, m, vf in infinite_models:
        tester = SwitchTester(m)
        n = len(m.var_names)
        for kind in ("U_infinite", "E_infinite"):
            for c in range(n, 2 ** n):
                out.append((name, m, vf, kind, c, greedy_search(m, vf, kind, c, tester)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance():
    """Collects one PASS/FAIL line per acceptance criterion."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
