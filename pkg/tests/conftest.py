"""Shared fixtures.  Optimal control solves are expensive enough to cache
once per session; every consumer treats them as read-only."""
import numpy as np
import pytest

import tbdelay as tb

PAPER = {
    # published reference values reproduced by the suite
    "r0_beta100": 2.202067,
    "r0_beta40": 0.880827,
    "ee_beta100": (8407.668384, 36.111397, 11.006448, 402.155827),
    "nondelayed": {
        "J": 28390.73,
        "switches": (3.677250, 4.866993),
        "terminal": (1034.634, 53.59586, 25.89556, 780.7667, 28105.11),
        "lam0": (0.376159, 0.452761, 4.03059, 0.394839),
    },
    "delayed": {
        "J": 26784.60,
        "switches": (3.108, 4.581),
        "terminal": (1234.598, 24.93928, 11.71451, 469.8865, 28258.86),
        "lam0": (0.3789, 0.4682, 3.6412, 0.4263),
    },
    "w150": {"J": 29175.97, "structure": (0.00260, 2.662, 4.633)},
    "J2": 28382.37,
    "hessian": ((453.98, 387.42), (387.42, 385.69)),
}


@pytest.fixture(scope="session")
def nondelayed_problem():
    return tb.OcpProblem.paper_scenario()


@pytest.fixture(scope="session")
def delayed_problem():
    return tb.OcpProblem.paper_scenario(
        delays=tb.DelayConfig(d_i=0.1, d_u1=0.2, d_u2=0.2))


@pytest.fixture(scope="session")
def nondelayed_solution(nondelayed_problem):
    return tb.solve(nondelayed_problem)


@pytest.fixture(scope="session")
def delayed_solution(delayed_problem):
    return tb.solve(delayed_problem)


@pytest.fixture(scope="session")
def w150_solution():
    prob = tb.OcpProblem.paper_scenario(
        objective=tb.ObjectiveSpec(w1=150.0, w2=150.0))
    return tb.solve(prob)


@pytest.fixture(scope="session")
def l2_solution():
    prob = tb.OcpProblem.paper_scenario(
        objective=tb.ObjectiveSpec(kind=tb.ObjectiveKind.L2))
    return tb.solve(prob)


@pytest.fixture(scope="session")
def nondelayed_iop(nondelayed_problem, nondelayed_solution):
    sched = tb.ArcSchedule.from_solution(nondelayed_solution)
    sched_opt, j, diag = tb.optimize_switch_times(sched, nondelayed_problem)
    return sched_opt, j, diag


@pytest.fixture(scope="session")
def delayed_iop(delayed_problem, delayed_solution):
    sched = tb.ArcSchedule.from_solution(delayed_solution)
    sched_opt, j, diag = tb.optimize_switch_times(sched, delayed_problem)
    return sched_opt, j, diag
