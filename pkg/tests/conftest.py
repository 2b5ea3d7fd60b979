import numpy as np
import pytest

from msopt import oracle
from msopt.model import MultistageProblem, StageBlock, StageRealization


def shortfall_problem():
    """Stage two buys y >= d - x at unit cost (x + y - s = d), d in {1, 3}; stage one is free."""
    first = StageBlock([StageRealization([0.0], np.zeros((0, 1)), [], None, 1.0)], [0.0], [5.0])
    second = StageBlock(
        [StageRealization([1.0, 0.0], [[1.0, -1.0]], [d], [[1.0]], 0.5) for d in (1.0, 3.0)],
        [0.0, 0.0],
        [np.inf, np.inf],
    )
    return MultistageProblem([first, second], name="shortfall")


@pytest.fixture
def shortfall():
    return shortfall_problem()


@pytest.fixture(scope="session")
def newsvendor_fixture_problem():
    return oracle.inventory_as_multistage(oracle.newsvendor_instance(), order_cap=10.0)


def quadratic_three_stage(count=3, seed=0):
    """Strongly convex three-stage toy: diagonal quadratic costs, random stage rhs."""
    rng = np.random.default_rng(seed)
    stages = [StageBlock([StageRealization([-2.0, 1.0], np.zeros((0, 2)), [], None, 1.0, q=[1.0, 1.0])], [0, 0], [4, 4])]
    for c in ([1.0, 2.0], [0.5, 3.0]):
        reals = [
            StageRealization(c, [[1.0, 1.0]], [rng.uniform(0, 2)], [[-0.5, 0.0]], 1.0 / count, q=[1.0, 1.0])
            for _ in range(count)
        ]
        stages.append(StageBlock(reals, [0, 0], [6, 6]))
    return MultistageProblem(stages, name="quad")


def qp_value(problem, x1=None):
    """Extensive-form QP optimum (optionally with the first stage pinned), solved by cvxpy."""
    import cvxpy as cp

    from msopt.model import to_extensive_form

    ef = to_extensive_form(problem)
    lp = ef.lp
    qd = np.zeros(lp.c.size)
    for nd in ef.nodes:
        r = problem.stages[nd.stage].realizations[nd.index]
        qd[nd.cols] = nd.prob * r.q
    x = cp.Variable(lp.c.size)
    cons = [lp.A @ x == lp.b, x >= lp.lb, x <= lp.ub]
    if x1 is not None:
        cons.append(x[ef.nodes[0].cols] == x1)
    prob = cp.Problem(cp.Minimize(lp.c @ x + 0.5 * cp.sum(cp.multiply(qd, cp.square(x)))), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return prob.value, x.value[ef.nodes[0].cols]
