import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import qp_value, quadratic_three_stage
from msopt import oracle
from msopt.dsa import (
    DsaSchedule,
    SpdtParams,
    SpdtState,
    default_schedule,
    dsa_solve,
    spdt,
    subgrad_certificate,
)
from msopt.instances import random_instance
from msopt.model import MultistageProblem, StageBlock, StageRealization


def state(p, d):
    p, d = np.asarray(p, dtype=float), np.asarray(d, dtype=float)
    return SpdtState(p, d, d.copy())


# ------------------------------------------------------------ SPDT


def test_degenerate_operator():
    s = state([5.0, -1.0], [0.3])
    step = spdt(s, None, None, np.zeros((1, 2)), None, [2.0], [0.0, 0.0], ([0.0, 0.0], [4.0, 4.0]), SpdtParams(0.0, 1.0, 4.0))
    assert step.state.primal == pytest.approx([4.0, 0.0])
    assert step.state.dual == pytest.approx([0.3 + 2.0 / 4.0])
    assert step.state.prev_dual == pytest.approx([0.3])


def test_unbounded_box_is_a_plain_gradient_step():
    s = SpdtState(np.array([1.0, 2.0]), np.array([0.5]), np.array([0.1]))
    A, c, qp = np.array([[1.0, -2.0]]), np.array([0.2, 0.4]), np.array([1.0, 0.0])
    prm = SpdtParams(1.0, 3.0, 2.0)
    step = spdt(s, qp, None, A, None, [0.0], c, (-np.inf, np.inf), prm)
    d_tilde = 0.5 + 1.0 * (0.5 - 0.1)
    assert step.extrapolated == pytest.approx([d_tilde])
    assert np.array_equal(step.state.primal, s.primal - (c + qp - A.T @ [d_tilde]) / 3.0)


def test_linking_term_shifts_the_rhs():
    s = state([0.0], [0.0])
    B, u = np.array([[2.0]]), np.array([1.5])
    step = spdt(s, None, u, [[0.0]], B, [4.0], [0.0], (-np.inf, np.inf), SpdtParams(0.0, 1.0, 1.0))
    assert step.state.dual == pytest.approx([4.0 - 3.0])


def test_refusals():
    with pytest.raises(ValueError):
        SpdtParams(0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        SpdtParams(1.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        spdt(state([0.0, 0.0], []), None, None, np.zeros((0, 2)), None, [], [0.0, 0.0], None, SpdtParams(0, 1, 1), q=np.eye(2) + 0.1)
    with pytest.raises(ValueError):
        DsaSchedule((0, 1, 1), [None] * 3)


vec = st.lists(st.floats(-5, 5), min_size=3, max_size=3)


@settings(max_examples=300, deadline=None)
@given(vec, vec, vec, vec, st.floats(0, 1), st.floats(0.1, 10), st.floats(0.1, 10), st.booleans())
def test_residuals_are_machine_precision(p, c, qp, dual, theta, tau, eta, quad):
    rng = np.random.default_rng(abs(hash((tuple(p), tuple(c)))) % 2**32)
    A = rng.normal(size=(2, 3))
    lb, ub = -np.ones(3), 2 * np.ones(3)
    s = SpdtState(np.clip(p, lb, ub), np.array(dual[:2]), np.array(dual[1:]))
    q = rng.uniform(0.5, 2.0, 3) if quad else None
    step = spdt(s, qp, rng.normal(size=1), A, rng.normal(size=(2, 1)), rng.normal(size=2), c, (lb, ub), SpdtParams(theta, tau, eta), q=q)
    assert step.residual <= 1e-12
    assert np.all(step.state.primal >= lb) and np.all(step.state.primal <= ub)


# ------------------------------------------------------------ driver


def test_deterministic_fixture_reaches_lp_optimum():
    prob = random_instance(3, horizon=3, realizations=1)
    res = dsa_solve(prob, default_schedule(prob, [4000, 1, 1]), seed=0)
    opt = oracle.extensive_solve(prob).value
    gap = oracle.first_stage_value(prob, res.first_stage, first_rows=False) - opt
    assert abs(gap) <= 1e-3
    assert res.feasibility_residual <= 1e-2
    assert res.max_residual <= 1e-12
    assert res.sample_counts == [4000, 4000]
    assert any(line.startswith("schedule ") for line in res.log)


def test_strong_mode_gets_close_on_the_quadratic_toy():
    prob = quadratic_three_stage()
    opt, _ = qp_value(prob)
    res = dsa_solve(prob, default_schedule(prob, (40, 16, 16), "strong"), seed=1)
    assert qp_value(prob, res.first_stage)[0] - opt <= 5e-3
    assert res.max_residual <= 1e-12


def test_zero_cost_problem():
    first = StageBlock([StageRealization([0.0, 0.0], [[1.0, 1.0]], [1.0], None, 1.0)], [0, 0], [1, 1])
    second = StageBlock([StageRealization([0.0], [[1.0]], [0.5], [[1.0, 0.0]], 1.0)], [-5], [5])
    third = StageBlock([StageRealization([0.0], [[1.0]], [0.5], [[1.0]], 1.0)], [-5], [5])
    prob = MultistageProblem([first, second, third])
    res = dsa_solve(prob, default_schedule(prob, [2000, 1, 1]), seed=0)
    assert res.feasibility_residual <= 1e-2
    assert np.all(res.first_stage >= 0) and np.all(res.first_stage <= 1)


def test_same_seed_same_answer():
    prob = quadratic_three_stage()
    sched = default_schedule(prob, (10, 3, 3), "strong")
    a, b = dsa_solve(prob, sched, seed=4), dsa_solve(prob, sched, seed=4)
    assert np.array_equal(a.first_stage, b.first_stage)


def test_schedule_validation():
    prob = quadratic_three_stage()
    with pytest.raises(ValueError):
        default_schedule(prob, (5, 2))
    with pytest.raises(ValueError):
        default_schedule(random_instance(1, 3, 1), (5, 2, 2), "strong")  # no quadratic term, mu = 0
    sched = default_schedule(prob, (5, 2, 2), "strong")
    assert sched.mu == 1.0 and sched.echo()["mode"] == "strong"


def test_long_horizons_warn():
    prob = random_instance(2, horizon=4, realizations=1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dsa_solve(prob, default_schedule(prob, [2, 1, 1, 1]))
    assert any("exponentially" in str(w.message) for w in caught)


# ------------------------------------------------------------ certificate


def test_certificate_zero_at_the_saddle():
    # min x^2 / 2 s.t. x = 1 on [-10, 10]: saddle (1, 1)
    args = ([[1.0]], None, [1.0], [0.0], ([-10.0], [10.0]))
    assert subgrad_certificate([1.0], [1.0], [1.0], None, *args, q=[1.0]) == pytest.approx(0.0, abs=1e-15)


def test_certificate_grows_linearly_in_the_dual_error():
    # min x s.t. x = 0.5 on [0, 1]: saddle (0.5, 1); gap is |delta| / 2
    args = (None, [[1.0]], None, [0.5], [1.0], ([0.0], [1.0]))
    deltas = np.linspace(-0.4, 0.4, 17)
    gaps = np.array([subgrad_certificate([0.5], [1.0 + d], [1.0], *args) for d in deltas])
    assert np.all(gaps >= -1e-15)
    pos = deltas > 0
    slope = np.polyfit(deltas[pos], gaps[pos], 1)[0]
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert gaps == pytest.approx(0.5 * np.abs(deltas), abs=1e-15)


def test_certificate_unbounded_box():
    assert subgrad_certificate([0.0], [2.0], [1.0], None, [[1.0]], None, [0.0], [1.0], (-np.inf, np.inf)) == np.inf
