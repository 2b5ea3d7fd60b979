import numpy as np
import pytest

from msopt import oracle
from msopt.dualsddp import DualState, add_dual_cut, dual_backward, dual_upper_bound, run_dual
from msopt.instances import random_instance
from msopt.model import MarkovLattice, MultistageProblem, StageBlock, StageRealization
from msopt.sddp import SddpConfig


def cfg(**kw):
    base = dict(upper_bound="none", stabilization_window=0)
    base.update(kw)
    return SddpConfig(**base)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_sandwich_every_iteration(seed):
    prob = random_instance(60 + seed, horizon=3, realizations=2)
    opt = oracle.extensive_solve(prob).value
    res = run_dual(prob, cfg(max_iterations=40, seed=seed), gap_tol=1e-7)
    tol = 1e-7 * max(1.0, abs(opt))
    for lb, ub in zip(res.lower_bounds, res.upper_bounds):
        assert lb <= opt + tol
        assert ub >= opt - tol
    assert res.stop_rule == "gap"
    assert res.gap <= 1e-7


def test_upper_bound_is_monotone():
    prob = random_instance(71, horizon=4, realizations=2)
    res = run_dual(prob, cfg(max_iterations=25, seed=1))
    assert np.all(np.diff(res.upper_bounds) <= 1e-9 * max(1.0, abs(res.upper_bounds[0])))


def test_two_stage_single_scenario_closes_at_once():
    prob = random_instance(5, horizon=2, realizations=1)
    opt = oracle.extensive_solve(prob).value
    res = run_dual(prob, cfg(max_iterations=5), gap_tol=1e-9)
    assert res.iterations <= 2
    assert res.upper_bounds[-1] == pytest.approx(opt, abs=1e-8)
    assert res.lower_bounds[-1] == pytest.approx(opt, abs=1e-8)


def test_capped_flag():
    prob = random_instance(7, horizon=3, realizations=2)
    dstate = DualState.initial(prob)
    assert dstate.capped
    assert dstate.rho == pytest.approx(1e4 * max(1.0, max(np.abs(r.c).max() for st in prob.stages for r in st.realizations)))
    first = dual_upper_bound(prob, dstate)
    assert np.isfinite(first)
    res = run_dual(prob, cfg(max_iterations=3))
    assert not res.capped[-1]
    assert res.log[-1]["dual_upper_bound"] == res.upper_bounds[-1]


def test_rejects_lattice_problems():
    base = random_instance(3, horizon=2, realizations=1)
    prob = MultistageProblem(base.stages, lattice=MarkovLattice([[[0.0]], [[0.0]]], [[[1.0]]]))
    with pytest.raises(ValueError):
        DualState.initial(prob)


def test_backward_needs_multipliers():
    prob = random_instance(7, horizon=3, realizations=2)
    with pytest.raises(ValueError):
        dual_backward(prob, DualState.initial(prob), [])


def residual_value(prob, t, r, cap):
    """min over the stage-(t-1) box of r @ x + exact expected cost of stages t.. (brute force)."""
    prev = prob.stages[t - 1]
    head = StageBlock([StageRealization(r, np.zeros((0, prev.n)), [], None, 1.0)], prev.lb, np.minimum(prev.ub, cap))
    return oracle.extensive_solve(MultistageProblem([head] + prob.stages[t:])).value


def test_majorants_stay_above_residual_value():
    prob = random_instance(82, horizon=3, realizations=2)
    res = run_dual(prob, cfg(max_iterations=20, seed=2))
    dstate = res.dual_state
    rng = np.random.default_rng(0)
    for t in (1, 2):
        pool = dstate.pools[t - 1]
        for _ in range(60):
            r = rng.uniform(0.0, 4.0, prob.stages[t - 1].n)
            exact = residual_value(prob, t, r, dstate.ub_penalty)
            assert pool.value(r) >= exact - 1e-6 * max(1.0, abs(exact))


def test_cut_is_tight_at_its_trial_residual():
    prob = random_instance(82, horizon=2, realizations=2)
    dstate = DualState.initial(prob)
    r = np.full(prob.stages[0].n, 1.5)
    cut = add_dual_cut(prob, dstate, 1, r)
    assert cut(r) == pytest.approx(residual_value(prob, 1, r, dstate.ub_penalty), abs=1e-7)


def test_without_dual_forward_pass_still_sandwiches():
    prob = random_instance(64, horizon=3, realizations=2)
    opt = oracle.extensive_solve(prob).value
    res = run_dual(prob, cfg(max_iterations=15, seed=3), dual_forward_pass=False)
    assert min(res.upper_bounds) >= opt - 1e-7
    assert max(res.lower_bounds) <= opt + 1e-7
