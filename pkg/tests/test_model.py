import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msopt import oracle
from msopt.instances import random_instance
from msopt.model import (
    MarkovLattice,
    MultistageProblem,
    StageBlock,
    StageRealization,
    iter_paths,
    lift_autoregressive,
    scenario_tree,
    to_extensive_form,
    validate,
)


def two_stage(probs=(0.5, 0.5), B_cols=1):
    first = StageBlock([StageRealization([1.0], [[1.0]], [1.0], None, 1.0)], [0.0], [5.0])
    reals = [StageRealization([1.0, 2.0], [[1.0, -1.0]], [d], np.ones((1, B_cols)), p) for d, p in zip((1.0, 2.0), probs)]
    return MultistageProblem([first, StageBlock(reals, [0.0, 0.0], [9.0, 9.0])])


def test_validate_accepts_toy():
    assert validate(two_stage()) == []


def test_validate_probability_sum():
    issues = validate(two_stage(probs=(0.6, 0.5)))
    assert any("probability sum 1.1" in s for s in issues)


def test_validate_linking_columns():
    issues = validate(two_stage(B_cols=2))
    assert any("dimension mismatch" in s for s in issues)


def test_validate_horizon_and_first_stage():
    prob = two_stage()
    short = MultistageProblem(prob.stages[:1])
    assert any("horizon" in s for s in validate(short))
    doubled = MultistageProblem([prob.stages[1], prob.stages[1]])
    assert any("exactly one realization" in s for s in validate(doubled))


def test_validate_lattice_rows():
    prob = two_stage()
    prob.lattice = MarkovLattice([[[0.0]], [[1.0], [2.0]]], [[[0.7, 0.2]]])
    assert any("row 1: probability sum 0.9" in s for s in validate(prob))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["prob", "neg", "shape", "bounds", "missing_B", "cost"]))
def test_validate_flags_each_violation(kind):
    prob = random_instance(5, horizon=3, realizations=2)
    assert validate(prob) == []
    r = prob.stages[1].realizations[0]
    if kind == "prob":
        r.p = 0.7
    elif kind == "neg":
        r.p = -0.5
        prob.stages[1].realizations[1].p = 1.5
    elif kind == "shape":
        r.B = np.zeros((r.m, prob.stages[0].n + 1))
    elif kind == "bounds":
        prob.stages[2].lb = prob.stages[2].ub + 1.0
    elif kind == "missing_B":
        r.B = None
    else:
        r.c = np.append(r.c, 1.0)
    assert validate(prob) != []


def test_tree_counts():
    prob = random_instance(1, horizon=3, realizations=2)
    assert len(scenario_tree(prob)) == 1 + 2 + 4
    single = random_instance(1, horizon=2, realizations=1)
    ef = to_extensive_form(single)
    r0, r1 = single.stages[0].realizations[0], single.stages[1].realizations[0]
    expected = np.block([[r0.A, np.zeros((r0.m, r1.n))], [r1.B, r1.A]])
    assert np.array_equal(ef.lp.A, expected)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3))
def test_tree_node_count_formula(T, N):
    prob = random_instance(T * 10 + N, horizon=T, realizations=N)
    assert len(scenario_tree(prob)) == sum(N**t for t in range(T))
    assert sum(p for p, _ in iter_paths(prob)) == pytest.approx(1.0)


def test_tree_cap_refused():
    prob = random_instance(2, horizon=4, realizations=3)
    with pytest.raises(ValueError):
        to_extensive_form(prob, cap=10)


def test_inventory_two_stage_hand_value():
    # order x, then demand 1 or 3: cost x + E[2 (d - x)_+ + 0.5 (x - d)_+], minimized at x = 1
    prob = oracle.inventory_as_multistage(oracle.newsvendor_instance(), order_cap=10.0)
    sol = oracle.extensive_solve(prob)
    assert sol.value == pytest.approx(3.0, abs=1e-9)
    assert sol.first_stage[2] == pytest.approx(1.0, abs=1e-9)


# ------------------------------------------------------------ AR lifting


def ar_base(T=3, rhs=None):
    """Buy y_t >= xi_t at cost 1 with carry-over storage: x_{t-1} stock + y_t - s_t = xi_t."""
    stages = []
    for t in range(T):
        b = [1.0] if rhs is None else [rhs[t]]
        B = None if t == 0 else [[0.0, 0.6]]
        stages.append(
            StageBlock([StageRealization([1.0 + 0.2 * t, 0.1], [[1.0, -1.0]], b, B, 1.0)], [0.0, 0.0], [20.0, 20.0])
        )
    return MultistageProblem(stages)


def with_rhs(prob, values):
    """Copy of a deterministic-rhs problem whose stage t>0 realizations use ``values[t]``."""
    stages = [prob.stages[0]]
    for t, block in enumerate(prob.stages[1:], start=1):
        r0 = block.realizations[0]
        vals, probs = values[t]
        stages.append(StageBlock([StageRealization(r0.c, r0.A, [v], r0.B, p) for v, p in zip(vals, probs)], block.lb, block.ub))
    return MultistageProblem(stages)


def test_lift_zero_process_matches_base():
    noise = [None, ([0.5, 2.0], [0.5, 0.5]), ([1.0, 3.0], [0.25, 0.75])]
    lifted = lift_autoregressive(ar_base(), [[0.0]], [0.0], noise)
    direct = with_rhs(ar_base(), noise)
    assert validate(lifted) == []
    assert lifted.stages[1].n == ar_base().stages[1].n + 1
    assert oracle.extensive_solve(lifted).value == pytest.approx(oracle.extensive_solve(direct).value, abs=1e-8)


def test_lift_deterministic_recursion():
    noise = [None, ([0.0], [1.0]), ([0.0], [1.0])]
    lifted = lift_autoregressive(ar_base(), [[0.5]], [1.0], noise)
    sol = oracle.extensive_solve(lifted)
    xis = [sol.x[nd.cols][-1] for nd in sol.nodes]
    # xi_1 = 1 (first-stage rhs), then xi_t = 1 + 0.5 xi_{t-1}
    assert xis == pytest.approx([1.0, 1.5, 1.75])
    direct = ar_base(rhs=[1.0, 1.5, 1.75])
    assert sol.value == pytest.approx(oracle.extensive_solve(direct).value, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.0, 2.0), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_lift_preserves_value_on_deterministic_noise(phi, mu, eps):
    noise = [None, ([eps[0]], [1.0]), ([eps[1]], [1.0])]
    lifted = lift_autoregressive(ar_base(), [[phi]], [mu], noise)
    xi = [1.0]
    for e in eps:
        xi.append(mu + phi * xi[-1] + e)
    assert oracle.extensive_solve(lifted).value == pytest.approx(oracle.extensive_solve(ar_base(rhs=xi)).value, abs=1e-8)


def test_lift_rejects_random_costs():
    prob = random_instance(0, horizon=2, realizations=2, n_rows=1)
    with pytest.raises(ValueError):
        lift_autoregressive(prob, [[0.0]], [0.0], [None, ([0.0], [1.0])])
