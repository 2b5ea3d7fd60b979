import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msopt import oracle
from msopt.cuts import Cut, CutPool, add_cut, dump_pools, evaluate, load_pools, subgradient_at
from msopt.instances import random_instance
from msopt.sddp import SddpConfig, run, stage_values


def line_pool():
    pool = CutPool(1, None)
    pool.add(Cut(1.0, np.array([2.0])))
    pool.add(Cut(3.0, np.array([-1.0])))
    return pool


def test_floor_pool():
    assert evaluate(CutPool(2, 0.0), [3.0, -1.0]) == (0.0, 0)
    assert subgradient_at(CutPool(2, 0.0), [1.0, 1.0]) == pytest.approx([0.0, 0.0])


def test_tie_goes_to_lowest_index():
    assert evaluate(line_pool(), [1.0]) == (3.0, 0)


def test_evaluate_and_subgradient():
    assert evaluate(line_pool(), [2.0]) == (5.0, 0)
    assert subgradient_at(line_pool(), [2.0]) == pytest.approx([2.0])


def test_dedup_and_growth():
    pool = CutPool(1, None)
    add_cut(pool, Cut(0.0, np.array([0.0])))
    assert len(pool) == 1
    add_cut(pool, Cut(0.0, np.array([0.0])))
    add_cut(pool, Cut(5e-11, np.array([0.0])))
    assert len(pool) == 1
    for a, g in [(1.0, 1.0), (2.0, -1.0), (0.5, 0.0)]:
        add_cut(pool, Cut(a, np.array([g])))
    assert len(pool) == 4
    assert pool.value([3.0]) == pytest.approx(max(0.0, 4.0, -1.0, 0.5))


def test_errors():
    with pytest.raises(ValueError):
        CutPool(2, 0.0).add(Cut(0.0, np.zeros(3)))
    with pytest.raises(ValueError):
        evaluate(CutPool(1, None), [0.0])
    with pytest.raises(ValueError):
        CutPool(1, None).add(Cut(np.inf, np.zeros(1)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_pool_properties(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 4))
    pool = CutPool(dim, None)
    x, y = rng.normal(size=dim), rng.normal(size=dim)
    before = []
    for _ in range(int(rng.integers(1, 8))):
        if len(pool):
            before.append((pool.value(x), pool.value(y)))
        pool.add(Cut(float(rng.normal()), rng.normal(size=dim)))
        # monotone in pool size
        if before:
            assert pool.value(x) >= before[-1][0] - 1e-12
            assert pool.value(y) >= before[-1][1] - 1e-12
    # convex along the segment
    mid = 0.5 * (x + y)
    assert pool.value(mid) <= 0.5 * (pool.value(x) + pool.value(y)) + 1e-12
    # subgradient inequality
    g = subgradient_at(pool, x)
    assert pool.value(y) >= pool.value(x) + g @ (y - x) - 1e-12
    # central differences agree with the active gradient away from kinks
    vals = pool.arrays()[0] + pool.arrays()[1] @ x
    top = np.sort(vals)[-2:] if len(pool) > 1 else np.array([0.0, 1.0])
    if len(pool) == 1 or top[1] - top[0] > 1e-3:
        h = 1e-6
        fd = [(pool.value(x + h * e) - pool.value(x - h * e)) / (2 * h) for e in np.eye(dim)]
        assert fd == pytest.approx(g, abs=1e-6)


def test_checkpoint_round_trip():
    pools = [line_pool(), CutPool(2, -3.5, stage=1, node=2)]
    pools[1].add(Cut(0.1, np.array([1e-17, 2.0 / 3.0]), 4))
    text = dump_pools(pools)
    back = load_pools(text)
    assert dump_pools(back) == text
    assert [(p.stage, p.node, len(p)) for p in back] == [(p.stage, p.node, len(p)) for p in pools]
    assert back[1].arrays()[1][1, 1] == 2.0 / 3.0


def test_pool_lower_bounds_true_cost_to_go():
    """Every cut pool from an SDDP run stays below the exact expected cost-to-go."""
    prob = random_instance(17, horizon=3, realizations=2)
    res = run(prob, SddpConfig(max_iterations=15, seed=3, upper_bound="none", stabilization_window=0))
    rng = np.random.default_rng(0)
    st = prob.stages[0]
    r0 = st.realizations[0]
    for _ in range(100):
        x = rng.uniform(st.lb, np.minimum(st.ub, 8.0))
        # exact Q_2(x): expected optimal cost of stages 2..3 with stage 1 pinned to x
        true = oracle.first_stage_value(prob, x, first_rows=False) - float(r0.c @ x)
        assert res.state.pools[0][0].value(x) <= true + 1e-6
    # the middle-stage pool against the exact last-stage expectation
    st1 = prob.stages[1]
    for _ in range(100):
        x = rng.uniform(st1.lb, np.minimum(st1.ub, 8.0))
        vals, _ = stage_values(prob, res.state, 2, x)
        assert res.state.pools[1][0].value(x) <= float(prob.stages[2].probs @ vals) + 1e-6
