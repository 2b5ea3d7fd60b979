import math

import numpy as np
import pytest

from msopt import oracle
from msopt.eddp import (
    EddpConfig,
    SaturatedSet,
    explorative_select,
    iteration_bound,
    run_eddp,
    saturation_update,
)
from msopt.instances import random_instance, square_instance
from msopt.sddp import SddpConfig, run


def test_select_farthest():
    sat = np.array([[0.0]])
    assert explorative_select([[0.1], [0.7], [0.3]], sat) == (1, pytest.approx(0.7))


def test_select_empty_set():
    assert explorative_select([[1.0], [2.0]], None) == (0, math.inf)
    sat = SaturatedSet.empty(1, 0.1)
    assert explorative_select([[1.0], [2.0]], sat, 0) == (0, math.inf)


def test_select_identical_candidates():
    idx, d = explorative_select([[1.0, 1.0]] * 3, np.array([[0.0, 1.0]]))
    assert idx == 0 and d == pytest.approx(1.0)


def test_select_needs_candidates():
    with pytest.raises(ValueError):
        explorative_select([], None)


def test_saturation_rules():
    sat = SaturatedSet.empty(1, epsilon=0.1, delta=0.2)
    assert saturation_update(sat, 0, [0.0], 0.0)
    assert not saturation_update(sat, 0, [1.0], 0.2)  # gap 2 eps
    assert not saturation_update(sat, 0, [0.1], 0.0)  # within delta / 2 of a saturated point
    assert saturation_update(sat, 0, [0.5], 0.05)
    assert "0 0.05" in sat.dump()


def test_refuses_unbounded_box(newsvendor_fixture_problem):
    with pytest.raises(ValueError):
        run_eddp(newsvendor_fixture_problem)


def test_deterministic_chain_has_zero_gap():
    prob = random_instance(12, horizon=3, realizations=1)
    res = run_eddp(prob, EddpConfig(epsilon=1e-3))
    assert res.stop_rule == "distance"
    assert res.first_stage_gap == pytest.approx(0.0, abs=1e-9)
    assert res.lower_bound == pytest.approx(oracle.extensive_solve(prob).value, abs=1e-9)


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_gap_certificate_and_invariants(seed):
    prob = random_instance(seed, horizon=3, realizations=3)
    res = run_eddp(prob, EddpConfig(epsilon=1e-3))
    assert res.stop_rule == "distance"
    assert res.gap_certified
    sat = res.saturated
    for t, pts in enumerate(sat.stages):
        assert all(p.gap <= sat.epsilon for p in pts)
        arr = sat.points(t)
        for i in range(len(pts)):
            for j in range(i):
                assert np.linalg.norm(arr[i] - arr[j]) > sat.delta


def test_iteration_bound_on_unit_square():
    for seed in range(4):
        prob = square_instance(seed, horizon=3, realizations=3, diameter=1.0)
        res = run_eddp(prob, EddpConfig(epsilon=0.1, diameter=1.0))
        assert res.iteration_bound == iteration_bound(3, 1.0, 0.1, 2) == 2 * 11**2
        assert res.iterations <= res.iteration_bound + 1


def test_single_realization_matches_sddp_cuts():
    prob = random_instance(14, horizon=3, realizations=1)
    e = run_eddp(prob, EddpConfig(epsilon=1e-9, max_iterations=4))
    s = run(prob, SddpConfig(max_iterations=e.iterations, upper_bound="none", stabilization_window=0))
    for pe, ps in zip(e.state.all_pools(), s.state.all_pools()):
        assert pe.same_cuts(ps)


def test_config_validation():
    with pytest.raises(ValueError):
        EddpConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        EddpConfig(diameter=-1.0)


def test_early_termination_flag_still_converges():
    prob = random_instance(6, horizon=4, realizations=2)
    res = run_eddp(prob, EddpConfig(epsilon=1e-3, early_termination=True))
    assert res.stop_rule == "distance"
    assert res.gap_certified
