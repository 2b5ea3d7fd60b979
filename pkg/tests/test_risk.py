import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msopt import oracle
from msopt.instances import random_instance
from msopt.model import AffinePieces, MultistageProblem, SocProblem, SocRealization, SocStage, StageBlock
from msopt.risk import (
    CoherentRisk,
    PsiForm,
    evaluate,
    risk_backward_pass_sp,
    risk_soc_backward,
    risk_subgradient,
    risk_upper_bound,
    stage_risks,
)
from msopt.sddp import SddpConfig, SolveState, backward_pass, run, stage_values
from msopt.soc import SocState, bellman_step, soc_forward

KINDS = [CoherentRisk.expectation(), CoherentRisk.avar(0.5), CoherentRisk.avar(0.9), CoherentRisk.combo(0.3, 0.8)]

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def distributions(draw, size=None):
    k = size or draw(st.integers(1, 6))
    Z = np.array(draw(st.lists(finite, min_size=k, max_size=k)))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)))
    return Z, w / w.sum()


@st.composite
def measures(draw):
    lam = draw(st.floats(0.0, 1.0))
    alpha = draw(st.floats(0.01, 0.99))
    return CoherentRisk.combo(lam, alpha)


def test_constant_values():
    for r in KINDS:
        assert evaluate(r, [4.0, 4.0, 4.0], [0.2, 0.3, 0.5]) == pytest.approx(4.0)


def test_avar_two_points():
    assert evaluate(CoherentRisk.avar(0.5), [0.0, 1.0], [0.5, 0.5]) == pytest.approx(1.0)
    zeta = risk_subgradient(CoherentRisk.avar(0.5), [0.0, 1.0], [0.5, 0.5])
    assert zeta == pytest.approx([0.0, 2.0])


def test_combo_zero_is_expectation():
    Z, p = [1.0, 5.0, -2.0], [0.2, 0.3, 0.5]
    assert evaluate(CoherentRisk.combo(0.0, 0.7), Z, p) == evaluate(CoherentRisk.expectation(), Z, p)
    assert risk_subgradient(CoherentRisk.expectation(), Z, p) == pytest.approx([1.0, 1.0, 1.0])


def test_all_equal_values_get_unit_density():
    assert risk_subgradient(CoherentRisk.avar(0.3), [2.0, 2.0], [0.5, 0.5]) == pytest.approx([1.0, 1.0])


def test_parameter_validation():
    with pytest.raises(ValueError):
        CoherentRisk.combo(1.5, 0.5)
    with pytest.raises(ValueError):
        CoherentRisk.avar(1.0)
    with pytest.raises(ValueError):
        CoherentRisk("entropic")
    assert CoherentRisk.from_dict({"kind": "combo", "lambda": 0.3, "alpha": 0.9}) == CoherentRisk.combo(0.3, 0.9)
    for r in KINDS:
        assert CoherentRisk.from_dict(r.to_dict()) == r


@settings(max_examples=300, deadline=None)
@given(measures(), distributions(), st.floats(-10, 10), st.floats(0.1, 10))
def test_coherence(risk, dist, shift, scale):
    Z, p = dist
    base = evaluate(risk, Z, p)
    tol = 1e-9 * (1 + np.abs(Z).max() + abs(shift)) * max(1.0, scale)
    assert evaluate(risk, Z + shift, p) == pytest.approx(base + shift, abs=tol)
    assert evaluate(risk, scale * Z, p) == pytest.approx(scale * base, abs=tol)
    assert evaluate(risk, Z + np.abs(Z) + 1.0, p) >= base - tol  # monotone


@settings(max_examples=200, deadline=None)
@given(measures(), st.integers(1, 5).flatmap(lambda k: st.tuples(distributions(k), distributions(k))))
def test_subadditivity(risk, pair):
    (Z1, p), (Z2, _) = pair
    tol = 1e-9 * (1 + np.abs(Z1).max() + np.abs(Z2).max())
    assert evaluate(risk, Z1 + Z2, p) <= evaluate(risk, Z1, p) + evaluate(risk, Z2, p) + tol


@settings(max_examples=300, deadline=None)
@given(measures(), distributions())
def test_dual_consistency(risk, dist):
    Z, p = dist
    zeta = risk_subgradient(risk, Z, p)
    assert np.all(zeta >= -1e-15)
    assert p @ zeta == pytest.approx(1.0, abs=1e-10)
    assert p @ (zeta * Z) == pytest.approx(evaluate(risk, Z, p), abs=1e-9 * (1 + np.abs(Z).max()))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), distributions(), st.floats(0, 1), st.floats(0, 1))
def test_combo_monotone_in_lambda(alpha, dist, l1, l2):
    Z, p = dist
    lo, hi = sorted((l1, l2))
    tol = 1e-9 * (1 + np.abs(Z).max())
    assert p @ Z <= evaluate(CoherentRisk.avar(alpha), Z, p) + tol
    assert evaluate(CoherentRisk.combo(lo, alpha), Z, p) <= evaluate(CoherentRisk.combo(hi, alpha), Z, p) + tol


@settings(max_examples=200, deadline=None)
@given(measures(), distributions())
def test_psi_representation(risk, dist):
    Z, p = dist
    psi = PsiForm.from_risk(risk)
    best = psi.expected(Z, p, psi.best_theta(Z, p))
    tol = 1e-9 * (1 + np.abs(Z).max())
    assert best == pytest.approx(evaluate(risk, Z, p), abs=tol)
    for th in np.linspace(Z.min() - 1, Z.max() + 1, 7):
        assert psi.expected(Z, p, th) >= best - tol


def test_psi_shape_on_grid():
    psi = PsiForm(0.4, 0.75)
    zs = np.linspace(-3, 3, 25)
    ths = np.linspace(-2, 2, 9)
    for th in ths:
        vals = psi(zs, th)
        assert np.all(np.diff(vals) >= -1e-12)  # non-decreasing in z
    # joint convexity: midpoint checks on random pairs
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        m = 0.5 * (a + b)
        assert psi(m[0], m[1]) <= 0.5 * (psi(a[0], a[1]) + psi(b[0], b[1])) + 1e-12
    assert psi.derivative(1.0, 1.0) == pytest.approx(0.6)  # kink: lower endpoint
    assert psi.derivative(2.0, 1.0) == pytest.approx(0.6 + 0.4 / 0.25)


def test_stage_risks_normalization():
    r = CoherentRisk.avar(0.5)
    assert stage_risks(r, 3) == [None, r, r]
    assert stage_risks([r, r], 3) == [None, r, r]
    assert stage_risks(None, 3) is None
    with pytest.raises(ValueError):
        stage_risks([r], 4)


# ------------------------------------------------------------- SP passes


def pinned_nested_value(prob, risk, x):
    """Nested risk value of stages 2..T with stage 1 fixed at ``x`` (brute force)."""
    st0 = prob.stages[0]
    fixed = StageBlock(st0.realizations, x, x)
    pinned = MultistageProblem([fixed] + prob.stages[1:])
    r0 = st0.realizations[0]
    # drop the first-stage rows so any box point is admissible
    r_free = type(r0)(r0.c, np.zeros((0, r0.n)), [], None, 1.0)
    pinned.stages[0] = StageBlock([r_free], x, x)
    return oracle.nested_risk_value(pinned, risk, optimize=True) - float(r0.c @ x)


def test_expectation_pass_is_bitwise_risk_neutral():
    prob = random_instance(31, horizon=3, realizations=3)
    a, b = SolveState.initial(prob), SolveState.initial(prob)
    trial = [np.full(prob.stages[0].n, 0.5), np.full(prob.stages[1].n, 0.25)]
    backward_pass(prob, a, trial)
    risk_backward_pass_sp(prob, CoherentRisk.expectation(), b, trial)
    assert a.pools[0][0].same_cuts(b.pools[0][0])
    assert a.pools[1][0].same_cuts(b.pools[1][0])


def test_avar_cut_is_tight_at_trial(newsvendor_fixture_problem):
    prob = newsvendor_fixture_problem
    risk = CoherentRisk.avar(0.5)
    for order in (0.0, 1.0, 2.5):
        state = SolveState.initial(prob)
        x = np.array([0.0, 0.0, order])
        risk_backward_pass_sp(prob, risk, state, [x])
        cut = list(state.pools[0][0])[-1]
        assert cut(x) == pytest.approx(pinned_nested_value(prob, risk, x), abs=1e-8)


def test_near_worst_case():
    prob = random_instance(44, horizon=2, realizations=3)
    risk = CoherentRisk.combo(1.0, 0.95)
    state = SolveState.initial(prob)
    x = np.full(prob.stages[0].n, 1.0)
    risk_backward_pass_sp(prob, risk, state, [x])
    cut = list(state.pools[0][0])[-1]
    vals, _ = stage_values(prob, state, 1, x)
    assert cut(x) == pytest.approx(vals.max(), abs=1e-9)


def test_risk_averse_cuts_underestimate():
    prob = random_instance(55, horizon=3, realizations=2)
    risk = CoherentRisk.combo(0.5, 0.8)
    res = run(prob, SddpConfig(max_iterations=25, upper_bound="none", stabilization_window=0), stage_risks(risk, 3))
    pool = res.state.pools[0][0]
    rng = np.random.default_rng(1)
    st0 = prob.stages[0]
    for _ in range(100):
        x = rng.uniform(st0.lb, np.minimum(st0.ub, 6.0))
        assert pool.value(x) <= pinned_nested_value(prob, risk, x) + 1e-6


# ------------------------------------------------------------ SOC passes


def two_outcome_soc(horizon=1):
    cost = AffinePieces([0.0, 0.0], [[1.0], [-2.0]], [[0.5], [0.5]])
    stage = SocStage(
        [SocRealization([[1.0]], [[1.0]], [-d], cost, 0.5) for d in (0.0, 2.0)],
        [0.0],
        [3.0],
    )
    return SocProblem([stage] * horizon, AffinePieces([0.0, 0.0], [[1.0], [-1.5]]), [0.5])


def test_risk_neutral_psi_matches_plain_soc():
    prob = two_outcome_soc(2)
    a = SocState.initial(prob)
    b = SocState.initial(prob)
    trial = [np.array([0.5]), np.array([-0.5]), np.array([0.0])]
    risk_soc_backward(prob, PsiForm(0.0, 0.5), a, trial)
    risk_soc_backward(prob, None, b, trial)
    assert all(pa.same_cuts(pb) for pa, pb in zip(a.pools, b.pools))


def test_single_realization_identity_psi():
    cost = AffinePieces([1.0], [[2.0]], [[1.0]])
    prob = SocProblem([SocStage([SocRealization([[1.0]], [[-1.0]], [0.0], cost, 1.0)], [0.0], [1.0])], AffinePieces([0.0], [[3.0]]), [2.0])
    state = SocState.initial(prob)
    risk_soc_backward(prob, PsiForm(0.0, 0.5), state, [np.array([2.0]), None])
    cut = list(state.pools[0])[-1]
    # min_u 1 + 2x + u + 3(x - u) over [0, 1]: u = 1, value 5x - 1
    assert cut.alpha == pytest.approx(-1.0) and cut.beta == pytest.approx([5.0])


def grid_stage_value(prob, state, psi, x):
    st = prob.stages[0]
    alphas, betas = state.pools[1].arrays()
    best = np.inf
    for u in np.linspace(st.u_lb[0], st.u_ub[0], 601):
        z = np.array(
            [r.cost.evaluate([x], [u])[0] + np.max(alphas + betas @ r.step([x], [u])) for r in st.realizations]
        )
        for th in np.linspace(z.min(), z.max(), 201):
            best = min(best, psi.expected(z, st.probs, th))
    return best


@pytest.mark.parametrize("x", [-0.7, 0.5, 1.3])
def test_joint_minimization_against_grid(x):
    prob = two_outcome_soc(1)
    psi = PsiForm(0.6, 0.7)
    state = SocState.initial(prob)
    risk_soc_backward(prob, psi, state, [np.array([x]), None])
    cut = list(state.pools[0])[-1]
    grid = grid_stage_value(prob, state, psi, x)
    assert cut([x]) <= grid + 1e-9
    assert cut([x]) == pytest.approx(grid, abs=0.02)


def test_cut_gradient_matches_finite_differences():
    prob = two_outcome_soc(1)
    psi = PsiForm(0.6, 0.7)
    state = SocState.initial(prob)
    alphas, betas = state.pools[1].arrays()
    h = 1e-5
    for x in (-0.7, 0.9):
        dec = bellman_step(prob.stages[0], np.array([x]), alphas, betas, psi)
        up = bellman_step(prob.stages[0], np.array([x + h]), alphas, betas, psi).value
        down = bellman_step(prob.stages[0], np.array([x - h]), alphas, betas, psi).value
        assert dec.gradient[0] == pytest.approx((up - down) / (2 * h), abs=1e-4)


def test_identity_psi_bound_equals_path_cost():
    prob = two_outcome_soc(3)
    state = SocState.initial(prob)
    psi = PsiForm(0.0, 0.5)
    for k in range(10):
        path = soc_forward(prob, state, path_index=k)
        assert path.psi_value(psi) == pytest.approx(path.cost, abs=1e-12)
        risk_soc_backward(prob, psi, state, path.states)
    rep = risk_upper_bound(prob, psi, state, 50, seed=3)
    assert rep.paths == 50


def test_deterministic_psi_bound_is_constant():
    cost = AffinePieces([0.0, 0.0], [[1.0], [-1.0]], [[0.2], [0.2]])
    prob = SocProblem([SocStage([SocRealization([[1.0]], [[1.0]], [-1.0], cost, 1.0)], [0.0], [2.0])] * 2, AffinePieces([0.0], [[0.0]]), [0.0])
    psi = PsiForm(0.7, 0.6)
    state = SocState.initial(prob)
    for _ in range(5):
        risk_soc_backward(prob, psi, state, soc_forward(prob, state, psi=psi).states)
    rep = risk_upper_bound(prob, psi, state, 10)
    assert rep.std_error == pytest.approx(0.0, abs=1e-12)
    assert rep.mean == pytest.approx(oracle.soc_optimal_value(prob, psi), abs=1e-9)
