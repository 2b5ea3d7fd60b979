"""SDDP applied to the Lagrangian dual of a linear multistage program.

Dualizing the equality rows of every stage gives a maximization over
multipliers ``pi_t``.  The box ``lb <= x_t <= ub`` is dualized as well: a
stage residual ``r = c - A^T pi - E[B^T pi_next]`` is split into
``sigma - tau`` with ``sigma, tau >= 0`` and earns ``lb @ sigma - ub @ tau``.

The state handed from stage ``t-1`` to stage ``t`` is ``r = c - A^T pi`` of
stage ``t-1``.  ``W_t(r)`` is concave in ``r``; the pools keep affine
majorants of it, so the first-stage value is an upper bound on the primal
optimum.  Before the first real cut each pool holds a constant cap.

Two safeguards make the stage problems bounded and feasible:

* multipliers live in the box ``[-rho, rho]``.  The bound is only valid when
  that box contains an optimal dual, so ``rho`` is reported with the result;
* a coordinate with no upper bound normally forces ``tau = 0``.  When that
  makes a stage infeasible, the stage is re-solved with ``tau`` priced at a
  finite surrogate bound.  That corresponds to adding ``x <= ub_penalty`` to
  the primal, which can only raise the primal optimum, so the bound stays
  valid.  The switch is logged.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .cuts import Cut, CutPool
from .lp import LpBuilder
from .model import MultistageProblem
from .rng import inverse_cdf, stream
from .sddp import SddpConfig, SolveState, backward_pass, lower_bound, solve_stage

log = logging.getLogger(__name__)


@dataclass
class DualState:
    pools: list[CutPool]  # pools[t] majorizes W_{t+1} as a function of r_t
    rho: float
    caps: list[float]
    ub_penalty: float
    penalty_stages: set[int] = field(default_factory=set)
    events: list[str] = field(default_factory=list)
    iteration: int = 0
    paths_drawn: int = 0
    seed: int = 0

    @property
    def capped(self) -> bool:
        """True while some pool still holds only its initial cap."""
        return any(len(p) == 1 for p in self.pools)

    @classmethod
    def initial(cls, problem: MultistageProblem, rho: float | None = None, seed: int = 0) -> "DualState":
        if problem.markov:
            raise ValueError("dual SDDP needs stagewise-independent data")
        cmax = max(float(np.abs(r.c).max(initial=0.0)) for st in problem.stages for r in st.realizations)
        if rho is None:
            rho = 1e4 * max(cmax, 1.0)
        finite = [np.abs(st.ub[np.isfinite(st.ub)]).max(initial=0.0) for st in problem.stages]
        bmax = max(float(np.abs(r.b).max(initial=0.0)) for st in problem.stages for r in st.realizations)
        ub_penalty = 1e4 * max(1.0, max(finite), bmax)
        caps = _caps(problem, rho, ub_penalty)
        pools = [
            CutPool(problem.stages[t].n, None, stage=t) for t in range(problem.horizon - 1)
        ]
        for pool, cap in zip(pools, caps):
            pool.add(Cut(cap, np.zeros(pool.dim), 0))
        return cls(pools, rho, caps, ub_penalty, seed=seed)


def _caps(problem: MultistageProblem, rho: float, ub_penalty: float) -> list[float]:
    """Constants above ``W_t`` for every residual reachable with ``|pi| <= rho``."""
    T = problem.horizon
    # |r| bound for residuals leaving each stage
    reach = []
    for st in problem.stages:
        R = np.zeros(st.n)
        for r in st.realizations:
            R = np.maximum(R, np.abs(r.c) + rho * np.abs(r.A).sum(axis=0))
        reach.append(R)
    caps = []
    for t in range(1, T):
        total = 0.0
        for s in range(t, T):
            total += max(rho * float(np.abs(r.b).sum()) for r in problem.stages[s].realizations)
        for s in range(t - 1, T):
            # the incoming residual of stage t-1 can also carry B^T pi terms
            R = reach[s] + (0.0 if s + 1 >= T else _link_reach(problem, s + 1, rho))
            total += float(np.abs(problem.stages[s].lb) @ R)
        caps.append(total + 1.0)
    return caps


def _link_reach(problem, t, rho):
    st = problem.stages[t]
    n_prev = problem.stages[t - 1].n
    R = np.zeros(n_prev)
    for r in st.realizations:
        R = np.maximum(R, rho * np.abs(r.linking(n_prev)).sum(axis=0))
    return R


@dataclass
class DualStageSolution:
    value: float
    gradient: np.ndarray  # supergradient in the incoming residual
    multipliers: list[np.ndarray]  # one per realization
    residuals: list[np.ndarray]  # c - A^T pi per realization


def _box_columns(bld: LpBuilder, lb, ub, scale: float, penalty: float | None):
    """Columns for ``max lb@sigma - ub@tau`` (entered as a minimization)."""
    n = lb.size
    sigma = bld.add_vars(n, -scale * lb, 0.0, np.inf)
    finite = np.isfinite(ub)
    tau_cost = np.where(finite, scale * np.where(finite, ub, 0.0), 0.0)
    tau_ub = np.where(finite, np.inf, 0.0)
    if penalty is not None:
        tau_cost = np.where(finite, tau_cost, scale * penalty)
        tau_ub = np.full(n, np.inf)
    tau = bld.add_vars(n, tau_cost, 0.0, tau_ub)
    return sigma, tau


def solve_dual_stage(problem: MultistageProblem, dstate: DualState, t: int, r_in) -> DualStageSolution:
    """Solve the coupled stage-``t`` dual LP over all realizations at incoming residual ``r_in``.

    For ``t == 0`` there is no incoming residual and ``r_in`` is ignored.
    """
    try:
        return _dual_stage(problem, dstate, t, r_in, penalty=t in dstate.penalty_stages)
    except _Infeasible:
        dstate.penalty_stages.add(t)
        msg = f"stage {t + 1}: dual stage infeasible, switching to penalty mode (ub surrogate {dstate.ub_penalty:g})"
        dstate.events.append(msg)
        log.info(msg)
        return _dual_stage(problem, dstate, t, r_in, penalty=True)


class _Infeasible(Exception):
    pass


def _dual_stage(problem, dstate, t, r_in, penalty):
    T = problem.horizon
    st = problem.stages[t]
    probs = st.probs if t > 0 else np.ones(1)
    rho = dstate.rho
    pen = dstate.ub_penalty if penalty else None
    bld = LpBuilder()
    coupling_terms = []
    if t > 0:
        prev = problem.stages[t - 1]
        sigma, tau = _box_columns(bld, prev.lb, prev.ub, 1.0, pen)
        coupling_terms = [(sigma, tau)]
    pis, own = [], []
    for j, r in enumerate(st.realizations):
        p = probs[j]
        pi = bld.add_vars(r.m, -p * r.b, -rho, rho)
        pis.append(pi)
        if t == T - 1:
            # exact box term of the last stage: A^T pi + sigma - tau = c
            s_j, t_j = _box_columns(bld, st.lb, st.ub, p, pen)
            for i in range(st.n):
                bld.add_row(np.r_[pi, s_j[i], t_j[i]], np.r_[r.A[:, i], 1.0, -1.0], "==", r.c[i])
        else:
            w = bld.add_vars(1, -p, -np.inf, np.inf)[0]
            alphas, betas = dstate.pools[t].arrays()
            for a, beta in zip(alphas, betas):
                # w <= a + beta @ (c - A^T pi)
                bld.add_row(np.r_[w, pi], np.r_[1.0, r.A @ beta], "<=", a + beta @ r.c)
        own.append(pi)
    rows = []
    if t > 0:
        sigma, tau = coupling_terms[0]
        n_prev = problem.stages[t - 1].n
        links = [r.linking(n_prev) for r in st.realizations]
        for i in range(n_prev):
            cols = [sigma[i], tau[i]]
            coefs = [1.0, -1.0]
            for j, pi in enumerate(pis):
                cols += list(pi)
                coefs += list(probs[j] * links[j][:, i])
            rows.append(bld.add_row(cols, coefs, "==", float(r_in[i])))
    sol = lpmod.solve(bld.build())
    if sol.status is lpmod.LpStatus.INFEASIBLE:
        raise _Infeasible()
    if not sol.optimal:
        raise RuntimeError(f"dual stage {t + 1} LP is {sol.status.value}")
    mults = [sol.x[pi] for pi in pis]
    resid = [r.c - r.A.T @ m for r, m in zip(st.realizations, mults)]
    grad = -sol.duals[rows] if rows else np.zeros(0)
    return DualStageSolution(-sol.value, grad, mults, resid)


def dual_backward(problem: MultistageProblem, dstate: DualState, trial_multipliers) -> DualState:
    """Add one majorant cut per stage at the trial residuals, last stage first.

    ``trial_multipliers[t]`` is the multiplier vector of stage ``t``'s rows
    (``t = 0..T-2``) for the realization visited there, together with the
    realization index: ``(j, pi)``.  The trial residual is ``c_tj - A_tj^T pi``.
    """
    T = problem.horizon
    if len(trial_multipliers) < T - 1:
        raise ValueError(f"need {T - 1} trial multipliers, got {len(trial_multipliers)}")
    tag = dstate.iteration + 1
    for t in range(T - 1, 0, -1):
        j, pi = trial_multipliers[t - 1]
        r = problem.stages[t - 1].realizations[j]
        r_trial = r.c - r.A.T @ np.asarray(pi, dtype=float)
        add_dual_cut(problem, dstate, t, r_trial, tag)
    return dstate


def add_dual_cut(problem, dstate: DualState, t: int, r_trial, tag: int = 0) -> Cut:
    sol = solve_dual_stage(problem, dstate, t, r_trial)
    cut = Cut(sol.value - float(sol.gradient @ r_trial), sol.gradient, tag)
    dstate.pools[t - 1].add(cut)
    return cut


def dual_upper_bound(problem: MultistageProblem, dstate: DualState) -> float:
    """First-stage dual value against the current majorants."""
    return solve_dual_stage(problem, dstate, 0, None).value


def dual_forward(problem: MultistageProblem, dstate: DualState, path_index: int | None = None):
    """Sample residual trial points by simulating the dual policy."""
    if path_index is None:
        path_index = dstate.paths_drawn
        dstate.paths_drawn += 1
    rng = stream(dstate.seed, "dual-forward", path_index)
    sol = solve_dual_stage(problem, dstate, 0, None)
    trials = [(0, sol.multipliers[0])]
    r_prev = sol.residuals[0]
    for t in range(1, problem.horizon - 1):
        sol = solve_dual_stage(problem, dstate, t, r_prev)
        j = inverse_cdf(problem.stages[t].probs, rng.random())
        trials.append((j, sol.multipliers[j]))
        r_prev = sol.residuals[j]
    return trials


def primal_trial_multipliers(problem: MultistageProblem, state: SolveState, rng):
    """One sampled primal forward path; returns (trial points, (realization, stage duals) per stage)."""
    x_prev, node = None, 0
    points, mults = [], []
    for t in range(problem.horizon):
        if t > 0:
            node = inverse_cdf(problem.child_weights(t - 1, node), rng.random())
        sol = solve_stage(problem, state, t, node, x_prev)
        points.append(sol.x)
        mults.append((node, sol.duals))
        x_prev = sol.x
    return points[:-1], mults[:-1]


@dataclass
class DualResult:
    lower_bounds: list[float]
    upper_bounds: list[float]
    capped: list[bool]
    rho: float
    iterations: int
    stop_rule: str
    state: SolveState
    dual_state: DualState
    log: list[dict]

    @property
    def gap(self) -> float:
        return self.upper_bounds[-1] - self.lower_bounds[-1]


def run_dual(
    problem: MultistageProblem,
    config: SddpConfig | None = None,
    rho: float | None = None,
    dual_forward_pass: bool = True,
    gap_tol: float | None = None,
) -> DualResult:
    """Primal and dual SDDP side by side; stops when the absolute gap is at most ``gap_tol``."""
    config = config or SddpConfig()
    state = SolveState.initial(problem, config.floor, config.seed, config.threads)
    dstate = DualState.initial(problem, rho, config.seed)
    lbs, ubs, capped, rows = [], [], [], []
    stop = "iteration cap"
    start = time.perf_counter()
    for k in range(config.max_iterations):
        points, mults = primal_trial_multipliers(problem, state, stream(config.seed, "forward", k))
        backward_pass(problem, state, points)
        dual_backward(problem, dstate, mults)
        if dual_forward_pass:
            dual_backward(problem, dstate, dual_forward(problem, dstate, k))
        state.iteration += 1
        dstate.iteration += 1
        lb = lower_bound(problem, state)
        ub = dual_upper_bound(problem, dstate)
        state.lower_bounds.append(lb)
        lbs.append(lb)
        ubs.append(ub)
        capped.append(dstate.capped)
        rows.append(
            {
                "iteration": k + 1,
                "lower_bound": lb,
                "dual_upper_bound": ub,
                "gap": ub - lb,
                "elapsed": time.perf_counter() - start,
                "cuts": state.cut_counts(),
            }
        )
        if gap_tol is not None and not dstate.capped and ub - lb <= gap_tol:
            stop = "gap"
            break
    return DualResult(lbs, ubs, capped, dstate.rho, len(lbs), stop, state, dstate, rows)
