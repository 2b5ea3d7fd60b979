"""Cutting-plane solver for stochastic optimal control with affine dynamics.

The state evolves as ``x' = A x + B u + b`` where the control ``u`` is chosen
from a box before the stage noise is revealed.  Stage costs and the terminal
cost are maxima of affine pieces, so every stage problem is an LP.

``state.pools[t]`` approximates the value of being in state ``x`` at the
start of control stage ``t`` (0-based); ``state.pools[T]`` holds the terminal
cost pieces and is exact from the start.

Cut gradients are read off the duals of the stage LP.  At a state where a
cost piece or a cut is active with a tie, picking an arbitrary active
gradient can produce a plane that cuts into the value function; the dual
vector always yields a true subgradient of the optimal-value function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .cuts import Cut, CutPool
from .lp import LpBuilder, LpProblem
from .model import AffinePieces, SocProblem, validate_soc
from .risk import PsiForm
from .rng import inverse_cdf, stream
from .sddp import summarize_costs


@dataclass
class SocState:
    """Cut pools plus bookkeeping for one SOC solve.

    ``kind`` is ``"value"`` for state-value cuts or ``"qfactor"`` for cuts on
    the joint (state, control) space.
    """

    pools: list[CutPool]
    kind: str = "value"
    seed: int = 0
    iteration: int = 0
    lower_bounds: list[float] = field(default_factory=list)
    paths_drawn: int = 0

    @classmethod
    def initial(cls, problem: SocProblem, floor: float = 0.0, seed: int = 0, kind: str = "value") -> "SocState":
        issues = validate_soc(problem)
        if issues:
            raise ValueError("; ".join(issues))
        if kind not in ("value", "qfactor"):
            raise ValueError(f"unknown approximation kind {kind!r}")
        n = problem.n
        pools = []
        for t, st in enumerate(problem.stages):
            dim = n if kind == "value" else n + st.u_lb.size
            pools.append(CutPool(dim, floor, stage=t))
        pools.append(terminal_pool(problem.terminal, problem.horizon))
        return cls(pools, kind, seed)


def terminal_pool(terminal: AffinePieces, stage: int) -> CutPool:
    pool = CutPool(terminal.gx.shape[1], None, stage=stage)
    for k in range(len(terminal)):
        pool.add(Cut(float(terminal.const[k]), terminal.gx[k].copy(), 0))
    return pool


@dataclass
class StageDecision:
    control: np.ndarray
    theta: float | None
    value: float
    gradient: np.ndarray  # subgradient of the stage optimal value in the state
    outcomes: np.ndarray  # per-realization cost plus approximate cost-to-go


def _resting_point(lb, ub):
    # where the simplex parks a nonbasic column before the first pivot
    return np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))


def stage_lp(st, x, alphas, betas, psi: PsiForm | None = None):
    """Assemble the LP of one control stage at state ``x``.

    ``alphas, betas`` are the cuts bounding the next-state value from below
    (already scaled by any discount).  Returns the LP, the column groups and
    the matrix ``G`` for which each row's right-hand side is ``h - G @ x``.

    The free epigraph columns get start values that make every slack
    feasible, so the solver needs no artificial columns.
    """
    x = np.asarray(x, dtype=float)
    alphas = np.asarray(alphas, dtype=float).ravel()
    betas = np.asarray(betas, dtype=float).reshape(alphas.size, -1)
    N = len(st.realizations)
    nu = st.u_lb.size
    probs = st.probs
    lam = 0.0 if psi is None else psi.lam
    u0 = _resting_point(st.u_lb, st.u_ub)

    # row blocks per realization: cost pieces, then cuts
    coef_u, epi_col, rhs, G_rows = [], [], [], []
    e_hint, v_hint = np.empty(N), np.empty(N)
    for j, r in enumerate(st.realizations):
        cost = r.cost
        gu = np.asarray(cost.gu, dtype=float).reshape(-1, nu)
        gx = np.asarray(cost.gx, dtype=float).reshape(gu.shape[0], -1)
        h = -np.asarray(cost.const, dtype=float) - gx @ x
        coef_u.append(gu)
        epi_col.append(np.full(gu.shape[0], j))
        rhs.append(h)
        G_rows.append(gx)
        e_hint[j] = np.max(gu @ u0 - h)

        cu = betas @ r.B
        h = -alphas - betas @ (r.A @ x + r.b)
        coef_u.append(cu)
        epi_col.append(np.full(alphas.size, N + j))
        rhs.append(h)
        G_rows.append(betas @ r.A)
        v_hint[j] = np.max(cu @ u0 - h) if alphas.size else 0.0

    coef_u = np.vstack(coef_u)
    epi_col = np.concatenate(epi_col)
    rhs = list(rhs)
    m_main = coef_u.shape[0]
    n_extra = 1 + N if lam > 0.0 else 0
    m = m_main + (N if lam > 0.0 else 0)
    n_struct = nu + 2 * N + n_extra
    A = np.zeros((m, n_struct + m))
    A[:m_main, :nu] = coef_u
    A[np.arange(m_main), nu + epi_col] = -1.0
    cost_vec = np.concatenate([np.zeros(nu), (1.0 - lam) * probs, (1.0 - lam) * probs, np.zeros(n_extra + m)])
    lb = np.concatenate([st.u_lb, np.full(2 * N, -np.inf), np.zeros(n_extra + m)])
    ub = np.concatenate([st.u_ub, np.full(2 * N + n_extra + m, np.inf)])
    hint = np.concatenate([u0, e_hint, v_hint, np.zeros(n_extra + m)])
    ucols = np.arange(nu)
    ecols = nu + np.arange(N)
    vcols = nu + N + np.arange(N)
    theta_col = None
    if lam > 0.0:
        theta_col = nu + 2 * N
        excess = theta_col + 1 + np.arange(N)
        lb[theta_col] = -np.inf
        cost_vec[theta_col] = lam
        cost_vec[excess] = lam * probs / (1.0 - psi.alpha)
        hint[theta_col] = np.max(e_hint + v_hint)
        rows = m_main + np.arange(N)
        A[rows, ecols] = 1.0
        A[rows, vcols] = 1.0
        A[rows, theta_col] = -1.0
        A[rows, excess] = -1.0
        rhs.append(np.zeros(N))
        G_rows.append(np.zeros((N, x.size)))
    A[np.arange(m), n_struct + np.arange(m)] = 1.0  # slacks of the <= rows
    G = np.vstack(G_rows).reshape(m, x.size)
    lp = LpProblem(cost_vec, A, np.concatenate(rhs), lb, ub, x_hint=hint)
    return lp, ucols, ecols, vcols, theta_col, G


def bellman_step(st, x, alphas, betas, psi: PsiForm | None = None, where: str = "control stage") -> StageDecision:
    """Optimal control, value and value subgradient of one stage at ``x``."""
    lp, ucols, ecols, vcols, theta_col, G = stage_lp(st, x, alphas, betas, psi)
    sol = lpmod.solve(lp)
    if not sol.optimal:
        raise RuntimeError(f"{where} problem is {sol.status.value}")
    outcomes = sol.x[ecols] + sol.x[vcols]
    theta = None if theta_col is None else float(sol.x[theta_col])
    return StageDecision(sol.x[ucols], theta, sol.value, -(G.T @ sol.duals), outcomes)


def solve_control(problem: SocProblem, state: SocState, t: int, x, psi: PsiForm | None = None) -> StageDecision:
    """Best control at state ``x`` against the current approximation of the next stage."""
    if state.kind != "value":
        return _q_control(problem, state, t, x)
    alphas, betas = state.pools[t + 1].arrays()
    return bellman_step(problem.stages[t], x, alphas, betas, psi, f"control stage {t + 1}")


def soc_backward(problem: SocProblem, state: SocState, trial_states, psi: PsiForm | None = None) -> SocState:
    """Add one cut per stage at the trial states, last stage first.

    ``trial_states[t]`` is the state entering control stage ``t``; an entry
    for the terminal state (index ``T``) is accepted and ignored because the
    terminal pool already holds every piece of the terminal cost.
    """
    if state.kind != "value":
        raise ValueError("use qfactor_backward for a Q-factor state")
    T = problem.horizon
    if len(trial_states) < T:
        raise ValueError(f"need {T} trial states, got {len(trial_states)}")
    tag = state.iteration + 1
    for t in range(T - 1, -1, -1):
        x = np.asarray(trial_states[t], dtype=float)
        dec = solve_control(problem, state, t, x, psi)
        state.pools[t].add(Cut(dec.value - float(dec.gradient @ x), dec.gradient, tag))
    return state


@dataclass
class SocPath:
    states: list[np.ndarray]  # T + 1 states including the terminal one
    controls: list[np.ndarray]
    thetas: list[float | None]
    stage_costs: list[float]  # T stage costs followed by the terminal cost
    realizations: list[int]

    @property
    def cost(self) -> float:
        total = self.stage_costs[-1]
        for c in reversed(self.stage_costs[:-1]):
            total = c + total
        return total

    def psi_value(self, psi: PsiForm) -> float:
        """Backward recursion ``v <- Psi(c_t + v, theta_t)`` from the terminal cost."""
        v = self.stage_costs[-1]
        for c, th in zip(reversed(self.stage_costs[:-1]), reversed(self.thetas)):
            v = float(psi(c + v, th))
        return v


def soc_forward(
    problem: SocProblem, state: SocState, seed: int | None = None, psi: PsiForm | None = None, path_index: int | None = None
) -> SocPath:
    """Simulate the current policy along one sampled noise path."""
    if path_index is None:
        path_index = state.paths_drawn
        state.paths_drawn += 1
    rng = stream(state.seed if seed is None else seed, "soc", path_index)
    return _simulate(problem, state, rng, psi)


def _simulate(problem, state, rng, psi):
    x = problem.x1.copy()
    states, controls, thetas, costs, picks = [x], [], [], [], []
    for t, st in enumerate(problem.stages):
        dec = solve_control(problem, state, t, x, psi)
        j = inverse_cdf(st.probs, rng.random())
        r = st.realizations[j]
        costs.append(r.cost.evaluate(x, dec.control)[0])
        x = r.step(x, dec.control)
        states.append(x)
        controls.append(dec.control)
        thetas.append(dec.theta)
        picks.append(j)
    costs.append(problem.terminal.evaluate(x)[0])
    return SocPath(states, controls, thetas, costs, picks)


def lower_bound(problem: SocProblem, state: SocState, psi: PsiForm | None = None) -> float:
    return solve_control(problem, state, 0, problem.x1, psi).value


def psi_upper_bound(problem: SocProblem, psi: PsiForm, state: SocState, M: int, seed: int = 0, z_alpha: float = 2.0):
    """Sample ``M`` policy paths and average the backward Psi recursion."""
    if M < 2:
        raise ValueError("M must be at least 2")
    values = [psi_value_of_path(_simulate(problem, state, stream(seed, "upper-bound", i), psi), psi) for i in range(M)]
    return summarize_costs(values, z_alpha)


def psi_value_of_path(path: SocPath, psi: PsiForm) -> float:
    return path.cost if psi.identity else path.psi_value(psi)


def policy_value(problem: SocProblem, state: SocState, psi: PsiForm | None = None, cap: int = 200_000) -> float:
    """Exact nested value of the current policy by enumerating every noise path."""
    from .risk import CoherentRisk, evaluate as risk_evaluate

    sizes = [len(st.realizations) for st in problem.stages]
    if np.prod(sizes, dtype=float) > cap:
        raise ValueError("noise tree exceeds the enumeration cap")
    risk = None if psi is None or psi.identity else CoherentRisk.combo(psi.lam, psi.alpha)

    def value(t, x):
        if t == problem.horizon:
            return problem.terminal.evaluate(x)[0]
        st = problem.stages[t]
        u = solve_control(problem, state, t, x, psi).control
        z = np.array([r.cost.evaluate(x, u)[0] + value(t + 1, r.step(x, u)) for r in st.realizations])
        return float(st.probs @ z) if risk is None else risk_evaluate(risk, z, st.probs)

    return value(0, problem.x1)


# --------------------------------------------------------------------------
# Q-factor variant


def _q_lp(state: SocState, t: int, st, x):
    """``min_u Qlow_t(x, u)`` over the control box, with the row rhs map in ``x``."""
    pool = state.pools[t]
    n = x.size
    alphas, betas = pool.arrays()
    bld = LpBuilder()
    ucols = bld.add_vars(st.u_lb.size, 0.0, st.u_lb, st.u_ub)
    q = bld.add_vars(1, 1.0, -np.inf, np.inf)[0]
    for a, beta in zip(alphas, betas):
        bld.add_row(np.r_[ucols, q], np.r_[beta[n:], -1.0], "<=", -a - beta[:n] @ x)
    return bld.build(), ucols, betas[:, :n]


def _q_control(problem: SocProblem, state: SocState, t: int, x) -> StageDecision:
    x = np.asarray(x, dtype=float)
    lp, ucols, G = _q_lp(state, t, problem.stages[t], x)
    sol = lpmod.solve(lp)
    if not sol.optimal:
        raise RuntimeError(f"control stage {t + 1} Q-factor problem is {sol.status.value}")
    return StageDecision(sol.x[ucols], None, sol.value, -(G.T @ sol.duals), np.empty(0))


def _next_value(problem: SocProblem, state: SocState, t: int, y) -> tuple[float, np.ndarray]:
    """Value and state-subgradient of ``min_u Qlow_t(y, u)`` (terminal cost when ``t == T``)."""
    if t == problem.horizon:
        val, k = problem.terminal.evaluate(y)
        return val, problem.terminal.gx[k]
    dec = _q_control(problem, state, t, y)
    return dec.value, dec.gradient


def qfactor_backward(problem: SocProblem, state: SocState, trial_pairs) -> SocState:
    """Add a joint cut on ``Q_t(x, u)`` at each trial pair ``(x_t, u_t)``, last stage first."""
    if state.kind != "qfactor":
        raise ValueError("qfactor_backward needs a state created with kind='qfactor'")
    T = problem.horizon
    if len(trial_pairs) < T:
        raise ValueError(f"need {T} trial pairs, got {len(trial_pairs)}")
    tag = state.iteration + 1
    for t in range(T - 1, -1, -1):
        x, u = (np.asarray(v, dtype=float) for v in trial_pairs[t])
        st = problem.stages[t]
        value = 0.0
        grad = np.zeros(x.size + u.size)
        for r, p in zip(st.realizations, st.probs):
            c_val, k = r.cost.evaluate(x, u)
            nv, ng = _next_value(problem, state, t + 1, r.step(x, u))
            value += p * (c_val + nv)
            grad += p * np.r_[r.cost.gx[k] + r.A.T @ ng, r.cost.gu[k] + r.B.T @ ng]
        point = np.r_[x, u]
        state.pools[t].add(Cut(value - float(grad @ point), grad, tag))
    return state


def qfactor_forward(problem: SocProblem, state: SocState, seed: int | None = None, path_index: int | None = None):
    """Sampled path of the Q-factor policy; returns the path and its (state, control) trial pairs."""
    path = soc_forward(problem, state, seed, None, path_index)
    return path, list(zip(path.states[:-1], path.controls))


# --------------------------------------------------------------------------
# driver


@dataclass
class SocResult:
    control: np.ndarray
    lower_bound: float
    iterations: int
    state: SocState


def run_soc(
    problem: SocProblem,
    iterations: int = 50,
    seed: int = 0,
    psi: PsiForm | None = None,
    kind: str = "value",
    floor: float = 0.0,
    tol: float | None = None,
    state: SocState | None = None,
) -> SocResult:
    """Alternate sampled forward paths and backward cuts.

    Stops after ``iterations`` rounds, or earlier when ``tol`` is given and the
    lower bound moved by less than ``tol`` (relative) over ten rounds.
    """
    if kind == "qfactor" and psi is not None and not psi.identity:
        raise ValueError("the Q-factor variant is risk neutral")
    state = state or SocState.initial(problem, floor, seed, kind)
    for _ in range(iterations):
        if kind == "value":
            path = soc_forward(problem, state, psi=psi)
            soc_backward(problem, state, path.states, psi)
        else:
            _, pairs = qfactor_forward(problem, state)
            qfactor_backward(problem, state, pairs)
        state.iteration += 1
        lb = lower_bound(problem, state, psi)
        state.lower_bounds.append(lb)
        hist = state.lower_bounds
        if tol is not None and len(hist) > 10 and hist[-1] - hist[-11] <= tol * max(1.0, abs(hist[-1])):
            break
    dec = solve_control(problem, state, 0, problem.x1, psi)
    return SocResult(dec.control, dec.value, state.iteration, state)


__all__ = [
    "SocState",
    "SocPath",
    "SocResult",
    "StageDecision",
    "bellman_step",
    "stage_lp",
    "lower_bound",
    "policy_value",
    "psi_upper_bound",
    "qfactor_backward",
    "qfactor_forward",
    "run_soc",
    "soc_backward",
    "soc_forward",
    "solve_control",
    "terminal_pool",
]
