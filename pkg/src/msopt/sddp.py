"""Stochastic dual dynamic programming for linear multistage programs.

Pools are indexed by the decision stage: ``state.pools[t][k]`` approximates
the expected cost of stages ``t+1, ...`` as a function of ``x_t``.  ``k`` is
0 for stagewise-independent data and the lattice node of stage ``t``
otherwise.  Stage ``T-1`` has no pool.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .cuts import Cut, CutPool
from .model import MultistageProblem, scenario_tree
from .rng import inverse_cdf, stream

log = logging.getLogger(__name__)


class StageInfeasibleError(RuntimeError):
    def __init__(self, stage: int, realization: int, point):
        self.stage, self.realization = stage, realization
        self.point = None if point is None else np.asarray(point, dtype=float)
        where = "" if point is None else f" at trial point {np.array2string(self.point, precision=6)}"
        super().__init__(
            f"stage {stage} realization {realization} is infeasible{where}; "
            "the instance lacks relatively complete recourse"
        )


@dataclass
class SddpConfig:
    max_iterations: int = 100
    forward_paths: int = 1
    upper_bound_paths: int = 100
    z_alpha: float = 2.0
    seed: int = 0
    gap_tol: float | None = None
    stabilization_window: int = 20
    stabilization_tol: float = 1e-6
    upper_bound: str = "auto"  # auto | exact | statistical | none
    upper_bound_every: int = 1
    floor: float | None = None  # None: derive a valid floor from costs and boxes
    threads: int = 1
    exact_node_cap: int = 2_000

    def __post_init__(self):
        if self.upper_bound_paths < 2:
            raise ValueError("at least two upper-bound paths are needed for a variance estimate")
        if self.z_alpha <= 0:
            raise ValueError("z_alpha must be positive")
        if self.upper_bound not in ("auto", "exact", "statistical", "none"):
            raise ValueError(f"unknown upper-bound mode {self.upper_bound!r}")


@dataclass
class SolveState:
    pools: list[list[CutPool]]
    seed: int = 0
    iteration: int = 0
    lower_bounds: list[float] = field(default_factory=list)
    trial_log: list[list[np.ndarray]] = field(default_factory=list)
    paths_drawn: int = 0
    log: list[dict] = field(default_factory=list)
    threads: int = 1

    @classmethod
    def initial(cls, problem: MultistageProblem, floor: float | None = None, seed: int = 0, threads: int = 1):
        pools = []
        for t in range(problem.horizon - 1):
            count = len(problem.stages[t]) if problem.markov else 1
            f = cost_to_go_floor(problem, t) if floor is None else floor
            pools.append([CutPool(problem.stages[t].n, f, stage=t, node=k) for k in range(count)])
        return cls(pools=pools, seed=seed, threads=threads)

    def pool_for(self, problem: MultistageProblem, t: int, j: int) -> CutPool | None:
        if t >= problem.horizon - 1:
            return None
        return self.pools[t][j if problem.markov else 0]

    def cut_counts(self) -> list[int]:
        return [sum(len(p) for p in stage) for stage in self.pools]

    def all_pools(self) -> list[CutPool]:
        return [p for stage in self.pools for p in stage]


def cost_to_go_floor(problem: MultistageProblem, t: int) -> float:
    """A constant below the cost of stages ``t+1..T-1`` for any policy.

    Zero when every later cost is nonnegative; otherwise the sum over stages
    of the worst realization's box minimum of ``c @ x``.
    """
    total = 0.0
    for st in problem.stages[t + 1 :]:
        worst = 0.0
        for r in st.realizations:
            bound = np.where(r.c >= 0, st.lb, st.ub)
            low = np.zeros_like(r.c)
            np.multiply(r.c, bound, out=low, where=r.c != 0)
            worst = min(worst, float(low.sum()))
        total += worst
    if not np.isfinite(total):
        raise ValueError(
            f"stage {t + 1}: costs are unbounded below on the box; pass an explicit floor"
        )
    return total


# --------------------------------------------------------------------------
# stage solves


def solve_stage(problem, state, t: int, j: int, x_prev=None, pool: CutPool | None = None, use_pool=True):
    """Solve stage ``t`` realization ``j`` given the previous decision."""
    stage_lp, B = problem.stage_lp(t, j)
    if use_pool and pool is None:
        pool = state.pool_for(problem, t, j)
    if pool is not None:
        sol = lpmod.solve_with_cuts(stage_lp, pool, x_prev, B)
    else:
        if B is not None and x_prev is not None:
            stage_lp.b = stage_lp.b - B @ x_prev
        sol = lpmod.solve(stage_lp)
        if sol.optimal:
            sol.theta = 0.0
    if sol.status is lpmod.LpStatus.INFEASIBLE:
        raise StageInfeasibleError(t + 1, j + 1, x_prev)
    if sol.status is lpmod.LpStatus.UNBOUNDED:
        raise RuntimeError(f"stage {t + 1} realization {j + 1} is unbounded; add finite bounds or a floor cut")
    sol.extra["B"] = B
    return sol


def _map(state, fn, items):
    if state.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def stage_values(problem, state, t: int, x_prev) -> tuple[np.ndarray, np.ndarray]:
    """Values and gradients ``-B^T lambda`` of every stage-``t`` realization at ``x_prev``."""
    count = len(problem.stages[t])

    def one(j):
        sol = solve_stage(problem, state, t, j, x_prev)
        return sol.value, -(sol.extra["B"].T @ sol.duals)

    res = _map(state, one, range(count))
    vals = np.array([r[0] for r in res])
    grads = np.array([r[1] for r in res]).reshape(count, -1)
    return vals, grads


def backward_pass(problem: MultistageProblem, state: SolveState, trial_points, risks=None) -> SolveState:
    """Add one averaged cut per stage (per lattice node) at the trial points.

    ``trial_points[t]`` is the decision of stage ``t`` for ``t = 0..T-2``.
    ``risks`` optionally maps stage index to a risk measure; realization
    weights then become ``p * zeta`` with ``zeta`` a risk subgradient.
    """
    from .risk import risk_subgradient  # local import keeps the modules acyclic

    T = problem.horizon
    if len(trial_points) < T - 1:
        raise ValueError(f"need {T - 1} trial points, got {len(trial_points)}")
    tag = state.iteration + 1
    for t in range(T - 1, 0, -1):
        x_trial = np.asarray(trial_points[t - 1], dtype=float)
        vals, grads = stage_values(problem, state, t, x_trial)
        parents = range(len(problem.stages[t - 1])) if problem.markov else (0,)
        for k in parents:
            w = problem.child_weights(t - 1, k)
            risk = None if risks is None else risks[t]
            if risk is not None:
                w = w * risk_subgradient(risk, vals, w)
            value = float(w @ vals)
            grad = w @ grads
            alpha = value - float(grad @ x_trial)
            state.pools[t - 1][k].add(Cut(alpha, grad, tag))
    return state


# --------------------------------------------------------------------------
# forward simulation


@dataclass
class ForwardResult:
    states: list[np.ndarray]
    cost: float
    realizations: list[int]
    stage_costs: list[float]

    @property
    def trial_points(self) -> list[np.ndarray]:
        return self.states[:-1]


def simulate_path(problem, state, rng) -> ForwardResult:
    x_prev = None
    node = 0
    states, costs, nodes = [], [], []
    for t in range(problem.horizon):
        if t > 0:
            node = inverse_cdf(problem.child_weights(t - 1, node), rng.random())
        sol = solve_stage(problem, state, t, node, x_prev)
        c = problem.stages[t].realizations[node].c
        costs.append(float(c @ sol.x))
        states.append(sol.x)
        nodes.append(node)
        x_prev = sol.x
    return ForwardResult(states, float(sum(costs)), nodes, costs)


def forward_pass(problem: MultistageProblem, state: SolveState, path_index: int | None = None):
    """Sample one path with the current policy; returns (trial points, path cost)."""
    if path_index is None:
        path_index = state.paths_drawn
        state.paths_drawn += 1
    res = simulate_path(problem, state, stream(state.seed, "forward", path_index))
    return res.trial_points, res.cost


def lower_bound(problem: MultistageProblem, state: SolveState) -> float:
    return solve_stage(problem, state, 0, 0, None).value


@dataclass
class UpperBoundReport:
    mean: float
    std_error: float
    edge: float
    paths: int
    z_alpha: float


def summarize_costs(costs, z_alpha: float = 2.0) -> UpperBoundReport:
    costs = np.asarray(costs, dtype=float)
    M = costs.size
    if M < 2:
        raise ValueError("need at least two sampled paths")
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(M))
    return UpperBoundReport(mean, se, mean + z_alpha * se, M, z_alpha)


def statistical_upper_bound(problem, state, M: int, z_alpha: float = 2.0, offset: int = 0) -> UpperBoundReport:
    """Mean cost of ``M`` independent policy paths with its ``z_alpha`` confidence edge."""
    if M < 2:
        raise ValueError("M must be at least 2")

    def one(i):
        return simulate_path(problem, state, stream(state.seed, "upper-bound", offset + i)).cost

    return summarize_costs(_map(state, one, range(M)), z_alpha)


def policy_value(problem, state, risks=None, cap: int = 2_000) -> float:
    """Exact (nested) cost of the current policy over the full scenario tree."""
    from .risk import evaluate as risk_evaluate

    nodes = scenario_tree(problem, cap)
    decisions: list[np.ndarray] = [None] * len(nodes)
    own_cost = np.zeros(len(nodes))
    for idx, nd in enumerate(nodes):
        x_prev = None if nd.parent < 0 else decisions[nd.parent]
        sol = solve_stage(problem, state, nd.stage, nd.index, x_prev)
        decisions[idx] = sol.x
        own_cost[idx] = problem.stages[nd.stage].realizations[nd.index].c @ sol.x
    children: dict[int, list[int]] = {}
    for idx, nd in enumerate(nodes):
        if nd.parent >= 0:
            children.setdefault(nd.parent, []).append(idx)
    total = own_cost.copy()
    for idx in range(len(nodes) - 1, -1, -1):
        kids = children.get(idx)
        if not kids:
            continue
        nd = nodes[idx]
        w = problem.child_weights(nd.stage, nd.index)
        probs = np.array([w[nodes[c].index] for c in kids])
        vals = total[kids]
        risk = None if risks is None else risks[nd.stage + 1]
        if risk is None:
            total[idx] += float(probs @ vals)
        else:
            total[idx] += risk_evaluate(risk, vals, probs)
    return float(total[0])


# --------------------------------------------------------------------------
# driver


@dataclass
class SddpResult:
    first_stage: np.ndarray
    lower_bound: float
    upper_bound: float | None
    upper_report: UpperBoundReport | None
    stop_rule: str
    iterations: int
    state: SolveState
    elapsed: float


def _tree_size(problem) -> int:
    try:
        return len(scenario_tree(problem, 10**6))
    except ValueError:
        return 10**9


def run(problem: MultistageProblem, config: SddpConfig | None = None, risks=None, state=None) -> SddpResult:
    """Alternate forward and backward passes until a stop rule fires."""
    config = config or SddpConfig()
    state = state or SolveState.initial(problem, config.floor, config.seed, config.threads)
    mode = config.upper_bound
    if mode == "auto":
        mode = "exact" if _tree_size(problem) <= config.exact_node_cap else "statistical"
    if risks is not None and mode == "statistical":
        mode = "none"  # no sampled bound exists for nested risk objectives
    start = time.perf_counter()
    stop = "iteration cap"
    ub = None
    report = None
    for _ in range(config.max_iterations):
        trials = [forward_pass(problem, state)[0] for _ in range(config.forward_paths)]
        for tp in trials:
            backward_pass(problem, state, tp, risks)
        state.iteration += 1
        state.trial_log.append(trials[-1])
        lb = lower_bound(problem, state)
        state.lower_bounds.append(lb)
        k = state.iteration
        if mode != "none" and k % config.upper_bound_every == 0:
            if mode == "exact":
                ub = policy_value(problem, state, risks, cap=max(config.exact_node_cap, 1))
                report = None
            else:
                report = statistical_upper_bound(
                    problem, state, config.upper_bound_paths, config.z_alpha, offset=k * config.upper_bound_paths
                )
                ub = report.edge
        state.log.append(
            {
                "iteration": k,
                "lower_bound": lb,
                "upper_bound": np.nan if ub is None else ub,
                "elapsed": time.perf_counter() - start,
                "cuts": state.cut_counts(),
            }
        )
        if config.gap_tol is not None and ub is not None:
            if ub - lb <= config.gap_tol * max(abs(ub), abs(lb), 1e-9):
                stop = "gap"
                break
        w = config.stabilization_window
        if w and len(state.lower_bounds) > w:
            old = state.lower_bounds[-1 - w]
            if lb - old <= config.stabilization_tol * max(1.0, abs(lb)):
                stop = "stabilization"
                break
    sol = solve_stage(problem, state, 0, 0, None)
    return SddpResult(
        first_stage=sol.x,
        lower_bound=state.lower_bounds[-1] if state.lower_bounds else sol.value,
        upper_bound=ub,
        upper_report=report,
        stop_rule=stop,
        iterations=state.iteration,
        state=state,
        elapsed=time.perf_counter() - start,
    )


def replay_path(problem: MultistageProblem, state: SolveState, observations, realize) -> ForwardResult:
    """Run the lattice policy along an observed data path.

    ``observations[t]`` is the observed data vector of stage ``t`` (entry 0 is
    ignored) and ``realize(t, xi)`` returns the StageRealization it induces.
    The cut pool of the nearest lattice node is used at every stage.
    """
    if not problem.markov:
        raise ValueError("policy replay needs a lattice problem")
    x_prev = None
    states, costs, nodes = [], [], []
    for t in range(problem.horizon):
        node = 0 if t == 0 else problem.lattice.nearest(t, observations[t])
        r = problem.stages[t].realizations[0] if t == 0 else realize(t, observations[t])
        st = problem.stages[t]
        stage_lp = lpmod.LpProblem(r.c, r.A, r.b, st.lb, st.ub)
        B = None if t == 0 else r.linking(problem.stages[t - 1].n)
        pool = state.pool_for(problem, t, node)
        if pool is None:
            if B is not None:
                stage_lp.b = stage_lp.b - B @ x_prev
            sol = lpmod.solve(stage_lp)
        else:
            sol = lpmod.solve_with_cuts(stage_lp, pool, x_prev, B)
        if not sol.optimal:
            raise StageInfeasibleError(t + 1, node + 1, x_prev)
        states.append(sol.x)
        costs.append(float(r.c @ sol.x))
        nodes.append(node)
        x_prev = sol.x
    return ForwardResult(states, float(sum(costs)), nodes, costs)


def write_iteration_log(state: SolveState, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        stages = len(state.pools)
        w.writerow(["iteration", "lower_bound", "upper_bound", "elapsed"] + [f"cuts_stage_{t + 1}" for t in range(stages)])
        for row in state.log:
            w.writerow([row["iteration"], repr(row["lower_bound"]), repr(row["upper_bound"]), f"{row['elapsed']:.6f}"] + row["cuts"])
