"""Discounted infinite-horizon control: stationary and periodic cutting planes.

A :class:`StationaryProblem` repeats a cycle of ``period`` control stages
forever with discount ``gamma``.  Each phase of the cycle owns one cut pool;
the pool of the phase after the last wraps around to the first.  With a
single phase this is the stationary Bellman equation.

Trial states come from a forward simulation of a truncated horizon long
enough that the discounted tail is below the requested accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .cuts import Cut, CutPool
from .lp import LpBuilder
from .model import SocStage
from .risk import PsiForm
from .rng import inverse_cdf, stream
from .sddp import UpperBoundReport, summarize_costs
from .soc import StageDecision, bellman_step


def truncation_horizon(gamma: float, kappa: float, epsilon: float) -> int:
    """Smallest integer ``T >= 0`` with ``kappa * gamma**T / (1 - gamma) <= epsilon``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")

    def ok(T):
        return kappa * gamma**T / (1 - gamma) <= epsilon

    if ok(0):
        return 0
    if gamma == 0.0:
        return 1
    T = max(1, math.ceil(math.log(epsilon * (1 - gamma) / kappa) / math.log(gamma)))
    while T > 1 and ok(T - 1):
        T -= 1
    while not ok(T):
        T += 1
    return T


@dataclass
class StationaryProblem:
    """Cyclic SOC data: ``blocks[k]`` is the control stage of phase ``k``.

    ``state_lb``/``state_ub`` describe a box the states are known to stay
    in; it is only used to bound the stage cost when ``kappa`` is not given.
    """

    blocks: list[SocStage]
    gamma: float
    x1: np.ndarray
    kappa: float | None = None
    state_lb: np.ndarray | None = None
    state_ub: np.ndarray | None = None

    def __post_init__(self):
        self.x1 = np.atleast_1d(np.asarray(self.x1, dtype=float))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.blocks:
            raise ValueError("at least one block is required")
        for name in ("state_lb", "state_ub"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.atleast_1d(np.asarray(v, dtype=float)))

    @property
    def period(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.x1.size

    def cost_range(self) -> tuple[float, float]:
        """Smallest and largest stage cost over the state box and control boxes, by LP."""
        if self.state_lb is None or self.state_ub is None:
            raise ValueError("a state box is needed to bound the stage cost")
        lo, hi = math.inf, -math.inf
        for st in self.blocks:
            for r in st.realizations:
                lo = min(lo, _min_cost(r.cost, st, self.state_lb, self.state_ub))
                for k in range(len(r.cost)):
                    hi = max(hi, _max_piece(r.cost, k, st, self.state_lb, self.state_ub))
        return lo, hi

    def cost_bound(self) -> float:
        if self.kappa is not None:
            return float(self.kappa)
        lo, hi = self.cost_range()
        return max(abs(lo), abs(hi))

    def default_floor(self) -> float:
        if self.state_lb is None or self.state_ub is None:
            if self.kappa is None:
                raise ValueError("give kappa or a state box so a valid floor exists")
            return -self.kappa / (1.0 - self.gamma)
        lo, _ = self.cost_range()
        return min(lo, 0.0) / (1.0 - self.gamma)


def _min_cost(cost, st, xlb, xub) -> float:
    bld = LpBuilder()
    xs = bld.add_vars(xlb.size, 0.0, xlb, xub)
    us = bld.add_vars(st.u_lb.size, 0.0, st.u_lb, st.u_ub)
    e = bld.add_vars(1, 1.0, -np.inf, np.inf)[0]
    for k in range(len(cost)):
        bld.add_row(np.r_[xs, us, e], np.r_[cost.gx[k], cost.gu[k], -1.0], "<=", -cost.const[k])
    sol = lpmod.solve(bld.build())
    if not sol.optimal:
        raise RuntimeError(f"stage cost minimization is {sol.status.value}")
    return sol.value


def _max_piece(cost, k, st, xlb, xub) -> float:
    # a linear function is maximized at a box corner chosen coordinate-wise
    gx, gu = cost.gx[k], cost.gu[k]
    return float(
        cost.const[k]
        + np.where(gx > 0, gx * xub, gx * xlb).sum()
        + np.where(gu > 0, gu * st.u_ub, gu * st.u_lb).sum()
    )


@dataclass
class HorizonState:
    pools: list[CutPool]
    seed: int = 0
    iteration: int = 0
    lower_bounds: list[float] = field(default_factory=list)
    paths_drawn: int = 0

    @classmethod
    def initial(cls, problem: StationaryProblem, floor: float | None = None, seed: int = 0) -> "HorizonState":
        f = problem.default_floor() if floor is None else floor
        return cls([CutPool(problem.n, f, stage=k) for k in range(problem.period)], seed)


def _bellman_cut(problem: StationaryProblem, pools, phase: int, x, psi=None, tag: int = 0) -> tuple[Cut, StageDecision]:
    nxt = pools[(phase + 1) % problem.period]
    alphas, betas = nxt.arrays()
    g = problem.gamma
    dec = bellman_step(problem.blocks[phase], x, g * alphas, g * betas, psi, f"phase {phase + 1}")
    x = np.asarray(x, dtype=float)
    return Cut(dec.value - float(dec.gradient @ x), dec.gradient, tag), dec


def stationary_backward(problem: StationaryProblem, pool: CutPool, x_trial, psi: PsiForm | None = None, tag: int = 0):
    """Add one Bellman cut at ``x_trial`` to the single shared pool."""
    if problem.period != 1:
        raise ValueError("stationary_backward needs a single-phase problem; use periodic_backward")
    cut, _ = _bellman_cut(problem, [pool], 0, x_trial, psi, tag)
    pool.add(cut)
    return pool


def periodic_backward(problem: StationaryProblem, pools, phase: int, x_trial, psi: PsiForm | None = None, tag: int = 0):
    cut, _ = _bellman_cut(problem, pools, phase, x_trial, psi, tag)
    pools[phase].add(cut)
    return pools


@dataclass
class TruncatedPath:
    states: list[np.ndarray]  # states at t = 1..T (the first is x1)
    phases: list[int]
    stage_costs: list[float]  # undiscounted
    thetas: list[float | None]
    discounted_cost: float

    @property
    def candidates(self) -> list[tuple[int, np.ndarray]]:
        """(phase, state) for t = 2..T: the trial points this path offers."""
        return list(zip(self.phases[1:], self.states[1:]))


def truncated_forward(
    problem: StationaryProblem,
    pools,
    T: int,
    seed: int = 0,
    path_index: int = 0,
    psi=None,
    start_phase: int = 0,
    stream_name: str = "forward",
) -> TruncatedPath:
    """Simulate ``T`` stages of the cut policy; the discounted cost misses at most the tail bound."""
    if isinstance(pools, CutPool):
        pools = [pools]
    rng = stream(seed, stream_name, path_index)
    x = problem.x1.copy()
    states, phases, costs, thetas = [], [], [], []
    total, disc = 0.0, 1.0
    for t in range(T):
        k = (start_phase + t) % problem.period
        _, dec = _bellman_cut(problem, pools, k, x, psi)
        st = problem.blocks[k]
        j = inverse_cdf(st.probs, rng.random())
        r = st.realizations[j]
        c = r.cost.evaluate(x, dec.control)[0]
        states.append(x)
        phases.append(k)
        costs.append(c)
        thetas.append(dec.theta)
        total += disc * c
        disc *= problem.gamma
        x = r.step(x, dec.control)
    return TruncatedPath(states, phases, costs, thetas, total)


def discounted_psi_value(path: TruncatedPath, gamma: float, psi: PsiForm) -> float:
    """Backward recursion ``v <- Psi(c_t + gamma v, theta_t)`` over a truncated path (zero tail)."""
    v = 0.0
    for c, th in zip(reversed(path.stage_costs), reversed(path.thetas)):
        v = float(psi(c + gamma * v, th)) if th is not None else c + gamma * v
    return v


@dataclass
class HorizonResult:
    lower_bound: float
    horizon: int
    iterations: int
    state: HorizonState
    kappa: float
    epsilon: float
    upper: UpperBoundReport | None = None

    @property
    def pools(self) -> list[CutPool]:
        return self.state.pools

    @property
    def pool(self) -> CutPool:
        return self.state.pools[0]


def _pick(rng, candidates):
    return candidates[int(rng.integers(len(candidates)))] if candidates else None


def stationary_solve(
    problem: StationaryProblem,
    iterations: int = 100,
    epsilon: float = 1e-2,
    seed: int = 0,
    psi: PsiForm | None = None,
    floor: float | None = None,
) -> HorizonResult:
    """Cutting planes for the stationary Bellman equation.

    Each iteration simulates a truncated path, adds a cut at one of its
    states chosen uniformly at random, and a cut at ``x1``.
    """
    if problem.period != 1:
        raise ValueError("stationary_solve needs a single-phase problem; use periodic_solve")
    kappa = problem.cost_bound()
    T = max(1, truncation_horizon(problem.gamma, kappa, epsilon))
    state = HorizonState.initial(problem, floor, seed)
    pool = state.pools[0]
    for k in range(iterations):
        path = truncated_forward(problem, pool, T, seed, k, psi)
        choice = _pick(stream(seed, "trial-choice", k), path.candidates)
        if choice is not None:
            stationary_backward(problem, pool, choice[1], psi, k + 1)
        stationary_backward(problem, pool, problem.x1, psi, k + 1)
        state.iteration += 1
        state.lower_bounds.append(pool.value(problem.x1))
    return HorizonResult(pool.value(problem.x1), T, state.iteration, state, kappa, epsilon)


def periodic_solve(
    problem: StationaryProblem,
    iterations: int = 100,
    epsilon: float = 1e-2,
    seed: int = 0,
    psi: PsiForm | None = None,
    floor: float | None = None,
) -> HorizonResult:
    """Cutting planes for the periodic Bellman equations (one pool per phase)."""
    kappa = problem.cost_bound()
    T = max(1, truncation_horizon(problem.gamma, kappa, epsilon))
    state = HorizonState.initial(problem, floor, seed)
    pools = state.pools
    for k in range(iterations):
        path = truncated_forward(problem, pools, T, seed, k, psi)
        choice = _pick(stream(seed, "trial-choice", k), path.candidates)
        if choice is not None:
            periodic_backward(problem, pools, choice[0], choice[1], psi, k + 1)
        periodic_backward(problem, pools, 0, problem.x1, psi, k + 1)
        state.iteration += 1
        state.lower_bounds.append(pools[0].value(problem.x1))
    return HorizonResult(pools[0].value(problem.x1), T, state.iteration, state, kappa, epsilon)


def horizon_upper_bound(problem: StationaryProblem, result: HorizonResult, M: int, z_alpha: float = 2.0, seed: int = 0, psi=None) -> UpperBoundReport:
    """Mean discounted cost of ``M`` truncated paths; the tail bound is added to the edge."""
    if M < 2:
        raise ValueError("M must be at least 2")
    vals = []
    for i in range(M):
        path = truncated_forward(problem, result.state.pools, result.horizon, seed, i, psi, stream_name="upper-bound")
        vals.append(path.discounted_cost if psi is None or psi.identity else discounted_psi_value(path, problem.gamma, psi))
    rep = summarize_costs(vals, z_alpha)
    tail = result.kappa * problem.gamma**result.horizon / (1.0 - problem.gamma)
    return UpperBoundReport(rep.mean, rep.std_error, rep.edge + tail, rep.paths, z_alpha)
