"""Explorative dual dynamic programming.

Instead of sampling one realization per stage, the forward step solves every
realization's subproblem and continues from the candidate farthest from the
points already known to be well approximated ("saturated").  The run stops
once the first-stage decision is within ``delta`` of a saturated point.

Saturation certificate
----------------------
The true cost-to-go is unknown, so a point ``x`` of stage ``t`` is certified
by a computable surrogate: the increase of the stage-``t`` pool at ``x``
produced by the new cut (how far the old approximation was below the one-step
lookahead).  For the last pooled stage the lookahead is exact.  For earlier
stages a point is only certified when, in addition, every next-stage
candidate computed at ``x`` lies within ``delta`` of that stage's saturated
set, so errors further down the tree are bounded as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cuts import Cut
from .model import MultistageProblem
from .sddp import SolveState, lower_bound, solve_stage


@dataclass
class SaturatedPoint:
    point: np.ndarray
    gap: float
    iteration: int


@dataclass
class SaturatedSet:
    """Saturated points per stage with their tolerances (``delta`` defaults to ``epsilon``)."""

    stages: list[list[SaturatedPoint]]
    epsilon: float
    delta: float

    @classmethod
    def empty(cls, count: int, epsilon: float, delta: float | None = None) -> "SaturatedSet":
        return cls([[] for _ in range(count)], epsilon, epsilon if delta is None else delta)

    def points(self, t: int) -> np.ndarray:
        pts = self.stages[t]
        return np.array([p.point for p in pts]) if pts else np.empty((0, 0))

    def distance(self, t: int, x) -> float:
        pts = self.stages[t]
        if not pts:
            return math.inf
        return float(np.min(np.linalg.norm(self.points(t) - np.asarray(x, dtype=float), axis=1)))

    def dump(self) -> str:
        lines = ["# stage gap iteration point..."]
        for t, pts in enumerate(self.stages):
            for p in pts:
                coords = " ".join(repr(float(v)) for v in p.point)
                lines.append(f"{t} {p.gap!r} {p.iteration} {coords}")
        return "\n".join(lines) + "\n"


def explorative_select(candidates, saturated: SaturatedSet | np.ndarray | None, t: int = 0) -> tuple[int, float]:
    """Index of the candidate farthest from the saturated points (lowest index on ties)."""
    cands = [np.asarray(c, dtype=float) for c in candidates]
    if not cands:
        raise ValueError("no candidates to choose from")
    if isinstance(saturated, SaturatedSet):
        dists = [saturated.distance(t, c) for c in cands]
    else:
        pts = np.empty((0, 0)) if saturated is None else np.asarray(saturated, dtype=float)
        if pts.size == 0:
            dists = [math.inf] * len(cands)
        else:
            pts = pts.reshape(-1, cands[0].size)
            dists = [float(np.min(np.linalg.norm(pts - c, axis=1))) for c in cands]
    best = 0
    for i, d in enumerate(dists):
        if d > dists[best]:
            best = i
    return best, dists[best]


def saturation_update(sat: SaturatedSet, t: int, x, gap: float, iteration: int = 0) -> bool:
    """Insert ``x`` when its certified gap is within ``epsilon`` and it is ``delta``-distinguishable."""
    if gap <= sat.epsilon and sat.distance(t, x) > sat.delta:
        sat.stages[t].append(SaturatedPoint(np.array(x, dtype=float), float(gap), iteration))
        return True
    return False


@dataclass
class EddpConfig:
    epsilon: float = 1e-3
    delta: float | None = None
    lipschitz: float | None = None  # estimated from cut gradients when None
    diameter: float | None = None  # largest box diagonal when None
    max_iterations: int = 1000
    early_termination: bool = False
    floor: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.diameter is not None and self.diameter <= 0:
            raise ValueError("diameter must be positive")


def box_diameter(problem: MultistageProblem) -> float:
    return max(float(np.linalg.norm(st.ub - st.lb)) for st in problem.stages)


def iteration_bound(horizon: int, diameter: float, epsilon: float, dimension: int) -> float:
    """``(T-1) (D/eps + 1)^n``."""
    return (horizon - 1) * (diameter / epsilon + 1.0) ** dimension


@dataclass
class EddpResult:
    first_stage: np.ndarray
    lower_bound: float
    iterations: int
    stop_rule: str
    lipschitz: float
    diameter: float
    dimension: int
    iteration_bound: float
    gap_bound: float  # 2 M (T-1) eps
    first_stage_gap: float | None  # F(x1) - lower bound, when an oracle value is available
    saturated: SaturatedSet
    state: SolveState
    lower_bounds: list[float] = field(default_factory=list)

    @property
    def gap_certified(self) -> bool | None:
        if self.first_stage_gap is None:
            return None
        return self.first_stage_gap <= self.gap_bound + 1e-9


def _forward(problem, state, sat: SaturatedSet, early: bool):
    """Explorative forward step: trial points for stages ``0..T-2``."""
    x = solve_stage(problem, state, 0, 0, None).x
    trials = [x]
    for t in range(1, problem.horizon - 1):
        if early and sat.distance(t - 1, x) <= sat.delta:
            break
        cands = [solve_stage(problem, state, t, j, x).x for j in range(len(problem.stages[t]))]
        idx, _ = explorative_select(cands, sat, t)
        x = cands[idx]
        trials.append(x)
    return trials


def _backward(problem, state, sat: SaturatedSet, trials, tag):
    T = problem.horizon
    for t in range(len(trials) - 1, -1, -1):
        x = trials[t]
        st = problem.stages[t + 1]
        vals, grads, kids = [], [], []
        for j in range(len(st)):
            sol = solve_stage(problem, state, t + 1, j, x)
            vals.append(sol.value)
            grads.append(-(sol.extra["B"].T @ sol.duals))
            kids.append(sol.x)
        w = st.probs
        value = float(w @ np.array(vals))
        grad = w @ np.array(grads).reshape(len(st), -1)
        pool = state.pools[t][0]
        improvement = value - pool.value(x)
        pool.add(Cut(value - float(grad @ x), grad, tag))
        covered = t + 1 == T - 1 or all(sat.distance(t + 1, k) <= sat.delta for k in kids)
        saturation_update(sat, t, x, improvement if covered else math.inf, tag)


def run_eddp(problem: MultistageProblem, config: EddpConfig | None = None, oracle_cap: int = 2_000) -> EddpResult:
    """Run EDDP until ``dist(x1, S_1) <= delta`` or the iteration cap."""
    config = config or EddpConfig()
    if problem.markov:
        raise ValueError("EDDP here needs stagewise-independent data")
    for t, st in enumerate(problem.stages):
        if not np.all(np.isfinite(st.ub)):
            raise ValueError(f"stage {t + 1}: EDDP needs a bounded box (distances and diameter are undefined)")
    state = SolveState.initial(problem, config.floor)
    T = problem.horizon
    sat = SaturatedSet.empty(T - 1, config.epsilon, config.delta)
    stop = "iteration cap"
    lbs = []
    for k in range(config.max_iterations):
        x1 = solve_stage(problem, state, 0, 0, None).x
        if sat.distance(0, x1) <= sat.delta:
            stop = "distance"
            break
        trials = _forward(problem, state, sat, config.early_termination)
        _backward(problem, state, sat, trials, k + 1)
        state.iteration += 1
        lbs.append(lower_bound(problem, state))
        state.lower_bounds.append(lbs[-1])
    first = solve_stage(problem, state, 0, 0, None)
    lb = first.value
    M = config.lipschitz
    if M is None:
        M = max((p.max_gradient_norm() for p in state.all_pools()), default=0.0)
    D = config.diameter if config.diameter is not None else box_diameter(problem)
    n = max(st.n for st in problem.stages)
    fgap = None
    try:
        from .oracle import first_stage_value

        fgap = first_stage_value(problem, first.x, cap=oracle_cap) - lb
    except ValueError:
        pass  # tree too large for the oracle; the gap stays unreported
    return EddpResult(
        first_stage=first.x,
        lower_bound=lb,
        iterations=state.iteration,
        stop_rule=stop,
        lipschitz=M,
        diameter=D,
        dimension=n,
        iteration_bound=iteration_bound(T, D, config.epsilon, n),
        gap_bound=2.0 * M * (T - 1) * config.epsilon,
        first_stage_gap=fgap,
        saturated=sat,
        state=state,
        lower_bounds=lbs,
    )
