"""Ground-truth engines for desk-scale instances.

These build and solve whole scenario trees, so they refuse anything beyond a
node cap.  They exist to check the decomposition solvers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import lp as lpmod
from .lp import LpBuilder
from .model import (
    DEFAULT_NODE_CAP,
    AffinePieces,
    MultistageProblem,
    SocProblem,
    SocRealization,
    SocStage,
    StageBlock,
    StageRealization,
    scenario_tree,
    to_extensive_form,
)
from .risk import CoherentRisk, evaluate as risk_evaluate


@dataclass
class OracleSolution:
    value: float
    first_stage: np.ndarray
    x: np.ndarray
    nodes: list


def extensive_solve(problem: MultistageProblem, cap: int = DEFAULT_NODE_CAP) -> OracleSolution:
    ef = to_extensive_form(problem, cap)
    sol = lpmod.solve(ef.lp)
    if not sol.optimal:
        raise RuntimeError(f"extensive form is {sol.status.value}")
    return OracleSolution(sol.value, ef.first_stage(sol.x), sol.x, ef.nodes)


def first_stage_value(problem: MultistageProblem, x1, cap: int = DEFAULT_NODE_CAP, first_rows: bool = True) -> float:
    """Optimal expected cost when the first-stage decision is pinned to ``x1``.

    With ``first_rows=False`` the first-stage rows are dropped, so a point
    that violates them slightly still gets its cost plus expected recourse.
    """
    ef = to_extensive_form(problem, cap)
    cols = ef.nodes[0].cols
    lb, ub = ef.lp.lb.copy(), ef.lp.ub.copy()
    lb[cols] = ub[cols] = np.asarray(x1, dtype=float)
    A, b = ef.lp.A, ef.lp.b
    if not first_rows:
        keep = np.ones(b.size, dtype=bool)
        keep[: problem.stages[0].realizations[0].m] = False
        A, b = A[keep], b[keep]
    pinned = lpmod.LpProblem(ef.lp.c, A, b, lb, ub)
    sol = lpmod.solve(pinned)
    return sol.value if sol.optimal else np.inf


def _children(nodes):
    kids: dict[int, list[int]] = {}
    for idx, nd in enumerate(nodes):
        if nd.parent >= 0:
            kids.setdefault(nd.parent, []).append(idx)
    return kids


def nested_risk_value(
    problem: MultistageProblem,
    risks,
    decisions=None,
    optimize: bool = False,
    cap: int = DEFAULT_NODE_CAP,
) -> float:
    """Nested risk value over the scenario tree.

    With ``optimize=True`` the risk-averse optimum is computed as one LP: each
    interior node carries its AV@R threshold and excess variables.  Otherwise
    ``decisions`` (one vector per tree node, in :func:`scenario_tree` order)
    is evaluated by the backward recursion.
    """
    from .risk import stage_risks

    risks = stage_risks(risks, problem.horizon) or [None] * problem.horizon
    nodes = scenario_tree(problem, cap)
    kids = _children(nodes)
    if not optimize:
        if decisions is None:
            raise ValueError("policy evaluation needs one decision per tree node")
        total = np.array(
            [problem.stages[nd.stage].realizations[nd.index].c @ decisions[i] for i, nd in enumerate(nodes)]
        )
        for idx in range(len(nodes) - 1, -1, -1):
            if idx in kids:
                nd = nodes[idx]
                w = problem.child_weights(nd.stage, nd.index)
                ch = kids[idx]
                probs = np.array([w[nodes[c].index] for c in ch])
                risk = risks[nd.stage + 1] or CoherentRisk.expectation()
                total[idx] += risk_evaluate(risk, total[ch], probs)
        return float(total[0])
    return _nested_lp(problem, risks, nodes, kids)[0]


def _nested_lp(problem, risks, nodes, kids):
    bld = LpBuilder()
    xcols, vcol = [], []
    for nd in nodes:
        st = problem.stages[nd.stage]
        xcols.append(bld.add_vars(st.n, 0.0, st.lb, st.ub))
        vcol.append(bld.add_vars(1, 0.0, -np.inf, np.inf)[0])
    bld.costs[vcol[0]] = 1.0
    for idx, nd in enumerate(nodes):
        st = problem.stages[nd.stage]
        r = st.realizations[nd.index]
        for i in range(r.m):
            cols, coefs = list(xcols[idx]), list(r.A[i])
            if nd.parent >= 0:
                cols += list(xcols[nd.parent])
                coefs += list(r.linking(problem.stages[nd.stage - 1].n)[i])
            bld.add_row(cols, coefs, "==", r.b[i])
        # v_n - c x_n - risk(children) == 0
        cols = [vcol[idx]] + list(xcols[idx])
        coefs = [1.0] + list(-r.c)
        if idx in kids:
            w = problem.child_weights(nd.stage, nd.index)
            risk = risks[nd.stage + 1] or CoherentRisk.expectation()
            lam, alpha = risk.weight, risk.alpha
            ch = kids[idx]
            probs = [w[nodes[c].index] for c in ch]
            for c, pc in zip(ch, probs):
                cols.append(vcol[c])
                coefs.append(-(1.0 - lam) * pc)
            if lam > 0:
                th = bld.add_vars(1, 0.0, -np.inf, np.inf)[0]
                cols.append(th)
                coefs.append(-lam)
                for c, pc in zip(ch, probs):
                    s = bld.add_vars(1)[0]
                    cols.append(s)
                    coefs.append(-lam * pc / (1.0 - alpha))
                    # s >= v_child - th
                    bld.add_row([s, vcol[c], th], [1.0, -1.0, 1.0], ">=", 0.0)
        bld.add_row(cols, coefs, "==", 0.0)
    lp = bld.build()
    sol = lpmod.solve(lp)
    if not sol.optimal:
        raise RuntimeError(f"nested risk LP is {sol.status.value}")
    return sol.value, [sol.x[c] for c in xcols]


def soc_optimal_value(problem: SocProblem, psi=None, x_start=None, start: int = 0, cap: int = DEFAULT_NODE_CAP):
    """Optimal (nested) value of an SOC problem from stage ``start`` at ``x_start``, as one tree LP.

    Every tree node owns its state and its control; states are tied to the
    parent by the dynamics, and each edge carries an epigraph variable for
    the stage cost it incurs.
    """
    x0 = problem.x1 if x_start is None else np.asarray(x_start, dtype=float)
    n = x0.size
    lam = 0.0 if psi is None else psi.lam
    stages = problem.stages[start:]
    count, width = 1, 1
    for st in stages:
        width *= len(st.realizations)
        count += width
    if count > cap:
        raise ValueError(f"SOC tree has {count} nodes, above the cap of {cap}")
    bld = LpBuilder()
    root_x = bld.add_vars(n, 0.0, -np.inf, np.inf)
    for i in range(n):
        bld.add_row([root_x[i]], [1.0], "==", x0[i])
    root_v = bld.add_vars(1, 1.0, -np.inf, np.inf)[0]
    frontier = [(root_x, root_v)]
    for st in stages:
        nxt = []
        for xs, v in frontier:
            u = bld.add_vars(st.u_lb.size, 0.0, st.u_lb, st.u_ub)
            terms, coefs = [v], [1.0]
            theta = bld.add_vars(1, 0.0, -np.inf, np.inf)[0] if lam > 0 else None
            if theta is not None:
                terms.append(theta)
                coefs.append(-lam)
            for r in st.realizations:
                cx = bld.add_vars(n, 0.0, -np.inf, np.inf)
                for i in range(n):
                    bld.add_row(np.r_[cx[i], xs, u], np.r_[1.0, -r.A[i], -r.B[i]], "==", r.b[i])
                e = bld.add_vars(1, 0.0, -np.inf, np.inf)[0]
                for k in range(len(r.cost)):
                    bld.add_row(np.r_[e, xs, u], np.r_[-1.0, r.cost.gx[k], r.cost.gu[k]], "<=", -r.cost.const[k])
                cv = bld.add_vars(1, 0.0, -np.inf, np.inf)[0]
                # outcome z = e + cv enters v = (1-lam) E z + lam (theta + E[z - theta]_+ / (1-alpha))
                terms += [e, cv]
                coefs += [-(1.0 - lam) * r.p, -(1.0 - lam) * r.p]
                if theta is not None:
                    s = bld.add_vars(1)[0]
                    bld.add_row([s, e, cv, theta], [1.0, -1.0, -1.0, 1.0], ">=", 0.0)
                    terms.append(s)
                    coefs.append(-lam * r.p / (1.0 - psi.alpha))
                nxt.append((cx, cv))
            bld.add_row(terms, coefs, "==", 0.0)
        frontier = nxt
    term = problem.terminal
    for xs, v in frontier:
        for k in range(len(term)):
            bld.add_row(np.r_[v, xs], np.r_[-1.0, term.gx[k]], "<=", -term.const[k])
    sol = lpmod.solve(bld.build())
    if not sol.optimal:
        raise RuntimeError(f"SOC tree LP is {sol.status.value}")
    return sol.value


# --------------------------------------------------------------------------
# inventory benchmark


@dataclass
class InventoryInstance:
    order_cost: list[float]
    backorder: list[float]
    holding: list[float]
    demands: list[tuple[list[float], list[float]]]
    x1: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.order_cost)


def newsvendor_instance() -> InventoryInstance:
    """Single order, demand 1 or 3 with equal odds, unit order cost."""
    return InventoryInstance([1.0], [2.0], [0.5], [([1.0, 3.0], [0.5, 0.5])], 0.0)


def inventory_as_multistage(inst: InventoryInstance, order_cap: float = np.inf) -> MultistageProblem:
    """SP form with one extra stage; decisions are ``(stock+, stock-, order)``.

    Stage 1 fixes the initial stock and places the first order; every later
    stage observes a demand, pays holding/backorder cost on the resulting
    stock and places the next order (the last stage cannot order).
    """
    T = inst.horizon
    A = np.array([[1.0, -1.0, 0.0]])
    B = np.array([[-1.0, 1.0, -1.0]])
    stages = [
        StageBlock(
            [StageRealization([0.0, 0.0, inst.order_cost[0]], A, [inst.x1], None, 1.0)],
            np.zeros(3),
            np.array([np.inf, np.inf, order_cap]),
        )
    ]
    for t in range(T):
        order = inst.order_cost[t + 1] if t + 1 < T else 0.0
        cost = [inst.holding[t], inst.backorder[t], order]
        vals, probs = inst.demands[t]
        reals = [StageRealization(cost, A, [-d], B, p) for d, p in zip(vals, probs)]
        cap = order_cap if t + 1 < T else 0.0
        stages.append(StageBlock(reals, np.zeros(3), np.array([np.inf, np.inf, cap])))
    return MultistageProblem(stages, name="inventory")


def inventory_as_soc(inst: InventoryInstance, order_cap: float | None = None) -> SocProblem:
    """SOC form: state = stock level, control = order quantity."""
    if order_cap is None:
        order_cap = abs(inst.x1) + sum(max(v) for v, _ in inst.demands)
    stages = []
    for t in range(inst.horizon):
        c, b, h = inst.order_cost[t], inst.backorder[t], inst.holding[t]
        reals = []
        for d, p in zip(*inst.demands[t]):
            cost = AffinePieces([b * d, -h * d], [[-b], [h]], [[c - b], [c + h]])
            reals.append(SocRealization([[1.0]], [[1.0]], [-d], cost, p))
        stages.append(SocStage(reals, [0.0], [order_cap]))
    return SocProblem(stages, AffinePieces([0.0], [[0.0]]), [inst.x1])


@dataclass
class BasestockResult:
    levels: np.ndarray  # lowest grid minimizer per stage
    intervals: list[tuple[float, float]]  # near-optimal order-up-to range per stage
    grid: np.ndarray
    values: list[np.ndarray]  # V_t on the grid, t = 1..T+1
    step: float

    @property
    def tolerance(self) -> float:
        return 2.0 * self.step

    def value(self, t: int, x: float) -> float:
        return float(np.interp(x, self.grid, self.values[t]))


def basestock_levels(inst: InventoryInstance, step: float | None = None, rel_tol: float = 1e-9) -> BasestockResult:
    """Order-up-to levels by backward recursion on a uniform stock grid."""
    all_d = np.concatenate([np.asarray(v, dtype=float) for v, _ in inst.demands])
    spread = float(all_d.max() - all_d.min())
    if step is None:
        step = 1e-3 * (spread if spread > 0 else max(1.0, float(abs(all_d).max())))
    total = float(sum(max(v) for v, _ in inst.demands))
    lo = min(inst.x1, 0.0) - total - 1.0
    hi = max(inst.x1, 0.0) + total + 1.0
    grid = lo + step * np.arange(int(np.ceil((hi - lo) / step)) + 1)
    if grid.size > 5_000_000:
        raise ValueError("basestock grid too fine for the demand range")
    T = inst.horizon
    values = [None] * (T + 1)
    values[T] = np.zeros_like(grid)
    levels = np.zeros(T)
    intervals = []
    for t in range(T - 1, -1, -1):
        c, b, h = inst.order_cost[t], inst.backorder[t], inst.holding[t]
        G = c * grid
        for d, p in zip(*inst.demands[t]):
            short = np.maximum(d - grid, 0.0)
            over = np.maximum(grid - d, 0.0)
            nxt = np.interp(grid - d, grid, values[t + 1])
            G = G + p * (b * short + h * over + nxt)
        k = int(np.argmin(G))
        levels[t] = grid[k]
        near = np.flatnonzero(G <= G[k] + rel_tol * max(1.0, abs(G[k])))
        intervals.append((float(grid[near.min()]), float(grid[near.max()])))
        suffix = np.minimum.accumulate(G[::-1])[::-1]
        values[t] = suffix - c * grid
    intervals.reverse()
    return BasestockResult(levels, intervals, grid, values, step)


def basestock_order(result: BasestockResult, t: int, x: float) -> float:
    return max(result.levels[t] - x, 0.0)


# --------------------------------------------------------------------------
# fixtures


def instance_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
