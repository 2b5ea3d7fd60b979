"""Dense bounded-variable primal simplex.

Problems have the form ``min c @ x  s.t.  A @ x == b,  lb <= x <= ub`` where
bounds may be infinite. The solver returns row duals ``y`` (the sensitivity of
the optimal value to ``b``) and reduced costs ``d = c - A.T @ y``, which is all
the cutting-plane code needs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
OPT_TOL = 1e-9
REFACTOR_EVERY = 100
BLAND_AFTER = 50

# nonbasic status codes
_BASIC, _LOWER, _UPPER, _FREE, _FIXED = 0, 1, 2, 3, 4


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class DegenerateCycleError(RuntimeError):
    """Raised when the pivot cap is hit without reaching a terminal status."""


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    # starting values for free nonbasic columns (NaN means "use 0")
    x_hint: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.A.shape[0] != self.b.size:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.size} entries")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the number of columns")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("bounds must leave a nonempty finite range")

    @property
    def shape(self):
        return self.A.shape

    def dump(self) -> str:
        """Plain-text listing for bug reports."""
        lines = ["objective: " + " ".join(repr(float(v)) for v in self.c)]
        for i, row in enumerate(self.A):
            coeffs = " ".join(repr(float(v)) for v in row)
            lines.append(f"row {i}: {coeffs} = {float(self.b[i])!r}")
        for j in range(self.c.size):
            lines.append(f"bound {j}: {float(self.lb[j])!r} {float(self.ub[j])!r}")
        return "\n".join(lines) + "\n"


@dataclass
class Basis:
    head: np.ndarray
    status: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    value: float = np.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: Basis | None = None
    pivots: int = 0
    theta: float | None = None
    cut_duals: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _Simplex:
    def __init__(self, lp: LpProblem, max_pivots: int | None):
        m, n = lp.A.shape
        self.m, self.n = m, n
        self.lp = lp
        # structural columns followed by one artificial per row
        self.A = np.hstack([lp.A, np.eye(m)])
        self.lb = np.concatenate([lp.lb, np.zeros(m)])
        self.ub = np.concatenate([lp.ub, np.zeros(m)])
        self.x = np.zeros(n + m)
        self.status = np.full(n + m, _FIXED, dtype=np.int8)
        self.head = np.empty(m, dtype=np.intp)
        self.Binv = np.eye(m)
        self.pivots = 0
        self.since_refactor = 0
        self.max_pivots = 50 * (m + n) + 1000 if max_pivots is None else max_pivots

    # -- setup ---------------------------------------------------------
    def _nonbasic_start(self, hint):
        n = self.n
        lb, ub = self.lb[:n], self.ub[:n]
        fixed = lb == ub
        low = ~fixed & np.isfinite(lb)
        up = ~fixed & ~low & np.isfinite(ub)
        free = ~(fixed | low | up)
        start = np.zeros(n) if hint is None else np.where(np.isfinite(hint), hint, 0.0)
        self.status[:n] = np.select([fixed, low, up], [_FIXED, _LOWER, _UPPER], _FREE)
        self.x[:n] = np.select([fixed | low, up, free], [lb, ub, start])

    def cold_start(self):
        """Crash basis: unit columns where they fit, artificials elsewhere."""
        m, n = self.m, self.n
        A = self.lp.A
        self._nonbasic_start(self.lp.x_hint)
        nnz = np.count_nonzero(A, axis=0)
        candidates = {}
        singles = np.flatnonzero((nnz == 1) & (self.status[:n] != _FIXED))
        if singles.size:
            for j, i in zip(singles.tolist(), np.argmax(A[:, singles] != 0, axis=0).tolist()):
                candidates.setdefault(i, []).append(j)
        xs = self.x[:n].copy()
        for js in candidates.values():
            xs[js] = 0.0
        resid = self.lp.b - A @ xs
        self.art_rows = []
        for i in range(m):
            cands = candidates.get(i, [])
            full = sum(A[i, j] * self.x[j] for j in cands)
            chosen = None
            for j in cands:
                v = (resid[i] - (full - A[i, j] * self.x[j])) / A[i, j]
                if self.lb[j] - FEAS_TOL <= v <= self.ub[j] + FEAS_TOL:
                    chosen, val = j, min(max(v, self.lb[j]), self.ub[j])
                    break
            if chosen is not None:
                self.head[i] = chosen
                self.status[chosen] = _BASIC
                self.x[chosen] = val
                continue
            # artificial carrying the residual with a nonnegative value
            k = n + i
            r = resid[i] - full
            sign = 1.0 if r >= 0 else -1.0
            self.A[i, k] = sign
            self.ub[k] = np.inf
            self.head[i] = k
            self.status[k] = _BASIC
            self.x[k] = abs(r)
            self.art_rows.append(i)
        # every unused artificial stays fixed at zero
        self.refactor()
        return bool(self.art_rows)

    def warm_start(self, basis: Basis) -> bool:
        if basis is None or basis.head.size != self.m or basis.status.size != self.n:
            return False
        if np.any(basis.head >= self.n) or np.unique(basis.head).size != self.m:
            return False
        self._nonbasic_start(self.lp.x_hint)
        for j in range(self.n):
            s = basis.status[j]
            if self.status[j] == _FIXED:
                continue
            if s == _UPPER and np.isfinite(self.ub[j]):
                self.status[j], self.x[j] = _UPPER, self.ub[j]
            elif s == _LOWER and np.isfinite(self.lb[j]):
                self.status[j], self.x[j] = _LOWER, self.lb[j]
        self.head[:] = basis.head
        self.status[self.head] = _BASIC
        try:
            self.refactor()
        except np.linalg.LinAlgError:
            return False
        xb = self.x[self.head]
        tol = 1e-7 * (1 + np.abs(xb))
        if np.any(xb < self.lb[self.head] - tol) or np.any(xb > self.ub[self.head] + tol):
            return False
        self.x[self.head] = np.clip(xb, self.lb[self.head], self.ub[self.head])
        self.art_rows = []
        return True

    def refactor(self):
        B = self.A[:, self.head]
        self.Binv = np.linalg.inv(B)
        nb = self.status != _BASIC
        rhs = self.lp.b - self.A[:, nb] @ self.x[nb]
        self.x[self.head] = self.Binv @ rhs
        self.since_refactor = 0

    # -- core loop -----------------------------------------------------
    def iterate(self, cost: np.ndarray) -> LpStatus:
        bland = False
        degenerate = 0
        while True:
            if self.pivots >= self.max_pivots:
                raise DegenerateCycleError(
                    f"simplex pivot cap {self.max_pivots} reached on a {self.m}x{self.n} LP"
                )
            y = cost[self.head] @ self.Binv
            d = cost - self.A.T @ y
            st = self.status
            scale = 1.0 + np.abs(cost)
            elig = ((st == _LOWER) & (d < -OPT_TOL * scale)) | (
                (st == _UPPER) & (d > OPT_TOL * scale)
            ) | ((st == _FREE) & (np.abs(d) > OPT_TOL * scale))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return LpStatus.OPTIMAL
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = self.Binv @ self.A[:, j]
            rate = -direction * alpha  # change of basic values per unit step

            step, leave = self._ratio_test(j, direction, rate, bland)
            if not np.isfinite(step):
                return LpStatus.UNBOUNDED
            self.pivots += 1
            if step <= 1e-12:
                degenerate += 1
                if degenerate > BLAND_AFTER:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.x[j] += direction * step
            self.x[self.head] += step * rate
            if leave < 0:
                # entering column hit its own opposite bound
                if direction > 0:
                    self.status[j], self.x[j] = _UPPER, self.ub[j]
                else:
                    self.status[j], self.x[j] = _LOWER, self.lb[j]
                continue
            k = self.head[leave]
            if rate[leave] < 0:
                self.x[k] = self.lb[k]
                self.status[k] = _FIXED if self.lb[k] == self.ub[k] else _LOWER
            else:
                self.x[k] = self.ub[k]
                self.status[k] = _FIXED if self.lb[k] == self.ub[k] else _UPPER
            self.head[leave] = j
            self.status[j] = _BASIC
            self._update_inverse(leave, alpha)

    def _ratio_test(self, j, direction, rate, bland):
        head = self.head
        xb = self.x[head]
        lo, hi = self.lb[head], self.ub[head]
        steps = np.full(self.m, np.inf)
        relaxed = np.full(self.m, np.inf)
        dec = rate < -PIVOT_TOL
        inc = rate > PIVOT_TOL
        fin_lo = dec & np.isfinite(lo)
        fin_hi = inc & np.isfinite(hi)
        steps[fin_lo] = (xb[fin_lo] - lo[fin_lo]) / -rate[fin_lo]
        relaxed[fin_lo] = (xb[fin_lo] - lo[fin_lo] + FEAS_TOL) / -rate[fin_lo]
        steps[fin_hi] = (hi[fin_hi] - xb[fin_hi]) / rate[fin_hi]
        relaxed[fin_hi] = (hi[fin_hi] - xb[fin_hi] + FEAS_TOL) / rate[fin_hi]
        np.maximum(steps, 0.0, out=steps)

        own = self.ub[j] - self.lb[j]
        if not np.isfinite(own):
            own = np.inf
        bound = min(relaxed.min() if self.m else np.inf, own)
        if not np.isfinite(bound):
            return np.inf, -1
        if own <= bound and own <= (steps.min() if self.m else np.inf):
            return own, -1
        ok = np.flatnonzero(steps <= bound)
        if ok.size == 0:
            return own, -1
        if bland:
            best = ok[np.argmin(head[ok])]
        else:
            best = ok[np.argmax(np.abs(rate[ok]))]
        return float(steps[best]), int(best)

    def _update_inverse(self, r, alpha):
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()
            return
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row

    # -- phases --------------------------------------------------------
    def phase_one(self) -> bool:
        cost = np.zeros(self.n + self.m)
        cost[self.n + np.asarray(self.art_rows, dtype=np.intp)] = 1.0
        self.iterate(cost)
        self.refactor()
        infeas = float(cost @ self.x)
        scale = 1.0 + np.abs(self.lp.b).max(initial=0.0)
        if infeas > 1e-7 * scale:
            return False
        # artificials are pinned to zero from now on
        for i in self.art_rows:
            k = self.n + i
            self.ub[k] = 0.0
            if self.status[k] != _BASIC:
                self.status[k] = _FIXED
                self.x[k] = 0.0
            else:
                self.x[k] = 0.0
        return True


def solve(lp: LpProblem, basis: Basis | None = None, max_pivots: int | None = None) -> LpSolution:
    """Solve an LP; returns an LpSolution whose ``duals`` price the rows."""
    sx = _Simplex(lp, max_pivots)
    if not sx.warm_start(basis):
        sx = _Simplex(lp, max_pivots)
        if sx.cold_start() and not sx.phase_one():
            return LpSolution(LpStatus.INFEASIBLE, pivots=sx.pivots)
    cost = np.concatenate([lp.c, np.zeros(sx.m)])
    status = sx.iterate(cost)
    if status is LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED, value=-np.inf, pivots=sx.pivots)
    sx.refactor()
    n = sx.n
    x = sx.x[:n].copy()
    np.clip(x, lp.lb, lp.ub, out=x)
    y = cost[sx.head] @ sx.Binv
    d = lp.c - lp.A.T @ y
    stat = sx.status[:n].copy()
    stat[stat == _FIXED] = _LOWER
    return LpSolution(
        LpStatus.OPTIMAL,
        value=float(lp.c @ x),
        x=x,
        duals=y,
        reduced_costs=d,
        basis=Basis(sx.head.copy(), stat),
        pivots=sx.pivots,
    )


def check_optimality(lp: LpProblem, sol: LpSolution, tol: float = 1e-7) -> list[str]:
    """Return violated optimality conditions of an Optimal solution (empty when fine)."""
    problems = []
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    scale = 1.0 + np.abs(lp.b).max(initial=0.0) + np.abs(x).max(initial=0.0)
    if np.abs(lp.A @ x - lp.b).max(initial=0.0) > 1e-8 * scale:
        problems.append("primal rows violated")
    if np.any(x < lp.lb - 1e-9) or np.any(x > lp.ub + 1e-9):
        problems.append("bounds violated")
    cscale = 1.0 + np.abs(lp.c).max(initial=0.0)
    gap_tol = 1e-8 * cscale
    for j in range(x.size):
        at_lo = np.isfinite(lp.lb[j]) and x[j] <= lp.lb[j] + 1e-9 * (1 + abs(lp.lb[j]))
        at_hi = np.isfinite(lp.ub[j]) and x[j] >= lp.ub[j] - 1e-9 * (1 + abs(lp.ub[j]))
        if at_lo and at_hi:
            continue
        if at_lo and d[j] < -gap_tol:
            problems.append(f"reduced cost of column {j} has wrong sign at lower bound")
        elif at_hi and d[j] > gap_tol:
            problems.append(f"reduced cost of column {j} has wrong sign at upper bound")
        elif not at_lo and not at_hi and abs(d[j]) > 1e-7 * cscale:
            problems.append(f"interior column {j} has nonzero reduced cost")
    dual_obj = float(y @ lp.b + d @ x)
    if abs(dual_obj - sol.value) > tol * (1 + abs(sol.value)):
        problems.append(f"duality gap {sol.value - dual_obj:.3e}")
    return problems


def solve_with_cuts(
    stage_lp: LpProblem,
    pool,
    x_prev: np.ndarray | None = None,
    B: np.ndarray | None = None,
    basis: Basis | None = None,
) -> LpSolution:
    """Minimize ``c @ x + theta`` with ``theta`` above every cut of ``pool``.

    ``B @ x_prev`` is moved to the right-hand side.  Row duals of the returned
    solution cover the stage rows only; cut multipliers are in ``cut_duals``.
    """
    if len(pool) == 0:
        raise ValueError("cut pool is empty; initialize it with a floor cut")
    m, n = stage_lp.A.shape
    b = stage_lp.b if B is None or x_prev is None else stage_lp.b - B @ x_prev
    alphas, betas = pool.arrays()
    k = alphas.size
    if betas.shape[1] != n:
        raise ValueError(f"cut dimension {betas.shape[1]} does not match {n} stage columns")
    A = np.zeros((m + k, n + 1 + k))
    A[:m, :n] = stage_lp.A
    A[m:, :n] = -betas
    A[m:, n] = 1.0
    A[m:, n + 1 :] = -np.eye(k)
    x0 = np.where(np.isfinite(stage_lp.lb), stage_lp.lb, np.where(np.isfinite(stage_lp.ub), stage_lp.ub, 0.0))
    hint = np.full(n + 1 + k, np.nan)
    hint[n] = float(np.max(alphas + betas @ x0))
    lp = LpProblem(
        c=np.concatenate([stage_lp.c, [1.0], np.zeros(k)]),
        A=A,
        b=np.concatenate([b, alphas]),
        lb=np.concatenate([stage_lp.lb, [-np.inf], np.zeros(k)]),
        ub=np.concatenate([stage_lp.ub, [np.inf], np.full(k, np.inf)]),
        x_hint=hint,
    )
    sol = solve(lp, basis=basis)
    if not sol.optimal:
        return sol
    full = sol
    return LpSolution(
        LpStatus.OPTIMAL,
        value=full.value,
        x=full.x[:n],
        duals=full.duals[:m],
        reduced_costs=full.reduced_costs[:n],
        basis=full.basis,
        pivots=full.pivots,
        theta=float(full.x[n]),
        cut_duals=full.duals[m:],
    )


class LpBuilder:
    """Incremental construction of an LP with ``<=``, ``>=`` and ``==`` rows.

    Inequalities get their own slack column, so the row duals of the final
    problem keep the usual sign meaning (value change per unit of rhs).
    """

    def __init__(self):
        self.costs: list[float] = []
        self.lbs: list[float] = []
        self.ubs: list[float] = []
        self.rows: list[tuple[dict, float]] = []

    @property
    def num_vars(self) -> int:
        return len(self.costs)

    def add_vars(self, count, cost=0.0, lb=0.0, ub=np.inf) -> np.ndarray:
        start = len(self.costs)
        self.costs.extend(np.broadcast_to(np.asarray(cost, dtype=float), (count,)).tolist())
        self.lbs.extend(np.broadcast_to(np.asarray(lb, dtype=float), (count,)).tolist())
        self.ubs.extend(np.broadcast_to(np.asarray(ub, dtype=float), (count,)).tolist())
        return np.arange(start, start + count)

    def add_row(self, idx, coef, sense: str, rhs: float) -> int:
        terms: dict[int, float] = {}
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(coef)):
            if v != 0.0:
                terms[int(i)] = terms.get(int(i), 0.0) + float(v)
        if sense == "<=":
            s = self.add_vars(1)[0]
            terms[int(s)] = 1.0
        elif sense == ">=":
            s = self.add_vars(1)[0]
            terms[int(s)] = -1.0
        elif sense != "==":
            raise ValueError(f"unknown row sense {sense!r}")
        self.rows.append((terms, float(rhs)))
        return len(self.rows) - 1

    def build(self) -> LpProblem:
        n = len(self.costs)
        A = np.zeros((len(self.rows), n))
        b = np.zeros(len(self.rows))
        for i, (terms, rhs) in enumerate(self.rows):
            for j, v in terms.items():
                A[i, j] = v
            b[i] = rhs
        return LpProblem(np.array(self.costs), A, b, np.array(self.lbs), np.array(self.ubs))
