"""Dynamic stochastic approximation over box-constrained stages.

Every stage is treated as the saddle problem::

    max_y  min_{lb <= x <= ub}  <b - B u - A x, y> + f(x) + Qnext(x)

with ``f(x) = c @ x + 0.5 * sum(q * x**2)``.  One primal-dual step on it
(:func:`spdt`) needs a stochastic subgradient of ``Qnext`` at the current
primal point.  That subgradient comes from running the same step on the next
stage for a freshly sampled realization and reading ``-B.T @ y`` off the
averaged dual, so a three-stage problem runs three nested loops.

Costs must be separable so the primal prox is a per-coordinate clamp.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import MultistageProblem
from .rng import inverse_cdf, stream


@dataclass
class SpdtState:
    primal: np.ndarray
    dual: np.ndarray
    prev_dual: np.ndarray

    def copy(self) -> "SpdtState":
        return SpdtState(self.primal.copy(), self.dual.copy(), self.prev_dual.copy())


@dataclass(frozen=True)
class SpdtParams:
    theta: float
    tau: float
    eta: float

    def __post_init__(self):
        if not (self.tau > 0 and self.eta > 0):
            raise ValueError("tau and eta must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")


@dataclass
class SpdtStep:
    state: SpdtState
    extrapolated: np.ndarray
    primal_residual: float
    dual_residual: float

    @property
    def residual(self) -> float:
        return max(self.primal_residual, self.dual_residual)


def _diagonal(q, n: int) -> np.ndarray:
    if q is None:
        return np.zeros(n)
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        if np.count_nonzero(q - np.diag(np.diag(q))):
            raise ValueError("the quadratic cost must be diagonal so the prox stays a clamp")
        q = np.diag(q)
    q = q.ravel()
    if q.size != n:
        raise ValueError(f"quadratic diagonal has {q.size} entries, expected {n}")
    if np.any(q < 0):
        raise ValueError("the quadratic diagonal must be nonnegative")
    return q


def _box(box, n: int) -> tuple[np.ndarray, np.ndarray]:
    if not (isinstance(box, tuple) and len(box) == 2):
        raise ValueError("the feasible set must be a box given as (lb, ub)")
    lb = np.broadcast_to(np.asarray(box[0], dtype=float), (n,))
    ub = np.broadcast_to(np.asarray(box[1], dtype=float), (n,))
    if np.any(lb > ub):
        raise ValueError("empty box")
    return lb, ub


def spdt(state: SpdtState, qprime, u, A, B, b, c, box, params: SpdtParams, q=None) -> SpdtStep:
    """One extrapolate / primal prox / dual ascent step.

    Returns the new state, the extrapolated dual and the residuals of the
    optimality conditions both closed-form updates are meant to satisfy.
    """
    p = np.asarray(state.primal, dtype=float)
    n = p.size
    c = np.asarray(c, dtype=float)
    qprime = np.zeros(n) if qprime is None else np.asarray(qprime, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()
    shift = b if u is None or B is None else b - np.asarray(B, dtype=float).reshape(b.size, -1) @ np.asarray(u, dtype=float)
    lb, ub = _box(box, n)
    qd = _diagonal(q, n)
    return _spdt_core(state, qprime, shift, A, c, qd, lb, ub, params.theta, params.tau, params.eta)


def _spdt_core(state, qprime, shift, A, c, qd, lb, ub, theta, tau, eta, check=True) -> SpdtStep:
    d, d_prev, p = state.dual, state.prev_dual, state.primal
    d_tilde = d + theta * (d - d_prev) if theta else d
    lin = c + qprime - A.T @ d_tilde
    p_new = np.minimum(np.maximum((tau * p - lin) / (tau + qd), lb), ub)
    resid = shift - A @ p_new
    d_new = d + resid / eta
    pr = dr = 0.0
    if check and p.size:
        g = lin + (qd + tau) * p_new - tau * p
        # a coordinate resting on a bound only needs the gradient to push outward
        viol = np.where(p_new <= lb, -g, np.where(p_new >= ub, g, np.abs(g)))
        pr = max(float(np.max(viol / (1.0 + np.abs(lin) + tau * np.abs(p)))), 0.0)
        if d.size:
            dr = float(np.max(np.abs(eta * (d_new - d) - resid) / (1.0 + np.abs(resid))))
    return SpdtStep(SpdtState(p_new, d_new, d), d_tilde, pr, dr)


# --------------------------------------------------------------------------
# schedules


GROWTH = ("constant", "sqrt", "linear")


@dataclass
class StageRule:
    """``tau_k = tau0 * g(k)``, ``eta_k = eta0 * g(k)`` (``eta0 / g(k)`` for linear growth).

    Linear growth is the strongly convex setting: the primal weight grows
    like ``mu k`` while the dual weight shrinks, and iterates are averaged
    with weights ``k``.
    """

    tau0: float
    eta0: float
    growth: str = "constant"
    theta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.growth not in GROWTH:
            raise ValueError(f"growth must be one of {GROWTH}")
        if self.tau0 <= 0 or self.eta0 <= 0:
            raise ValueError("step constants must be positive")

    def params(self, k: int) -> SpdtParams:
        """Parameters of step ``k`` (1-based)."""
        if self.growth == "constant":
            return SpdtParams(self.theta, self.tau0, self.eta0)
        if self.growth == "sqrt":
            s = math.sqrt(k)
            return SpdtParams(self.theta, self.tau0 * s, self.eta0 * s)
        return SpdtParams((k - 1) / k if k > 1 else 0.0, self.tau0 + 0.5 * self.mu * (k - 1), self.eta0 * 2.0 / (k + 1))

    def weight(self, k: int) -> float:
        return float(k) if self.growth == "linear" else 1.0

    def echo(self) -> dict:
        return {"tau0": self.tau0, "eta0": self.eta0, "growth": self.growth, "theta": self.theta, "mu": self.mu}


@dataclass
class DsaSchedule:
    sizes: tuple[int, ...]
    rules: list[StageRule]
    mode: str = "general"
    mu: float = 0.0
    dual_radius: float = 1e6

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if any(s < 1 for s in self.sizes):
            raise ValueError("loop sizes must be at least 1")
        if len(self.rules) != len(self.sizes):
            raise ValueError("one step rule per stage is required")
        if self.mode not in ("general", "strong"):
            raise ValueError("mode must be 'general' or 'strong'")
        if self.mode == "strong" and self.mu <= 0:
            raise ValueError("strong mode needs a positive modulus mu")
        if self.dual_radius <= 0:
            raise ValueError("dual_radius must be positive")

    def echo(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "mode": self.mode,
            "mu": self.mu,
            "dual_radius": self.dual_radius,
            "rules": [r.echo() for r in self.rules],
        }


def _stage_norms(problem: MultistageProblem, t: int) -> tuple[float, float, float]:
    st = problem.stages[t]
    a = max((np.linalg.norm(r.A, 2) if r.A.size else 0.0) for r in st.realizations)
    span = np.where(np.isfinite(st.ub - st.lb), st.ub - st.lb, 1.0)
    diam = float(np.linalg.norm(span)) or 1.0
    grad = 0.0
    for r in st.realizations:
        qd = np.zeros(st.n) if r.q is None else r.q
        reach = np.maximum(np.abs(np.where(np.isfinite(st.lb), st.lb, 0.0)), np.abs(np.where(np.isfinite(st.ub), st.ub, 0.0)))
        grad = max(grad, float(np.linalg.norm(np.abs(r.c) + qd * reach)))
    if t + 1 < problem.horizon:
        nxt = problem.stages[t + 1]
        link = max((np.linalg.norm(r.B, 2) if r.B is not None and r.B.size else 0.0) for r in nxt.realizations)
        grad += link * max(1.0, _cost_scale(problem))
    return a, diam, grad


def _cost_scale(problem: MultistageProblem) -> float:
    return max(float(np.max(np.abs(r.c), initial=0.0)) for st in problem.stages for r in st.realizations)


def default_schedule(problem: MultistageProblem, sizes, mode: str = "general", mu: float | None = None, dual_radius: float | None = None) -> DsaSchedule:
    """Step constants from data norms.

    Every stage uses ``tau0 * eta0 = ||A||^2`` (or ``tau0 = eta0 = 1`` with no
    rows) with ``tau0`` sized so one unit step covers the box.  The first
    stage grows its weights like ``sqrt(k)`` in general mode and like
    ``mu k`` in strong mode; deeper stages keep them constant, which keeps
    their dual iterates bounded.  A problem with a single realization per
    stage keeps constant weights in general mode.
    """
    sizes = tuple(sizes)
    if len(sizes) != problem.horizon:
        raise ValueError(f"need {problem.horizon} loop sizes, got {len(sizes)}")
    if mode == "strong" and mu is None:
        mu = min((float(np.min(r.q)) if r.q is not None else 0.0) for st in problem.stages for r in st.realizations)
    mu = 0.0 if mu is None else float(mu)
    # without noise the subgradients are exact up to the inner loops, so the
    # first stage can keep constant steps as well
    deterministic = all(len(st) == 1 for st in problem.stages)
    rules = []
    for t in range(problem.horizon):
        a, diam, grad = _stage_norms(problem, t)
        tau0 = max(grad / diam, a, 1e-8)
        eta0 = a * a / tau0 if a > 0 else 1.0
        if t == 0 and mode == "strong":
            growth = "linear"
        elif t == 0 and not deterministic:
            growth = "sqrt"
        else:
            growth = "constant"
        rules.append(StageRule(tau0, eta0, growth, 1.0, mu if t == 0 else 0.0))
    radius = dual_radius if dual_radius is not None else 1e3 * max(1.0, _cost_scale(problem))
    return DsaSchedule(sizes, rules, mode, mu, radius)


# --------------------------------------------------------------------------
# driver


@dataclass
class DsaResult:
    first_stage: np.ndarray
    objective_estimate: float
    feasibility_residual: float
    sample_counts: list[int]
    spdt_calls: int
    max_residual: float
    clip_events: list[int]
    schedule: dict
    log: list[str] = field(default_factory=list)


class _Stage:
    """Per-stage data in the flat form the inner loop wants."""

    def __init__(self, problem: MultistageProblem, t: int):
        st = problem.stages[t]
        self.n = st.n
        self.lb, self.ub = st.lb, st.ub
        self.probs = st.probs
        self.data = []
        for r in st.realizations:
            qd = _diagonal(r.q, st.n)
            B = None if t == 0 else r.linking(problem.stages[t - 1].n)
            self.data.append((r.A, B, r.b, r.c, qd))
        self.m = st.realizations[0].m
        self.start = np.clip(np.zeros(self.n), self.lb, self.ub)


class _Runner:
    def __init__(self, problem: MultistageProblem, schedule: DsaSchedule, seed: int, check: bool):
        self.problem = problem
        self.check = check
        self.schedule = schedule
        self.stages = [_Stage(problem, t) for t in range(problem.horizon)]
        self.rng = stream(seed, "dsa")
        self.calls = 0
        self.max_residual = 0.0
        self.clips = [0] * problem.horizon
        self.log: list[str] = []
        # warm starts: each stage resumes from where its previous loop ended
        self.warm = [SpdtState(s.start.copy(), np.zeros(s.m), np.zeros(s.m)) for s in self.stages]
        self.samples = [0] * problem.horizon

    def draw(self, t: int) -> int:
        self.samples[t] += 1
        st = self.stages[t]
        if len(st.probs) == 1:
            return 0
        return inverse_cdf(st.probs, self.rng.random())

    def loop(self, t: int, j: int, u):
        """Run ``N_t`` steps on stage ``t`` realization ``j`` at incoming state ``u``.

        Returns the weighted averages of the primal and dual iterates and of
        the cost of this stage plus the sampled costs of the deeper ones.
        """
        st = self.stages[t]
        A, B, b, c, qd = st.data[j]
        shift = b if B is None or u is None else b - B @ u
        rule = self.schedule.rules[t]
        radius = self.schedule.dual_radius
        state = self.warm[t]
        state = SpdtState(state.primal, state.dual, state.dual.copy())
        wsum = 0.0
        p_avg = np.zeros(st.n)
        d_avg = np.zeros(st.m)
        cost_avg = 0.0
        last = t == len(self.stages) - 1
        for k in range(1, self.schedule.sizes[t] + 1):
            tail = 0.0
            if last:
                qprime = None
            else:
                jn = self.draw(t + 1)
                _, yn, tail = self.loop(t + 1, jn, state.primal)
                Bn = self.stages[t + 1].data[jn][1]
                qprime = -(Bn.T @ yn)
            prm = rule.params(k)
            step = _spdt_core(state, np.zeros(st.n) if qprime is None else qprime, shift, A, c, qd, st.lb, st.ub, prm.theta, prm.tau, prm.eta, self.check)
            self.calls += 1
            self.max_residual = max(self.max_residual, step.residual)
            state = step.state
            norm = float(np.linalg.norm(state.dual))
            if norm > radius:
                state.dual *= radius / norm
                if self.clips[t] < 5:
                    self.log.append(f"stage {t + 1}: dual norm {norm:.3g} clipped to {radius:.3g} at step {k}")
                self.clips[t] += 1
            w = rule.weight(k)
            wsum += w
            p_avg += w * (state.primal - p_avg) / wsum
            d_avg += w * (state.dual - d_avg) / wsum
            x = state.primal
            cost_avg += w * (float(c @ x + 0.5 * qd @ (x * x)) + tail - cost_avg) / wsum
        self.warm[t] = state
        return p_avg, d_avg, cost_avg


def dsa_solve(problem: MultistageProblem, schedule: DsaSchedule, seed: int = 0, check: bool = True) -> DsaResult:
    """Nested primal-dual loops; returns the averaged first-stage decision.

    The objective estimate is the first-stage cost of the averaged decision
    plus the running average of the sampled later-stage costs.  It is a
    rough figure: the later-stage costs come from iterates, not from an
    exact recourse solve.  ``check=False`` skips the per-step optimality
    residuals (``max_residual`` then stays 0).
    """
    if problem.markov:
        raise ValueError("DSA here samples stagewise-independent data")
    if len(schedule.sizes) != problem.horizon:
        raise ValueError(f"schedule has {len(schedule.sizes)} loop sizes for a {problem.horizon}-stage problem")
    T = problem.horizon
    if T > 3:
        warnings.warn(
            f"DSA with {T} stages draws {math.prod(schedule.sizes[1:-1])} times more samples per outer step than with 3; "
            "the sample count grows exponentially with the horizon",
            RuntimeWarning,
            stacklevel=2,
        )
    for t, st in enumerate(problem.stages):
        for r in st.realizations:
            _diagonal(r.q, st.n)  # refuses non-separable costs up front
    run = _Runner(problem, schedule, seed, check)
    first = run.stages[0]
    A1, _, b1, c1, q1 = first.data[0]
    rule = schedule.rules[0]
    state = run.warm[0]
    wsum = 0.0
    x_avg = np.zeros(first.n)
    later = 0.0
    for k in range(1, schedule.sizes[0] + 1):
        qprime = np.zeros(first.n)
        tail = 0.0
        if T > 1:
            j = run.draw(1)
            _, y2, tail = run.loop(1, j, state.primal)
            qprime = -(run.stages[1].data[j][1].T @ y2)
        prm = rule.params(k)
        step = _spdt_core(state, qprime, b1, A1, c1, q1, first.lb, first.ub, prm.theta, prm.tau, prm.eta, check)
        run.calls += 1
        run.max_residual = max(run.max_residual, step.residual)
        state = step.state
        w = rule.weight(k)
        wsum += w
        x_avg += w * (state.primal - x_avg) / wsum
        later += w * (tail - later) / wsum
    x_bar = x_avg
    feas = float(np.linalg.norm(A1 @ x_bar - b1)) if b1.size else 0.0
    counts = [schedule.sizes[0]]
    for s in schedule.sizes[1:-1]:
        counts.append(counts[-1] * s)
    run.log.insert(0, f"schedule {schedule.echo()}")
    run.log.append("samples per stage " + " ".join(str(v) for v in counts))
    return DsaResult(
        first_stage=x_bar,
        objective_estimate=float(c1 @ x_bar + 0.5 * q1 @ (x_bar * x_bar)) + later,
        feasibility_residual=feas,
        sample_counts=counts,
        spdt_calls=run.calls,
        max_residual=run.max_residual,
        clip_events=run.clips,
        schedule=schedule.echo(),
        log=run.log,
    )


def subgrad_certificate(x_bar, y_bar, y_star, u, A, B, b, c, box, q=None) -> float:
    """Gap of ``(x_bar, y_bar)`` against the comparator dual ``y_star`` for a last-stage piece.

    It is the largest value over the box of::

        <y_star, b - B u - A x_bar> + f(x_bar) - <y_bar, b - B u - A x> - f(x)

    and is infinite when the box is unbounded in an improving direction.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    n = x_bar.size
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()
    shift = b if u is None or B is None else b - np.asarray(B, dtype=float).reshape(b.size, -1) @ np.asarray(u, dtype=float)
    lb, ub = _box(box, n)
    qd = _diagonal(q, n)
    c = np.asarray(c, dtype=float)
    y_bar = np.asarray(y_bar, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    f_bar = float(c @ x_bar + 0.5 * qd @ (x_bar * x_bar))
    # minimize (c - A^T y_bar) x + q x^2 / 2 coordinate by coordinate
    lin = c - A.T @ y_bar
    inner = 0.0
    for i in range(n):
        if qd[i] > 0:
            z = min(max(-lin[i] / qd[i], lb[i]), ub[i])
            inner += lin[i] * z + 0.5 * qd[i] * z * z
        elif lin[i] > 0:
            inner += lin[i] * lb[i] if np.isfinite(lb[i]) else -math.inf
        elif lin[i] < 0:
            inner += lin[i] * ub[i] if np.isfinite(ub[i]) else -math.inf
    if inner == -math.inf:
        return math.inf
    return float(y_star @ (shift - A @ x_bar)) + f_bar - float(y_bar @ shift) - inner
