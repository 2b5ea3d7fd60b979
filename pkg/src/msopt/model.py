"""Problem data for linear multistage stochastic programs and SOC models.

Stage ``t`` (0-based) of a :class:`MultistageProblem` reads::

    min  c @ x_t   s.t.  B @ x_{t-1} + A @ x_t == b,   lb <= x_t <= ub

with one ``(c, A, B, b)`` tuple per realization.  Under a Markov lattice the
realizations of a stage are the lattice nodes and ``p`` is ignored in favour
of the transition matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .lp import LpProblem

DEFAULT_NODE_CAP = 10_000


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


def _mat(v, rows: int, cols: int) -> np.ndarray:
    """2-d float array; flat input is split into ``rows`` rows, empty input gets ``cols`` columns."""
    a = np.asarray(v, dtype=float)
    if a.size == 0:
        return np.zeros((rows, cols))
    if a.ndim < 2:
        return a.reshape(rows, -1) if a.size % max(rows, 1) == 0 else np.atleast_2d(a)
    return a


@dataclass
class StageRealization:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    B: np.ndarray | None = None
    p: float = 1.0
    q: np.ndarray | None = None  # optional diagonal quadratic cost (DSA only)

    def __post_init__(self):
        self.c = _vec(self.c)
        self.b = _vec(self.b)
        self.A = _mat(self.A, self.b.size, self.c.size)
        if self.B is not None:
            self.B = _mat(self.B, self.b.size, 0)
        if self.q is not None:
            self.q = _vec(self.q)
        self.p = float(self.p)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def linking(self, n_prev: int) -> np.ndarray:
        return np.zeros((self.m, n_prev)) if self.B is None else self.B


@dataclass
class StageBlock:
    realizations: list[StageRealization]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        n = self.realizations[0].n if self.realizations else 0
        self.lb = np.zeros(n) if self.lb is None else _vec(self.lb)
        self.ub = np.full(n, np.inf) if self.ub is None else _vec(self.ub)

    @property
    def n(self) -> int:
        return self.lb.size

    @property
    def probs(self) -> np.ndarray:
        return np.array([r.p for r in self.realizations])

    def __len__(self):
        return len(self.realizations)


@dataclass
class MarkovLattice:
    """Node centers per stage and row-stochastic transitions between stages."""

    centers: list[np.ndarray]
    transitions: list[np.ndarray]

    def __post_init__(self):
        self.centers = [np.atleast_2d(np.asarray(c, dtype=float)) for c in self.centers]
        self.transitions = [np.atleast_2d(np.asarray(P, dtype=float)) for P in self.transitions]

    def nearest(self, t: int, xi) -> int:
        d = np.linalg.norm(self.centers[t] - _vec(xi), axis=1)
        return int(np.argmin(d))


@dataclass
class MultistageProblem:
    stages: list[StageBlock]
    lattice: MarkovLattice | None = None
    name: str = ""

    @property
    def horizon(self) -> int:
        return len(self.stages)

    @property
    def markov(self) -> bool:
        return self.lattice is not None

    def child_weights(self, t: int, node: int) -> np.ndarray:
        """Probabilities of stage ``t+1`` realizations given node ``node`` at stage ``t``."""
        if self.lattice is None:
            return self.stages[t + 1].probs
        return self.lattice.transitions[t][node]

    def stage_lp(self, t: int, j: int) -> tuple[LpProblem, np.ndarray | None]:
        st = self.stages[t]
        r = st.realizations[j]
        B = None if t == 0 else r.linking(self.stages[t - 1].n)
        return LpProblem(r.c, r.A, r.b, st.lb, st.ub), B

    def deterministic_rhs_only(self) -> bool:
        """True when c, A and B are identical across realizations of every stage."""
        for st in self.stages:
            r0 = st.realizations[0]
            for r in st.realizations[1:]:
                if not (np.array_equal(r.c, r0.c) and np.array_equal(r.A, r0.A)):
                    return False
                if (r.B is None) != (r0.B is None):
                    return False
                if r.B is not None and not np.array_equal(r.B, r0.B):
                    return False
        return True


# --------------------------------------------------------------------------
# validation


def validate(problem: MultistageProblem) -> list[str]:
    """Describe every violated structural rule; an empty list means well-formed."""
    issues: list[str] = []
    T = problem.horizon
    if T < 2:
        issues.append(f"horizon {T} is below 2")
    n_prev = None
    for t, st in enumerate(problem.stages):
        label = f"stage {t + 1}"
        if not st.realizations:
            issues.append(f"{label}: no realizations")
            n_prev = st.n
            continue
        if t == 0 and len(st.realizations) != 1:
            issues.append(f"{label}: first stage must have exactly one realization")
        n = st.n
        if st.ub.size != n:
            issues.append(f"{label}: lb has {n} entries but ub has {st.ub.size}")
        if np.any(~np.isfinite(st.lb)):
            issues.append(f"{label}: lower bounds must be finite")
        if st.ub.size == n and np.any(st.lb > st.ub):
            issues.append(f"{label}: lower bound above upper bound")
        m0 = st.realizations[0].m
        for j, r in enumerate(st.realizations):
            where = f"{label} realization {j + 1}"
            if r.n != n:
                issues.append(f"{where}: cost has {r.n} entries, stage has {n} variables")
            if r.m != m0:
                issues.append(f"{where}: {r.m} rows, first realization has {m0}")
            if r.A.shape != (r.m, r.n):
                issues.append(f"{where}: A has shape {r.A.shape}")
            if t == 0:
                if r.B is not None and r.B.size and np.any(r.B != 0):
                    issues.append(f"{where}: first stage must not have a linking matrix")
            elif r.B is None:
                issues.append(f"{where}: missing linking matrix B")
            elif n_prev is not None and r.B.shape[1] != n_prev:
                issues.append(
                    f"{where}: dimension mismatch, B has {r.B.shape[1]} columns but stage {t} has {n_prev} variables"
                )
            if not problem.markov and r.p <= 0:
                issues.append(f"{where}: probability {r.p:g} is not positive")
            if r.q is not None and r.q.size != n:
                issues.append(f"{where}: quadratic cost has {r.q.size} entries")
        if not problem.markov:
            total = float(sum(r.p for r in st.realizations))
            if abs(total - 1.0) > 1e-12:
                issues.append(f"{label}: probability sum {total:.12g}")
        n_prev = n
    if problem.markov:
        issues.extend(_validate_lattice(problem))
    return issues


def _validate_lattice(problem: MultistageProblem) -> list[str]:
    lat = problem.lattice
    issues = []
    T = problem.horizon
    if len(lat.centers) != T:
        issues.append(f"lattice has centers for {len(lat.centers)} stages, horizon is {T}")
    if len(lat.transitions) != T - 1:
        issues.append(f"lattice has {len(lat.transitions)} transition matrices, expected {T - 1}")
        return issues
    for t in range(T - 1):
        P = lat.transitions[t]
        n_from = len(problem.stages[t].realizations)
        n_to = len(problem.stages[t + 1].realizations)
        if P.shape != (n_from, n_to):
            issues.append(f"transition {t + 1}->{t + 2}: shape {P.shape}, expected {(n_from, n_to)}")
            continue
        if np.any(P < 0):
            issues.append(f"transition {t + 1}->{t + 2}: negative entry")
        for i, row in enumerate(P):
            s = float(row.sum())
            if abs(s - 1.0) > 1e-12:
                issues.append(f"transition {t + 1}->{t + 2} row {i + 1}: probability sum {s:.12g}")
    for t, C in enumerate(lat.centers[:T]):
        if C.shape[0] != len(problem.stages[t].realizations):
            issues.append(f"stage {t + 1}: {C.shape[0]} centers for {len(problem.stages[t].realizations)} nodes")
    return issues


# --------------------------------------------------------------------------
# autoregressive lifting


def lift_autoregressive(base: MultistageProblem, Phi, mu, noise) -> MultistageProblem:
    """Append the AR(1) right-hand-side process to the decision vector.

    ``noise[t]`` is a pair ``(values, probs)`` for stages ``t >= 1``; entry 0
    is ignored because the first-stage rhs is deterministic.  The lifted stage
    carries ``(x_t, xi_t)`` with rows ``B x_{t-1} + A x_t - xi_t = 0`` and
    ``xi_t - Phi xi_{t-1} = mu + eps_t``.  The box on ``xi_t`` is the interval
    hull of its reachable values, so every lower bound stays finite.
    """
    if base.markov:
        raise ValueError("lifting expects a stagewise-independent base problem")
    if not base.deterministic_rhs_only():
        raise ValueError("only the right-hand side may be random in an autoregressive lift")
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    mu = _vec(mu)
    d = mu.size
    if Phi.shape != (d, d):
        raise ValueError(f"Phi has shape {Phi.shape}, expected {(d, d)}")
    for t, st in enumerate(base.stages):
        if st.realizations[0].m != d:
            raise ValueError(f"stage {t + 1} has {st.realizations[0].m} rows, process dimension is {d}")

    xi1 = base.stages[0].realizations[0].b
    lo, hi = xi1.copy(), xi1.copy()
    Ppos, Pneg = np.maximum(Phi, 0), np.minimum(Phi, 0)
    eye = np.eye(d)
    stages = []
    for t, st in enumerate(base.stages):
        r0 = st.realizations[0]
        n = r0.n
        c = np.concatenate([r0.c, np.zeros(d)])
        A = np.block([[r0.A, -eye], [np.zeros((d, n)), eye]])
        if t == 0:
            reals = [StageRealization(c, A, np.concatenate([np.zeros(d), xi1]), None, 1.0)]
        else:
            vals, probs = noise[t]
            vals = np.asarray(vals, dtype=float).reshape(len(probs), d)
            n_prev = base.stages[t - 1].n
            B = np.block([[r0.linking(n_prev), np.zeros((d, d))], [np.zeros((d, n_prev)), -Phi]])
            reals = [
                StageRealization(c, A, np.concatenate([np.zeros(d), mu + e]), B, p)
                for e, p in zip(vals, probs)
            ]
            lo, hi = (
                mu + vals.min(axis=0) + Ppos @ lo + Pneg @ hi,
                mu + vals.max(axis=0) + Ppos @ hi + Pneg @ lo,
            )
        stages.append(StageBlock(reals, np.concatenate([st.lb, lo]), np.concatenate([st.ub, hi])))
    return MultistageProblem(stages, name=(base.name + "+ar1").lstrip("+"))


# --------------------------------------------------------------------------
# extensive form


@dataclass
class TreeNode:
    stage: int
    parent: int  # -1 for the root
    index: int  # realization (or lattice node) index within the stage
    prob: float
    cols: slice = field(default_factory=lambda: slice(0, 0))


def scenario_tree(problem: MultistageProblem, cap: int = DEFAULT_NODE_CAP) -> list[TreeNode]:
    """Breadth-first node list; children of a node follow the stage realizations."""
    sizes = [len(st) for st in problem.stages]
    if not problem.markov:
        count = sum(int(np.prod(sizes[1 : t + 1])) for t in range(problem.horizon))
        if count > cap:
            raise ValueError(f"scenario tree has {count} nodes, above the cap of {cap}")
    nodes = [TreeNode(0, -1, 0, 1.0)]
    frontier = [0]
    for t in range(1, problem.horizon):
        nxt = []
        for parent in frontier:
            w = problem.child_weights(t - 1, nodes[parent].index)
            for j, pj in enumerate(w):
                if pj <= 0:
                    continue
                nodes.append(TreeNode(t, parent, j, nodes[parent].prob * pj))
                nxt.append(len(nodes) - 1)
                if len(nodes) > cap:
                    raise ValueError(f"scenario tree exceeds the cap of {cap} nodes")
        frontier = nxt
    return nodes


@dataclass
class ExtensiveForm:
    lp: LpProblem
    nodes: list[TreeNode]

    def first_stage(self, x: np.ndarray) -> np.ndarray:
        return x[self.nodes[0].cols]


def to_extensive_form(problem: MultistageProblem, cap: int = DEFAULT_NODE_CAP) -> ExtensiveForm:
    """Deterministic equivalent over the full scenario tree."""
    nodes = scenario_tree(problem, cap)
    n_cols = sum(problem.stages[nd.stage].n for nd in nodes)
    n_rows = sum(problem.stages[nd.stage].realizations[nd.index].m for nd in nodes)
    A = np.zeros((n_rows, n_cols))
    b = np.zeros(n_rows)
    c = np.zeros(n_cols)
    lb = np.zeros(n_cols)
    ub = np.zeros(n_cols)
    col = row = 0
    for nd in nodes:
        st = problem.stages[nd.stage]
        r = st.realizations[nd.index]
        nd.cols = slice(col, col + st.n)
        rows = slice(row, row + r.m)
        A[rows, nd.cols] = r.A
        if nd.parent >= 0:
            A[rows, nodes[nd.parent].cols] = r.linking(problem.stages[nd.stage - 1].n)
        b[rows] = r.b
        c[nd.cols] = nd.prob * r.c
        lb[nd.cols] = st.lb
        ub[nd.cols] = st.ub
        col += st.n
        row += r.m
    return ExtensiveForm(LpProblem(c, A, b, lb, ub), nodes)


# --------------------------------------------------------------------------
# SOC models


@dataclass
class AffinePieces:
    """``max_k const[k] + gx[k] @ x + gu[k] @ u``; ``gu`` may have zero columns."""

    const: np.ndarray
    gx: np.ndarray
    gu: np.ndarray | None = None

    def __post_init__(self):
        self.const = _vec(self.const)
        k = self.const.size
        self.gx = np.asarray(self.gx, dtype=float).reshape(k, -1)
        if self.gu is None:
            self.gu = np.zeros((k, 0))
        self.gu = np.asarray(self.gu, dtype=float).reshape(k, -1)

    def __len__(self):
        return self.const.size

    def values(self, x, u=None) -> np.ndarray:
        v = self.const + self.gx @ _vec(x)
        if self.gu.shape[1]:
            v = v + self.gu @ _vec(u)
        return v

    def evaluate(self, x, u=None) -> tuple[float, int]:
        v = self.values(x, u)
        i = int(np.argmax(v))
        return float(v[i]), i


@dataclass
class SocRealization:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    cost: AffinePieces
    p: float = 1.0

    def __post_init__(self):
        self.b = _vec(self.b)
        n = self.b.size
        self.A = np.asarray(self.A, dtype=float).reshape(n, n)
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.p = float(self.p)

    def step(self, x, u) -> np.ndarray:
        return self.A @ _vec(x) + self.B @ _vec(u) + self.b


@dataclass
class SocStage:
    realizations: list[SocRealization]
    u_lb: np.ndarray
    u_ub: np.ndarray

    def __post_init__(self):
        self.u_lb = _vec(self.u_lb)
        self.u_ub = _vec(self.u_ub)

    @property
    def probs(self) -> np.ndarray:
        return np.array([r.p for r in self.realizations])


@dataclass
class SocProblem:
    stages: list[SocStage]
    terminal: AffinePieces
    x1: np.ndarray

    def __post_init__(self):
        self.x1 = _vec(self.x1)

    @property
    def horizon(self) -> int:
        return len(self.stages)

    @property
    def n(self) -> int:
        return self.x1.size


def validate_soc(problem: SocProblem) -> list[str]:
    issues = []
    n = problem.n
    for t, st in enumerate(problem.stages):
        label = f"control stage {t + 1}"
        m = st.u_lb.size
        if st.u_ub.size != m:
            issues.append(f"{label}: control bounds disagree in size")
        if np.any(~np.isfinite(st.u_lb)) or np.any(~np.isfinite(st.u_ub)):
            issues.append(f"{label}: control box must be bounded")
        if not st.realizations:
            issues.append(f"{label}: no realizations")
        total = sum(r.p for r in st.realizations)
        if abs(total - 1.0) > 1e-12:
            issues.append(f"{label}: probability sum {total:.12g}")
        for j, r in enumerate(st.realizations):
            where = f"{label} realization {j + 1}"
            if r.A.shape != (n, n) or r.b.size != n:
                issues.append(f"{where}: dynamics do not match state dimension {n}")
            if r.B.shape != (n, m):
                issues.append(f"{where}: control matrix has shape {r.B.shape}")
            if len(r.cost) == 0:
                issues.append(f"{where}: empty cost")
            elif r.cost.gx.shape[1] != n or r.cost.gu.shape[1] != m:
                issues.append(f"{where}: cost pieces have the wrong dimensions")
    if len(problem.terminal) == 0 or problem.terminal.gx.shape[1] != n:
        issues.append("terminal cost pieces do not match the state dimension")
    return issues


def iter_paths(problem: MultistageProblem):
    """Yield (probability, realization indices) for every scenario path."""
    sizes = [range(len(st)) for st in problem.stages[1:]]
    for combo in itertools.product(*sizes):
        p = 1.0
        node = 0
        for t, j in enumerate(combo):
            p *= problem.child_weights(t, node)[j]
            node = j
        if p > 0:
            yield p, (0,) + combo
