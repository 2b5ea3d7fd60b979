"""Exact LP oracle by vertex enumeration in rational arithmetic.

Infinite bounds are replaced by a large box; an LP is declared unbounded
when doubling that box strictly lowers the optimum.
"""

from fractions import Fraction
from itertools import product

BIG = Fraction(10**7)


def _solve_unique(cols, rows_rhs, k):
    """Gaussian elimination on [cols | rhs] with k unknowns; unique solution or None."""
    m = len(rows_rhs)
    mat = [list(r) + [rhs] for r, rhs in zip(cols, rows_rhs)]
    pivot_cols = []
    r = 0
    for c in range(k):
        piv = next((i for i in range(r, m) if mat[i][c] != 0), None)
        if piv is None:
            return None  # free column direction not determined
        mat[r], mat[piv] = mat[piv], mat[r]
        pv = mat[r][c]
        mat[r] = [v / pv for v in mat[r]]
        for i in range(m):
            if i != r and mat[i][c] != 0:
                f = mat[i][c]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        pivot_cols.append(c)
        r += 1
    for i in range(r, m):
        if mat[i][k] != 0:
            return None  # inconsistent
    return [mat[i][k] for i in range(k)]


def _best_vertex(c, A, b, lb, ub):
    n = len(c)
    m = len(b)
    best = None
    for states in product((0, 1, 2), repeat=n):
        fixed = {}
        ok = True
        for j, s in enumerate(states):
            if s == 0:
                fixed[j] = lb[j]
            elif s == 1:
                if ub[j] == lb[j]:
                    ok = False
                    break
                fixed[j] = ub[j]
        if not ok:
            continue
        free = [j for j in range(n) if states[j] == 2]
        rhs = [b[i] - sum(A[i][j] * v for j, v in fixed.items()) for i in range(m)]
        if free:
            rows = [[A[i][j] for j in free] for i in range(m)]
            sol = _solve_unique(rows, rhs, len(free))
            if sol is None:
                continue
            x = dict(fixed)
            for j, v in zip(free, sol):
                if v < lb[j] or v > ub[j]:
                    ok = False
                    break
                x[j] = v
            if not ok:
                continue
        else:
            if any(v != 0 for v in rhs):
                continue
            x = fixed
        val = sum(c[j] * x[j] for j in range(n))
        if best is None or val < best:
            best = val
    return best


def oracle_solve(c, A, b, lb, ub):
    """Return ("optimal", value) | ("infeasible", None) | ("unbounded", None)."""
    import math

    def frac(v):
        return Fraction(v).limit_denominator(10**12) if math.isfinite(v) else None

    c = [Fraction(v) for v in c]
    A = [[Fraction(v) for v in row] for row in A]
    b = [Fraction(v) for v in b]
    lbs = [frac(v) for v in lb]
    ubs = [frac(v) for v in ub]

    def boxed(big):
        lo = [v if v is not None else -big for v in lbs]
        hi = [v if v is not None else big for v in ubs]
        return lo, hi

    v1 = _best_vertex(c, A, b, *boxed(BIG))
    if v1 is None:
        return "infeasible", None
    if all(v is not None for v in lbs + ubs):
        return "optimal", v1
    v2 = _best_vertex(c, A, b, *boxed(2 * BIG))
    if v2 < v1:
        return "unbounded", None
    return "optimal", v1
