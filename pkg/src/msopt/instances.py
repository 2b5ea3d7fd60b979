"""Random and hand-made test instances with guaranteed complete recourse."""

from __future__ import annotations

import numpy as np

from .model import MultistageProblem, StageBlock, StageRealization


def random_instance(
    seed: int,
    horizon: int = 3,
    realizations: int = 2,
    n_decisions: int = 2,
    n_rows: int = 1,
    penalty: float = 3.0,
    box: float = 4.0,
    random_matrices: bool = False,
) -> MultistageProblem:
    """Linear multistage instance with elastic rows.

    Each stage holds ``n_decisions`` boxed decisions plus a surplus and a
    shortage column per row.  The elastic columns are bounded generously
    enough to absorb any residual, so every stage is feasible for every
    incoming state.
    """
    rng = np.random.default_rng(seed)
    ny, m = n_decisions, n_rows
    n = ny + 2 * m
    eye = np.eye(m)
    stages = []
    A_y = rng.uniform(0.5, 2.0, (m, ny)) * rng.choice([-1.0, 1.0], (m, ny), p=[0.3, 0.7])
    B_y = rng.uniform(-1.0, 1.0, (m, ny))
    c_y = rng.uniform(-1.0, 2.0, ny)
    for t in range(horizon):
        count = 1 if t == 0 else realizations
        reals = []
        for j in range(count):
            A = np.hstack([A_y if not random_matrices else A_y * rng.uniform(0.8, 1.2, A_y.shape), eye, -eye])
            B = None if t == 0 else np.hstack([B_y, np.zeros((m, 2 * m))])
            b = rng.uniform(0.0, 2.0 * box, m)
            c = np.concatenate([c_y + rng.uniform(-1.0, 1.0, ny), np.full(m, penalty), np.full(m, penalty)])
            reals.append(StageRealization(c, A, b, B, 1.0 / count))
        lb = np.zeros(n)
        slack_cap = 3.0 * box * (np.abs(A_y).sum(axis=1).max() + np.abs(B_y).sum(axis=1).max() + 1.0) + 3.0 * box
        ub = np.concatenate([np.full(ny, box), np.full(2 * m, slack_cap)])
        stages.append(StageBlock(reals, lb, ub))
    return MultistageProblem(stages, name=f"random-{seed}")


def acceptance_suite(count: int = 25, seed: int = 2024) -> list[MultistageProblem]:
    """Instances mixing horizons 3-4, 2-3 realizations and up to five columns per stage."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        T = int(rng.choice([3, 4]))
        N = int(rng.choice([2, 3]))
        m = int(rng.choice([1, 2]))
        ny = int(rng.integers(1, 5 - 2 * m + 1))
        out.append(random_instance(int(rng.integers(0, 2**31)), T, N, ny, m, random_matrices=bool(k % 2)))
    return out


def square_instance(seed: int, horizon: int = 3, realizations: int = 3, diameter: float = 1.0) -> MultistageProblem:
    """Two decisions per stage on a square of the given diagonal.

    The single row ``y + z - x_prev[0] / 2 = b`` always has a solution in
    the square because ``b`` stays within half the side length.
    """
    rng = np.random.default_rng(seed)
    side = diameter / np.sqrt(2.0)
    A = np.array([[1.0, 1.0]])
    B = np.array([[-0.5, 0.0]])
    lb, ub = np.zeros(2), np.full(2, side)
    stages = []
    for t in range(horizon):
        count = 1 if t == 0 else realizations
        reals = [
            StageRealization(rng.uniform(-1.0, 1.0, 2), A, [rng.uniform(0.0, side / 2)], None if t == 0 else B, 1.0 / count)
            for _ in range(count)
        ]
        stages.append(StageBlock(reals, lb, ub))
    return MultistageProblem(stages, name=f"square-{seed}")
