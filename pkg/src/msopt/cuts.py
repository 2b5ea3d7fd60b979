"""Pools of affine minorants ``alpha + beta @ x`` and their text checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEDUP_TOL = 1e-10


@dataclass(frozen=True)
class Cut:
    alpha: float
    beta: np.ndarray
    iteration: int = 0

    def __call__(self, x) -> float:
        return float(self.alpha + self.beta @ np.asarray(x, dtype=float))


class CutPool:
    """Max-of-affine lower approximation of a convex function.

    The pool starts with the constant cut ``floor`` unless ``floor`` is None.
    Cuts are only ever appended, so evaluation is monotone in pool size.
    """

    def __init__(self, dim: int, floor: float | None = 0.0, stage: int = 0, node: int = 0):
        self.dim = int(dim)
        self.stage = stage
        self.node = node
        self.floor = floor
        self._alphas: list[float] = []
        self._betas: list[np.ndarray] = []
        self._tags: list[int] = []
        self._cache = None
        if floor is not None:
            self.add(Cut(float(floor), np.zeros(self.dim), 0))

    def __len__(self):
        return len(self._alphas)

    def __iter__(self):
        for a, b, k in zip(self._alphas, self._betas, self._tags):
            yield Cut(a, b, k)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            betas = np.array(self._betas).reshape(len(self._alphas), self.dim)
            self._cache = (np.array(self._alphas), betas)
        return self._cache

    def add(self, cut: Cut) -> bool:
        """Append ``cut`` unless a near-identical cut is present; returns True if added."""
        beta = np.asarray(cut.beta, dtype=float).ravel()
        if beta.size != self.dim:
            raise ValueError(f"cut gradient has dimension {beta.size}, pool expects {self.dim}")
        if not np.isfinite(cut.alpha) or not np.all(np.isfinite(beta)):
            raise ValueError("cut coefficients must be finite")
        if self._alphas:
            alphas, betas = self.arrays()
            close = (np.abs(alphas - cut.alpha) <= DEDUP_TOL) & np.all(
                np.abs(betas - beta) <= DEDUP_TOL, axis=1
            )
            if close.any():
                return False
        self._alphas.append(float(cut.alpha))
        self._betas.append(beta.copy())
        self._tags.append(int(cut.iteration))
        self._cache = None
        return True

    def evaluate(self, x) -> tuple[float, int]:
        if not self._alphas:
            raise ValueError("cannot evaluate an empty cut pool")
        alphas, betas = self.arrays()
        vals = alphas + betas @ np.asarray(x, dtype=float).ravel()
        i = int(np.argmax(vals))
        return float(vals[i]), i

    def value(self, x) -> float:
        return self.evaluate(x)[0]

    def subgradient(self, x) -> np.ndarray:
        _, i = self.evaluate(x)
        return self._betas[i].copy()

    def max_gradient_norm(self) -> float:
        if not self._alphas:
            return 0.0
        return float(np.linalg.norm(self.arrays()[1], axis=1).max())

    def copy(self) -> "CutPool":
        other = CutPool(self.dim, None, self.stage, self.node)
        other.floor = self.floor
        other._alphas = list(self._alphas)
        other._betas = [b.copy() for b in self._betas]
        other._tags = list(self._tags)
        return other

    def same_cuts(self, other: "CutPool") -> bool:
        if len(self) != len(other):
            return False
        a1, b1 = self.arrays()
        a2, b2 = other.arrays()
        return bool(np.array_equal(a1, a2) and np.array_equal(b1, b2))


# Free-function spellings of the pool operations.
def evaluate(pool: CutPool, x) -> tuple[float, int]:
    return pool.evaluate(x)


def add_cut(pool: CutPool, cut: Cut) -> CutPool:
    pool.add(cut)
    return pool


def subgradient_at(pool: CutPool, x) -> np.ndarray:
    return pool.subgradient(x)


def dump_pools(pools) -> str:
    """One line per cut: ``stage node iteration alpha beta...`` with round-trip floats."""
    lines = []
    for pool in pools:
        lines.append(f"# pool {pool.stage} {pool.node} {pool.dim}")
        for cut in pool:
            coeffs = " ".join(repr(float(v)) for v in cut.beta)
            lines.append(f"{pool.stage} {pool.node} {cut.iteration} {float(cut.alpha)!r} {coeffs}".rstrip())
    return "\n".join(lines) + "\n"


def load_pools(text: str) -> list[CutPool]:
    pools: list[CutPool] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# pool"):
            _, _, stage, node, dim = line.split()
            pools.append(CutPool(int(dim), None, int(stage), int(node)))
            continue
        parts = line.split()
        pool = pools[-1]
        alpha = float(parts[3])
        beta = np.array([float(v) for v in parts[4:]], dtype=float)
        # bypass dedup so a checkpoint restores exactly what was written
        pool._alphas.append(alpha)
        pool._betas.append(beta.reshape(pool.dim))
        pool._tags.append(int(parts[2]))
        pool._cache = None
    return pools
