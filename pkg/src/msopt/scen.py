"""Scenario models from data: quantization, lattice transitions and SAA draws."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import MarkovLattice, StageBlock, StageRealization
from .rng import stream

log = logging.getLogger(__name__)

MAX_SWEEPS = 500
REL_TOL = 1e-9


def _points(samples) -> np.ndarray:
    a = np.asarray(samples, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("samples must be a list of points")
    return a


def assign(points, centers) -> np.ndarray:
    """Index of the nearest center for every point; ties go to the lowest index."""
    pts, ctr = _points(points), _points(centers)
    d2 = ((pts[:, None, :] - ctr[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def distortion(points, centers) -> float:
    """Mean squared distance to the nearest center."""
    pts, ctr = _points(points), _points(centers)
    d2 = ((pts[:, None, :] - ctr[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean())


@dataclass
class CenterFit:
    centers: np.ndarray
    distortion: float
    sweeps: int
    history: list[float] = field(default_factory=list)
    repairs: int = 0


def _seed_centers(pts: np.ndarray, k: int, rng) -> np.ndarray:
    chosen = [int(rng.integers(len(pts)))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        nxt = min(nxt, len(pts) - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return pts[chosen].copy()


def fit_centers(samples, count: int, seed: int = 0, stage: int = 0) -> CenterFit:
    """Lloyd iterations from k-means++ seeding.

    A cell that loses all its points is reseeded at the point farthest from
    its current center.  Stops when a sweep improves the distortion by less
    than ``1e-9`` relative, or after 500 sweeps.  Centers are returned in
    lexicographic order.
    """
    pts = _points(samples)
    if count < 1:
        raise ValueError("need at least one center")
    if len(np.unique(pts, axis=0)) < count:
        raise ValueError(f"{count} centers need at least {count} distinct samples")
    rng = stream(seed, "kmeans", stage)
    centers = _seed_centers(pts, count, rng)
    history = [distortion(pts, centers)]
    repairs = 0
    sweeps = 0
    while sweeps < MAX_SWEEPS:
        sweeps += 1
        labels = assign(pts, centers)
        new = centers.copy()
        for k in range(count):
            members = pts[labels == k]
            if len(members):
                new[k] = members.mean(axis=0)
        for k in range(count):
            if not np.any(labels == k):
                far = int(np.argmax(((pts - new[labels]) ** 2).sum(axis=1)))
                new[k] = pts[far]
                labels[far] = k
                repairs += 1
        value = distortion(pts, new)
        prev = history[-1]
        if value > prev:
            break  # rounding noise; keep the better centers
        centers = new
        history.append(value)
        if prev - value <= REL_TOL * max(prev, 1e-300):
            break
    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    return CenterFit(centers, history[-1], sweeps, history, repairs)


@dataclass
class TransitionEstimate:
    matrix: np.ndarray
    counts: np.ndarray
    smoothed_rows: list[int]


def _normalize_row(row: np.ndarray) -> np.ndarray:
    """Scale to probabilities whose correctly rounded sum is exactly 1."""
    out = row / row.sum()
    k = int(np.argmax(out))
    out[k] = 1.0 - math.fsum(np.delete(out, k))
    # fsum is monotone in each entry, so a few ulp steps settle any residue
    for _ in range(8):
        total = math.fsum(out)
        if total == 1.0:
            break
        out[k] = np.nextafter(out[k], -np.inf if total > 1.0 else np.inf)
    return out


def estimate_transitions(current, following, centers_now, centers_next) -> TransitionEstimate:
    """Empirical transition frequencies between the cells of two stages.

    A row with no observations gets one pseudo-count per destination (a
    uniform row), and its index is reported and logged.
    """
    cur, nxt = _points(current), _points(following)
    if len(cur) != len(nxt):
        raise ValueError("current and following samples must be paired")
    src = assign(cur, centers_now)
    dst = assign(nxt, centers_next)
    n_src, n_dst = len(_points(centers_now)), len(_points(centers_next))
    counts = np.zeros((n_src, n_dst))
    np.add.at(counts, (src, dst), 1.0)
    P = np.zeros_like(counts)
    smoothed = []
    for i in range(n_src):
        row = counts[i]
        if row.sum() == 0:
            row = np.ones(n_dst)
            smoothed.append(i)
            log.warning("cell %d has no observed transitions; using a uniform row", i)
        P[i] = _normalize_row(row)
    return TransitionEstimate(P, counts, smoothed)


# --------------------------------------------------------------------------
# series and lattices


def read_series(path) -> np.ndarray:
    """One row per time step; a header row is skipped when it is not numeric."""
    rows = []
    with Path(path).open(newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                if i == 0 and not rows:
                    continue
                raise ValueError(f"{path}: row {i + 1} is not numeric") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have different lengths {sorted(widths)}")
    return np.array(rows)


@dataclass
class LatticeFit:
    lattice: MarkovLattice
    fits: list[CenterFit]
    transitions: list[TransitionEstimate]


def fit_lattice(series, clusters: int, period: int = 1, horizon: int | None = None, seed: int = 0) -> LatticeFit:
    """Quantize a historical series into a Markov lattice.

    Observation ``s`` belongs to phase ``s mod period``; each phase gets its
    own centers and consecutive observations give the transition counts
    from one phase to the next.  The lattice has ``horizon`` stages (one
    cycle by default), stage ``t`` reusing phase ``t mod period``.  The first
    stage is collapsed to the single mean point of its phase, because a
    multistage problem starts from one known node.
    """
    data = _points(series)
    if period < 1:
        raise ValueError("period must be at least 1")
    T = period if horizon is None else int(horizon)
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if len(data) < 2 * period:
        raise ValueError("the series must cover at least two full periods")
    phase_of = np.arange(len(data)) % period
    fits = [fit_centers(data[phase_of == k], clusters, seed, stage=k) for k in range(period)]
    estimates = []
    for k in range(period):
        idx = np.flatnonzero(phase_of[:-1] == k)
        estimates.append(estimate_transitions(data[idx], data[idx + 1], fits[k].centers, fits[(k + 1) % period].centers))
    centers = [data[phase_of == 0].mean(axis=0, keepdims=True)]
    transitions = []
    for t in range(1, T):
        centers.append(fits[t % period].centers)
        if t == 1:
            transitions.append(_first_row(data, fits, period))
        else:
            transitions.append(estimates[(t - 1) % period].matrix)
    return LatticeFit(MarkovLattice(centers, transitions), fits, estimates)


def _first_row(data, fits, period) -> np.ndarray:
    # the root node moves to the phase-1 cells with their empirical frequencies
    phase = np.arange(len(data)) % period
    labels = assign(data[phase == 1 % period], fits[1 % period].centers)
    counts = np.bincount(labels, minlength=len(fits[1 % period].centers)).astype(float)
    return _normalize_row(counts)[None, :]


# --------------------------------------------------------------------------
# sample average approximation


def saa_sample(generator: dict, count: int, seed: int = 0, stage: int = 0) -> np.ndarray:
    """``count`` iid draws (rows) from a built-in generator.

    ``{"kind": "discrete", "values": [...], "probs": [...]}``,
    ``{"kind": "uniform", "low": [...], "high": [...]}`` or
    ``{"kind": "gaussian", "mean": [...], "cov": [[...]]}`` (``std`` for a
    diagonal covariance).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = stream(seed, "saa", stage)
    kind = generator.get("kind")
    if kind == "discrete":
        values = _points(generator["values"])
        probs = np.asarray(generator.get("probs", np.full(len(values), 1.0 / len(values))), dtype=float)
        if probs.size != len(values) or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ValueError("discrete generator needs one nonnegative probability per value, summing to 1")
        idx = rng.choice(len(values), size=count, p=probs / probs.sum())
        return values[idx].copy()
    if kind == "uniform":
        low = np.atleast_1d(np.asarray(generator["low"], dtype=float))
        high = np.atleast_1d(np.asarray(generator["high"], dtype=float))
        if low.shape != high.shape or np.any(low > high):
            raise ValueError("uniform generator needs matching low <= high")
        return rng.uniform(low, high, size=(count, low.size))
    if kind == "gaussian":
        mean = np.atleast_1d(np.asarray(generator["mean"], dtype=float))
        if "cov" in generator:
            cov = np.asarray(generator["cov"], dtype=float).reshape(mean.size, mean.size)
        else:
            cov = np.diag(np.atleast_1d(np.asarray(generator.get("std", 1.0), dtype=float)) ** 2 * np.ones(mean.size))
        return rng.multivariate_normal(mean, cov, size=count, method="cholesky")
    raise ValueError(f"unknown generator kind {kind!r}")


def saa_stage(template: StageRealization, draws, lb=None, ub=None, field_name: str = "b") -> StageBlock:
    """Stage block with one equally likely realization per draw.

    Each realization copies ``template`` and replaces ``field_name`` (``b``
    or ``c``) by the drawn vector.
    """
    pts = _points(draws)
    if field_name not in ("b", "c"):
        raise ValueError("draws can replace 'b' or 'c'")
    p = 1.0 / len(pts)
    reals = [replace(template, **{field_name: row.copy(), "p": p}) for row in pts]
    return StageBlock(reals, lb, ub)
