"""Finite-support coherent risk measures: expectation, AV@R and their mixture.

Every measure here is ``(1 - lam) * E[Z] + lam * AVaR_alpha(Z)``; the pure
expectation is ``lam = 0`` and pure AV@R is ``lam = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CoherentRisk:
    kind: str = "expectation"
    lam: float = 0.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("expectation", "avar", "combo"):
            raise ValueError(f"unknown risk kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.kind != "expectation" and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @classmethod
    def expectation(cls):
        return cls("expectation", 0.0, 0.5)

    @classmethod
    def avar(cls, alpha: float):
        return cls("avar", 1.0, alpha)

    @classmethod
    def combo(cls, lam: float, alpha: float):
        return cls("combo", lam, alpha)

    @property
    def weight(self) -> float:
        """Mixing weight on the AV@R part."""
        return {"expectation": 0.0, "avar": 1.0}.get(self.kind, self.lam)

    def to_dict(self) -> dict:
        if self.kind == "expectation":
            return {"kind": "expectation"}
        if self.kind == "avar":
            return {"kind": "avar", "alpha": self.alpha}
        return {"kind": "combo", "lambda": self.lam, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "CoherentRisk":
        kind = d.get("kind", "expectation").lower()
        if kind == "expectation":
            return cls.expectation()
        if kind == "avar":
            return cls.avar(float(d["alpha"]))
        return cls.combo(float(d["lambda"]), float(d["alpha"]))


def _arrays(Z, p):
    Z = np.asarray(Z, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if Z.size != p.size:
        raise ValueError("values and probabilities differ in length")
    return Z, p


def avar(Z, p, alpha: float) -> float:
    """Variational AV@R with the minimizing threshold searched over the atoms."""
    Z, p = _arrays(Z, p)
    excess = np.maximum(Z[None, :] - Z[:, None], 0.0) @ p
    return float(np.min(Z + excess / (1.0 - alpha)))


def evaluate(risk: CoherentRisk, Z, p) -> float:
    Z, p = _arrays(Z, p)
    mean = float(p @ Z)
    lam = risk.weight
    if lam == 0.0:
        return mean
    tail = avar(Z, p, risk.alpha)
    if lam == 1.0:
        return tail
    return (1.0 - lam) * mean + lam * tail


def avar_density(Z, p, alpha: float) -> np.ndarray:
    """Maximizing density for AV@R: the cap ``1/(1-alpha)`` fills the upper tail first."""
    Z, p = _arrays(Z, p)
    if np.all(Z == Z[0]):
        return np.ones_like(Z)
    cap = 1.0 / (1.0 - alpha)
    zeta = np.zeros_like(Z)
    remaining = 1.0
    # descending values, ties in index order
    for j in sorted(range(Z.size), key=lambda i: (-Z[i], i)):
        if remaining <= 0.0 or p[j] <= 0.0:
            continue
        zeta[j] = min(cap, remaining / p[j])
        remaining -= p[j] * zeta[j]
    return zeta


def risk_subgradient(risk: CoherentRisk, Z, p) -> np.ndarray:
    """Density ``zeta`` with ``sum p*zeta = 1`` attaining the risk value."""
    Z, p = _arrays(Z, p)
    lam = risk.weight
    if lam == 0.0:
        return np.ones_like(Z)
    tail = avar_density(Z, p, risk.alpha)
    if lam == 1.0:
        return tail
    return (1.0 - lam) + lam * tail


@dataclass(frozen=True)
class PsiForm:
    """``Psi(z, th) = (1-lam) z + lam (th + [z - th]_+ / (1-alpha))`` with ``th`` free."""

    lam: float = 0.0
    alpha: float = 0.5

    @classmethod
    def from_risk(cls, risk: CoherentRisk) -> "PsiForm":
        return cls(risk.weight, risk.alpha)

    @property
    def identity(self) -> bool:
        return self.lam == 0.0

    def __call__(self, z, theta):
        z = np.asarray(z, dtype=float)
        if self.lam == 0.0:
            return z * 1.0
        return (1.0 - self.lam) * z + self.lam * (theta + np.maximum(z - theta, 0.0) / (1.0 - self.alpha))

    def derivative(self, z, theta):
        """Partial derivative in ``z``; at the kink the lower endpoint ``1 - lam`` is returned."""
        z = np.asarray(z, dtype=float)
        low = 1.0 - self.lam
        high = low + self.lam / (1.0 - self.alpha)
        return np.where(z > theta, high, low)

    def expected(self, Z, p, theta) -> float:
        Z, p = _arrays(Z, p)
        return float(p @ self(Z, theta))

    def best_theta(self, Z, p) -> float:
        """A minimizer of ``E[Psi(Z, th)]``: the lower alpha-quantile of ``Z``."""
        Z, p = _arrays(Z, p)
        order = np.argsort(Z, kind="stable")
        cdf = np.cumsum(p[order])
        k = int(np.searchsorted(cdf, self.alpha - 1e-15, side="left"))
        return float(Z[order[min(k, Z.size - 1)]])


def stage_risks(risk, horizon: int):
    """Normalize a shared measure or a per-stage list into a per-stage list (entry 0 unused)."""
    if risk is None:
        return None
    if isinstance(risk, CoherentRisk):
        return [None] + [risk] * (horizon - 1)
    risks = list(risk)
    if len(risks) == horizon - 1:
        risks = [None] + risks
    if len(risks) != horizon:
        raise ValueError(f"expected {horizon - 1} stage risk measures, got {len(risks)}")
    return risks


def risk_backward_pass_sp(problem, risk, state, trial_points):
    """Backward pass whose cuts bound the nested risk-adjusted cost-to-go from below."""
    from .sddp import backward_pass

    return backward_pass(problem, state, trial_points, stage_risks(risk, problem.horizon))


def risk_soc_backward(soc_problem, psi: PsiForm, state, trial_states):
    """Joint (control, threshold) cuts for a risk-averse SOC model; see :mod:`msopt.soc`."""
    from .soc import soc_backward

    return soc_backward(soc_problem, state, trial_states, psi=psi)


def risk_upper_bound(soc_problem, psi: PsiForm, state, M: int, seed: int = 0, z_alpha: float = 2.0):
    """Monte Carlo mean of the backward Psi recursion along sampled policy paths."""
    from .soc import psi_upper_bound

    return psi_upper_bound(soc_problem, psi, state, M, seed, z_alpha)
