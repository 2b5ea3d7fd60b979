"""Solvers for convex multistage stochastic programs.

The main entry points:

* :func:`msopt.sddp.run` for cutting-plane dynamic programming on linear
  stage problems, with :mod:`msopt.dualsddp` for deterministic upper bounds
  and :mod:`msopt.eddp` for the explorative deterministic variant;
* :mod:`msopt.soc` and :mod:`msopt.horizon` for state/control models over
  finite and discounted infinite horizons, risk neutral or risk averse;
* :func:`msopt.dsa.dsa_solve` for nested primal-dual stochastic
  approximation;
* :mod:`msopt.oracle` for brute-force reference values on small trees.
"""

from .lp import LpProblem, LpStatus, solve
from .model import MarkovLattice, MultistageProblem, StageBlock, StageRealization
from .risk import CoherentRisk, PsiForm
from .sddp import SddpConfig, run

__version__ = "0.1.0"

__all__ = [
    "CoherentRisk",
    "LpProblem",
    "LpStatus",
    "MarkovLattice",
    "MultistageProblem",
    "PsiForm",
    "SddpConfig",
    "StageBlock",
    "StageRealization",
    "run",
    "solve",
]
