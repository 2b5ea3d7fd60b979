"""Bundled desk-scale fixtures and the cross-checks run by ``msopt oracle --check``.

Every fixture file holds a problem document plus an ``expected`` block with
the oracle value, the tolerance, the seed used by the decomposition solver
and a hash of the problem document.  A check recomputes the oracle value,
compares it with the frozen one, and confirms the matching solver reaches it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import oracle, problemfile
from .dsa import default_schedule, dsa_solve
from .instances import random_instance
from .model import MultistageProblem, StageBlock, StageRealization
from .problemfile import ProblemFile
from .risk import CoherentRisk, stage_risks
from .sddp import SddpConfig, run
from .soc import run_soc


def fixture_dir() -> Path:
    return Path(str(resources.files("msopt") / "fixtures"))


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    message: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.message}"


def _risk_fixture() -> MultistageProblem:
    # three stages, two outcomes each, costs that make the AV@R tail matter
    A = np.array([[1.0, 1.0, -1.0]])
    B = np.array([[-0.5, 0.0, 0.0]])
    box = (np.zeros(3), np.array([5.0, 5.0, 10.0]))
    first = StageBlock([StageRealization([1.0, 0.2, 4.0], A, [2.0], None, 1.0)], *box)
    second = StageBlock(
        [StageRealization([1.5, 0.5, 4.0], A, [d], B, 0.5) for d in (1.0, 3.0)],
        *box,
    )
    third = StageBlock(
        [StageRealization([2.0, 0.1, 4.0], A, [d], B, 0.5) for d in (0.5, 4.0)],
        *box,
    )
    return MultistageProblem([first, second, third], name="risk-fixture")


def fixture_documents() -> dict[str, dict]:
    """Problem documents with how to check them (expected values filled in by :func:`freeze`)."""
    inv = oracle.newsvendor_instance()
    three = oracle.InventoryInstance([1.0, 1.0, 1.0], [3.0, 3.0, 3.0], [0.5, 0.5, 0.5], [([0.0, 2.0, 4.0], [0.3, 0.4, 0.3])] * 3, 1.0)
    docs = {
        "newsvendor": (ProblemFile(oracle.inventory_as_multistage(inv, order_cap=10.0), name="newsvendor"), "extensive", {}),
        "random-3stage": (ProblemFile(random_instance(11, horizon=3, realizations=3), name="random-3stage"), "extensive", {}),
        "random-4stage": (ProblemFile(random_instance(29, horizon=4, realizations=2, n_decisions=2), name="random-4stage"), "extensive", {}),
        "nested-avar": (
            ProblemFile(_risk_fixture(), risk=CoherentRisk.combo(0.5, 0.8), name="nested-avar"),
            "nested",
            {},
        ),
        "deterministic-dsa": (
            ProblemFile(random_instance(3, horizon=3, realizations=1), name="deterministic-dsa"),
            "dsa",
            {"sizes": [4000, 1, 1], "gap": 1e-3},
        ),
        "inventory-soc": (ProblemFile(soc=oracle.inventory_as_soc(three), name="inventory-soc"), "soc", {}),
    }
    out = {}
    for name, (pf, kind, extra) in docs.items():
        doc = problemfile.emit(pf)
        out[name] = {"name": name, "kind": kind, "problem": doc, "settings": extra}
    return out


def oracle_value(kind: str, pf: ProblemFile) -> float:
    if kind in ("extensive", "dsa"):
        return oracle.extensive_solve(pf.problem).value
    if kind == "nested":
        return oracle.nested_risk_value(pf.problem, pf.risk, optimize=True)
    if kind == "soc":
        return oracle.soc_optimal_value(pf.soc)
    raise ValueError(f"unknown fixture kind {kind!r}")


def freeze(outdir: Path | None = None, seed: int = 7) -> list[Path]:
    """Compute oracle values and write the fixture files."""
    outdir = Path(outdir) if outdir is not None else fixture_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fx in fixture_documents().items():
        pf = problemfile.parse(fx["problem"])
        value = oracle_value(fx["kind"], pf)
        fx["expected"] = {
            "value": value,
            "tolerance": 1e-6,
            "seed": seed,
            "hash": oracle.instance_hash(fx["problem"]),
        }
        path = outdir / f"{name}.json"
        path.write_text(json.dumps(fx, indent=1, sort_keys=True) + "\n")
        written.append(path)
    return written


def load_fixtures(directory: Path | None = None) -> list[dict]:
    directory = Path(directory) if directory is not None else fixture_dir()
    return [json.loads(p.read_text()) for p in sorted(directory.glob("*.json"))]


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_fixture(fx: dict) -> CheckOutcome:
    name, kind = fx["name"], fx["kind"]
    exp = fx["expected"]
    if oracle.instance_hash(fx["problem"]) != exp["hash"]:
        return CheckOutcome(name, False, "problem document does not match its recorded hash")
    pf = problemfile.parse(fx["problem"])
    value = oracle_value(kind, pf)
    tol = float(exp["tolerance"])
    if not _close(value, exp["value"], tol):
        return CheckOutcome(name, False, f"oracle value {value!r} differs from frozen {exp['value']!r}")
    seed = int(exp["seed"])
    if kind in ("extensive", "nested"):
        risks = stage_risks(pf.risk, pf.problem.horizon) if pf.risk is not None else None
        cfg = SddpConfig(max_iterations=300, seed=seed, gap_tol=tol / 10, upper_bound="exact", stabilization_window=0)
        res = run(pf.problem, cfg, risks)
        ok = _close(res.lower_bound, value, tol)
        return CheckOutcome(name, ok, f"oracle {value:.10g}, SDDP lower bound {res.lower_bound:.10g} after {res.iterations} iterations")
    if kind == "soc":
        res = run_soc(pf.soc, iterations=200, seed=seed, tol=1e-12)
        ok = _close(res.lower_bound, value, tol)
        return CheckOutcome(name, ok, f"oracle {value:.10g}, SOC lower bound {res.lower_bound:.10g} after {res.iterations} iterations")
    settings = fx.get("settings", {})
    res = dsa_solve(pf.problem, default_schedule(pf.problem, settings["sizes"]), seed)
    achieved = oracle.first_stage_value(pf.problem, res.first_stage, first_rows=False)
    gap = abs(achieved - value)
    ok = gap <= settings["gap"] and res.max_residual <= 1e-12
    return CheckOutcome(name, ok, f"oracle {value:.10g}, DSA first-stage gap {gap:.3g} (limit {settings['gap']:g})")


def run_checks(directory: Path | None = None) -> list[CheckOutcome]:
    return [check_fixture(fx) for fx in load_fixtures(directory)]


__all__ = ["CheckOutcome", "check_fixture", "fixture_documents", "freeze", "load_fixtures", "run_checks"]
