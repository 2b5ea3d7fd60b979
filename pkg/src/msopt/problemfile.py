"""Reading and writing problem files.

A problem file is one JSON document.  Matrices are either dense row-major
lists or ``{"shape": [m, n], "triplets": [[i, j, v], ...]}``.  JSON has no
infinity, so an infinite bound is written as ``null``.  Example::

    {
      "name": "toy",
      "horizon": 2,
      "stages": [
        {"lb": [0], "ub": [null],
         "realizations": [{"c": [1], "A": [[1]], "B": null, "b": [2], "p": 1}]},
        ...
      ],
      "risk": {"kind": "combo", "lambda": 0.3, "alpha": 0.9}
    }

Optional blocks: ``lattice`` (node centers and transition matrices),
``risk`` (one measure shared by all stages, or a list with one per stage
after the first) and ``soc`` (state dynamics, cost pieces, control boxes,
terminal pieces and the initial state; with ``discount`` it describes a
cyclic infinite-horizon model instead).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .horizon import StationaryProblem
from .model import (
    AffinePieces,
    MarkovLattice,
    MultistageProblem,
    SocProblem,
    SocRealization,
    SocStage,
    StageBlock,
    StageRealization,
)
from .risk import CoherentRisk


class ProblemFileError(ValueError):
    """The document is not a well-formed problem file."""


@dataclass
class ProblemFile:
    problem: MultistageProblem | None = None
    risk: CoherentRisk | list[CoherentRisk] | None = None
    soc: SocProblem | None = None
    stationary: StationaryProblem | None = None
    name: str = ""


# --------------------------------------------------------------------------
# parsing helpers


def _bounds(values, default: float, where: str) -> np.ndarray:
    if values is None:
        raise ProblemFileError(f"{where}: missing bounds")
    return np.array([default if v is None else float(v) for v in values], dtype=float)


def _matrix(raw, where: str, cols: int | None = None) -> np.ndarray | None:
    if raw is None:
        return None
    if isinstance(raw, dict):
        try:
            m, n = (int(v) for v in raw["shape"])
            out = np.zeros((m, n))
            for i, j, v in raw.get("triplets", []):
                out[int(i), int(j)] += float(v)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ProblemFileError(f"{where}: bad sparse matrix ({exc})") from None
        return out
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{where}: bad dense matrix ({exc})") from None
    if arr.ndim == 1 and arr.size == 0:
        return np.zeros((0, cols or 0))
    if arr.ndim != 2:
        raise ProblemFileError(f"{where}: a dense matrix must be a list of rows")
    return arr


def _vector(raw, where: str) -> np.ndarray:
    if raw is None:
        raise ProblemFileError(f"{where}: missing vector")
    try:
        return np.array(raw, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{where}: bad vector ({exc})") from None


def _pieces(raw, where: str) -> AffinePieces:
    if not isinstance(raw, dict):
        raise ProblemFileError(f"{where}: cost pieces must be an object")
    const = _vector(raw.get("const"), f"{where} const")
    gx = _matrix(raw.get("gx"), f"{where} gx", 0)
    gu = _matrix(raw.get("gu"), f"{where} gu", 0)
    try:
        return AffinePieces(const, gx, gu)
    except ValueError as exc:
        raise ProblemFileError(f"{where}: {exc}") from None


def parse_risk(raw, where: str = "risk"):
    """A shared risk measure or a per-stage list from its JSON form."""
    try:
        if isinstance(raw, list):
            return [CoherentRisk.from_dict(d) for d in raw]
        return CoherentRisk.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFileError(f"{where}: {exc}") from None


def _stage(raw, t: int) -> StageBlock:
    where = f"stage {t + 1}"
    reals = []
    for j, r in enumerate(raw.get("realizations") or []):
        rw = f"{where} realization {j + 1}"
        c = _vector(r.get("c"), f"{rw} c")
        b = _vector(r.get("b", []), f"{rw} b")
        A = _matrix(r.get("A"), f"{rw} A", c.size)
        if A is None:
            A = np.zeros((b.size, c.size))
        B = _matrix(r.get("B"), f"{rw} B")
        q = r.get("q")
        if A.shape != (b.size, c.size):
            raise ProblemFileError(f"{rw}: A has shape {A.shape}, expected {(b.size, c.size)}")
        reals.append(StageRealization(c, A, b, B, float(r.get("p", 1.0)), None if q is None else _vector(q, f"{rw} q")))
    if not reals:
        raise ProblemFileError(f"{where}: no realizations")
    n = reals[0].n
    lb = _bounds(raw.get("lb", [0.0] * n), -math.inf, f"{where} lb")
    ub = _bounds(raw.get("ub", [None] * n), math.inf, f"{where} ub")
    return StageBlock(reals, lb, ub)


def _soc(raw) -> tuple[SocProblem | None, StationaryProblem | None]:
    stages = []
    for t, s in enumerate(raw.get("stages") or []):
        where = f"soc stage {t + 1}"
        reals = []
        for j, r in enumerate(s.get("realizations") or []):
            rw = f"{where} realization {j + 1}"
            reals.append(
                SocRealization(
                    _matrix(r.get("A"), f"{rw} A"),
                    _matrix(r.get("B"), f"{rw} B"),
                    _vector(r.get("b"), f"{rw} b"),
                    _pieces(r.get("cost"), f"{rw} cost"),
                    float(r.get("p", 1.0)),
                )
            )
        stages.append(SocStage(reals, _vector(s.get("u_lb"), f"{where} u_lb"), _vector(s.get("u_ub"), f"{where} u_ub")))
    if not stages:
        raise ProblemFileError("soc block: no stages")
    x1 = _vector(raw.get("x1"), "soc x1")
    if raw.get("discount") is not None:
        lo, hi = raw.get("state_lb"), raw.get("state_ub")
        return None, StationaryProblem(
            stages,
            float(raw["discount"]),
            x1,
            raw.get("kappa"),
            None if lo is None else _bounds(lo, -math.inf, "soc state_lb"),
            None if hi is None else _bounds(hi, math.inf, "soc state_ub"),
        )
    return SocProblem(stages, _pieces(raw.get("terminal"), "soc terminal"), x1), None


def parse(doc: dict) -> ProblemFile:
    """Build the in-memory model from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise ProblemFileError("the document must be a JSON object")
    out = ProblemFile(name=str(doc.get("name", "")))
    if doc.get("stages"):
        stages = [_stage(s, t) for t, s in enumerate(doc["stages"])]
        lattice = None
        if doc.get("lattice") is not None:
            lat = doc["lattice"]
            try:
                lattice = MarkovLattice(lat["centers"], lat["transitions"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ProblemFileError(f"lattice: {exc}") from None
        out.problem = MultistageProblem(stages, lattice, out.name)
        if "horizon" in doc and int(doc["horizon"]) != len(stages):
            raise ProblemFileError(f"horizon says {doc['horizon']} but {len(stages)} stages are listed")
    if doc.get("risk") is not None:
        out.risk = parse_risk(doc["risk"])
    if doc.get("soc") is not None:
        out.soc, out.stationary = _soc(doc["soc"])
    if out.problem is None and out.soc is None and out.stationary is None:
        raise ProblemFileError("the document has neither stages nor a soc block")
    return out


def load(path) -> ProblemFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}: invalid JSON ({exc})") from None
    return parse(doc)


# --------------------------------------------------------------------------
# emitting


def _num(v: float):
    return None if not math.isfinite(v) else float(v)


def _emit_matrix(M: np.ndarray | None, sparse: bool | None = None):
    if M is None:
        return None
    M = np.asarray(M, dtype=float)
    nnz = np.count_nonzero(M)
    if sparse is None:
        sparse = M.size > 0 and nnz <= M.size // 3
    if not sparse:
        return M.tolist()
    rows, cols = np.nonzero(M)
    return {"shape": list(M.shape), "triplets": [[int(i), int(j), float(M[i, j])] for i, j in zip(rows, cols)]}


def _emit_pieces(pc: AffinePieces) -> dict:
    return {"const": pc.const.tolist(), "gx": pc.gx.tolist(), "gu": pc.gu.tolist()}


def _emit_soc_stages(stages) -> list:
    return [
        {
            "u_lb": st.u_lb.tolist(),
            "u_ub": st.u_ub.tolist(),
            "realizations": [
                {"A": r.A.tolist(), "B": r.B.tolist(), "b": r.b.tolist(), "p": r.p, "cost": _emit_pieces(r.cost)}
                for r in st.realizations
            ],
        }
        for st in stages
    ]


def emit(pf: ProblemFile, sparse: bool | None = None) -> dict:
    """Inverse of :func:`parse`; ``sparse`` forces one matrix layout (auto by density when None)."""
    doc: dict = {"name": pf.name}
    if pf.problem is not None:
        prob = pf.problem
        doc["horizon"] = prob.horizon
        doc["stages"] = []
        for st in prob.stages:
            reals = []
            for r in st.realizations:
                entry = {"c": r.c.tolist(), "A": _emit_matrix(r.A, sparse), "B": _emit_matrix(r.B, sparse), "b": r.b.tolist(), "p": r.p}
                if r.q is not None:
                    entry["q"] = r.q.tolist()
                reals.append(entry)
            doc["stages"].append({"lb": [_num(v) for v in st.lb], "ub": [_num(v) for v in st.ub], "realizations": reals})
        if prob.lattice is not None:
            doc["lattice"] = lattice_block(prob.lattice)
    if pf.risk is not None:
        doc["risk"] = [r.to_dict() for r in pf.risk] if isinstance(pf.risk, list) else pf.risk.to_dict()
    if pf.soc is not None:
        doc["soc"] = {"x1": pf.soc.x1.tolist(), "stages": _emit_soc_stages(pf.soc.stages), "terminal": _emit_pieces(pf.soc.terminal)}
    elif pf.stationary is not None:
        sp = pf.stationary
        doc["soc"] = {
            "x1": sp.x1.tolist(),
            "stages": _emit_soc_stages(sp.blocks),
            "discount": sp.gamma,
            "kappa": sp.kappa,
            "state_lb": None if sp.state_lb is None else [_num(v) for v in sp.state_lb],
            "state_ub": None if sp.state_ub is None else [_num(v) for v in sp.state_ub],
        }
    return doc


def dump(pf: ProblemFile, path, sparse: bool | None = None) -> None:
    Path(path).write_text(json.dumps(emit(pf, sparse), indent=1) + "\n")


def lattice_block(lattice: MarkovLattice) -> dict:
    """The ``lattice`` block for a fitted lattice, ready to paste into a problem file."""
    return {"centers": [c.tolist() for c in lattice.centers], "transitions": [P.tolist() for P in lattice.transitions]}
