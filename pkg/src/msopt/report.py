"""Run records and the files written for them.

A :class:`RunRecord` is solver-agnostic: one row per iteration plus a
summary dictionary.  :func:`report` turns it into ``iterations.csv``,
``summary.json`` and ``bounds.png`` in an output directory.  Wall-clock
times only go to the CSV, so two runs with the same seed and configuration
produce byte-identical summaries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RunRecord:
    method: str
    seed: int
    config: dict
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    pools: list = field(default_factory=list, repr=False)  # final cut pools, for checkpoints

    def add_row(self, iteration: int, lower_bound: float, upper_bound: float | None = None, elapsed: float = 0.0, cuts: int | None = None):
        self.rows.append(
            {"iteration": iteration, "lower_bound": lower_bound, "upper_bound": upper_bound, "elapsed": elapsed, "cuts": cuts}
        )


def _clean(value):
    """JSON-safe copy: arrays become lists and non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def summary_document(record: RunRecord) -> dict:
    doc = {"method": record.method, "seed": record.seed, "config": record.config}
    doc.update(record.summary)
    return _clean(doc)


def write_iterations(record: RunRecord, path) -> None:
    has_ub = any(r["upper_bound"] is not None for r in record.rows)
    header = ["iteration", "lower_bound"] + (["upper_bound"] if has_ub else []) + ["wall_time", "cuts"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in record.rows:
            line = [r["iteration"], repr(float(r["lower_bound"]))]
            if has_ub:
                ub = r["upper_bound"]
                line.append("" if ub is None or not math.isfinite(ub) else repr(float(ub)))
            line += [f"{r['elapsed']:.6f}", "" if r["cuts"] is None else r["cuts"]]
            w.writerow(line)


def plot_bounds(record: RunRecord, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = [r["iteration"] for r in record.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(it, [r["lower_bound"] for r in record.rows], label="lower bound")
    ub = [np.nan if r["upper_bound"] is None else r["upper_bound"] for r in record.rows]
    if np.any(np.isfinite(ub)):
        ax.plot(it, ub, label="upper bound")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(f"{record.method} (seed {record.seed})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def report(record: RunRecord, outdir, plot: bool = True) -> dict[str, Path]:
    """Write the run files and return their paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"iterations": out / "iterations.csv", "summary": out / "summary.json"}
    write_iterations(record, paths["iterations"])
    paths["summary"].write_text(json.dumps(summary_document(record), indent=2, sort_keys=True) + "\n")
    if plot and record.rows:
        paths["plot"] = out / "bounds.png"
        plot_bounds(record, paths["plot"])
    return paths
