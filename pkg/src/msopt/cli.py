"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 validation
failure.  ``MSOPT_SEED`` and ``MSOPT_THREADS`` supply defaults for ``--seed``
and ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import problemfile
from .model import validate, validate_soc
from .report import RunRecord, report

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_INVALID = 0, 1, 2, 3

METHODS = ("sddp", "eddp", "dual", "dsa", "stationary", "periodic", "soc")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msopt", description="Multistage stochastic optimization solvers")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--problem", required=True, help="problem file (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default: $MSOPT_SEED or 0)")
        sp.add_argument("--threads", type=int, default=None, help="worker cap (default: $MSOPT_THREADS or 1)")
        sp.add_argument("--iters", type=int, default=100, help="iteration cap")
        sp.add_argument("--risk-file", default=None, help="JSON risk block overriding the problem file")

    s = sub.add_parser("solve", help="run a solver and write a report")
    common(s)
    s.add_argument("--method", choices=METHODS, default="sddp")
    s.add_argument("--gap-tol", type=float, default=None, help="relative gap stop rule")
    s.add_argument("--paths", type=int, default=100, help="paths for the statistical upper bound")
    s.add_argument("--z-alpha", type=float, default=2.0)
    s.add_argument("--epsilon", type=float, default=None, help="EDDP saturation / truncation accuracy")
    s.add_argument("--n1", type=int, default=None)
    s.add_argument("--n2", type=int, default=None)
    s.add_argument("--n3", type=int, default=None)
    s.add_argument("--mode", choices=("general", "strong"), default="general", help="DSA step-size regime")
    s.add_argument("--out", default="msopt-run", help="output directory")
    s.add_argument("--checkpoint", action="store_true", help="also write the final cut pools")
    s.add_argument("--no-plot", action="store_true")

    m = sub.add_parser("simulate", help="train SDDP, then estimate the policy cost by simulation")
    common(m)
    m.add_argument("--paths", type=int, default=1000)
    m.add_argument("--z-alpha", type=float, default=2.0)

    b = sub.add_parser("bound", help="print lower, upper and gap for the available bounds")
    common(b)
    b.add_argument("--paths", type=int, default=200)
    b.add_argument("--z-alpha", type=float, default=2.0)

    f = sub.add_parser("fit-lattice", help="quantize a historical series into a lattice block")
    f.add_argument("--series", required=True, help="CSV with one row per time step")
    f.add_argument("--clusters", type=int, required=True)
    f.add_argument("--period", type=int, default=1)
    f.add_argument("--horizon", type=int, default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", default=None, help="write the block here instead of stdout")

    o = sub.add_parser("oracle", help="desk-scale cross-validation")
    o.add_argument("--check", action="store_true", required=True, help="check the bundled fixtures")
    o.add_argument("--fixtures", default=None, help="directory of fixture files")
    return p


# --------------------------------------------------------------------------
# loading


def _load(args):
    try:
        pf = problemfile.load(args.problem)
    except problemfile.ProblemFileError as exc:
        raise ValidationError(str(exc)) from None
    if args.risk_file:
        try:
            pf.risk = problemfile.parse_risk(json.loads(Path(args.risk_file).read_text()), args.risk_file)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{args.risk_file}: {exc}") from None
    issues = []
    if pf.problem is not None:
        issues += validate(pf.problem)
    if pf.soc is not None:
        issues += validate_soc(pf.soc)
    if issues:
        raise ValidationError("; ".join(issues))
    return pf


def _need(pf, attr: str, method: str):
    obj = getattr(pf, attr)
    if obj is None:
        what = {"problem": "a stages list", "soc": "a finite-horizon soc block", "stationary": "a soc block with a discount"}[attr]
        raise ValidationError(f"method {method} needs {what} in the problem file")
    return obj


def _risks(pf, horizon):
    from .risk import stage_risks

    return stage_risks(pf.risk, horizon) if pf.risk is not None else None


# --------------------------------------------------------------------------
# methods


def _run_sddp(pf, args, seed, threads) -> RunRecord:
    from .sddp import SddpConfig, run, statistical_upper_bound

    prob = _need(pf, "problem", "sddp")
    cfg = SddpConfig(
        max_iterations=args.iters,
        seed=seed,
        gap_tol=args.gap_tol,
        threads=threads,
        upper_bound_paths=max(args.paths, 2),
        z_alpha=args.z_alpha,
    )
    risks = _risks(pf, prob.horizon)
    res = run(prob, cfg, risks)
    rec = RunRecord("sddp", seed, _config_echo(args, cfg.__dict__))
    for row in res.state.log:
        rec.add_row(row["iteration"], row["lower_bound"], row["upper_bound"], row["elapsed"], int(sum(row["cuts"])))
    summary = {
        "lower_bound": res.lower_bound,
        "upper_bound": res.upper_bound,
        "stop_rule": res.stop_rule,
        "iterations": res.iterations,
        "first_stage": res.first_stage,
        "streams": ["forward", "upper-bound"],
    }
    if risks is None:
        rep = statistical_upper_bound(prob, res.state, max(args.paths, 2), args.z_alpha, offset=10**9)
        summary["statistical"] = {
            "mean": rep.mean,
            "std_error": rep.std_error,
            "edge": rep.edge,
            "paths": rep.paths,
            "z_alpha": rep.z_alpha,
        }
    rec.summary = summary
    rec.pools = res.state.all_pools()
    return rec


def _run_eddp(pf, args, seed, threads) -> RunRecord:
    from .eddp import EddpConfig, run_eddp

    prob = _need(pf, "problem", "eddp")
    cfg = EddpConfig(epsilon=args.epsilon or 1e-3, max_iterations=args.iters)
    res = run_eddp(prob, cfg)
    rec = RunRecord("eddp", seed, _config_echo(args, cfg.__dict__))
    for k, lb in enumerate(res.lower_bounds, 1):
        rec.add_row(k, lb)
    rec.summary = {
        "lower_bound": res.lower_bound,
        "stop_rule": res.stop_rule,
        "iterations": res.iterations,
        "iteration_bound": res.iteration_bound,
        "gap_certificate": res.gap_bound,
        "lipschitz_estimate": res.lipschitz,
        "diameter": res.diameter,
        "first_stage_gap": res.first_stage_gap,
        "first_stage": res.first_stage,
        "streams": [],
    }
    rec.pools = res.state.all_pools()
    return rec


def _run_dual(pf, args, seed, threads) -> RunRecord:
    from .dualsddp import run_dual
    from .sddp import SddpConfig

    prob = _need(pf, "problem", "dual")
    cfg = SddpConfig(max_iterations=args.iters, seed=seed, threads=threads, upper_bound="none")
    res = run_dual(prob, cfg, gap_tol=args.gap_tol)
    rec = RunRecord("dual", seed, _config_echo(args, cfg.__dict__))
    for row in res.log:
        rec.add_row(row["iteration"], row["lower_bound"], row["dual_upper_bound"], row["elapsed"], int(sum(row["cuts"])))
    rec.summary = {
        "lower_bound": res.lower_bounds[-1],
        "dual_upper_bound": res.upper_bounds[-1],
        "gap": res.gap,
        "stop_rule": res.stop_rule,
        "iterations": res.iterations,
        "rho": res.rho,
        "events": res.dual_state.events,
        "streams": ["forward", "dual-forward"],
    }
    rec.pools = res.state.all_pools()
    return rec


def _run_dsa(pf, args, seed, threads) -> RunRecord:
    from .dsa import default_schedule, dsa_solve

    prob = _need(pf, "problem", "dsa")
    sizes = [args.n1 or 1000, args.n2 or 10, args.n3 or 10]
    if prob.horizon != 3:
        sizes = [sizes[0]] + [sizes[1]] * (prob.horizon - 2) + [sizes[2]]
    sched = default_schedule(prob, sizes, args.mode)
    res = dsa_solve(prob, sched, seed)
    for line in res.log:
        print(line)
    rec = RunRecord("dsa", seed, _config_echo(args, {"schedule": res.schedule}))
    rec.summary = {
        "first_stage": res.first_stage,
        "objective_estimate": res.objective_estimate,
        "feasibility_residual": res.feasibility_residual,
        "sample_counts": res.sample_counts,
        "max_residual": res.max_residual,
        "clip_events": res.clip_events,
        "stop_rule": "schedule exhausted",
        "streams": ["dsa"],
    }
    return rec


def _run_horizon(pf, args, seed, threads, periodic: bool) -> RunRecord:
    from .horizon import horizon_upper_bound, periodic_solve, stationary_solve

    sp = _need(pf, "stationary", args.method)
    psi = None
    if pf.risk is not None and not isinstance(pf.risk, list):
        from .risk import PsiForm

        psi = PsiForm.from_risk(pf.risk)
    solver = periodic_solve if periodic else stationary_solve
    eps = args.epsilon or 1e-2
    res = solver(sp, args.iters, eps, seed, psi)
    rec = RunRecord(args.method, seed, _config_echo(args, {"epsilon": eps, "gamma": sp.gamma}))
    for k, lb in enumerate(res.state.lower_bounds, 1):
        rec.add_row(k, lb, cuts=sum(len(p) for p in res.pools))
    rep = horizon_upper_bound(sp, res, max(args.paths, 2), args.z_alpha, seed, psi)
    rec.summary = {
        "lower_bound": res.lower_bound,
        "truncation_horizon": res.horizon,
        "kappa": res.kappa,
        "iterations": res.iterations,
        "stop_rule": "iteration cap",
        "statistical": {"mean": rep.mean, "std_error": rep.std_error, "edge": rep.edge, "paths": rep.paths, "z_alpha": rep.z_alpha},
        "streams": ["forward", "trial-choice", "upper-bound"],
    }
    rec.pools = res.pools
    return rec


def _run_soc(pf, args, seed, threads) -> RunRecord:
    from .risk import PsiForm
    from .soc import psi_upper_bound, run_soc

    soc = _need(pf, "soc", "soc")
    psi = PsiForm.from_risk(pf.risk) if pf.risk is not None and not isinstance(pf.risk, list) else None
    res = run_soc(soc, args.iters, seed, psi)
    rec = RunRecord("soc", seed, _config_echo(args, {}))
    for k, lb in enumerate(res.state.lower_bounds, 1):
        rec.add_row(k, lb)
    rep = psi_upper_bound(soc, psi, res.state, max(args.paths, 2), seed, args.z_alpha)
    rec.summary = {
        "lower_bound": res.lower_bound,
        "first_control": res.control,
        "iterations": res.iterations,
        "stop_rule": "iteration cap",
        "statistical": {"mean": rep.mean, "std_error": rep.std_error, "edge": rep.edge, "paths": rep.paths, "z_alpha": rep.z_alpha},
        "streams": ["soc", "upper-bound"],
    }
    rec.pools = res.state.pools
    return rec


def _config_echo(args, extra: dict) -> dict:
    echo = {k: v for k, v in vars(args).items() if k not in ("command", "out", "no_plot", "checkpoint")}
    echo.update({k: v for k, v in extra.items() if not k.startswith("_")})
    return echo


RUNNERS = {
    "sddp": _run_sddp,
    "eddp": _run_eddp,
    "dual": _run_dual,
    "dsa": _run_dsa,
    "stationary": lambda pf, a, s, t: _run_horizon(pf, a, s, t, periodic=False),
    "periodic": lambda pf, a, s, t: _run_horizon(pf, a, s, t, periodic=True),
    "soc": _run_soc,
}


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args, seed, threads) -> int:
    pf = _load(args)
    start = time.perf_counter()
    rec = RUNNERS[args.method](pf, args, seed, threads)
    for row in rec.rows:
        ub = row["upper_bound"]
        ub_txt = "" if ub is None or not np.isfinite(ub) else f"  ub {ub:.10g}"
        print(f"iter {row['iteration']:4d}  lb {row['lower_bound']:.10g}{ub_txt}")
    paths = report(rec, args.out, plot=not args.no_plot)
    if args.checkpoint and rec.pools:
        from .cuts import dump_pools

        (Path(args.out) / "cuts.txt").write_text(dump_pools(rec.pools))
    s = rec.summary
    parts = [f"{k} {s[k]:.10g}" for k in ("lower_bound", "upper_bound", "dual_upper_bound", "objective_estimate") if isinstance(s.get(k), float)]
    if "statistical" in s:
        parts.append(f"edge {s['statistical']['edge']:.10g}")
    print(f"{args.method}: " + ", ".join(parts) + f" (stop: {s.get('stop_rule')}, {time.perf_counter() - start:.2f}s)")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _train(pf, args, seed, threads):
    from .sddp import SddpConfig, run

    prob = _need(pf, "problem", "sddp")
    cfg = SddpConfig(max_iterations=args.iters, seed=seed, threads=threads, upper_bound="none")
    return prob, run(prob, cfg, _risks(pf, prob.horizon))


def cmd_simulate(args, seed, threads) -> int:
    from .sddp import statistical_upper_bound

    pf = _load(args)
    if args.paths < 2:
        raise UsageError("--paths must be at least 2")
    prob, res = _train(pf, args, seed, threads)
    rep = statistical_upper_bound(prob, res.state, args.paths, args.z_alpha, offset=10**9)
    print(f"paths {rep.paths}  mean {rep.mean:.10g}  std_error {rep.std_error:.6g}  edge {rep.edge:.10g}  (z_alpha {rep.z_alpha:g})")
    print(f"lower bound {res.lower_bound:.10g} after {res.iterations} iterations")
    return EXIT_OK


def cmd_bound(args, seed, threads) -> int:
    from .dualsddp import run_dual
    from .sddp import SddpConfig, statistical_upper_bound

    pf = _load(args)
    prob, res = _train(pf, args, seed, threads)
    rows = [("SDDP lower bound", res.lower_bound, None)]
    if pf.risk is None:
        rep = statistical_upper_bound(prob, res.state, max(args.paths, 2), args.z_alpha, offset=10**9)
        rows.append(("statistical upper edge", rep.edge, rep.edge - res.lower_bound))
        if not prob.markov:
            dual = run_dual(prob, SddpConfig(max_iterations=args.iters, seed=seed, threads=threads, upper_bound="none"))
            rows.append(("dual SDDP upper bound", dual.upper_bounds[-1], dual.upper_bounds[-1] - res.lower_bound))
    print(f"{'bound':<24}{'value':>18}{'gap':>14}")
    for name, val, gap in rows:
        print(f"{name:<24}{val:>18.10g}{'' if gap is None else format(gap, '.4g'):>14}")
    return EXIT_OK


def cmd_fit_lattice(args, seed) -> int:
    from .scen import fit_lattice, read_series

    try:
        series = read_series(args.series)
    except OSError as exc:
        raise ValidationError(f"cannot read {args.series}: {exc.strerror}") from None
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    try:
        fit = fit_lattice(series, args.clusters, args.period, args.horizon, seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    block = {"lattice": problemfile.lattice_block(fit.lattice)}
    text = json.dumps(block, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    for k, est in enumerate(fit.transitions):
        if est.smoothed_rows:
            print(f"phase {k + 1}: uniform rows for unobserved cells {est.smoothed_rows}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .checks import run_checks

    outcomes = run_checks(args.fixtures)
    if not outcomes:
        raise ValidationError("no fixture files found")
    for o in outcomes:
        print(o.line())
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_INVALID


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        seed = args.seed if getattr(args, "seed", None) is not None else _env_int("MSOPT_SEED", 0)
        threads = getattr(args, "threads", None)
        threads = threads if threads is not None else _env_int("MSOPT_THREADS", 1)
        if threads < 1:
            raise UsageError("--threads must be at least 1")
        if getattr(args, "iters", 1) < 1:
            raise UsageError("--iters must be at least 1")
        if args.command == "solve":
            return cmd_solve(args, seed, threads)
        if args.command == "simulate":
            return cmd_simulate(args, seed, threads)
        if args.command == "bound":
            return cmd_bound(args, seed, threads)
        if args.command == "fit-lattice":
            return cmd_fit_lattice(args, seed)
        return cmd_oracle(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except ValueError as exc:
        # solvers refuse inputs outside their preconditions with ValueError
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
