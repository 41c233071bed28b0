"""Command-line interface.

Exit codes: 0 success, 1 usage or invalid config, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (DollarScale, RegressionSpec, SweepSpec, comparative_statics_sweep, expected_entry_profit,
                       no_rating_counterfactual, returns_to_reputation, stylized_fact_regression, sybil_attack_value,
                       write_sweep_csv)
from .equilibrium import SolverError, solve_equilibrium, solve_four_state_closed_form, four_state_model
from .estimation import maximize_likelihood, perturbed_start, total_loglik
from .io import (ConfigError, config_hash, dumps, load_config, parse_config, read_json, read_solution,
                 solution_to_dict, write_json, write_solution)
from .model import HIGH, LOW, build_model, validate_assumption_a1, validate_assumption_a2
from .simulate import PanelFormatError, SimulationConfig, read_panel, simulate_panel, write_panel
from .uniqueness import estimate_beta_bar, verify_uniqueness_at

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class _Run:
    """Collects outputs and writes the run manifest."""

    def __init__(self, argv, args):
        self.argv = list(argv)
        self.args = args
        self.outputs = []
        self.config_raw = None
        self.seed = getattr(args, "seed", None)
        self.t0 = time.perf_counter()

    def config(self):
        if self.args.config is None:
            cfg = parse_config({})
        else:
            cfg = load_config(self.args.config)
        self.config_raw = cfg.raw
        if self.seed is None:
            self.seed = cfg.seed
        return cfg

    def output(self, path):
        path = Path(path)
        self.outputs.append(str(path))
        return path

    def emit(self, obj):
        out = getattr(self.args, "out", None)
        if out:
            write_json(obj, self.output(out))
        else:
            sys.stdout.write(dumps(obj))

    def manifest(self):
        if not self.outputs:
            return
        first = Path(self.outputs[0])
        data = {
            "command_line": self.argv,
            "config_hash": config_hash(self.config_raw or {}),
            "seed": self.seed,
            "tool_version": __version__,
            "wall_time_seconds": time.perf_counter() - self.t0,
            "outputs": self.outputs,
        }
        write_json(data, first.with_name(first.name + ".manifest.json"))


def _grid_arg(text):
    """Parse ``lo:hi:n`` into ``n`` evenly spaced values."""
    try:
        lo, hi, n = text.split(":")
        values = np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise UsageError(f"grid must look like lo:hi:n, got {text!r}") from None
    return [float(v) for v in values]


def _threads(args):
    n = getattr(args, "threads", None)
    return n if n else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_model_validate(run, args):
    cfg = run.config()
    model = cfg.model()
    a1 = validate_assumption_a1(model.kernel)
    a2 = validate_assumption_a2(model.cost, cfg.params)
    run.emit({"params": cfg.params.to_dict(), "n_states": model.n_states,
              "assumption_a1": {"ok": a1.ok, "message": a1.message},
              "assumption_a2": {"ok": a2.ok, "message": a2.message}})


def cmd_eq_solve(run, args):
    cfg = run.config()
    model = cfg.model()
    sol = solve_equilibrium(model, cfg.solver)
    if args.out:
        write_solution(sol, model, run.output(args.out))
    else:
        sys.stdout.write(dumps(solution_to_dict(sol, model)))


_FOUR_STATE_CSV = ["beta", "rho", "gamma", "status", "state", "type", "cutoff", "mass", "price"]


def _four_state_csv(rows, fh):
    from .equilibrium import FOUR_STATE_LABELS
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(_FOUR_STATE_CSV)
    for r in rows:
        head = [repr(r["beta"]), repr(r["rho"]), repr(r["gamma"]), r["status"]]
        if r["status"] != "ok":
            w.writerow(head + ["", "", "", "", ""])
            continue
        for j, label in enumerate(FOUR_STATE_LABELS):
            for t, name in ((LOW, "low"), (HIGH, "high")):
                w.writerow(head + [label, name, repr(float(r["cutoffs"][t][j])), repr(float(r["masses"][t][j])),
                                   repr(float(r["prices"][j]))])


def cmd_eq_four_state(run, args):
    rows = []
    for beta in args.beta:
        for rho in args.rho:
            for gamma in args.gamma:
                row = {"beta": beta, "rho": rho, "gamma": gamma}
                try:
                    cf = solve_four_state_closed_form(gamma, rho, beta)
                    gen = solve_equilibrium(four_state_model(gamma, rho, beta))
                    row.update(status="ok",
                               cutoff_gap=float(np.max(np.abs(cf.cutoffs - gen.cutoffs))),
                               mass_gap=float(np.max(np.abs(cf.masses - gen.masses))),
                               cutoffs=gen.cutoffs, masses=gen.masses, prices=gen.prices)
                except SolverError as exc:
                    row.update(status=type(exc).__name__, message=str(exc))
                rows.append(row)
    if args.format == "json":
        run.emit({"points": rows})
    elif args.out:
        with open(run.output(args.out), "w", newline="", encoding="utf-8") as fh:
            _four_state_csv(rows, fh)
    else:
        _four_state_csv(rows, sys.stdout)


def cmd_eq_verify(run, args):
    if args.eq:
        sol, model = read_solution(args.eq)
    else:
        cfg = run.config()
        model = cfg.model()
        sol = solve_equilibrium(model, cfg.solver)
    if args.entry_scale != 1.0:
        model = model.scaled_entry(args.entry_scale)
        sol = solve_equilibrium(model)
    report = verify_uniqueness_at(sol, model, n_samples=args.samples, seed=args.seed or 0)
    run.emit(report)


def cmd_eq_beta_bar(run, args):
    cfg = run.config()
    betas = args.betas if args.betas else _grid_arg(args.grid)
    res = estimate_beta_bar(cfg.model(), betas, cfg.solver, n_samples=args.samples)
    run.emit(res.to_dict())


def cmd_sim_run(run, args):
    cfg = run.config()
    if args.eq:
        sol, model = read_solution(args.eq)
    else:
        model = cfg.model()
        sol = solve_equilibrium(model, cfg.solver)
    sc = cfg.simulation
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.vendors is not None:
        changes["n_vendors"] = args.vendors
    changes["n_threads"] = _threads(args)
    sc = SimulationConfig(**{**sc.__dict__, **changes})
    run.seed = sc.seed
    panel = simulate_panel(sol, model, sc)
    write_panel(panel, run.output(args.out))


def cmd_est_fit(run, args):
    cfg = run.config()
    panel = read_panel(args.panel, cfg.estimation.space)
    res = maximize_likelihood(panel, cfg.estimation)
    run.emit(res.to_dict())
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_est_loglik(run, args):
    cfg = run.config()
    panel = read_panel(args.panel, cfg.estimation.space)
    ll = total_loglik(panel, cfg.params, cfg.estimation)
    print(repr(float(ll)))


def _scale(cfg):
    a = cfg.analysis
    return DollarScale(a.get("dollars_per_gram", 35.0), a.get("grams_per_order", 20.0),
                       a.get("orders_per_week", 1.0))


def cmd_an_returns(run, args):
    cfg = run.config()
    sol, model = read_solution(args.eq)
    a = cfg.analysis
    res = returns_to_reputation(sol, model, args.from_rating if args.from_rating is not None else a.get("from_rating", 5.0),
                                args.to_rating if args.to_rating is not None else a.get("to_rating", 4.99),
                                args.bucket if args.bucket is not None else a.get("sales_bucket", 0), _scale(cfg))
    res["entry_profit"] = {label: expected_entry_profit(sol, model, t, _scale(cfg))
                           for label, t in (("low", LOW), ("high", HIGH))}
    run.emit(res)


def cmd_an_no_rating(run, args):
    cfg = run.config()
    res = no_rating_counterfactual(cfg.model(), cfg.solver)
    run.emit({"baseline": res["baseline"], "no_rating": res["no_rating"]})


def cmd_an_sybil(run, args):
    sol, model = read_solution(args.eq)
    types = [args.type] if args.type else ["low", "high"]
    run.emit({t: sybil_attack_value(sol, model, args.state, t, args.fee) for t in types})


def cmd_an_sweep(run, args):
    cfg = run.config()
    spec_raw = read_json(args.spec)
    try:
        spec = SweepSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in spec_raw.items()})
    except TypeError as exc:
        raise ConfigError(f"invalid sweep spec: {exc}") from None
    sc = cfg.simulation
    if args.seed is not None:
        sc = SimulationConfig(**{**sc.__dict__, "seed": args.seed})
    run.seed = sc.seed
    rows = comparative_statics_sweep(spec, cfg.model(), sc, cfg.solver, n_threads=_threads(args))
    write_sweep_csv(rows, run.output(args.out))


def cmd_an_regress(run, args):
    spec = RegressionSpec(**read_json(args.spec)) if args.spec else RegressionSpec()
    panel = read_panel(args.panel)
    res = stylized_fact_regression(panel, spec)
    out = run.output(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["term", "coef", "se"], lineterminator="\n")
        w.writeheader()
        for r in res.table():
            w.writerow({"term": r["term"], "coef": repr(r["coef"]), "se": repr(r["se"])})


def cmd_pipeline_recover(run, args):
    cfg = run.config()
    seed = args.seed if args.seed is not None else cfg.seed
    run.seed = seed
    est = cfg.estimation
    truth = cfg.params
    model = build_model(truth, est.space)
    sol = solve_equilibrium(model, cfg.solver)
    sc = SimulationConfig(**{**cfg.simulation.__dict__, "seed": seed, "n_threads": _threads(args)})
    if args.vendors is not None:
        sc = SimulationConfig(**{**sc.__dict__, "n_vendors": args.vendors})
    panel = simulate_panel(sol, model, sc)
    start = perturbed_start(est, truth, args.perturb)
    est = dataclasses.replace(est, start={p: getattr(start, p) for p in est.free_parameters})
    res = maximize_likelihood(panel, est)
    rows = []
    for p in est.free_parameters:
        t, e = getattr(truth, p), getattr(res.point_estimates, p)
        se = res.standard_errors.get(p, float("nan"))
        tol = max(3 * se if np.isfinite(se) and p not in res.se_flags else 0.0, 0.1 * abs(t))
        rows.append({"parameter": p, "truth": t, "start": getattr(start, p), "estimate": e, "se": se,
                     "recovered": bool(abs(e - t) <= tol)})
    out = res.to_dict()
    out.pop("seconds", None)
    run.emit({"recovery": rows, "n_recovered": sum(r["recovered"] for r in rows), "estimation": out,
              "seed": seed, "n_vendors": sc.n_vendors})
    return EXIT_OK if res.converged else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument("--threads", type=int, default=None, help="worker thread cap")

    p = _Parser(prog="repmarket", description="Seller reputation market: solve, simulate, estimate, analyze.")
    p.add_argument("--version", action="version", version=__version__)
    groups = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def sub(group, name, func, help_, config=True):
        q = group.add_parser(name, parents=[common], help=help_)
        if config:
            q.add_argument("--config", default=None, help="JSON config (defaults if omitted)")
        q.set_defaults(func=func)
        return q

    g = groups.add_parser("model", help="model checks").add_subparsers(dest="cmd", required=True,
                                                                       parser_class=_Parser)
    q = sub(g, "validate", cmd_model_validate, "validate a config and report assumption checks")
    q.add_argument("--out")

    g = groups.add_parser("eq", help="equilibrium").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    q = sub(g, "solve", cmd_eq_solve, "solve the stationary equilibrium")
    q.add_argument("--out")
    q = sub(g, "four-state", cmd_eq_four_state, "compare the general and direct four-state solvers", config=False)
    q.add_argument("--gamma", type=float, nargs="+", default=[round(0.55 + 0.05 * i, 2) for i in range(9)])
    q.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.3])
    q.add_argument("--beta", type=float, nargs="+", default=[0.8, 0.95])
    q.add_argument("--format", choices=["csv", "json"], default="csv")
    q.add_argument("--out")
    q = sub(g, "verify", cmd_eq_verify, "check the local uniqueness conditions")
    q.add_argument("--eq", help="solution JSON (solved from the config if omitted)")
    q.add_argument("--samples", type=int, default=64)
    q.add_argument("--entry-scale", type=float, default=1.0)
    q.add_argument("--out")
    q = sub(g, "beta-bar", cmd_eq_beta_bar, "scan discount factors for the uniqueness threshold")
    grid = q.add_mutually_exclusive_group(required=True)
    grid.add_argument("--betas", type=float, nargs="+")
    grid.add_argument("--grid", help="lo:hi:n evenly spaced discount factors")
    q.add_argument("--samples", type=int, default=16)
    q.add_argument("--out")

    g = groups.add_parser("sim", help="simulation").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    q = sub(g, "run", cmd_sim_run, "simulate a vendor panel to CSV")
    q.add_argument("--eq", help="solution JSON (solved from the config if omitted)")
    q.add_argument("--vendors", type=int)
    q.add_argument("--out", required=True)

    g = groups.add_parser("est", help="estimation").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    q = sub(g, "fit", cmd_est_fit, "maximum likelihood fit")
    q.add_argument("--panel", required=True)
    q.add_argument("--out")
    q = sub(g, "loglik", cmd_est_loglik, "log-likelihood at the config parameters")
    q.add_argument("--panel", required=True)

    g = groups.add_parser("an", help="analysis").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    q = sub(g, "returns", cmd_an_returns, "returns to reputation")
    q.add_argument("--eq", required=True)
    q.add_argument("--from-rating", type=float)
    q.add_argument("--to-rating", type=float)
    q.add_argument("--bucket", type=int)
    q.add_argument("--out")
    q = sub(g, "no-rating", cmd_an_no_rating, "remove the rating system")
    q.add_argument("--out")
    q = sub(g, "sybil", cmd_an_sybil, "value of re-entering under a new identity", config=False)
    q.add_argument("--eq", required=True)
    q.add_argument("--state", type=int, required=True)
    q.add_argument("--fee", type=float, default=500.0)
    q.add_argument("--type", choices=["low", "high"])
    q.add_argument("--out")
    q = sub(g, "sweep", cmd_an_sweep, "comparative statics by simulation")
    q.add_argument("--spec", required=True)
    q.add_argument("--out", required=True)
    q = sub(g, "regress", cmd_an_regress, "log price on rating regression", config=False)
    q.add_argument("--panel", required=True)
    q.add_argument("--spec")
    q.add_argument("--out", required=True)

    g = groups.add_parser("pipeline", help="workflows").add_subparsers(dest="cmd", required=True,
                                                                       parser_class=_Parser)
    q = sub(g, "recover", cmd_pipeline_recover, "simulate, estimate from a perturbed start, compare")
    q.add_argument("--vendors", type=int)
    q.add_argument("--perturb", type=float, default=0.2)
    q.add_argument("--out")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    run = _Run(argv, args)
    try:
        code = args.func(run, args)
        run.manifest()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, PanelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
