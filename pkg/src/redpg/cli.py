"""Command-line front end: plan | simulate | sweep | frs-check."""
from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import yaml

from . import harness
from .config import load_config, schema_text
from .dynamics import trim_control
from .errors import ConfigError, RedpgError
from .reachability import calibrated_frs_sequence, containment_statistics


class _UsageError(Exception):
    pass


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.resolve_seed(args.seed)
    sc = cfg.scenario(seed)
    frs, _ = harness.trial_frs(sc)
    rec = harness.plan_nominal(sc, frs)
    out = _out_dir(args.out)
    harness.write_csv(os.path.join(out, "nominal.csv"), harness.trajectory_header(sc),
                      harness.trajectory_rows(rec.nominal_states, rec.nominal_controls, seed))
    report = {"seed": seed, "failed": rec.failed, "failure": rec.failure,
              "calibrated_eta": [f.config.eta for f in frs],
              "certificates": [harness.certificate_dict(c) for c in rec.certificates]}
    _write(os.path.join(out, "certificates.json"), harness.dumps(report) + "\n")
    if rec.failed:
        print(f"planning failed: {rec.failure}", file=sys.stderr)
        return 1
    print(f"planned {sc.n_agents} agents over {sc.T} steps -> {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.resolve_seed(args.seed)
    trials = args.trials if args.trials is not None else cfg.trials
    if trials < 1:
        raise _UsageError("--trials must be at least 1")
    res = harness.monte_carlo(cfg.template, trials, seed, args.jobs, keep_records=True)
    out = _out_dir(args.out)
    header = None
    nominal, executed = [], []
    for t in res.trials:
        if t.record is None:
            continue
        if header is None:
            header = harness.trajectory_header(cfg.scenario(t.seed))
        nominal += harness.trajectory_rows(t.record.nominal_states, t.record.nominal_controls, t.seed)
        if t.record.executed_states is not None:
            executed += harness.trajectory_rows(t.record.executed_states, t.record.executed_controls,
                                                t.seed)
    if header is not None:
        harness.write_csv(os.path.join(out, "nominal.csv"), header, nominal)
        harness.write_csv(os.path.join(out, "executed.csv"), header, executed)
    report = {"base_seed": seed, "trials": trials, "failed_count": res.failed_count,
              "mean": res.mean, "std": res.std,
              "per_trial": [dict(t.metrics.to_dict(), seed=t.seed) if t.metrics is not None
                            else {"seed": t.seed, "failed": True, "failure": t.failure}
                            for t in res.trials]}
    text = harness.dumps(report) + "\n"
    _write(os.path.join(out, "metrics.json"), text)
    sys.stdout.write(text)
    return 0 if res.failed_count == 0 else 1


def _parse_value(text: str):
    return yaml.safe_load(text)


def parse_grid(specs) -> dict:
    """``["lambda_frs=1,5,10,15", ...]`` or a YAML mapping file -> grid dict."""
    grid = {}
    for spec in specs or []:
        if "=" not in spec and os.path.isfile(spec):
            with open(spec, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise _UsageError(f"grid file {spec} must hold a mapping")
            for k, v in data.items():
                grid[str(k)] = list(v) if isinstance(v, list) else [v]
            continue
        name, sep, values = spec.partition("=")
        if not sep or not name:
            raise _UsageError(f"grid entry {spec!r} must look like name=v1,v2,...")
        grid[name] = [_parse_value(v) for v in values.split(",") if v.strip()]
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise _UsageError("grid is empty")
    return grid


def cmd_sweep(args) -> int:
    from .config import PARAM_SCHEMA

    cfg = load_config(args.config)
    seed = cfg.resolve_seed(args.seed)
    grid = parse_grid(args.grid)
    for k, values in grid.items():
        if k not in PARAM_SCHEMA:
            raise _UsageError(f"unknown grid parameter {k!r}")
        for v in values:
            err = PARAM_SCHEMA[k][0](v)
            if err:
                raise _UsageError(f"grid value {v!r} for {k}: {err}")
    trials = args.trials if args.trials is not None else cfg.trials
    res = harness.grid_sweep(cfg.template, grid, trials, seed, args.jobs)
    out = _out_dir(args.out)
    cols = list(grid) + list(harness.SCALAR_METRICS) + ["max_collision_ratio", "failed"]
    harness.write_csv(os.path.join(out, "sweep.csv"), cols,
                      [[harness.fmt(r[c]) for c in cols] for r in res.rows])
    for r in res.rows:
        print("  ".join(f"{c}={harness.fmt(r[c])}" for c in cols))
    if res.has_winner:
        print("winner: " + ", ".join(f"{k}={harness.fmt(res.winner[k])}" for k in grid))
    else:
        print("no winner: every cell has collisions or failures")
    return 0


def cmd_frs_check(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.resolve_seed(args.seed)
    sc = cfg.scenario(seed)
    seen = set()
    ok = True
    for m, a in zip(sc.models(), sc.agents):
        if m.tag in seen:
            continue
        seen.add(m.tag)
        u_trim = trim_control(m, a.x0, a.goal, sc.T * sc.dt)
        x_lin = a.x0.copy()
        x_lin[list(m.position_indices)] = 0.0
        frs, ratio = calibrated_frs_sequence(m, x_lin, u_trim, sc.frs_config(m), sc.dt, sc.T,
                                             samples=args.samples or sc.frs_samples, seed=seed)
        _, worst = containment_statistics(frs, args.samples or sc.frs_samples, seed)
        print(f"model {m.tag}: sigma={sc.sigma:g} containment ratio={ratio:.6f} "
              f"calibrated eta={harness.fmt(frs.config.eta)}")
        print("  t  max e^T Q^-1 e")
        for t, q in enumerate(worst):
            print(f"  {t:3d}  {q:.6f}")
        ok &= ratio >= 0.99
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redpg", description="Reachability-aware potential-game planner")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=False):
        sp.add_argument("config", help="scenario config (YAML)")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", default="out", help="output directory")
        if trials:
            sp.add_argument("--trials", type=int, default=None, help="overrides the config trials")
            sp.add_argument("--jobs", type=int, default=1, help="parallel trial processes")

    common(sub.add_parser("plan", help="plan nominal trajectories"))
    common(sub.add_parser("simulate", help="Monte Carlo plan + execute + metrics"), trials=True)
    sw = sub.add_parser("sweep", help="grid sweep with the safety-first rule")
    common(sw, trials=True)
    sw.add_argument("grid", nargs="*", help="name=v1,v2,... entries or a YAML grid file")
    fc = sub.add_parser("frs-check", help="reachable-set containment report")
    common(fc)
    fc.add_argument("--samples", type=int, default=None, help="disturbed rollouts per model")
    sub.add_parser("schema", help="print the config schema with units")
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"plan": cmd_plan, "simulate": cmd_simulate, "sweep": cmd_sweep,
                "frs-check": cmd_frs_check}
    if args.command == "schema":
        print(schema_text())
        return 0
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"redpg: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RedpgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
