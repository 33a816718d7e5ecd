"""Command-line harness for the planar navigation benchmark.

Exit status is 0 on success, 2 for invalid input and 3 for numerical
failures.  Every command writes CSV or JSON only; numbers carry four
decimals so repeated runs produce identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import experiment as ex
from .errors import MissingArtifact, NumericalError, ValidationError
from .fdm.io import write_field_csv
from .pathint import batch_query
from .policy import PolicyTable
from .simulate import mc_failure_probability

log = logging.getLogger("riskhjb")

DIGITS = 4
SOURCES = ("fdm-table", "pathint", "zero")


def fmt(v):
    return f"{float(v):.{DIGITS}f}"


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round(float(obj), DIGITS)
    return obj


def write_json(path, payload):
    Path(path).write_text(json.dumps(_round(payload), indent=2, sort_keys=True) + "\n")


def _summary(cfg, command, **fields):
    return {"command": command, "config_hash": config_mod.config_hash(cfg),
            "seed": cfg["mc"]["seed"], **fields}


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    if args.config is None:
        cfg = config_mod.validate(config_mod.defaults())
        return config_mod.apply_overrides(cfg, args.set) if args.set else cfg
    return config_mod.load(args.config, args.set)


def _timed(args, payload, started):
    if args.record_timing:
        payload["wall_time_s"] = time.perf_counter() - started
    return payload


# commands ------------------------------------------------------------------


def cmd_init(args):
    path = Path(args.path)
    if path.exists() and not args.force:
        raise ValidationError(f"{path} exists; pass --force to overwrite", "path")
    cfg = config_mod.validate(config_mod.defaults())
    if args.set:
        cfg = config_mod.apply_overrides(cfg, args.set)
    path.write_text(config_mod.to_toml(cfg))
    print(f"wrote {path}")


def cmd_solve_fdm(args):
    cfg = _load(args)
    out = _out_dir(args)
    started = time.perf_counter()
    res = ex.solve_fdm(cfg)
    sol, problem, ws = res["solution"], res["problem"], res["ws"]
    t0 = cfg["horizon"]["t0"]
    x0 = ex.start_state(cfg)
    res["policy"].save(out / "policy.lut")
    write_field_csv(out / "J_t0.csv", ws.grid, sol.J.at(t0), ["J"])
    res["policy"].write_csv(out / "policy_t0.csv", ws.grid, t0)
    _write_slices(out / "J_slices.csv", ws.grid, sol.J, args.slices)
    payload = _summary(cfg, "solve-fdm", **{
        "lambda": problem.lam, "eta": problem.cost.eta, "grid": list(ws.grid.shape),
        "order": cfg["solver"]["order"], "J_x0_t0": float(sol.J.interpolate(x0, t0)[0]),
        "steps": sol.J.diagnostics["steps"],
        "floored_fraction": sol.J.diagnostics["floored_fraction"]})
    write_json(out / "summary.json", _timed(args, payload, started))
    print(f"J(x0, t0) = {fmt(payload['J_x0_t0'])}  lambda = {fmt(problem.lam)}")


def _write_slices(path, grid, series, every):
    names = ["t", "x", "y", "J"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(0, len(series), max(1, every)):
            vals = series.values[k].ravel()
            t = fmt(series.times[k])
            for i in grid.valid_idx:
                w.writerow([t] + [fmt(c) for c in grid.points[i]] + [fmt(vals[i])])


def _policy_for(args, cfg, problem):
    if args.source == "fdm-table":
        path = Path(args.policy or Path(args.out) / "policy.lut")
        if not path.exists():
            raise MissingArtifact(f"policy table {path} not found; run solve-fdm first")
        return PolicyTable.load(path)
    return None


def cmd_estimate_risk(args):
    cfg = _load(args)
    out = _out_dir(args)
    started = time.perf_counter()
    problem = ex.build_problem(cfg)
    table = _policy_for(args, cfg, problem)
    res = ex.estimate_risk(cfg, args.source, problem, table)
    payload = _summary(cfg, "estimate-risk", eta=problem.cost.eta,
                       sigma2=cfg["model"]["sigma2"], **res)
    write_json(out / "risk.json", _timed(args, payload, started))
    print(f"P_fail_pde = {fmt(res['P_fail_pde'])}  P_fail_mc = {fmt(res['P_fail_mc'])}"
          f"  se = {fmt(res['standard_error'])}")


def cmd_simulate(args):
    cfg = _load(args)
    out = _out_dir(args)
    problem = ex.build_problem(cfg)
    if args.source == "pathint":
        ctrl = ex.pathint_policy(cfg, problem)
    else:
        ctrl = _policy_for(args, cfg, problem)
    batch = ex.rollout(cfg, problem, ctrl, n_paths=args.n_paths, store_states=True)
    _write_trajectories(out / "trajectories.csv", batch)
    p, se = mc_failure_probability(batch)
    payload = _summary(cfg, "simulate", source=args.source, n_paths=batch.count,
                       exited=int(batch.exit_flag.sum()), P_fail_mc=p, standard_error=se)
    write_json(out / "simulate.json", payload)
    print(f"{payload['exited']} of {batch.count} paths exited")


def _write_trajectories(path, batch):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "step", "t", "x", "y", "status"])
        for i in range(batch.count):
            status = "exited" if batch.exit_flag[i] else "safe"
            for j in range(int(batch.exit_step[i]) + 1):
                x = batch.states[i, j]
                w.writerow([i, j, fmt(batch.t0 + j * batch.dt), fmt(x[0]), fmt(x[1]), status])


def cmd_solve_pi(args):
    cfg = _load(args)
    out = _out_dir(args)
    problem = ex.build_problem(cfg)
    dest = Path(args.output) if args.output else out / "pathint.csv"
    batch_query(problem, args.queries, dest, N=cfg["pathint"]["n_paths"], dt=cfg["mc"]["dt"],
                seed=cfg["mc"]["seed"], workers=cfg["mc"]["workers"],
                min_ess=cfg["pathint"]["min_ess"], digits=DIGITS)
    print(f"wrote {dest}")


def sweep_rows(cfg):
    """(eta, sigma2, P_fail_pde, P_fail_mc) for every sweep pair."""
    ws = ex.Workspace(cfg)
    rows = []
    for s2 in cfg["sweep"]["sigma2"]:
        sub = config_mod.apply_overrides(cfg, [f"model.sigma2={s2!r}"])
        for eta in cfg["sweep"]["eta"]:
            sub_eta = config_mod.apply_overrides(sub, [f"cost.eta={eta!r}"])
            res = ex.solve_fdm(sub_eta, ws=ws)
            r = ex.estimate_risk(sub_eta, "fdm-table", res["problem"], res["policy"], ws)
            rows.append((eta, s2, r["P_fail_pde"], r["P_fail_mc"], r["standard_error"]))
            log.info("eta=%s sigma2=%s P_pde=%.4f P_mc=%.4f", eta, s2, r["P_fail_pde"],
                     r["P_fail_mc"])
    return rows


def cmd_sweep(args):
    cfg = _load(args)
    if not cfg["sweep"]["eta"] or not cfg["sweep"]["sigma2"]:
        raise ValidationError("sweep lists must not be empty", "sweep")
    out = _out_dir(args)
    started = time.perf_counter()
    rows = sweep_rows(cfg)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta", "sigma2", "P_fail_pde", "P_fail_mc", "standard_error"])
        for row in rows:
            w.writerow([fmt(v) for v in row])
    payload = _summary(cfg, "sweep", rows=len(rows))
    write_json(out / "sweep.json", _timed(args, payload, started))
    for row in rows:
        print("  ".join(fmt(v) for v in row))


# parser --------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="configuration file (defaults if omitted)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. solver.grid=[48,48]")
    common.add_argument("-o", "--out", default="results", help="output directory")
    common.add_argument("--record-timing", action="store_true",
                        help="add wall time to the summary (makes it non-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="riskhjb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a default configuration file")
    s.add_argument("path")
    s.add_argument("--force", action="store_true")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("solve-fdm", parents=[common], help="solve for the value and policy")
    s.add_argument("--slices", type=int, default=10,
                   help="write every n-th stored slice of J to J_slices.csv")
    s.set_defaults(func=cmd_solve_fdm)

    s = sub.add_parser("solve-pi", parents=[common], help="path-integral controls at queries")
    s.add_argument("queries", help="CSV with columns x, y, t")
    s.add_argument("--output", help="result CSV (default OUT/pathint.csv)")
    s.set_defaults(func=cmd_solve_pi)

    for name, func, helptext in (("estimate-risk", cmd_estimate_risk, "failure probability"),
                                 ("simulate", cmd_simulate, "sample closed-loop paths")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--source", choices=SOURCES, default="fdm-table")
        s.add_argument("--policy", help="policy table (default OUT/policy.lut)")
        if name == "simulate":
            s.add_argument("--n-paths", type=int, default=100)
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", parents=[common], help="failure probability over eta, sigma2")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
