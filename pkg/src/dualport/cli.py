"""Command line front end: ``dualport {solve,verify,duality-gap,simulate} --config FILE``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 solver
precondition violated, 10 + k when ``verify`` finds k failing conditions.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .constraints import ConstraintError, project
from .market import MarketError, solve_cells
from .paths import SimulationError, default_threads, generate_paths, write_paths
from .solvers import SolverError, solve
from .utility import PowerUtility, UtilityError
from .verify import (
    VerificationError,
    adjoint_oracle_p2,
    check_fbsde_residuals,
    estimate_dual_value,
    estimate_primal_value,
    McEstimate,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_VERIFY_BASE = 10


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _setup(args):
    cfg = ExperimentConfig.from_dict(load_config(args.config))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.run["seed"] = args.seed
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    os.makedirs(args.out, exist_ok=True)
    return cfg, threads


def _paths(cfg):
    return generate_paths(cfg.market, cfg.run["n_paths"], cfg.run["seed"])


def run_solve(args) -> int:
    cfg, _ = _setup(args)
    sol = solve(cfg.market, cfg.constraint, cfg.utility)
    m = cfg.market
    report = {
        "kind": sol.kind,
        "y_hat": sol.y_hat,
        "dual_value": sol.dual_value,
        "primal_value": sol.primal_value,
        "x0": m.x0,
        "horizon": m.horizon,
        "n_steps": m.n_steps,
    }
    with open(os.path.join(args.out, "solution.txt"), "w", encoding="utf-8") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {json.dumps(v)}\n")
    n = m.n_assets
    header = ["cell", "t"] + [f"v_hat_{i}" for i in range(n)] + [f"theta_hat_{i}" for i in range(n)]
    if sol.pi_hat_cells is not None:
        header += [f"pi_hat_{i}" for i in range(n)]
    rows = []
    for k in range(m.n_steps):
        row = [k, _fmt(m.grid[k])] + [_fmt(x) for x in sol.v_hat[k]] + [_fmt(x) for x in sol.theta_hat[k]]
        if sol.pi_hat_cells is not None:
            row += [_fmt(x) for x in sol.pi_hat_cells[k]]
        rows.append(row)
    _write_csv(os.path.join(args.out, "solution_cells.csv"), header, rows)
    print(f"y_hat = {sol.y_hat:.17g}")
    print(f"dual_value = {_fmt(sol.dual_value)}")
    print(f"primal_value = {_fmt(sol.primal_value)}")
    return EXIT_OK


def run_verify(args) -> int:
    cfg, threads = _setup(args)
    run = cfg.run
    sol = solve(cfg.market, cfg.constraint, cfg.utility)
    paths = _paths(cfg)
    rep = check_fbsde_residuals(sol, paths, tol=run["tol"], membership_tol=run["membership_tol"],
                                bsde_tol=run["bsde_tol"], perturb_pi=run["perturb_pi"], threads=threads)
    if run["oracle_inner"] > 0 and not run["perturb_pi"]:
        M = cfg.market.n_steps
        traj = sol.trajectories(paths, threads)
        for label, k in (("0", 0), ("mid", M // 2), ("T", M)):
            o = adjoint_oracle_p2(sol, paths, k, n_inner=run["oracle_inner"],
                                  n_outer=run["oracle_outer"], traj=traj)
            rep.add(f"oracle_p2_t{label}", abs(o.pooled_deviation), 4.0 * o.pooled_se + 1e-9,
                    note="pooled relative deviation")
    with open(os.path.join(args.out, "verify.csv"), "w", newline="", encoding="utf-8") as fh:
        fh.write(rep.to_csv())
    summary = rep.summary()
    with open(os.path.join(args.out, "verify_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    n_fail = len(rep.failures)
    return EXIT_OK if n_fail == 0 else EXIT_VERIFY_BASE + n_fail


def _candidate(label: str, cfg, sol) -> Optional[np.ndarray]:
    """Per-cell strategy for a named candidate; None means use the solver's own wealth."""
    m, K = cfg.market, cfg.constraint
    if label == "zero":
        return np.zeros((m.n_steps, m.n_assets))
    if label == "merton":
        if isinstance(cfg.utility, PowerUtility):
            scale = 1.0 / (1.0 - cfg.utility.beta)
        else:
            scale = 1.0
        theta = solve_cells(m.sigma, m.b - m.r[:, None])
        raw = solve_cells(np.swapaxes(m.sigma, -1, -2), theta) * scale
        return np.array([project(K, row) for row in raw])
    if label == "solver":
        return sol.pi_hat_cells
    if label.startswith("constant:"):
        try:
            c = float(label.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad candidate {label!r}") from None
        return np.full((m.n_steps, m.n_assets), c)
    raise ConfigError(f"unknown candidate {label!r} (zero, merton, solver, constant:<x>)")


def run_duality_gap(args) -> int:
    cfg, threads = _setup(args)
    labels = [str(c) for c in cfg.run["candidates"]]
    header = ["label", "primal", "primal_se", "dual", "dual_se", "gap"]
    rows = []
    if labels:
        sol = solve(cfg.market, cfg.constraint, cfg.utility)
        paths = _paths(cfg)
        dual = estimate_dual_value(cfg.market, cfg.constraint, sol.y_hat, sol.v_hat, paths,
                                   cfg.utility, threads)
        for label in labels:
            pi = _candidate(label, cfg, sol)
            if pi is None:
                xT = sol.trajectories(paths, threads).X[:, -1]
                primal = McEstimate.from_samples(cfg.utility.U(xT))
            else:
                primal = estimate_primal_value(cfg.market, cfg.constraint, pi, paths, cfg.utility,
                                               threads, tol=cfg.run["membership_tol"])
            rows.append([label, _fmt(primal.mean), _fmt(primal.std_error), _fmt(dual.mean),
                         _fmt(dual.std_error), _fmt(dual.mean - primal.mean)])
    _write_csv(os.path.join(args.out, "duality_gap.csv"), header, rows)
    for row in rows:
        print(",".join(str(x) for x in row))
    return EXIT_OK


def run_simulate(args) -> int:
    cfg, threads = _setup(args)
    sol = solve(cfg.market, cfg.constraint, cfg.utility)
    paths = _paths(cfg)
    write_paths(os.path.join(args.out, "paths.bin"), paths)
    traj = sol.trajectories(paths, threads)
    rows = []
    for k, t in enumerate(cfg.market.grid):
        x = McEstimate.from_samples(traj.X[:, k])
        y = McEstimate.from_samples(traj.Y[:, k])
        rows.append([_fmt(t), _fmt(x.mean), _fmt(x.std_error), _fmt(y.mean), _fmt(y.std_error)])
    _write_csv(os.path.join(args.out, "simulate.csv"), ["t", "X_mean", "X_se", "Y_mean", "Y_se"], rows)
    print(f"wrote {paths.n_paths} paths x {paths.n_steps} steps")
    return EXIT_OK


COMMANDS = {
    "solve": run_solve,
    "verify": run_verify,
    "duality-gap": run_duality_gap,
    "simulate": run_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualport", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="experiment file (section.key = value)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: DPL_THREADS or 1)")
    ap.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MarketError, ConstraintError, UtilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PRECONDITION
    except (SimulationError, VerificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
