"""``abcmodel`` command-line interface.

Subcommands: simulate, solve, compare, oracle, sweep.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 identity-check failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..empirical import profile_from_ensemble
from ..pde import NumericalFailure
from ..species import ParameterError
from .config import ConfigError, ExperimentConfig, load_config, parse_overrides
from .experiments import (hydro_trend, initial_profile, oracle_suite, residual_rows, run_ensemble,
                          run_pde)
from .io import RunManifest, write_ensemble

log = logging.getLogger("abcmodel")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IDENTITY = 0, 2, 3, 4


def _manifest(cmd: str, cfg: ExperimentConfig) -> RunManifest:
    return RunManifest(cmd, dict(cfg.values), __version__)


def _fmt(x) -> str:
    return repr(float(x))


def cmd_simulate(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    man = _manifest("simulate", cfg)
    profile = initial_profile(cfg)
    for N in cfg.N_list:
        params = cfg.params(N)
        ens = run_ensemble(params, profile, float(cfg["sim.t_end"]), cfg.sim_times,
                           int(cfg["sim.seed"]), int(cfg["sim.replicas"]), jobs)
        if cfg["sim.write_trajectories"]:
            path = out / f"trajectories_N{N}.bin"
            write_ensemble(path, ens)
            man.add(path)
        for k, t in enumerate(ens.times):
            path = out / f"profile_N{N}_t{t:g}.csv"
            profile_from_ensemble(ens, k).to_csv(path)
            man.add(path)
        man.lap(f"simulate_N{N}")
    man.write(out)
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    man = _manifest("solve", cfg)
    sol = run_pde(cfg)
    path = out / "pde_solution.csv"
    sol.to_csv(path)
    man.add(path)
    rows = residual_rows(sol)
    mass = sol.mass()
    report = out / "residuals.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phi", "t", "residual", "M"])
        for name, t, r in rows:
            w.writerow([name, _fmt(t), _fmt(r), sol.grid.M])
        if cfg["pde.refine"]:
            fine = run_pde(cfg, 2 * sol.grid.M)
            for (name, t, r), (_, _, rf) in zip(rows, residual_rows(fine)):
                w.writerow([name, _fmt(t), _fmt(rf), fine.grid.M])
                log.info("refine %s t=%g residual ratio %.3f", name, t, r / max(rf, 1e-300))
    man.add(report)
    summary = out / "pde_summary.txt"
    drift = np.abs(mass - mass[0]).max() if len(mass) else 0.0
    summary.write_text(
        f"regime {sol.regime.label or sol.regime.kind.value}\n"
        f"max |sum rho - 1| {sol.max_sum_error:.3e}\n"
        f"per-species mass drift {drift:.3e}\n"
        f"steps {sol.steps}\n")
    man.add(summary)
    man.lap("solve")
    man.write(out)
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    man = _manifest("compare", cfg)
    rows = hydro_trend(cfg, jobs)
    path = out / "convergence.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "R", "t", "norm", "error", "stderr"])
        for r in rows:
            w.writerow([r.N, r.R, _fmt(r.t), r.norm, _fmt(r.error), _fmt(r.stderr)])
    man.add(path)
    man.lap("compare")
    man.write(out)
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig, out: Path, rates_factory=None) -> int:
    man = _manifest("oracle", cfg)
    reports = oracle_suite(cfg, rates_factory)
    path = out / "oracle_report.txt"
    lines = [r.line() for r in reports]
    path.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    man.add(path)
    failed = [r.name for r in reports if not r.passed]
    man.status = "ok" if not failed else "identity-failure: " + ", ".join(failed)
    man.lap("oracle")
    man.write(out)
    if failed:
        print("failed identities: " + ", ".join(failed), file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    key = cfg["sweep.key"]
    values = cfg["sweep.values"]
    if not key or not values:
        raise ConfigError("sweep needs sweep.key and a nonempty sweep.values")
    man = _manifest("sweep", cfg)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, "N", "R", "t", "norm", "error", "stderr"])
        for value in values:
            sub = cfg.with_key(key, value)
            for r in hydro_trend(sub, jobs):
                w.writerow([value, r.N, r.R, _fmt(r.t), r.norm, _fmt(r.error), _fmt(r.stderr)])
            man.lap(f"{key}={value}")
    man.add(path)
    man.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abcmodel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "solve", "compare", "oracle", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat dotted-key TOML file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="base seed (sim.seed / oracle.seed)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for replicas")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None, rates_factory=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        overrides = parse_overrides(args.set)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit value")
            overrides["sim.seed"] = args.seed
            overrides["oracle.seed"] = args.seed
        cfg = load_config(args.config, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.jobs)
        if args.command == "solve":
            return cmd_solve(cfg, args.out)
        if args.command == "compare":
            return cmd_compare(cfg, args.out, args.jobs)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.out, rates_factory)
        return cmd_sweep(cfg, args.out, args.jobs)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
