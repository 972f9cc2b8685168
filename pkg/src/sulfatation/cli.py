"""Command-line entry point.

Subcommands::

    sulfatation run <config>      evolve, write diagnostics, compare with the stationary state
    sulfatation steady <config>   stationary solve and uniqueness probe
    sulfatation verify <config>   evolve and check every invariant, plus an oracle check

Exit status is 0 when all enabled checks pass, 1 when a check fails and 2
for a malformed or inadmissible configuration.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ConfigError, RunConfig, load_config, make_initial
from .grid import shrink
from .oracle import explicit_run, stable_dt
from .output import write_convergence, write_json, write_snapshot, write_timeseries
from .stationary import residual_check, solve_stationary, uniqueness_probe
from .timestepper import TimeStepper

ENV_PREFIX = "SULFATATION_"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
ORACLE_RATIO = (1.7, 2.3)


def _env(name: str, cast):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"environment variable {ENV_PREFIX}{name}={raw!r}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sulfatation",
        description="Two-scale sulfatation simulator.",
        epilog=(f"Every flag can also be set through an environment variable: {ENV_PREFIX}OUTPUT_DIR, "
                f"{ENV_PREFIX}THREADS, {ENV_PREFIX}SEED, {ENV_PREFIX}STEADY_TOL, {ENV_PREFIX}MAX_STEPS. "
                "Flags override the environment, which overrides the config file."))
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"run": "evolve the system and write diagnostics",
             "steady": "solve the stationary problem and probe uniqueness",
             "verify": "evolve and check all invariants, including an oracle comparison"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--output-dir", help="directory for outputs (default: ./out)")
        p.add_argument("--threads", type=int, help="worker threads for micro solves (default: available cores)")
        p.add_argument("--seed", type=int, help="seed for random initial data and probes")
        p.add_argument("--steady-tol", type=float, help="stop when |d/dt w|_H drops below this")
        p.add_argument("--max-steps", type=int, help="cap on the number of time steps")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> Path:
    def pick(flag, env_name, cast):
        return flag if flag is not None else _env(env_name, cast)

    threads = pick(args.threads, "THREADS", int)
    seed = pick(args.seed, "SEED", int)
    steady = pick(args.steady_tol, "STEADY_TOL", float)
    max_steps = pick(args.max_steps, "MAX_STEPS", int)
    out = pick(args.output_dir, "OUTPUT_DIR", str) or "out"
    if threads is not None:
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg.threads = threads
    if seed is not None:
        cfg.seed = seed
    if steady is not None:
        if not steady > 0:
            raise ConfigError("steady tolerance must be positive")
        cfg.time.steady_tol = steady
    if max_steps is not None:
        if max_steps < 0:
            raise ConfigError("max steps must be nonnegative")
        cfg.time.max_steps = max_steps
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _stationary_reference(cfg: RunConfig, grid, ops):
    w4inf = cfg.stationary.get("w4inf", cfg.params.beta_max)
    tol = cfg.stationary.get("tol", 1e-10)
    return solve_stationary(w4inf, cfg.params.w3D.limit, cfg.params, grid, tol=tol, ops=ops)


def _evolve(cfg: RunConfig, out: Path, with_reference: bool):
    grid = cfg.build_grid()
    initial = cfg.initial_state(grid)
    stepper = TimeStepper(cfg.params, grid, scheme=cfg.time.scheme, sweeps=cfg.time.sweeps,
                          threads=cfg.threads)
    ref = _stationary_reference(cfg, grid, stepper.ops) if with_reference else None
    t0 = time.perf_counter()
    res = stepper.run(initial, cfg.time.t_end, cfg.time.dt, output_every=cfg.time.output_every,
                      steady_tol=cfg.time.steady_tol, adaptive=cfg.time.adaptive,
                      max_steps=cfg.time.max_steps, reference=ref.tilde() if ref is not None else None)
    elapsed = time.perf_counter() - t0
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    for k, s in enumerate(res.states):
        write_snapshot(snap / f"state_{k:05d}.txt", s, grid)
    write_snapshot(out / "final_state.txt", res.final, grid)
    steps = [int(round((r.t - initial.t) / cfg.time.dt)) for r in res.records]
    write_timeseries(out / "timeseries.csv", res.records, steps)
    return grid, initial, res, ref, elapsed


def _common_summary(cfg, res, elapsed) -> dict:
    return {"mode": cfg.mode, "status": res.status, "message": res.message, "t_final": res.final.t,
            "steps": len(res.log["t"]), "elapsed_s": elapsed, "dt": cfg.time.dt, "dt_max": res.dt_max,
            "bounds": res.bounds.as_array()}


def cmd_run(cfg: RunConfig, out: Path) -> int:
    grid, initial, res, ref, elapsed = _evolve(cfg, out, cfg.stationary_compare)
    summary = _common_summary(cfg, res, elapsed)
    checks = dg.InvariantSummary()
    checks.add("run_completed", res.ok, res.status)
    if ref is not None:
        d = [np.sqrt(r.h_norm_sq) for r in res.records]
        summary["stationary_distance"] = {"initial": d[0], "final": d[-1]}
        write_convergence(out / "stationary_convergence.csv", ref.trace)
    summary["checks"] = checks.checks
    write_json(out / "summary.json", summary)
    _print_checks(checks)
    return EXIT_OK if checks.ok else EXIT_CHECK


def cmd_steady(cfg: RunConfig, out: Path) -> int:
    grid = cfg.build_grid()
    t0 = time.perf_counter()
    sol = _stationary_reference(cfg, grid, None)
    res = residual_check(sol, cfg.params, grid)
    tol = cfg.stationary.get("tol", 1e-10)
    checks = dg.InvariantSummary()
    checks.add("stationary_converged", sol.converged, sol.residual)
    summary = {"mode": "steady", "converged": sol.converged, "iterations": sol.iterations,
               "residuals": res, "w4inf": cfg.stationary.get("w4inf", cfg.params.beta_max),
               "w3Dinf": cfg.params.w3D.limit}
    n = int(cfg.stationary.get("n_starts", 5))
    probe = uniqueness_probe(cfg.params, grid, sol.w4inf, cfg.params.w3D.limit, n_starts=n, seed=cfg.seed, tol=tol)
    summary["uniqueness"] = {"n_starts": n, "max_distance": probe.max_distance,
                             "non_converged": probe.non_converged}
    if cfg.params.mu is not None and cfg.params.mu > 0:
        checks.add("uniqueness", probe.max_distance <= 1e-8 and not probe.non_converged,
                   probe.max_distance, 1e-8)
    else:
        summary["uniqueness"]["note"] = "psi not declared strongly monotone; distance is informational"
    summary["elapsed_s"] = time.perf_counter() - t0
    summary["checks"] = checks.checks
    write_snapshot(out / "stationary_state.txt", sol.as_state(), grid)
    write_convergence(out / "stationary_convergence.csv", sol.trace)
    write_json(out / "summary.json", summary)
    _print_checks(checks)
    return EXIT_OK if checks.ok else EXIT_CHECK


def oracle_check(cfg: RunConfig, t_end: float = 0.1, dts=(1e-3, 5e-4)) -> dict:
    """Scheme against forward Euler on the config shrunk to 3 cells per axis."""
    grid = shrink(cfg.build_grid(), 3)
    initial = make_initial(cfg.initial, cfg.params, grid, cfg.seed)
    dt_ref = min(stable_dt(cfg.params, grid), 1e-5)
    ref = explicit_run(initial, t_end, dt_ref, cfg.params, grid)
    errs = []
    for dt in dts:
        r = TimeStepper(cfg.params, grid).run(initial, t_end, dt, output_every=t_end)
        errs.append(dg.h_distance(dg.tilde(r.final, cfg.params), dg.tilde(ref, cfg.params), cfg.params, grid))
    scale = max(dg.h_norm(dg.tilde(ref, cfg.params), cfg.params, grid), 1e-300)
    if errs[0] <= 1e-12 * scale:
        return {"errors": errs, "ratio": None, "pass": errs[-1] <= 1e-12 * scale, "dt_oracle": dt_ref}
    ratio = errs[0] / errs[1] if errs[1] > 0 else float("inf")
    return {"errors": errs, "ratio": ratio, "pass": ORACLE_RATIO[0] <= ratio <= ORACLE_RATIO[1],
            "dt_oracle": dt_ref}


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    grid, initial, res, ref, elapsed = _evolve(cfg, out, True)
    summary = _common_summary(cfg, res, elapsed)
    checks = dg.InvariantSummary()
    checks.add("run_completed", res.ok, res.status)
    bd = float(res.log["bound_defect"].max()) if len(res.log["t"]) else 0.0
    checks.add("bounds", bd <= 1e-8, bd, 1e-8)
    md = res.max_relative_mass_defect()
    checks.add("mass_balance", md <= 1e-8, md, 1e-8)
    w4min = float(res.log["w4_min_increment"].min()) if len(res.log["t"]) else 0.0
    checks.add("w4_monotone", w4min >= 0.0, w4min, 0.0)
    _, pos = dg.energy_balance(res.records)
    slack = cfg.time.dt * (1.0 + res.records[-1].dissipation_integral)
    checks.add("energy_inequality", pos <= slack, pos, slack)
    d = np.sqrt([r.h_norm_sq for r in res.records])
    checks.add("approach_to_stationary", d[-1] <= d[0] * (1 + 1e-12), d[-1], d[0])
    res_sp = residual_check(ref, cfg.params, grid)
    checks.add("stationary_residual", ref.converged, max(res_sp))
    oc = oracle_check(cfg)
    checks.add("oracle_first_order", oc["pass"], oc["ratio"], list(ORACLE_RATIO))
    summary["oracle"] = oc
    summary["checks"] = checks.checks
    write_convergence(out / "stationary_convergence.csv", ref.trace)
    write_json(out / "summary.json", summary)
    _print_checks(checks)
    return EXIT_OK if checks.ok else EXIT_CHECK


def _print_checks(checks: dg.InvariantSummary) -> None:
    for name, c in checks.checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name}: value={c['value']} limit={c['limit']}")


COMMANDS = {"run": cmd_run, "steady": cmd_steady, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.mode = {"run": "evolve", "steady": "steady", "verify": "verify"}[args.command]
    return COMMANDS[args.command](cfg, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
