"""Command line interface: ``run``, ``reference``, ``sweep`` and ``check``.

Exit codes: 0 success, 1 a check failed, 2 bad input, 3 the numerics broke
down (the partial outputs are kept).  Errors are printed to stderr as a JSON
object.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import diagnostics as diag
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import summarize
from .config import ConfigError, SimConfig, parse_config
from .flow import BijectivityLost, NoConvergence
from .reference import ns_energy_decay, solve
from .snapshots import SnapshotError, write_snapshot
from .torus import TorusGrid, curl2d

_FLAGS = {
    "n": int, "copies": int, "replicas": int, "nu": float, "epsilon": float, "dt": float,
    "t_final": float, "seed": int, "check_every": int, "record_every": int, "snapshot_every": int,
    "init": str, "init_seed": int, "velocity": str, "workers": int,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


def _versions() -> dict[str, str]:
    import numba

    return {"stochlag": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__}


def _config_from_args(args) -> SimConfig:
    overrides = {k: getattr(args, k, None) for k in _FLAGS}
    return parse_config(args.config, overrides)


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _manifest(command: str, cfg: SimConfig, **extra) -> dict:
    return {"command": command, "config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed,
            "versions": _versions(), **extra}


# --- run -----------------------------------------------------------------------------

def execute_run(cfg: SimConfig, out: Path, resume: Path | None = None, stop_step: int | None = None,
                checkpoint_every: int = 0) -> dict:
    """Run (or continue) a simulation into ``out``; returns the manifest written."""
    out.mkdir(parents=True, exist_ok=True)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    diag_path = out / "diagnostics.csv"
    if resume is not None:
        try:
            sim = load_checkpoint(resume, cfg)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError("CheckpointError", str(exc)) from None
        append = diag_path.exists()
    else:
        from .ensemble import Simulation

        sim = Simulation(cfg)
        append = False
        for r in range(cfg.replicas):
            write_snapshot(snaps / f"u_reset_m0000_r{r:03d}.tsf", sim.state.u_reset[r])
    if not append:
        diag.write_diagnostics(diag_path, [], cfg.copies)

    def on_step(s, did_reset):
        st = s.state
        if did_reset:
            for r in range(st.replicas):
                write_snapshot(snaps / f"u_reset_m{st.m:04d}_r{r:03d}.tsf", st.u_reset[r])
        if cfg.snapshot_every and st.step % cfg.snapshot_every == 0:
            for r in range(st.replicas):
                write_snapshot(snaps / f"u_mean_s{st.step:07d}_r{r:03d}.tsf", st.u_mean[r])
        if checkpoint_every and st.step % checkpoint_every == 0:
            save_checkpoint(out / "checkpoint", s)

    start = time.perf_counter()
    error = None
    try:
        for batch in sim.iterate(stop_step=stop_step, on_step=on_step):
            diag.write_diagnostics(diag_path, batch, cfg.copies, append=True)
    except (BijectivityLost, NoConvergence, FloatingPointError, ValueError) as exc:
        sim.status = "failed"
        error = {"error": type(exc).__name__, "message": str(exc), "t": sim.state.t}
    sim.resets.write_csv(out / "resets.csv")
    if error is None:
        save_checkpoint(out / "checkpoint", sim)
    prior = {}
    if resume is not None and (out / "manifest.json").exists():
        prior = json.loads((out / "manifest.json").read_text())
    manifest = _manifest(
        "run", cfg, status=sim.status, t=sim.state.t, step=sim.state.step, resets=len(sim.resets),
        wall_time_s=prior.get("wall_time_s", 0.0) + time.perf_counter() - start,
        resumed_from=str(resume) if resume is not None else None)
    if error is not None:
        manifest["error"] = error
    _write_json(out / "manifest.json", manifest)
    if error is not None:
        raise CliError(error["error"], error["message"], code=3, t=error["t"], out=str(out))
    return manifest


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    m = execute_run(cfg, Path(args.out), Path(args.resume) if args.resume else None, args.stop_step,
                    args.checkpoint_every)
    print(json.dumps({"status": m["status"], "out": args.out, "t": m["t"], "resets": m["resets"]}))
    return 0


# --- reference ---------------------------------------------------------------------------

def cmd_reference(args) -> int:
    from .ensemble import initial_velocity

    cfg = _config_from_args(args)
    out = Path(args.out)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    grid = TorusGrid(cfg.n)
    omega0 = curl2d(grid, initial_velocity(grid, cfg))
    start = time.perf_counter()
    times, traj = solve(grid, omega0, cfg.nu, cfg.dt, cfg.steps, cfg.record_every)
    dec = ns_energy_decay(grid, times, traj, cfg.nu)
    with (out / "reference.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "energy", "enstrophy", "energy_rate_residual"])
        for i, t in enumerate(times):
            res = dec.residual[i - 1] if i > 0 else 0.0
            w.writerow([repr(float(t)), repr(float(dec.energy[i])), repr(float(dec.enstrophy[i])), repr(float(res))])
    for i, om in enumerate(traj):
        write_snapshot(out / "snapshots" / f"omega_{i:05d}.tsf", om)
    _write_json(out / "manifest.json", _manifest("reference", cfg, status="completed", t=float(times[-1]),
                                                 wall_time_s=time.perf_counter() - start))
    print(json.dumps({"status": "completed", "out": str(out), "t": float(times[-1])}))
    return 0


# --- sweep ----------------------------------------------------------------------------------

def _parse_params(items: Sequence[str]) -> list[tuple[str, list[str]]]:
    out = []
    for item in items:
        key, sep, vals = item.partition("=")
        if not sep or not key or not vals:
            raise CliError("UsageError", f"--param expects key=v1,v2,... (got {item!r})")
        out.append((key.strip(), [v.strip() for v in vals.split(",")]))
    return out


def _sweep_one(job):
    cfg_dict, out = job
    try:
        m = execute_run(SimConfig(**cfg_dict), Path(out))
        return {"out": out, "status": m["status"], "config_hash": m["config_hash"]}
    except CliError as exc:
        return {"out": out, "status": "failed", "error": exc.kind, "message": str(exc)}


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    params = _parse_params(args.param)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs, points = [], []
    for i, combo in enumerate(itertools.product(*(vals for _, vals in params))):
        over = dict(zip((k for k, _ in params), combo))
        cfg = parse_config(None, {**base.to_dict(), **over})
        jobs.append((cfg.to_dict(), str(out / f"run_{i:03d}")))
        points.append(over)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    for r, p in zip(results, points):
        r["params"] = p
    _write_json(out / "sweep.json", {"base_config": base.to_dict(), "runs": results})
    print(json.dumps({"runs": len(results), "failed": sum(r["status"] == "failed" for r in results)}))
    return 0 if all(r["status"] != "failed" for r in results) else 3


# --- check -----------------------------------------------------------------------------------

def cmd_check(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "manifest.json").exists():
        raise CliError("NotARunDirectory", f"{run_dir} has no manifest.json")
    summary = summarize(run_dir)
    text = json.dumps(summary, indent=1, sort_keys=True)
    Path(args.summary or run_dir / "summary.json").write_text(text + "\n")
    print(text)
    return 0 if summary["passed"] else 1


# --- entry point -----------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON config file (a run manifest also works)")
    for name, kind in _FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochlag", description="Stochastic Lagrangian particle system with resetting")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the particle system")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--stop-step", type=int, default=None, help="pause after this step")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reference", help="run the deterministic Navier-Stokes solver")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("sweep", help="run a grid of configurations")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], help="key=v1,v2,... (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="verify the stored outputs of a run")
    p.add_argument("run_dir")
    p.add_argument("--summary", help="where to write the summary (default: RUN_DIR/summary.json)")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        err, code = {"error": "ConfigError", "field": exc.field, "message": str(exc)}, 2
    except CliError as exc:
        err, code = {"error": exc.kind, "message": str(exc), **exc.extra}, exc.code
    except (SnapshotError, OSError) as exc:
        err, code = {"error": type(exc).__name__, "message": str(exc)}, 2
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
