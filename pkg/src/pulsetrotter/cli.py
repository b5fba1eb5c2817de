"""``pulsetrotter`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Every run writes into a fresh directory ``<out-dir>/<timestamp>_seed<seed>``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, RunConfig, load_config
from .goat import GoatProblem
from .model import EbhParams, bh_step_unitary, e_step_unitary, ebh_terms
from .optimize import multistart
from .propagation import PropagationError
from .trotter import trotter_error_bound

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("PULSE_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"PULSE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _seed(args, cfg: RunConfig | None) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get("control", "seed", 0) if cfg else 0


def _run_dir(args, cfg: RunConfig | None, seed: int) -> Path:
    base = Path(args.out_dir or (cfg.get("output", "directory") if cfg else None) or "runs")
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
    d = base / f"{stamp}_seed{seed}"
    k = 1
    while d.exists():
        d = base / f"{stamp}_seed{seed}_{k}"
        k += 1
    d.mkdir(parents=True)
    return d


def _target(cfg: RunConfig, q: int):
    dt = cfg.T_s / q
    if cfg.target == "E_step":
        return e_step_unitary(cfg.delta_V, dt), "E:min", cfg.delta_V
    return bh_step_unitary(cfg.J, dt), "BH:min", cfg.J


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    cfg.require("device", "model", "control")
    seed = _seed(args, cfg)
    q = cfg.q
    target, default_id, coeff = _target(cfg, q)
    T_c = cfg.get("control", "T_c_ns", 100.0)
    M = cfg.get("control", "M", 20)
    problem = GoatProblem(cfg.device(), target, T_c, M, integrator=cfg.integrator())
    verify = cfg.verify_integrator()
    t0 = time.perf_counter()
    records = multistart(problem, cfg.ranges(), cfg.get("control", "n_starts", 10), cfg.get("control", "pool", 10000),
                         seed=seed, q=q, max_iter=cfg.get("control", "max_iter", 500),
                         grad_tol=cfg.get("control", "grad_tol", 1e-5), verify_cfg=verify,
                         workers=_threads(args), log=_log)
    best = records[0]
    if not math.isfinite(best.final_infidelity):
        raise PropagationError("every restart failed to propagate", 0.0)
    entry = ex.LibraryEntry(
        primitive_id=args.primitive_id or default_id, target_label=problem.target_label, q=q, T_s_ns=cfg.T_s,
        T_c_ns=T_c, M=M, params=list(best.final_params), infidelity=best.final_infidelity,
        created_with={"tolerances": {"abs_tol": verify.abs_tol, "rel_tol": verify.rel_tol,
                                     "optimize_abs_tol": problem.integrator.abs_tol,
                                     "optimize_rel_tol": problem.integrator.rel_tol},
                      "seed": seed, "pool": cfg.get("control", "pool", 10000),
                      "n_starts": cfg.get("control", "n_starts", 10), "dim": problem.dim},
        coeff_rad_per_ns=coeff)
    entries = [entry]
    if args.merge:
        entries = ex.merge_libraries(ex.load_library(args.merge), entries)
    out = _run_dir(args, cfg, seed)
    ex.save_library(entries, out / "pulse_library.json")
    (out / "records.json").write_text(json.dumps([r.to_dict() for r in records], indent=2) + "\n")
    print(f"best infidelity {best.final_infidelity:.6e} ({best.termination}, {best.iterations} iterations)")
    print(f"wrote {out} in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def parse_grid(spec: str, long_running: bool = False):
    """``'tc=50,75,100;q=2,6,10'`` or ``'m=5,20,35;q=...'``, or a named grid."""
    named = {"desk-tc": ("T_c", ex.DESK_TC_GRID), "desk-m": ("M", ex.DESK_M_GRID),
             "full-tc": ("T_c", ex.FULL_TC_GRID), "full-m": ("M", ex.FULL_M_GRID)}
    if spec in named:
        if spec.startswith("full") and not long_running:
            raise UsageError(f"grid {spec!r} is a full-size grid; pass --long-running to run it")
        axis, (a1, qs) = named[spec]
        return axis, tuple(a1), tuple(qs)
    parts = dict()
    for chunk in spec.split(";"):
        if "=" not in chunk:
            raise UsageError(f"malformed grid spec {spec!r}")
        k, v = chunk.split("=", 1)
        k = k.strip().lower()
        if k not in ("tc", "m", "q") or k in parts:
            raise UsageError(f"malformed grid spec {spec!r}")
        try:
            parts[k] = [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"malformed grid spec {spec!r}") from None
    if "q" not in parts or len(parts) != 2 or not parts["q"]:
        raise UsageError(f"grid spec {spec!r} needs exactly one of tc/m plus q")
    axis_key = "tc" if "tc" in parts else "m"
    vals = parts[axis_key]
    if not vals or any(int(x) != x for x in parts["q"]) or (axis_key == "m" and any(int(x) != x for x in vals)):
        raise UsageError(f"malformed grid spec {spec!r}")
    if axis_key == "m":
        return "M", tuple(int(x) for x in vals), tuple(int(x) for x in parts["q"])
    return "T_c", tuple(vals), tuple(int(x) for x in parts["q"])


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    cfg.require("device", "model", "control")
    axis, a1, qs = parse_grid(args.grid, args.long_running)
    seed = _seed(args, cfg)
    try:
        grid = ex.SweepGrid(axis, a1, qs, n_starts=cfg.get("control", "n_starts", 10),
                            pool=cfg.get("control", "pool", 1000), seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    template = ex.ProblemTemplate(cfg.device(), cfg.target, cfg.T_s, cfg.J, cfg.delta_V,
                                  T_c=cfg.get("control", "T_c_ns", 100.0), M=cfg.get("control", "M", 20),
                                  integrator=cfg.integrator(), ranges=cfg.ranges())
    cells = ex.run_sweep(grid, template, workers=_threads(args), log=_log)
    out = _run_dir(args, cfg, seed)
    ex.write_sweep_csv(cells, out / "sweep_records.csv", out / "sweep_summary.csv")
    regimes = ex.regime_classify(cells)
    for c in cells:
        print(f"{axis}={c.axis1_value:g} q={c.q}: min {c.min_infidelity:.3e} mean {c.mean_infidelity:.3e} "
              f"{regimes[(c.axis1_value, c.q)]}")
    print(f"wrote {out}")
    return EXIT_NUMERICAL if all(c.error for c in cells) else EXIT_OK


def cmd_compile_track(args) -> int:
    cfg = load_config(args.config)
    if args.n_v < 0 or args.q < 1 or args.n_e_steps < 0:
        raise UsageError("need n_v >= 0, q >= 1 and n-e-steps >= 0")
    library = ex.load_library(args.library)
    dt = cfg.T_s / args.q
    n_cycles = max(1, -(-args.n_e_steps // args.n_v)) if args.n_v else max(1, args.n_e_steps)
    # a plan of n_cycles cycles at the original step size
    plan = ex.ebh_plan(args.n_v, n_cycles, n_cycles * dt, cfg.J, cfg.delta_V)
    sched = ex.compile_schedule(plan, library, ex.ebh_term_operators(), ex.EBH_TERM_LABELS, ex.EBH_TERM_NAMES)
    device = cfg.device() if "device" in cfg.sections else None
    track = ex.phase_track(sched, args.mode, device=device, cfg=cfg.verify_integrator())
    out = _run_dir(args, cfg, _seed(args, cfg))
    (out / "schedule.json").write_text(sched.to_json() + "\n")
    ex.write_phase_csv(track, args.mode, out / "phase_track.csv")
    print(f"{len(sched.segments)} segments, total duration {sched.total_duration:g} ns; "
          f"final <11|psi> = {track[-1][1]:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_periodogram(args) -> int:
    library = {e.primitive_id: e for e in ex.load_library(args.library)}
    if args.primitive not in library:
        raise ex.MissingPrimitiveError(args.primitive)
    cfg = load_config(args.config) if args.config else None
    from .device import DeviceSpec
    device = cfg.device() if cfg and "device" in cfg.sections else DeviceSpec.table1()
    entry = library[args.primitive]
    try:
        freqs, power = ex.periodogram(entry.ansatz, device.saturation(), args.dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _run_dir(args, cfg, _seed(args, cfg))
    ex.write_periodogram_csv(freqs, power, out / "periodogram.csv")
    frac = ex.power_fraction_below(freqs, power, 1.0)
    print(f"total power {float(np.sum(power)):.6e}; fraction below 1 GHz {frac:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bound(args) -> int:
    cfg = load_config(args.config)
    q = args.q or cfg.q
    sites = cfg.get("model", "sites", 2)
    n_v = cfg.get("model", "n_v", 1)
    try:
        p = EbhParams(J=cfg.J, sites=sites, delta_V=cfg.delta_V, n_v=n_v)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None
    b = trotter_error_bound(ebh_terms(p), q, cfg.T_s)
    print(f"leading-order Trotter bound (sites={sites}, n_v={n_v}, q={q}, T_s={cfg.T_s:g} ns): {b:.6e}")
    return EXIT_OK


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="overrides [control] seed")
    p.add_argument("--threads", type=int, default=d, help="worker processes (fallback: PULSE_THREADS)")
    p.add_argument("--out-dir", default=d, help="parent of the per-run output directory")
    p.add_argument("--long-running", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="allow the full-size sweep grids")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pulsetrotter", description=__doc__.splitlines()[0])
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="multistart pulse synthesis for one Trotter primitive")
    p.add_argument("config")
    p.add_argument("--primitive-id", help="library id for the pulse (default BH:min or E:min)")
    p.add_argument("--merge", metavar="LIBRARY", help="merge into a copy of this library")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="T_c x q or M x q infidelity sweep")
    p.add_argument("config")
    p.add_argument("--grid", default="desk-tc", help="'tc=50,75,100;q=2,6,10', 'm=...;q=...' or a named grid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compile-track", help="compile an EBH schedule and track <11|psi>")
    p.add_argument("config")
    p.add_argument("--library", required=True)
    p.add_argument("--n_v", "--n-v", dest="n_v", type=int, default=1)
    p.add_argument("--q", type=int, default=6)
    p.add_argument("--mode", choices=("device", "model"), default="model")
    p.add_argument("--n-e-steps", type=int, default=60, help="E-step applications to track")
    p.set_defaults(func=cmd_compile_track)

    p = sub.add_parser("periodogram", help="periodogram of a library pulse")
    p.add_argument("--library", required=True)
    p.add_argument("--primitive", required=True)
    p.add_argument("--config", help="device section for the saturation bounds (default Table 1)")
    p.add_argument("--dt", type=float, default=0.1, help="sampling interval in ns")
    p.set_defaults(func=cmd_periodogram)

    p = sub.add_parser("bound", help="print the leading-order Trotter error bound")
    p.add_argument("config")
    p.add_argument("--q", type=int)
    p.set_defaults(func=cmd_bound)

    for sp in sub.choices.values():
        _add_globals(sp, suppress=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, ex.MissingPrimitiveError, ex.LibraryFormatError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PropagationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
