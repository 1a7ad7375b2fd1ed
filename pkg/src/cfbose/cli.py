"""Command-line interface: ``cfbose run | idealgas | gpe``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .idealgas import critical_temperature, ideal_gas_curve
from .meanfield import GpeConvergenceError, GpeResolutionError, cutoff, effective_frequency, gpe_ground_state
from .pipeline import CONFIG_KEYS, ConfigError, parse_config, parse_temperature, run_scan, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _config_help():
    lines = ["config keys (key=value, one per line, '#' comments):"]
    for key, (_, _, default, text) in CONFIG_KEYS.items():
        d = "" if default is None else f" [default: {default}]"
        lines.append(f"  {key:<18} {text}{d}")
    return "\n".join(lines)


def _parse_range(spec, n_atoms):
    """``start:stop:step``; if any part carries a ``Tc`` suffix, all parts
    are fractions of T_C (so ``0:1.2Tc:0.02`` steps by 0.02 T_C)."""
    parts = [s.strip() for s in spec.split(":")]
    if len(parts) != 3:
        raise ConfigError(f"T range must be start:stop:step, got {spec!r}")
    relative = any(s.lower().endswith("tc") for s in parts)
    scale = critical_temperature(n_atoms) if relative else 1.0

    def val(s):
        num = s[:-2] if s.lower().endswith("tc") else s
        return (float(num) if num else 1.0) * scale

    try:
        start, stop, step = (val(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad T range {spec!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad T range {spec!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    temps = start + step * np.arange(n)
    return temps[temps > 0]


def cmd_run(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, seed=args.seed, chains=args.chains,
                           emit_profiles=True if args.emit_profiles else None,
                           output_dir=args.out, workers=args.workers)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    results = run_scan(cfg)
    out = write_outputs(cfg, results, wall_time=time.perf_counter() - t0)
    failed = [r.point for r in results if r.point.status != "ok"]
    for p in failed:
        print(f"g={p.g} T={p.T:.6g}: {p.status}", file=sys.stderr)
    print(f"wrote {len(results)} points to {out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_idealgas(args):
    try:
        temps = _parse_range(args.T_range, args.N)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    curve = ideal_gas_curve(args.N, temps)
    tc = critical_temperature(args.N)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "T_over_Tc", "n0_mean", "n0_dispersion", "n0_relative_dispersion"])
        for t, m, d in zip(curve.temperatures, curve.n0_mean, curve.n0_dispersion):
            w.writerow([repr(float(t)), repr(float(t / tc)), repr(float(m)), repr(float(d)),
                        repr(float(d / m))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_gpe(args):
    try:
        state = gpe_ground_state(args.g, args.n0, grid_extent=args.extent,
                                 grid_points=args.points, dt=args.dt, tol=args.tol)
    except (GpeConvergenceError, GpeResolutionError, ValueError) as exc:
        print(f"gpe error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    omega = effective_frequency(state)
    summary = {"g": args.g, "n0": args.n0, "energy": state.energy,
               "energy_per_atom": state.energy_per_atom,
               "second_moment": state.second_moment, "omega_eff": omega,
               "iterations": state.iterations}
    if args.T is not None:
        t = parse_temperature(args.T)
        if t.relative:
            raise SystemExit("--T for gpe must be absolute")
        summary["n_max"] = cutoff(t.value, omega)
    print(json.dumps(summary, indent=2))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "psi"])
            for xv, pv in zip(state.x, state.psi):
                w.writerow([repr(float(xv)), repr(float(pv))])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="cfbose",
        description="Classical-field Monte Carlo for a 1D trapped Bose gas.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a (g, T) scan from a config file",
                       epilog=_config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides config)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--chains", type=int, default=None)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--emit-profiles", action="store_true")
    r.set_defaults(func=cmd_run)

    ig = sub.add_parser("idealgas", help="canonical ideal-gas condensate curves")
    ig.add_argument("--N", type=int, required=True)
    ig.add_argument("--T-range", required=True, dest="T_range",
                    help="start:stop:step, e.g. 0:1.2Tc:0.02Tc (T=0 is skipped)")
    ig.add_argument("--out", default=None)
    ig.set_defaults(func=cmd_idealgas)

    gp = sub.add_parser("gpe", help="GPE ground state and effective frequency")
    gp.add_argument("--g", type=float, required=True)
    gp.add_argument("--n0", type=float, required=True)
    gp.add_argument("--T", default=None, help="temperature for the cutoff (optional)")
    gp.add_argument("--extent", type=float, default=10.0)
    gp.add_argument("--points", type=int, default=1024)
    gp.add_argument("--dt", type=float, default=1e-3)
    gp.add_argument("--tol", type=float, default=1e-10)
    gp.add_argument("--out", default=None, help="write x,psi CSV here")
    gp.set_defaults(func=cmd_gpe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
