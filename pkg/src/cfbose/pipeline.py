"""End-to-end (g, T) scans: ideal-gas N0 -> GPE width -> basis -> sampling -> observables."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec, build_quadrature
from .idealgas import canonical_occupations, critical_temperature
from .meanfield import cutoff, effective_frequency, gpe_ground_state
from .observables import (
    DensityMatrixAccumulator,
    accumulate,
    condensate_profile,
    condensate_statistics,
    diagnostic_grid,
    diagnostic_table,
    diagonalize,
    fwhm,
    g1_profile,
    merge,
)
from .sampler import SamplerConfig, run_chain

__all__ = [
    "ConfigError",
    "Temperature",
    "GpeConfig",
    "ScanConfig",
    "ScanPoint",
    "PointResult",
    "parse_config",
    "parse_temperature",
    "point_seed",
    "basis_for_point",
    "run_point",
    "run_scan",
    "write_outputs",
    "scan_csv",
    "CONFIG_KEYS",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Temperature:
    """Absolute temperature or a fraction of T_C (resolved once N is known)."""

    value: float
    relative: bool = False

    def resolve(self, n_atoms):
        return self.value * critical_temperature(n_atoms) if self.relative else self.value

    def __str__(self):
        return f"{self.value!r}Tc" if self.relative else repr(self.value)


def parse_temperature(text):
    t = text.strip()
    rel = t.lower().endswith("tc")
    num = t[:-2] if rel else t
    try:
        value = float(num) if num.strip() else 1.0
    except ValueError:
        raise ConfigError(f"bad temperature {text!r}") from None
    if not value > 0 or not math.isfinite(value):
        raise ConfigError(f"temperature must be positive, got {text!r}")
    return Temperature(value, rel)


@dataclass(frozen=True)
class GpeConfig:
    grid_extent: float = 10.0
    grid_points: int = 1024
    dt: float = 1e-3
    tol: float = 1e-10


@dataclass(frozen=True)
class ScanConfig:
    N: int
    g_list: tuple
    T_list: tuple
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gpe: GpeConfig = field(default_factory=GpeConfig)
    output_dir: str = "out"
    emit_profiles: bool = False
    init: str = "cold"
    oversample: float = 1.0
    jackknife_blocks: int = 16
    workers: int = 1

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError("N must be >= 2")
        if not self.g_list:
            raise ConfigError("g_list must not be empty")
        if not self.T_list:
            raise ConfigError("T_list must not be empty")
        if self.init not in ("cold", "thermal"):
            raise ConfigError("init must be 'cold' or 'thermal'")
        if self.jackknife_blocks < 2:
            raise ConfigError("jackknife_blocks must be >= 2")

    def temperatures(self):
        return [t.resolve(self.N) for t in self.T_list]


# key -> (section, parser, default, help)
def _int(v):
    return int(v)


def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(s) for s in v.split(",") if s.strip())


def _temps(v):
    return tuple(parse_temperature(s) for s in v.split(",") if s.strip())


_SAMPLER_DEFAULTS = SamplerConfig()
_GPE_DEFAULTS = GpeConfig()

CONFIG_KEYS = {
    "N": ("scan", _int, None, "total number of atoms (required)"),
    "g_list": ("scan", _floats, None, "comma-separated couplings (required)"),
    "T_list": ("scan", _temps, None,
               "comma-separated temperatures; suffix Tc for fractions of T_C (required)"),
    "output_dir": ("scan", str, "out", "output directory"),
    "emit_profiles": ("scan", _bool, False, "write g1/density profiles per point"),
    "init": ("scan", str, "cold", "chain start: cold or thermal"),
    "oversample": ("scan", float, 1.0, "quadrature oversampling factor"),
    "jackknife_blocks": ("scan", _int, 16, "blocks for jackknife errors of widths"),
    "workers": ("scan", _int, 1, "parallel worker processes for scan points"),
    "burn_in_sweeps": ("sampler", _int, _SAMPLER_DEFAULTS.burn_in_sweeps, "burn-in sweeps"),
    "measure_sweeps": ("sampler", _int, _SAMPLER_DEFAULTS.measure_sweeps,
                       "measurement sweeps per chain"),
    "thin": ("sampler", _int, _SAMPLER_DEFAULTS.thin, "record every k-th sweep"),
    "target_acceptance": ("sampler", float, _SAMPLER_DEFAULTS.target_acceptance,
                          "burn-in acceptance target"),
    "seed": ("sampler", _int, _SAMPLER_DEFAULTS.seed, "master seed (unsigned 64-bit)"),
    "chains": ("sampler", _int, _SAMPLER_DEFAULTS.chains, "independent chains per point"),
    "theta_max": ("sampler", float, _SAMPLER_DEFAULTS.theta_max, "initial rotation amplitude"),
    "adapt_every": ("sampler", _int, _SAMPLER_DEFAULTS.adapt_every,
                    "sweeps between step-size updates during burn-in"),
    "refresh_every": ("sampler", _int, _SAMPLER_DEFAULTS.refresh_every,
                      "sweeps between full cache recomputations"),
    "gpe_extent": ("gpe", float, _GPE_DEFAULTS.grid_extent, "GPE grid half-width"),
    "gpe_points": ("gpe", _int, _GPE_DEFAULTS.grid_points, "GPE grid points"),
    "gpe_dt": ("gpe", float, _GPE_DEFAULTS.dt, "GPE imaginary time step"),
    "gpe_tol": ("gpe", float, _GPE_DEFAULTS.tol, "GPE relative energy tolerance"),
}

_GPE_NAMES = {"gpe_extent": "grid_extent", "gpe_points": "grid_points",
              "gpe_dt": "dt", "gpe_tol": "tol"}


def parse_config(text, **overrides):
    """Parse the flat ``key=value`` format (``#`` comments, comma lists).

    Keyword ``overrides`` use the same key names and win over the text.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key][1](val)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    for key, val in overrides.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = val
    for key in ("N", "g_list", "T_list"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    if values["N"] <= 0:
        raise ConfigError(f"N must be positive, got {values['N']}")
    sections = {"scan": {}, "sampler": {}, "gpe": {}}
    for key, (section, _, default, _) in CONFIG_KEYS.items():
        if key in values:
            sections[section][_GPE_NAMES.get(key, key)] = values[key]
    try:
        sampler = SamplerConfig(**sections["sampler"])
        gpe = GpeConfig(**sections["gpe"])
        if gpe.grid_points < 16 or not gpe.grid_extent > 0 or not gpe.dt > 0 or not gpe.tol > 0:
            raise ValueError("GPE parameters out of range")
        scan = sections["scan"]
        if "oversample" in scan and scan["oversample"] < 1:
            raise ValueError("oversample must be >= 1")
        if "workers" in scan and scan["workers"] < 1:
            raise ValueError("workers must be >= 1")
        return ScanConfig(sampler=sampler, gpe=gpe, **scan)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class ScanPoint:
    g: float
    T: float
    T_over_Tc: float
    N0_ideal: float
    omega_eff: float
    n_max: int
    n0_mean: float = math.nan
    n0_err: float = math.nan
    dn0: float = math.nan
    dn0_err: float = math.nan
    dn0_rel: float = math.nan
    dn0_rel_err: float = math.nan
    g1_fwhm: float = math.nan
    g1_fwhm_err: float = math.nan
    cond_fwhm: float = math.nan
    cond_fwhm_err: float = math.nan
    lambda0: float = math.nan
    acceptance: float = math.nan
    sweeps: int = 0
    seed: int = 0
    status: str = "ok"


@dataclass
class PointResult:
    point: ScanPoint
    profile: dict | None = None
    condensate: object = None
    accumulator: DensityMatrixAccumulator | None = None


def point_seed(master_seed, g, temperature):
    """64-bit seed derived from the master seed and the point's (g, T)."""
    digest = hashlib.sha256(f"{float(g)!r}|{float(temperature)!r}".encode()).digest()
    key = tuple(int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4))
    ss = np.random.SeedSequence(master_seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])


def basis_for_point(n_atoms, g, temperature, gpe=GpeConfig()):
    """``(N0_ideal, omega_eff, n_max)`` for one scan point."""
    n0_ideal, _ = canonical_occupations(n_atoms, temperature)
    if g == 0:
        omega = 1.0
    else:
        state = gpe_ground_state(g, n0_ideal, grid_extent=gpe.grid_extent,
                                 grid_points=gpe.grid_points, dt=gpe.dt, tol=gpe.tol)
        omega = effective_frequency(state)
    return n0_ideal, omega, cutoff(temperature, omega)


def _jackknife(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2 or not np.all(np.isfinite(v)):
        return math.nan
    return float(math.sqrt((v.size - 1) * np.mean((v - v.mean()) ** 2)))


def _safe_fwhm(x, y):
    try:
        return fwhm(x, y)
    except ValueError:
        return math.nan


def _widths(acc, x, table):
    _, betas = diagonalize(acc)
    mask, g1 = g1_profile(acc)
    return _safe_fwhm(x, g1.real), _safe_fwhm(x, condensate_profile(betas[:, 0], table))


def run_point(n_atoms, g, temperature, sampler, gpe=GpeConfig(), init="cold",
              oversample=1.0, jackknife_blocks=16, emit_profile=False, keep=False):
    """Run the full pipeline at one (g, T) and return a :class:`PointResult`."""
    tc = critical_temperature(n_atoms)
    seed = point_seed(sampler.seed, g, temperature)
    n0_ideal, omega, n_max = basis_for_point(n_atoms, g, temperature, gpe)
    point = ScanPoint(g=float(g), T=float(temperature), T_over_Tc=temperature / tc,
                      N0_ideal=n0_ideal, omega_eff=omega, n_max=n_max,
                      sweeps=sampler.measure_sweeps * sampler.chains, seed=seed)
    basis = BasisSpec(omega, n_max)
    grid = build_quadrature(basis, oversample)
    x = diagnostic_grid()
    table = diagnostic_table(basis, x)

    chains = np.random.SeedSequence(seed).spawn(sampler.chains)
    runs = [run_chain(sampler, n_atoms, g, temperature, basis, grid,
                      seed=np.random.default_rng(ss), init=init) for ss in chains]
    samples = [r.samples for r in runs]
    point.acceptance = float(np.mean([r.acceptance for r in runs]))

    # pass 1: density matrix and field correlations, in contiguous blocks
    per_chain = max(jackknife_blocks // len(samples), 1)
    blocks = []
    for s in samples:
        for part in np.array_split(s, per_chain):
            if len(part):
                blocks.append(accumulate(DensityMatrixAccumulator.empty(basis.n_modes, x.size),
                                         part, table=table))
    acc = merge(*blocks)
    lam, betas = diagonalize(acc)
    # pass 2: projections onto the fixed condensate mode
    series = np.concatenate(samples)
    mean, sd, mean_err, sd_err, n0 = condensate_statistics(series, betas[:, 0])
    point.lambda0 = float(lam[0])
    point.n0_mean, point.n0_err = mean, mean_err
    point.dn0, point.dn0_err = sd, sd_err
    point.dn0_rel = sd / mean
    point.dn0_rel_err = abs(point.dn0_rel) * math.hypot(sd_err / sd if sd else 0.0,
                                                        mean_err / mean)
    mask, g1 = g1_profile(acc)
    cond = condensate_profile(betas[:, 0], table)
    point.g1_fwhm = _safe_fwhm(x, g1.real)
    point.cond_fwhm = _safe_fwhm(x, cond)
    if len(blocks) >= 2:
        loo = [_widths(merge(*(b for k, b in enumerate(blocks) if k != m)), x, table)
               for m in range(len(blocks))]
        point.g1_fwhm_err = _jackknife([w[0] for w in loo])
        point.cond_fwhm_err = _jackknife([w[1] for w in loo])

    profile = None
    if emit_profile:
        profile = {"x": x, "g1": g1.real, "density": acc.dens / acc.count,
                   "condensate_density": lam[0] * cond}
    result = PointResult(point=point, profile=profile)
    if keep:
        acc.n0_series = n0
        result.accumulator = acc
        result.condensate = (lam, betas)
    return result


def _point_task(args):
    cfg, g, t = args
    try:
        return run_point(cfg.N, g, t, cfg.sampler, cfg.gpe, init=cfg.init,
                         oversample=cfg.oversample,
                         jackknife_blocks=cfg.jackknife_blocks,
                         emit_profile=cfg.emit_profiles)
    except Exception as exc:  # a failed point must not abort the scan
        tc = critical_temperature(cfg.N)
        p = ScanPoint(g=float(g), T=float(t), T_over_Tc=t / tc, N0_ideal=math.nan,
                      omega_eff=math.nan, n_max=0,
                      seed=point_seed(cfg.sampler.seed, g, t),
                      status=f"failed: {type(exc).__name__}: {exc}".replace("\n", " "))
        return PointResult(point=p)


def run_scan(config):
    """All (g, T) points of the scan, in g-major order."""
    tasks = [(config, g, t) for g in config.g_list for t in config.temperatures()]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_point_task, tasks))
    return [_point_task(t) for t in tasks]


SCAN_COLUMNS = [f.name for f in dataclasses.fields(ScanPoint)]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def scan_csv(points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS)
    for p in points:
        w.writerow([_fmt(getattr(p, c)) for c in SCAN_COLUMNS])
    return buf.getvalue()


def _profile_name(p):
    return f"profile_g{p.g!r}_T{p.T:.6g}.csv"


def write_outputs(config, results, out_dir=None, wall_time=None):
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = [r.point for r in results]
    (out / "scan.csv").write_text(scan_csv(points), encoding="utf-8")
    for r in results:
        if r.profile is None:
            continue
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "g1", "density", "condensate_density"])
        pr = r.profile
        for row in zip(pr["x"], pr["g1"], pr["density"], pr["condensate_density"]):
            w.writerow([repr(float(v)) for v in row])
        (out / _profile_name(r.point)).write_text(buf.getvalue(), encoding="utf-8")
    summary = {
        "config": _config_echo(config),
        "versions": {"cfbose": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "wall_time_s": wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "points": len(points),
        "failed": sum(p.status != "ok" for p in points),
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return out


def _config_echo(config):
    d = dataclasses.asdict(config)
    d["T_list"] = [str(t) for t in config.T_list]
    d["T_resolved"] = config.temperatures()
    d["g_list"] = list(config.g_list)
    return d
