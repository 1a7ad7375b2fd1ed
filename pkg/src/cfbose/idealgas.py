"""Canonical ideal Bose gas in a 1D harmonic trap.

Reference curves for the condensate occupation and its fluctuations, and the
finite-N degeneracy temperature.  Single-particle levels are ``eps_n = n``
(trap units, zero-point energy dropped).  Everything is done in log space
since partition functions under- and overflow quickly at N ~ 1e3.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

__all__ = [
    "IdealGasCurve",
    "critical_temperature",
    "default_level_count",
    "log_partition_functions",
    "canonical_occupations",
    "level_occupations",
    "ideal_gas_curve",
]


def critical_temperature(n_atoms):
    """Positive root of ``T ln(2T) = N``."""
    if n_atoms < 2:
        raise ValueError("critical temperature needs N >= 2")

    def f(t):
        return t * math.log(2.0 * t) - n_atoms

    # f(1/2) = -N < 0 and f(N) = N (ln 2N - 1) > 0 for N >= 2
    return brentq(f, 0.5, float(n_atoms), xtol=1e-300, rtol=1e-15, maxiter=500)


def default_level_count(temperature):
    return math.ceil(30.0 * temperature) + 16


def _log_z1(beta_k, level_count):
    # log sum_{n<L} exp(-beta_k n) for an array of inverse temperatures
    return np.log(-np.expm1(-beta_k * level_count)) - np.log(-np.expm1(-beta_k))


def log_partition_functions(n_atoms, temperature, level_count=None):
    """``log Z_m`` for ``m = 0..N`` via ``Z_m = (1/m) sum_k Z_1(k beta) Z_{m-k}``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if level_count is None:
        level_count = default_level_count(temperature)
    beta = 1.0 / temperature
    k = np.arange(1, n_atoms + 1, dtype=float)
    log_z1 = _log_z1(k * beta, level_count)
    log_z = np.zeros(n_atoms + 1)
    for m in range(1, n_atoms + 1):
        log_z[m] = logsumexp(log_z1[:m] + log_z[m - 1 :: -1][:m]) - math.log(m)
    return log_z


def _check_tail(log_z, n_atoms, temperature, level_count):
    top = level_occupations(n_atoms, temperature, level_count, levels=[level_count - 1],
                            log_z=log_z)[0]
    if top > 1e-10 * n_atoms:
        raise ValueError(
            f"level_count={level_count} too small at T={temperature}: "
            f"top level holds {top:.3g} atoms"
        )


def level_occupations(n_atoms, temperature, level_count=None, levels=None, log_z=None):
    """Mean canonical occupations ``<n_j>`` of the requested levels.

    ``<n_j> = sum_{n>=1} exp(-beta eps_j n) Z_{N-n} / Z_N``.
    """
    if level_count is None:
        level_count = default_level_count(temperature)
    if log_z is None:
        log_z = log_partition_functions(n_atoms, temperature, level_count)
    levels = np.arange(level_count) if levels is None else np.asarray(levels)
    n = np.arange(1, n_atoms + 1)
    ratio = log_z[n_atoms - n] - log_z[n_atoms]
    expo = -np.outer(levels, n) / temperature + ratio
    return np.exp(logsumexp(expo, axis=1))


def canonical_occupations(n_atoms, temperature, level_count=None):
    """Exact canonical mean and second moment of the ground-level occupation.

    Parameters
    ----------
    n_atoms : int
        Total number of atoms N.
    temperature : float
        Temperature in units of hbar omega0 / k_B.
    level_count : int, optional
        Number of retained single-particle levels; the default keeps the
        top-level population below 1e-10 N.

    Returns
    -------
    n0_mean, n0_second_moment : float
    """
    n_atoms = int(n_atoms)
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    if level_count is None:
        level_count = default_level_count(temperature)
    log_z = log_partition_functions(n_atoms, temperature, level_count)
    _check_tail(log_z, n_atoms, temperature, level_count)
    n = np.arange(1, n_atoms + 1)
    # P(N0 >= n) = Z_{N-n} / Z_N because eps_0 = 0
    tail = np.exp(log_z[n_atoms - n] - log_z[n_atoms])
    mean = float(np.sum(tail))
    second = float(np.sum((2 * n - 1) * tail))
    return mean, second


@dataclass(frozen=True)
class IdealGasCurve:
    temperatures: np.ndarray
    n0_mean: np.ndarray
    n0_dispersion: np.ndarray
    n_atoms: int


def ideal_gas_curve(n_atoms, temperatures):
    """Condensate occupation and its dispersion over a temperature grid."""
    temperatures = np.asarray(temperatures, dtype=float)
    means = np.empty_like(temperatures)
    disp = np.empty_like(temperatures)
    for i, t in enumerate(temperatures):
        m, s = canonical_occupations(n_atoms, t)
        means[i] = m
        disp[i] = math.sqrt(max(s - m * m, 0.0))
    return IdealGasCurve(temperatures, means, disp, int(n_atoms))
