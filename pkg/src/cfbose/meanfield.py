"""Gross-Pitaevskii ground state and the effective basis frequency.

The expansion basis frequency is chosen so that its Gaussian ground state
has the same second moment as the GPE ground state of ``N0`` atoms; the
mode cutoff then follows from ``n_max * omega = T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GpeGroundState",
    "GpeConvergenceError",
    "GpeResolutionError",
    "gpe_ground_state",
    "gpe_energy_per_atom",
    "effective_frequency",
    "cutoff",
]


class GpeConvergenceError(RuntimeError):
    """Imaginary-time propagation did not converge; ``state`` is the last iterate."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class GpeResolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpeGroundState:
    x: np.ndarray
    psi: np.ndarray
    g: float
    n0: float
    energy: float
    second_moment: float
    converged: bool
    iterations: int
    energy_history: np.ndarray = field(default=None, repr=False)

    @property
    def dx(self):
        return self.x[1] - self.x[0]

    @property
    def energy_per_atom(self):
        return self.energy / self.n0

    @property
    def density(self):
        return self.psi**2


def _kinetic(psi, k2, dx):
    psik = np.fft.rfft(psi)
    n = psi.size
    # rfft stores each nonzero frequency once, except the Nyquist bin for even n
    w = np.full(psik.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return 0.5 * dx * np.sum(w * k2 * np.abs(psik) ** 2) / n


def gpe_energy_per_atom(psi, x, g, n0, k2=None):
    """Energy per atom of ``Psi = sqrt(n0) * psi`` on a periodic uniform grid."""
    dx = x[1] - x[0]
    if k2 is None:
        k2 = (2.0 * np.pi * np.fft.rfftfreq(x.size, dx)) ** 2
    dens = psi * psi
    return (
        _kinetic(psi, k2, dx)
        + dx * np.sum(0.5 * x * x * dens)
        + 0.5 * g * n0 * dx * np.sum(dens * dens)
    )


def gpe_ground_state(
    g,
    n0,
    grid_extent=10.0,
    grid_points=1024,
    dt=1e-3,
    tol=1e-10,
    max_iter=1_000_000,
    keep_history=False,
):
    """Imaginary-time split-step ground state of the 1D GPE in the trap.

    Strang splitting: half step in ``x**2/2 + g n0 |psi|**2``, full kinetic
    step in Fourier space, half potential step, then renormalization.
    Convergence is declared when the energy per atom changes by less than
    ``tol * max(|E|, 1)`` in one step.

    Raises
    ------
    GpeConvergenceError
        No convergence within ``max_iter`` steps.
    GpeResolutionError
        Width below the grid spacing, or density not negligible at the edge.
    """
    if n0 <= 0 or dt <= 0 or tol <= 0:
        raise ValueError("n0, dt and tol must be positive")
    x = np.linspace(-grid_extent, grid_extent, grid_points, endpoint=False)
    dx = x[1] - x[0]
    k2 = (2.0 * np.pi * np.fft.rfftfreq(grid_points, dx)) ** 2
    kin = np.exp(-0.5 * k2 * dt)
    trap = 0.5 * x * x
    gn = g * n0

    def normalize(p):
        return p / math.sqrt(dx * np.dot(p, p))

    psi = normalize(np.exp(-0.5 * x * x))
    energy = gpe_energy_per_atom(psi, x, g, n0, k2)
    history = [energy] if keep_history else None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        psi = psi * np.exp(-0.5 * dt * (trap + gn * psi * psi))
        psi = np.fft.irfft(kin * np.fft.rfft(psi), n=grid_points)
        psi = psi * np.exp(-0.5 * dt * (trap + gn * psi * psi))
        psi = normalize(psi)
        new = gpe_energy_per_atom(psi, x, g, n0, k2)
        if keep_history:
            history.append(new)
        change = abs(new - energy)
        energy = new
        if change < tol * max(abs(energy), 1.0):
            converged = True
            break
        x2 = dx * np.dot(x * x, psi * psi)
        if x2 < dx * dx:
            raise GpeResolutionError(
                f"unresolved width: <x^2>={x2:.3g} below grid spacing squared"
            )

    psi = np.abs(psi)
    # restore exact parity (split-step roundoff is ~1e-15)
    mirror = np.roll(psi[::-1], 1)
    psi = normalize(0.5 * (psi + mirror))
    second = dx * np.dot(x * x, psi * psi)
    state = GpeGroundState(
        x=x,
        psi=psi,
        g=float(g),
        n0=float(n0),
        energy=float(n0 * gpe_energy_per_atom(psi, x, g, n0, k2)),
        second_moment=float(second),
        converged=converged,
        iterations=it,
        energy_history=None if history is None else np.array(history),
    )
    if not converged:
        raise GpeConvergenceError(f"no convergence after {max_iter} steps", state)
    if second < dx * dx:
        raise GpeResolutionError(f"unresolved width: <x^2>={second:.3g}")
    dens = psi * psi
    edge = max(dens[0], dens[-1])
    if edge > 1e-12 * dens.max():
        raise GpeResolutionError(
            f"density at grid edge is {edge / dens.max():.2g} of peak; widen the grid"
        )
    return state


def effective_frequency(state):
    """Frequency of the oscillator whose ground state has the same ``<x^2>``."""
    if not state.converged:
        raise ValueError("ground state did not converge")
    return 1.0 / (2.0 * state.second_moment)


def cutoff(temperature, omega_eff):
    """Highest retained mode, ``n_max * omega_eff = T`` rounded half-up, at least 1."""
    if temperature <= 0 or omega_eff <= 0:
        raise ValueError("temperature and omega_eff must be positive")
    return max(1, math.floor(temperature / omega_eff + 0.5))
