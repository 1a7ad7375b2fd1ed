"""Classical energy functional of the mode amplitudes.

``E = sum_n omega n |a_n|^2 + (1 - omega^2)/2 <a|x^2|a> + g/2 int |Psi|^4``

The first two terms are exact quadratic forms (the ``x^2`` matrix is
pentadiagonal in the oscillator basis); the quartic term is evaluated on the
quadrature grid, which integrates it exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .basis import ModeAmplitudes, field_at_points, x2_matrix_bands

__all__ = [
    "EnergyBreakdown",
    "TwoModeMove",
    "CacheConsistencyError",
    "total_energy",
    "energy_delta",
    "x2_correction_prefactor",
]


class CacheConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyBreakdown:
    oscillator_term: float
    x2_correction: float
    interaction: float
    total: float

    @classmethod
    def from_terms(cls, osc, x2, inter):
        return cls(float(osc), float(x2), float(inter), float(osc + x2 + inter))

    def as_array(self):
        return np.array([self.oscillator_term, self.x2_correction, self.interaction])

    @property
    def scale(self):
        """Magnitude used for relative comparisons (never zero)."""
        return max(abs(self.oscillator_term) + abs(self.x2_correction)
                   + abs(self.interaction), 1e-300)


@dataclass(frozen=True)
class TwoModeMove:
    """Replace amplitudes of modes ``i`` and ``j`` by ``new_i`` and ``new_j``."""

    i: int
    j: int
    new_i: complex
    new_j: complex


def x2_correction_prefactor(omega):
    return 0.5 * (1.0 - omega * omega)


def _x2_form(alphas, diag, off2):
    # <a|X|a> for the symmetric pentadiagonal X; returns a complex number
    xa = diag * alphas
    xa[:-2] += off2 * alphas[2:]
    xa[2:] += off2 * alphas[:-2]
    return np.vdot(alphas, xa)


def total_energy(amps, basis, grid, g):
    """Full evaluation of the energy functional for ``amps``."""
    alphas = amps.alphas if isinstance(amps, ModeAmplitudes) else np.asarray(amps)
    if alphas.size != basis.n_modes or grid.mode_table.shape[0] != basis.n_modes:
        raise ValueError("amplitudes, basis and grid disagree on the number of modes")
    occ = np.abs(alphas) ** 2
    osc = basis.omega * np.dot(np.arange(basis.n_modes), occ)
    diag, off2 = x2_matrix_bands(basis.n_max, basis.omega)
    q = _x2_form(alphas, diag, off2)
    if abs(q.imag) > 1e-10 * max(abs(q.real), 1e-300):
        raise ArithmeticError(f"x^2 quadratic form has imaginary residue {q.imag}")
    x2 = x2_correction_prefactor(basis.omega) * q.real
    psi = field_at_points(alphas, grid)
    dens = psi.real**2 + psi.imag**2
    inter = 0.5 * g * np.dot(grid.weights, dens * dens)
    return EnergyBreakdown.from_terms(osc, x2, inter)


@numba.njit(cache=True)
def quadratic_delta(alphas, i, j, new_i, new_j, omega, diag, off2, c2):
    """Change of the two quadratic terms when modes i, j are replaced.

    Returns ``(d_oscillator, d_x2_correction)``; O(1) work.
    """
    ai = alphas[i]
    aj = alphas[j]
    di = new_i - ai
    dj = new_j - aj
    occ_i = new_i.real * new_i.real + new_i.imag * new_i.imag
    occ_j = new_j.real * new_j.real + new_j.imag * new_j.imag
    old_i = ai.real * ai.real + ai.imag * ai.imag
    old_j = aj.real * aj.real + aj.imag * aj.imag
    d_osc = omega * (i * (occ_i - old_i) + j * (occ_j - old_j))
    n = alphas.size
    xa_i = diag[i] * ai
    if i >= 2:
        xa_i += off2[i - 2] * alphas[i - 2]
    if i + 2 < n:
        xa_i += off2[i] * alphas[i + 2]
    xa_j = diag[j] * aj
    if j >= 2:
        xa_j += off2[j - 2] * alphas[j - 2]
    if j + 2 < n:
        xa_j += off2[j] * alphas[j + 2]
    dq = 2.0 * ((di.conjugate() * xa_i).real + (dj.conjugate() * xa_j).real)
    dq += diag[i] * (di.real * di.real + di.imag * di.imag)
    dq += diag[j] * (dj.real * dj.real + dj.imag * dj.imag)
    if j == i + 2:
        dq += 2.0 * off2[i] * (di.conjugate() * dj).real
    elif i == j + 2:
        dq += 2.0 * off2[j] * (di.conjugate() * dj).real
    return d_osc, c2 * dq


@numba.njit(cache=True)
def updated_field_quartic(field, out, table, weights, i, j, di, dj):
    """Write ``field + di phi_i + dj phi_j`` to ``out`` and return ``sum w |out|^4``."""
    total = 0.0
    for k in range(field.size):
        v = field[k] + di * table[i, k] + dj * table[j, k]
        out[k] = v
        d = v.real * v.real + v.imag * v.imag
        total += weights[k] * d * d
    return total


def energy_delta(state, move):
    """Energy after applying ``move`` to a chain state, without committing it.

    ``state`` needs ``alphas``, ``field``, ``energy``, ``basis``, ``grid`` and
    ``g`` attributes (see :class:`cfbose.sampler.ChainState`).  Returns the
    new :class:`EnergyBreakdown` and the updated field values.
    """
    if getattr(state, "debug", False):
        state.check_caches()
    i, j = int(move.i), int(move.j)
    if i == j:
        raise ValueError("a two-mode move needs distinct modes")
    basis = state.basis
    diag, off2 = state.x2_bands
    c2 = x2_correction_prefactor(basis.omega)
    new_i = complex(move.new_i)
    new_j = complex(move.new_j)
    d_osc, d_x2 = quadratic_delta(state.alphas, i, j, new_i, new_j, basis.omega,
                                  diag, off2, c2)
    out = np.empty_like(state.field)
    quart = updated_field_quartic(state.field, out, state.grid.mode_table,
                                  state.grid.weights, i, j,
                                  new_i - state.alphas[i], new_j - state.alphas[j])
    e = state.energy
    new = EnergyBreakdown.from_terms(e.oscillator_term + d_osc,
                                     e.x2_correction + d_x2,
                                     0.5 * state.g * quart)
    return new, out
