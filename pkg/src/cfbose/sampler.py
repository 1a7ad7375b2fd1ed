"""Metropolis sampling of the classical field on the sphere sum |a_n|^2 = N.

Moves are random two-mode unitary rotations.  They keep the particle number
exactly, preserve the Lebesgue measure on the sphere and have a symmetric
proposal density, so the stationary law is ``exp(-E/T)`` on the sphere.

The inner loop runs in numba.  Random numbers come from a numpy
``Generator`` in fixed-size batches, which makes a chain a deterministic
function of its seed independent of how the work is chunked.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .basis import ModeAmplitudes, field_at_points, x2_matrix_bands
from .energy import (
    CacheConsistencyError,
    EnergyBreakdown,
    TwoModeMove,
    energy_delta,
    quadratic_delta,
    total_energy,
    updated_field_quartic,
    x2_correction_prefactor,
)

__all__ = [
    "SamplerConfig",
    "ChainState",
    "ChainResult",
    "Proposal",
    "initial_state",
    "propose_rotation",
    "metropolis_step",
    "run_chain",
    "chain_seeds",
]

TWO_PI = 2.0 * math.pi
# steps per random-number batch; part of the determinism contract
_BATCH_STEPS = 8192


@dataclass(frozen=True)
class SamplerConfig:
    burn_in_sweeps: int = 2000
    measure_sweeps: int = 20000
    thin: int = 10
    target_acceptance: float = 0.4
    seed: int = 12345
    chains: int = 1
    theta_max: float = 0.1
    adapt_every: int = 20
    refresh_every: int = 1000

    def __post_init__(self):
        for name in ("burn_in_sweeps", "measure_sweeps", "thin", "chains",
                     "adapt_every", "refresh_every"):
            v = getattr(self, name)
            if int(v) != v or v < (0 if name == "burn_in_sweeps" else 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if not 0 < self.theta_max <= math.pi:
            raise ValueError("theta_max must lie in (0, pi]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def chain_seeds(seed, chains, key=()):
    """Independent child seed sequences for ``chains`` chains."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return ss.spawn(chains)


class ChainState:
    """One Metropolis walker with cached field values and energy terms."""

    def __init__(self, alphas, n_total, basis, grid, g, rng, theta_max=0.1, debug=False):
        self.alphas = np.array(alphas, dtype=complex)
        self.n_total = float(n_total)
        self.basis = basis
        self.grid = grid
        self.g = float(g)
        self.rng = rng
        self.theta_max = float(theta_max)
        self.debug = debug
        self.accepted = 0
        self.proposed = 0
        self.x2_bands = x2_matrix_bands(basis.n_max, basis.omega)
        self.refresh()

    @property
    def amps(self):
        return ModeAmplitudes(self.alphas.copy(), self.n_total, rtol=1e-10)

    @property
    def acceptance(self):
        return self.accepted / self.proposed if self.proposed else float("nan")

    def refresh(self):
        """Recompute field and energy caches from the amplitudes."""
        self.field = field_at_points(self.alphas, self.grid)
        self.energy = total_energy(self.alphas, self.basis, self.grid, self.g)

    def cache_error(self):
        """Relative deviation of the cached energy from a full recomputation."""
        full = total_energy(self.alphas, self.basis, self.grid, self.g)
        return abs(full.total - self.energy.total) / full.scale

    def check_caches(self, rtol=1e-7):
        err = self.cache_error()
        if err > rtol:
            raise CacheConsistencyError(f"energy cache drifted by {err:.3g} (relative)")

    def norm_drift(self):
        return abs(np.vdot(self.alphas, self.alphas).real - self.n_total) / self.n_total


def initial_state(n_particles, basis, grid, g, mode="cold", seed=None,
                  temperature=None, theta_max=0.1):
    """Starting walker: all atoms in mode 0 (``cold``) or a thermal guess.

    The thermal guess puts ``|a_n|^2 ~ exp(-omega n / T)`` with uniform
    random phases and rescales onto the sphere.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alphas = np.zeros(basis.n_modes, dtype=complex)
    if mode == "cold":
        alphas[0] = math.sqrt(n_particles)
    elif mode in ("thermal", "thermal-guess"):
        if temperature is None or temperature <= 0:
            raise ValueError("thermal start needs a positive temperature")
        occ = np.exp(-basis.omega * np.arange(basis.n_modes) / temperature)
        phases = rng.uniform(0.0, TWO_PI, basis.n_modes)
        alphas = np.sqrt(occ) * np.exp(1j * phases)
        alphas *= math.sqrt(n_particles / np.vdot(alphas, alphas).real)
    else:
        raise ValueError(f"unknown start mode {mode!r}")
    return ChainState(alphas, n_particles, basis, grid, g, rng, theta_max=theta_max)


@dataclass(frozen=True)
class Proposal:
    move: TwoModeMove
    theta: float
    chi: float
    eta: float


def _draw(rng, n_modes, steps):
    ints = np.empty((steps, 2), dtype=np.int64)
    ints[:, 0] = rng.integers(0, n_modes, steps)
    ints[:, 1] = rng.integers(0, n_modes - 1, steps)
    floats = rng.random((steps, 4))
    return ints, floats


@numba.njit(cache=True)
def _rotate(ai, aj, theta, chi, eta):
    c = math.cos(theta)
    s = math.sin(theta)
    ph = complex(math.cos(chi), math.sin(chi))
    new_i = (c * ai + ph * s * aj) * complex(math.cos(eta), math.sin(eta))
    new_j = -ph.conjugate() * s * ai + c * aj
    return new_i, new_j


def propose_rotation(state):
    """Draw a random norm-preserving two-mode rotation (not applied)."""
    n_modes = state.alphas.size
    if n_modes < 2:
        raise ValueError("need at least two modes")
    ints, floats = _draw(state.rng, n_modes, 1)
    i, j = int(ints[0, 0]), int(ints[0, 1])
    if j >= i:
        j += 1
    theta = state.theta_max * (2.0 * floats[0, 0] - 1.0)
    chi = TWO_PI * floats[0, 1]
    eta = TWO_PI * floats[0, 2]
    new_i, new_j = _rotate(state.alphas[i], state.alphas[j], theta, chi, eta)
    return Proposal(TwoModeMove(i, j, new_i, new_j), theta, chi, eta)


def metropolis_step(state, temperature, proposal=None, u=None):
    """One Metropolis update; returns True if the move was accepted."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if proposal is None:
        proposal = propose_rotation(state)
    move = proposal.move if isinstance(proposal, Proposal) else proposal
    new_energy, new_field = energy_delta(state, move)
    d_e = new_energy.total - state.energy.total
    if u is None:
        u = state.rng.random()
    state.proposed += 1
    if d_e <= 0.0 or u < math.exp(-d_e / temperature):
        state.alphas[move.i] = move.new_i
        state.alphas[move.j] = move.new_j
        state.field = new_field
        state.energy = new_energy
        state.accepted += 1
        return True
    return False


@numba.njit(cache=True)
def _run_steps(alphas, field, buf, table, weights, omega, diag, off2, c2, g,
               temperature, theta_max, ints, floats, parts,
               counter, record_every, samples, energies, rec):
    """Apply ``len(ints)`` Metropolis steps in place; returns the accept count.

    ``parts`` holds [oscillator, x2 correction, interaction] and is updated.
    ``counter[0]`` counts steps; every ``record_every`` steps (if > 0) the
    amplitudes and total energy go to row ``rec[0]`` of ``samples`` and
    ``energies``.  With ``g == 0`` the field cache is left stale.
    """
    accepted = 0
    track = g != 0.0
    for s in range(ints.shape[0]):
        i = ints[s, 0]
        j = ints[s, 1]
        if j >= i:
            j += 1
        theta = theta_max * (2.0 * floats[s, 0] - 1.0)
        new_i, new_j = _rotate(alphas[i], alphas[j], theta,
                               TWO_PI * floats[s, 1], TWO_PI * floats[s, 2])
        d_osc, d_x2 = quadratic_delta(alphas, i, j, new_i, new_j, omega, diag, off2, c2)
        if track:
            inter = 0.5 * g * updated_field_quartic(field, buf, table, weights, i, j,
                                                    new_i - alphas[i], new_j - alphas[j])
        else:
            inter = 0.0
        d_e = d_osc + d_x2 + inter - parts[2]
        if d_e <= 0.0 or floats[s, 3] < math.exp(-d_e / temperature):
            alphas[i] = new_i
            alphas[j] = new_j
            parts[0] += d_osc
            parts[1] += d_x2
            parts[2] = inter
            if track:
                for k in range(field.size):
                    field[k] = buf[k]
            accepted += 1
        counter[0] += 1
        if record_every > 0 and counter[0] % record_every == 0:
            r = rec[0]
            for k in range(alphas.size):
                samples[r, k] = alphas[k]
            energies[r] = parts[0] + parts[1] + parts[2]
            rec[0] = r + 1
    return accepted


class _Driver:
    """Feeds batched random numbers to the compiled kernel for one state."""

    def __init__(self, state, temperature):
        self.state = state
        self.temperature = float(temperature)
        self.n_modes = state.alphas.size
        self.buf = np.empty_like(state.field)
        self.parts = state.energy.as_array()
        self.diag, self.off2 = state.x2_bands
        self.c2 = x2_correction_prefactor(state.basis.omega)
        self._ints = None
        self._floats = None
        self._pos = 0
        self._no_samples = np.empty((0, self.n_modes), dtype=complex)
        self._no_energies = np.empty(0)

    def _take(self, steps):
        # yields slices of the batched random stream
        while steps > 0:
            if self._ints is None or self._pos == _BATCH_STEPS:
                self._ints, self._floats = _draw(self.state.rng, self.n_modes, _BATCH_STEPS)
                self._pos = 0
            k = min(steps, _BATCH_STEPS - self._pos)
            yield self._ints[self._pos:self._pos + k], self._floats[self._pos:self._pos + k]
            self._pos += k
            steps -= k

    def steps(self, n, record_every=0, samples=None, energies=None):
        """Run ``n`` steps, optionally recording every ``record_every`` steps."""
        st = self.state
        if samples is None:
            samples = self._no_samples
            energies = self._no_energies
            record_every = 0
        counter = np.zeros(1, dtype=np.int64)
        rec = np.zeros(1, dtype=np.int64)
        acc = 0
        for ints, floats in self._take(n):
            acc += _run_steps(st.alphas, st.field, self.buf, st.grid.mode_table,
                              st.grid.weights, st.basis.omega, self.diag, self.off2,
                              self.c2, st.g, self.temperature, st.theta_max,
                              ints, floats, self.parts,
                              counter, record_every, samples, energies, rec)
        st.accepted += acc
        st.proposed += n
        if st.g == 0.0:
            st.field = field_at_points(st.alphas, st.grid)
        st.energy = EnergyBreakdown.from_terms(*self.parts)
        return acc

    def refresh(self, check=True):
        st = self.state
        if check:
            st.check_caches()
        # remove rounding drift of the norm and of the cached sums
        st.alphas *= math.sqrt(st.n_total / np.vdot(st.alphas, st.alphas).real)
        st.refresh()
        self.parts = st.energy.as_array()


@dataclass
class ChainResult:
    """Snapshots and diagnostics of one chain's measurement phase."""

    samples: np.ndarray
    energies: np.ndarray
    acceptance: float
    burn_in_acceptance: float
    theta_max: float
    sweeps: int
    n_total: float
    max_norm_drift: float = 0.0
    warnings: list = field(default_factory=list)


def run_chain(config, n_particles, g, temperature, basis, grid, seed=None,
              init="cold", state=None):
    """Burn-in with step adaptation, then a measurement run.

    One sweep is ``n_max + 1`` elementary steps.  During burn-in
    ``theta_max`` is multiplied by ``exp(2 (acc - target))`` every
    ``adapt_every`` sweeps; it is frozen afterwards.  Every ``thin``-th
    measurement sweep the amplitudes and total energy are recorded.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if state is None:
        rng = np.random.default_rng(config.seed if seed is None else seed)
        state = initial_state(n_particles, basis, grid, g, mode=init, seed=rng,
                              temperature=temperature, theta_max=config.theta_max)
    sweep = basis.n_modes
    drv = _Driver(state, temperature)

    done = 0
    burn_acc = 0
    while done < config.burn_in_sweeps:
        k = min(config.adapt_every, config.burn_in_sweeps - done)
        acc = drv.steps(k * sweep)
        burn_acc += acc
        rate = acc / (k * sweep)
        state.theta_max = float(np.clip(
            state.theta_max * math.exp(2.0 * (rate - config.target_acceptance)),
            1e-9, math.pi))
        done += k
        if done % config.refresh_every < k:
            drv.refresh()
    drv.refresh()
    burn_rate = burn_acc / (config.burn_in_sweeps * sweep) if config.burn_in_sweeps else float("nan")

    n_rec = config.measure_sweeps // config.thin
    samples = np.empty((n_rec, basis.n_modes), dtype=complex)
    energies = np.empty(n_rec)
    acc0, prop0 = state.accepted, state.proposed
    drift = 0.0
    # records are taken in chunks of whole refresh intervals
    per_chunk = max(config.refresh_every // config.thin, 1)
    r = 0
    while r < n_rec:
        k = min(per_chunk, n_rec - r)
        drv.steps(k * config.thin * sweep, config.thin * sweep,
                  samples[r:r + k], energies[r:r + k])
        r += k
        drift = max(drift, state.norm_drift())
        drv.refresh()
    rest = config.measure_sweeps - n_rec * config.thin
    if rest:
        drv.steps(rest * sweep)
    drift = max(drift, state.norm_drift())
    state.check_caches()
    rate = (state.accepted - acc0) / max(state.proposed - prop0, 1)
    notes = []
    if not 0.1 <= rate <= 0.9:
        msg = f"final acceptance {rate:.3f} outside [0.1, 0.9]"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return ChainResult(samples=samples, energies=energies, acceptance=rate,
                       burn_in_acceptance=burn_rate, theta_max=state.theta_max,
                       sweeps=config.measure_sweeps, n_total=float(n_particles),
                       max_norm_drift=drift, warnings=notes)
