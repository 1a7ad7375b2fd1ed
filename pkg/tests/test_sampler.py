import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfbose.basis import BasisSpec, build_quadrature
from cfbose.energy import TwoModeMove
from cfbose.observables import blocking_error
from cfbose.sampler import (
    ChainState,
    Proposal,
    SamplerConfig,
    _Driver,
    _rotate,
    chain_seeds,
    initial_state,
    metropolis_step,
    propose_rotation,
    run_chain,
)
from oracles import simplex_ideal_mean, sphere2_density

N = 500.0


@pytest.fixture(scope="module")
def basis4():
    b = BasisSpec(1.0, 4)
    return b, build_quadrature(b)


@pytest.fixture(scope="module")
def basis_w():
    b = BasisSpec(1.4, 9)
    return b, build_quadrature(b)


# -- initial states ----------------------------------------------------------------

def test_cold_start(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, -0.01, mode="cold", seed=1)
    assert s.energy.oscillator_term == 0.0
    assert s.alphas[0] == math.sqrt(N)


def test_thermal_start_norm(basis_w):
    b, grid = basis_w
    s = initial_state(N, b, grid, -0.01, mode="thermal-guess", seed=1, temperature=20.0)
    assert abs(np.vdot(s.alphas, s.alphas).real - N) <= 1e-12 * N
    assert np.all(np.abs(s.alphas) > 0)


def test_thermal_start_needs_temperature(basis4):
    b, grid = basis4
    with pytest.raises(ValueError):
        initial_state(N, b, grid, 0.0, mode="thermal")
    with pytest.raises(ValueError):
        initial_state(N, b, grid, 0.0, mode="lukewarm")


def test_same_seed_same_proposals(basis_w):
    b, grid = basis_w
    s1 = initial_state(N, b, grid, 0.0, mode="thermal", seed=99, temperature=10.0)
    s2 = initial_state(N, b, grid, 0.0, mode="thermal", seed=99, temperature=10.0)
    for _ in range(100):
        p1, p2 = propose_rotation(s1), propose_rotation(s2)
        assert (p1.move.i, p1.move.j, p1.theta, p1.chi, p1.eta) == \
               (p2.move.i, p2.move.j, p2.theta, p2.chi, p2.eta)
        assert p1.move.new_i == p2.move.new_i and p1.move.new_j == p2.move.new_j


# -- proposals ----------------------------------------------------------------------

def test_zero_angle_is_identity_up_to_phase():
    ai, aj = 3.0 - 1.5j, 0.25 + 2j
    new_i, new_j = _rotate(ai, aj, 0.0, 1.1, 2.3)
    assert abs(new_i) == pytest.approx(abs(ai), rel=1e-15)
    assert new_j == aj


amp = st.complex_numbers(max_magnitude=25, allow_nan=False, allow_infinity=False)
angle = st.floats(min_value=-math.pi, max_value=math.pi)
phase = st.floats(min_value=0, max_value=2 * math.pi)


@settings(max_examples=200, deadline=None)
@given(amp, amp, angle, phase, phase)
def test_rotation_preserves_pair_norm(ai, aj, theta, chi, eta):
    new_i, new_j = _rotate(ai, aj, theta, chi, eta)
    before = abs(ai) ** 2 + abs(aj) ** 2
    after = abs(new_i) ** 2 + abs(new_j) ** 2
    assert abs(after - before) <= 1e-14 * max(before, N)


@settings(max_examples=200, deadline=None)
@given(amp, amp, angle, phase, phase)
def test_rotation_inverse_is_in_proposal_family(ai, aj, theta, chi, eta):
    # the reverse move has the same |theta|, so the proposal density is symmetric
    new_i, new_j = _rotate(ai, aj, theta, chi, eta)
    back_i, back_j = _rotate(new_i, new_j, -theta, chi + eta, -eta)
    scale = 1 + abs(ai) + abs(aj)
    assert abs(back_i - ai) <= 1e-13 * scale
    assert abs(back_j - aj) <= 1e-13 * scale


def test_pair_frequencies(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, 0.0, seed=2024)
    n_max = b.n_max
    counts = {}
    draws = 1_000_000
    for _ in range(draws):
        m = propose_rotation(s).move
        assert m.i != m.j
        key = (min(m.i, m.j), max(m.i, m.j))
        counts[key] = counts.get(key, 0) + 1
    p = 2.0 / (n_max * (n_max + 1))
    assert len(counts) == n_max * (n_max + 1) // 2
    sigma = math.sqrt(draws * p * (1 - p))
    for c in counts.values():
        assert abs(c - draws * p) <= 3 * sigma
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_proposal_angle_and_phase_ranges(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, 0.0, seed=5, theta_max=0.3)
    props = [propose_rotation(s) for _ in range(20_000)]
    th = np.array([p.theta for p in props])
    assert np.all(np.abs(th) < 0.3)
    assert stats.kstest(th, "uniform", args=(-0.3, 0.6)).pvalue > 1e-3
    chi = np.array([p.chi for p in props])
    assert stats.kstest(chi, "uniform", args=(0, 2 * math.pi)).pvalue > 1e-3


def test_single_mode_basis_cannot_propose():
    class Tiny:
        alphas = np.ones(1, dtype=complex)
        rng = np.random.default_rng(0)
        theta_max = 0.1
    with pytest.raises(ValueError):
        propose_rotation(Tiny())


# -- Metropolis rule -----------------------------------------------------------------

def _transfer_move(state, fraction):
    # cold state: move a fraction of the atoms into the empty mode 1 (Delta E = omega N f at g = 0)
    a0 = state.alphas[0]
    return TwoModeMove(0, 1, math.sqrt(1 - fraction) * a0, math.sqrt(fraction) * a0)


def test_zero_delta_always_accepted(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, 0.0, seed=0)
    move = TwoModeMove(2, 3, s.alphas[2], s.alphas[3])
    for u in (0.0, 0.5, 0.999999999):
        assert metropolis_step(s, 1.0, Proposal(move, 0.0, 0.0, 0.0), u=u)


def test_downhill_always_accepted(basis4):
    b, grid = basis4
    a = np.zeros(b.n_modes, dtype=complex)
    a[1] = math.sqrt(N)
    s = ChainState(a, N, b, grid, 0.0, np.random.default_rng(0))
    move = TwoModeMove(0, 1, s.alphas[1], s.alphas[0])
    e0 = s.energy.total
    assert metropolis_step(s, 1e-6, move, u=0.9999999)
    assert s.energy.total < e0


def test_half_acceptance_at_t_ln2(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, 0.0, seed=77)
    move = _transfer_move(s, 0.01)
    d_e = 0.01 * N * b.omega
    temperature = d_e / math.log(2)
    alphas0, field0, energy0 = s.alphas.copy(), s.field.copy(), s.energy
    trials = 100_000
    hits = 0
    for _ in range(trials):
        if metropolis_step(s, temperature, move):
            hits += 1
            s.alphas[:] = alphas0
            s.field, s.energy = field0, energy0
    assert hits / trials == pytest.approx(0.5, abs=0.005)
    assert s.proposed == trials


def test_metropolis_rejects_nonpositive_temperature(basis4):
    b, grid = basis4
    s = initial_state(N, b, grid, 0.0, seed=0)
    with pytest.raises(ValueError):
        metropolis_step(s, 0.0)


def test_python_and_kernel_paths_agree(basis_w):
    # the compiled loop must implement the same Markov chain as metropolis_step
    b, grid = basis_w
    s1 = initial_state(N, b, grid, -0.01, mode="thermal", seed=8, temperature=30.0, theta_max=0.4)
    s2 = initial_state(N, b, grid, -0.01, mode="thermal", seed=8, temperature=30.0, theta_max=0.4)
    drv = _Driver(s2, 30.0)
    steps = 500
    ints, floats = next(drv._take(steps))
    for k in range(steps):
        i, j = int(ints[k, 0]), int(ints[k, 1])
        if j >= i:
            j += 1
        theta = s1.theta_max * (2 * floats[k, 0] - 1)
        chi, eta = 2 * math.pi * floats[k, 1], 2 * math.pi * floats[k, 2]
        ni, nj = _rotate(s1.alphas[i], s1.alphas[j], theta, chi, eta)
        metropolis_step(s1, 30.0, Proposal(TwoModeMove(i, j, ni, nj), theta, chi, eta),
                        u=floats[k, 3])
    drv2 = _Driver(s2, 30.0)
    drv2._ints, drv2._floats, drv2._pos = ints, floats, 0
    drv2.steps(steps)
    np.testing.assert_allclose(s1.alphas, s2.alphas, rtol=0, atol=1e-10)
    assert s1.accepted == s2.accepted


# -- chains -------------------------------------------------------------------------------

def test_norm_drift_over_a_million_steps(basis_w):
    b, grid = basis_w
    s = initial_state(N, b, grid, -0.01, mode="thermal", seed=3, temperature=40.0, theta_max=0.5)
    drv = _Driver(s, 40.0)
    worst = 0.0
    for _ in range(10):
        drv.steps(100_000)
        worst = max(worst, s.norm_drift())
    assert worst <= 1e-10
    assert s.cache_error() <= 1e-7


def test_deterministic_stream(basis_w):
    b, grid = basis_w
    cfg = SamplerConfig(burn_in_sweeps=200, measure_sweeps=2000, thin=5, seed=42)
    r1 = run_chain(cfg, N, -0.005, 20.0, b, grid)
    r2 = run_chain(cfg, N, -0.005, 20.0, b, grid)
    assert np.array_equal(r1.samples, r2.samples)
    assert np.array_equal(r1.energies, r2.energies)
    assert r1.theta_max == r2.theta_max
    r3 = run_chain(cfg, N, -0.005, 20.0, b, grid, seed=43)
    assert not np.array_equal(r1.samples, r3.samples)


def test_chain_output_shape_and_norm(basis_w):
    b, grid = basis_w
    cfg = SamplerConfig(burn_in_sweeps=100, measure_sweeps=1003, thin=10, seed=1, refresh_every=300)
    r = run_chain(cfg, N, 0.004, 15.0, b, grid)
    assert r.samples.shape == (100, b.n_modes)
    np.testing.assert_allclose(np.sum(np.abs(r.samples) ** 2, axis=1), N, rtol=1e-10)
    assert r.max_norm_drift <= 1e-10
    assert r.sweeps == 1003


def test_zero_temperature_collapse(basis4):
    b, grid = basis4
    cfg = SamplerConfig(burn_in_sweeps=2000, measure_sweeps=5000, thin=10, seed=9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = run_chain(cfg, N, 0.0, 0.001, b, grid)
    assert np.mean(np.abs(r.samples[:, 0]) ** 2) / N > 0.999


def test_simplex_oracle_g0():
    # exact classical-field mean occupation for 5 equally spaced levels
    b = BasisSpec(1.0, 4)
    grid = build_quadrature(b)
    cfg = SamplerConfig(burn_in_sweeps=5000, measure_sweeps=400_000, thin=10, seed=314)
    r = run_chain(cfg, N, 0.0, 30.0, b, grid)
    u0 = np.abs(r.samples[:, 0]) ** 2
    ref = simplex_ideal_mean(N, 30.0, 4)
    assert abs(u0.mean() - ref) <= 3 * blocking_error(u0)


def test_two_mode_stationary_histogram():
    # fixed theta_max, no adaptation: compare the u0 histogram with quadrature
    b = BasisSpec(1.0, 1)
    grid = build_quadrature(b)
    g, temperature = -0.005, 30.0
    s = initial_state(N, b, grid, g, mode="thermal", seed=17, temperature=temperature,
                      theta_max=1.0)
    drv = _Driver(s, temperature)
    drv.steps(20_000)
    every = 50
    n_rec = 10_000_000 // every
    samples = np.empty((n_rec, 2), dtype=complex)
    energies = np.empty(n_rec)
    drv.steps(n_rec * every, every, samples, energies)
    u = np.abs(samples[:, 0]) ** 2 / N
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.05

    edges = np.linspace(0.0, 1.0, 51)
    expected = sphere2_density(N, g, temperature, edges) * u.size
    observed, _ = np.histogram(u, edges)
    # pool sparse bins so the chi-square approximation holds
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:
        obs[-2] += obs[-1]
        exp[-2] += exp[-1]
        obs, exp = obs[:-1], exp[:-1]
    chi2 = np.sum((obs - exp) ** 2 / exp)
    p = stats.chi2.sf(chi2, obs.size - 1)
    assert p > 0.01


def test_energy_stationary_after_burn_in(basis_w):
    b, grid = basis_w
    cfg = SamplerConfig(burn_in_sweeps=3000, measure_sweeps=100_000, thin=10, seed=21)
    r = run_chain(cfg, N, -0.01, 25.0, b, grid)
    half = r.energies.size // 2
    a, c = r.energies[:half], r.energies[half:]
    sigma = math.hypot(blocking_error(a), blocking_error(c))
    assert abs(a.mean() - c.mean()) <= 3 * sigma


def test_acceptance_decreases_with_step(basis_w):
    b, grid = basis_w
    temperature = 25.0
    s = initial_state(N, b, grid, -0.01, mode="thermal", seed=5, temperature=temperature,
                      theta_max=0.3)
    _Driver(s, temperature).steps(1_000_000)
    start = s.alphas.copy()
    steps = 400_000
    rates = []
    # theta near pi approaches the identity again, so stay below it
    for theta in (0.02, 0.1, 0.4, 1.2, 2.4):
        walker = ChainState(start, N, b, grid, -0.01, np.random.default_rng(1), theta_max=theta)
        rates.append(_Driver(walker, temperature).steps(steps) / steps)
    for small, large in zip(rates[:-1], rates[1:]):
        sigma = math.sqrt(small * (1 - small) / steps + large * (1 - large) / steps)
        # correlated steps inflate the binomial error; allow 5x
        assert large <= small + 3 * 5 * sigma
    assert rates[-1] < rates[0] - 0.1


def test_adaptation_hits_target(basis_w):
    b, grid = basis_w
    cfg = SamplerConfig(burn_in_sweeps=4000, measure_sweeps=20_000, thin=10, seed=4)
    r = run_chain(cfg, N, -0.005, 5.0, b, grid)
    assert r.acceptance == pytest.approx(0.4, abs=0.05)
    assert r.theta_max != cfg.theta_max


def test_adaptation_saturates_when_target_unreachable(basis_w):
    # every rotation angle accepts ~50 % here, so theta runs into its upper clip
    b, grid = basis_w
    cfg = SamplerConfig(burn_in_sweeps=4000, measure_sweeps=2000, thin=10, seed=4)
    r = run_chain(cfg, N, -0.005, 25.0, b, grid)
    assert r.theta_max == math.pi
    assert r.acceptance > 0.45


def test_extreme_acceptance_warns(basis4):
    b, grid = basis4
    cfg = SamplerConfig(burn_in_sweeps=200, measure_sweeps=500, thin=10, seed=1)
    with pytest.warns(RuntimeWarning, match="acceptance"):
        r = run_chain(cfg, N, 0.0, 1e9, b, grid)
    assert r.warnings


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    with pytest.raises(ValueError):
        SamplerConfig(target_acceptance=1.0)
    with pytest.raises(ValueError):
        SamplerConfig(theta_max=4.0)
    with pytest.raises(ValueError):
        SamplerConfig(seed=-1)
    SamplerConfig(burn_in_sweeps=0)


def test_chain_seeds_are_distinct():
    a = [np.random.default_rng(s).random(4) for s in chain_seeds(7, 3)]
    b = [np.random.default_rng(s).random(4) for s in chain_seeds(7, 3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])
