"""Condensate and coherence observables from classical-field samples.

The one-body density matrix ``rho_ij = <conj(a_i) a_j>`` is accumulated in
mergeable accumulators.  Its leading eigenvector defines the condensate mode
(Penrose-Onsager); occupation fluctuations come from projecting every stored
snapshot onto that fixed mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import hermite_functions

__all__ = [
    "DIAGNOSTIC_STEP",
    "DIAGNOSTIC_EXTENT",
    "DensityMatrixAccumulator",
    "CondensateResult",
    "diagnostic_grid",
    "diagnostic_table",
    "accumulate",
    "merge",
    "diagonalize",
    "condensate_statistics",
    "g1_profile",
    "density_profile",
    "condensate_profile",
    "fwhm",
    "blocking_error",
    "blocking_levels",
    "NumericalCorruptionError",
]

DIAGNOSTIC_STEP = 0.02
DIAGNOSTIC_EXTENT = 8.0


class NumericalCorruptionError(ArithmeticError):
    pass


def diagnostic_grid(extent=DIAGNOSTIC_EXTENT, step=DIAGNOSTIC_STEP):
    """Uniform grid symmetric about zero (``x[k] == -x[-1-k]`` exactly)."""
    half = int(round(extent / step))
    return np.arange(-half, half + 1) * step


def diagnostic_table(basis, x=None):
    """Basis functions of ``basis`` on the diagnostic grid, shape (modes, points)."""
    if x is None:
        x = diagnostic_grid()
    s = math.sqrt(basis.omega)
    return basis.omega**0.25 * hermite_functions(basis.n_max, s * np.asarray(x))


@dataclass
class DensityMatrixAccumulator:
    """Running sums for the density matrix and the mirror-point correlation.

    ``g1_num[k] = sum_s conj(Psi_s(-x_k)) Psi_s(x_k)`` and
    ``dens[k] = sum_s |Psi_s(x_k)|^2`` on the symmetric diagnostic grid.
    """

    sum_pairs: np.ndarray
    g1_num: np.ndarray
    dens: np.ndarray
    count: int = 0
    n0_series: np.ndarray | None = None

    @classmethod
    def empty(cls, n_modes, n_points=None):
        if n_points is None:
            n_points = diagnostic_grid().size
        return cls(np.zeros((n_modes, n_modes), dtype=complex),
                   np.zeros(n_points, dtype=complex), np.zeros(n_points), 0)

    @property
    def n_modes(self):
        return self.sum_pairs.shape[0]

    def density_matrix(self):
        if self.count < 1:
            raise ValueError("no samples accumulated")
        return self.sum_pairs / self.count


def accumulate(acc, samples, fields=None, table=None):
    """Add samples (one row per snapshot) to ``acc`` in place and return it.

    Field values on the diagnostic grid are either passed in (``fields``,
    rows aligned with ``samples``) or synthesized from ``table``.  Without
    either, only the density matrix is updated.
    """
    a = np.atleast_2d(np.asarray(samples, dtype=complex))
    if a.shape[1] != acc.n_modes:
        raise ValueError(f"samples have {a.shape[1]} modes, accumulator {acc.n_modes}")
    acc.sum_pairs += a.conj().T @ a
    if fields is None and table is not None:
        if table.shape[0] != acc.n_modes:
            raise ValueError("diagnostic table does not match the number of modes")
        fields = a @ table
    if fields is not None:
        f = np.atleast_2d(fields)
        if f.shape != (a.shape[0], acc.dens.size):
            raise ValueError("field values do not match samples and diagnostic grid")
        # the diagnostic grid is mirror symmetric, so Psi(-x_k) = f[:, ::-1]
        acc.g1_num += np.sum(f[:, ::-1].conj() * f, axis=0)
        acc.dens += np.sum(f.real**2 + f.imag**2, axis=0)
    acc.count += a.shape[0]
    return acc


def merge(*accs):
    """Combine accumulators; associative and commutative."""
    first = accs[0]
    out = DensityMatrixAccumulator(first.sum_pairs.copy(), first.g1_num.copy(),
                                   first.dens.copy(), first.count)
    for other in accs[1:]:
        if other.sum_pairs.shape != out.sum_pairs.shape or other.dens.shape != out.dens.shape:
            raise ValueError("cannot merge accumulators of different shapes")
        out.sum_pairs += other.sum_pairs
        out.g1_num += other.g1_num
        out.dens += other.dens
        out.count += other.count
    return out


def diagonalize(acc, tol=1e-12):
    """Eigenvalues (descending) and condensate modes of the density matrix.

    Returns ``(lambdas, betas)`` where ``betas[:, n]`` is the mode
    ``beta(n)`` in the oscillator basis, i.e. the condensate wave function is
    ``sum_j betas[j, 0] phi_j(x)`` and ``rho = sum_n lambda_n conj(beta(n)) beta(n)^T``.
    """
    rho = acc.density_matrix() if isinstance(acc, DensityMatrixAccumulator) else np.asarray(acc)
    scale = max(np.abs(rho).max(), 1e-300)
    resid = np.abs(rho - rho.conj().T).max()
    if resid > tol * scale:
        raise NumericalCorruptionError(f"density matrix not Hermitian (residue {resid:.3g})")
    rho = 0.5 * (rho + rho.conj().T)
    lam, vec = np.linalg.eigh(rho)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = vec[:, order]
    # rho v = lam v  <=>  rho_ij = sum lam v_i conj(v_j), hence beta = conj(v)
    betas = vec.conj()
    # fix the arbitrary phase: largest component real positive
    idx = np.argmax(np.abs(betas), axis=0)
    ph = betas[idx, np.arange(betas.shape[1])]
    betas = betas * (np.abs(ph) / ph)
    return lam, betas


def blocking_levels(series):
    """Standard-error estimates at successive pair-averaging levels.

    Returns a list of ``(n_blocks, error)``.
    """
    x = np.asarray(series, dtype=float)
    out = []
    while x.size >= 2:
        n = x.size
        out.append((n, math.sqrt(np.var(x) / (n - 1))))
        m = n // 2
        x = 0.5 * (x[:2 * m:2] + x[1:2 * m:2])
    return out


def blocking_error(series, min_blocks=16):
    """Flyvbjerg-Petersen standard error of the mean of a correlated series.

    The plateau value is taken as the largest estimate among blocking levels
    that still have at least ``min_blocks`` blocks.
    """
    x = np.asarray(series, dtype=float)
    if x.size < min_blocks:
        raise ValueError(f"series too short for blocking ({x.size} < {min_blocks})")
    if np.all(x == x[0]):
        return 0.0
    return max(err for n, err in blocking_levels(x) if n >= min_blocks)


@dataclass(frozen=True)
class CondensateResult:
    lambda0: float
    eigvec: np.ndarray
    eigenvalues: np.ndarray
    n0_mean: float
    n0_mean_err: float
    n0_dispersion: float
    n0_dispersion_err: float
    n0_series: np.ndarray

    @property
    def relative_dispersion(self):
        return self.n0_dispersion / self.n0_mean

    @property
    def relative_dispersion_err(self):
        r = self.relative_dispersion
        return abs(r) * math.hypot(self.n0_dispersion_err / self.n0_dispersion
                                   if self.n0_dispersion else 0.0,
                                   self.n0_mean_err / self.n0_mean)


def condensate_statistics(samples, eigvec):
    """Mean and dispersion of ``n0 = |sum_i conj(beta_i) a_i|^2`` with blocking errors.

    Returns ``(n0_mean, n0_dispersion, mean_err, dispersion_err, series)``.
    The dispersion error comes from blocking the squared deviations.
    """
    a = np.atleast_2d(samples)
    n0 = np.abs(a @ np.asarray(eigvec).conj()) ** 2
    mean = float(n0.mean())
    sd = float(n0.std())
    if n0.size >= 16:
        mean_err = blocking_error(n0)
        dev2 = (n0 - mean) ** 2
        sd_err = blocking_error(dev2) / (2.0 * sd) if sd > 0 else 0.0
    else:
        mean_err = sd_err = float("nan")
    return mean, sd, mean_err, sd_err, n0


def density_profile(acc):
    return acc.dens / acc.count


def g1_profile(acc, floor=1e-12):
    """``g1(x, -x)`` on the diagnostic grid, restricted to the central region
    where the density exceeds ``floor`` times its peak.

    Returns ``(mask, g1)``: ``g1`` has the full grid length with ``nan``
    outside ``mask``.
    """
    if acc.count < 1:
        raise ValueError("no samples accumulated")
    dens = acc.dens / acc.count
    num = acc.g1_num / acc.count
    n = dens.size
    if n % 2 == 0:
        raise ValueError("diagnostic grid must be symmetric with a point at x=0")
    mid = n // 2
    ok = dens > floor * dens.max()
    # keep the contiguous region around the centre only
    mask = np.zeros(n, dtype=bool)
    k = 0
    while mid + k < n and ok[mid + k] and ok[mid - k]:
        mask[mid + k] = mask[mid - k] = True
        k += 1
    g1 = np.full(n, np.nan, dtype=complex)
    g1[mask] = num[mask] / dens[mask]
    g1[mid] = 1.0
    return mask, g1


def condensate_profile(eigvec, table):
    """``|phi_cond(x)|^2`` (unit norm) on the points of ``table``."""
    return np.abs(np.asarray(eigvec) @ table) ** 2


def fwhm(x, profile):
    """Full width at half maximum with linear interpolation of the crossings.

    The maximum is searched near the centre of the (symmetric) grid; the
    nearest half-maximum crossing on each side is used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(profile, dtype=float)
    finite = np.isfinite(y)
    mid = x.size // 2
    lo = max(mid - 1, 0)
    peak = lo + int(np.nanargmax(y[lo:mid + 2]))
    half = 0.5 * y[peak]

    def crossing(step):
        k = peak
        while 0 <= k + step < x.size and finite[k + step]:
            if y[k + step] < half:
                a, b = y[k], y[k + step]
                return x[k] + (half - a) / (b - a) * (x[k + step] - x[k])
            k += step
        raise ValueError("profile too wide for grid: no half-maximum crossing")

    return crossing(1) - crossing(-1)
