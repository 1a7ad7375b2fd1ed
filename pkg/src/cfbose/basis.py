"""Harmonic-oscillator eigenbasis: Hermite functions, quadrature grids and
field synthesis.

Units throughout the package are oscillator units of the trap,
hbar = m = omega0 = k_B = 1.  A basis of frequency ``omega`` uses the
eigenfunctions ``phi_n(x) = omega**0.25 * h_n(sqrt(omega) * x)`` where ``h_n``
are the normalized Hermite functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "BasisSpec",
    "QuadratureGrid",
    "ModeAmplitudes",
    "hermite_functions",
    "x2_matrix_element",
    "x2_matrix_bands",
    "gauss_hermite",
    "build_quadrature",
    "field_at_points",
    "MAX_QUADRATURE_ORDER",
]

MAX_QUADRATURE_ORDER = 16384

# values are rescaled whenever they leave [1/_BIG, _BIG] so that the
# recurrence never overflows even where h_0(x) itself underflows
_BIG = 1e150
_LOG_BIG = math.log(_BIG)


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def _hermite_rows(n_max, x):
    """Yield ``h_n(x)`` for ``n = 0..n_max`` using the normalized recurrence.

    The mantissa and a per-point log-scale are carried separately, so the
    recurrence is safe far outside the classically allowed region.
    """
    x = np.asarray(x, dtype=float)
    log_scale = -0.5 * x * x - 0.25 * math.log(math.pi)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    yield cur * np.exp(log_scale)
    for n in range(n_max):
        nxt = x * math.sqrt(2.0 / (n + 1)) * cur - math.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _BIG
        if big.any():
            cur = np.where(big, cur / _BIG, cur)
            prev = np.where(big, prev / _BIG, prev)
            log_scale = np.where(big, log_scale + _LOG_BIG, log_scale)
        with np.errstate(under="ignore"):
            yield cur * np.exp(log_scale)


def hermite_functions(n_max, points):
    """Normalized Hermite functions ``h_0 .. h_{n_max}`` at ``points``.

    Returns an array of shape ``(n_max + 1, len(points))``.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    points = np.atleast_1d(np.asarray(points, dtype=float))
    table = np.empty((n_max + 1, points.size))
    for n, row in enumerate(_hermite_rows(n_max, points)):
        table[n] = row
    return table


def x2_matrix_element(n, m, omega=1.0):
    """``<n|x^2|m>`` in the oscillator basis of frequency ``omega``."""
    if n < 0 or m < 0:
        raise ValueError("mode indices must be non-negative")
    lo, hi = min(n, m), max(n, m)
    if lo == hi:
        return (n + 0.5) / omega
    if hi == lo + 2:
        return math.sqrt((lo + 1) * (lo + 2)) / (2.0 * omega)
    return 0.0


def x2_matrix_bands(n_max, omega=1.0):
    """Diagonal and second off-diagonal of the pentadiagonal ``x^2`` matrix.

    Returns ``(diag, off2)`` with ``diag[n] = <n|x^2|n>`` and
    ``off2[n] = <n|x^2|n+2>`` (length ``n_max - 1``).
    """
    n = np.arange(n_max + 1, dtype=float)
    diag = (n + 0.5) / omega
    k = np.arange(max(n_max - 1, 0), dtype=float)
    off2 = np.sqrt((k + 1) * (k + 2)) / (2.0 * omega)
    return diag, off2


def gauss_hermite(order):
    """Gauss-Hermite nodes and *envelope-free* weights.

    The returned weights ``v_k = W_k * exp(z_k**2)`` integrate the raw
    integrand: ``int f(z) dz ~ sum_k v_k f(z_k)``, exact whenever
    ``f(z) exp(z**2)`` is a polynomial of degree ``< 2 * order``.  This form
    avoids the underflow of ``W_k`` for large orders.
    """
    if order < 1:
        raise ValueError("order must be positive")
    if order == 1:
        return np.zeros(1), np.array([math.sqrt(math.pi)])
    off = np.sqrt(np.arange(1, order) / 2.0)
    z = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
    # one Newton step on h_order polishes the eigenvalues
    rows = list(_last_two_rows(order, z))
    h_prev, h_m = rows
    dh = math.sqrt(2.0 * order) * h_prev - z * h_m
    z = z - h_m / dh
    h_prev, _ = _last_two_rows(order, z)
    v = 1.0 / (order * h_prev**2)
    # exact symmetry of the rule
    z = 0.5 * (z - z[::-1])
    v = 0.5 * (v + v[::-1])
    return z, v


def _last_two_rows(order, z):
    prev = None
    cur = None
    for row in _hermite_rows(order, z):
        prev, cur = cur, row
    return prev, cur


@dataclass(frozen=True)
class BasisSpec:
    """Effective oscillator basis: frequency and highest retained mode."""

    omega: float
    n_max: int

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        object.__setattr__(self, "n_max", int(self.n_max))

    @property
    def n_modes(self):
        return self.n_max + 1


@dataclass(frozen=True)
class QuadratureGrid:
    """Integration nodes (trap units), weights and basis-function table.

    ``mode_table[n, k]`` is the basis eigenfunction ``phi_n`` evaluated at
    ``nodes[k]``; ``sum_k weights[k] * f(nodes[k])`` approximates
    ``int f(x) dx``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    mode_table: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        for name in ("nodes", "weights", "mode_table"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.mode_table.shape != (self.basis.n_modes, self.nodes.size):
            raise ValueError("mode_table shape does not match basis and nodes")

    @property
    def order(self):
        return self.nodes.size

    def integrate(self, values):
        return np.dot(self.weights, values)


def _min_order(n_max):
    # Nodes of the compressed rule span |y| <= sqrt(order); products of two
    # modes up to n_max + 1 need the turning point plus a decay margin.
    return math.ceil((math.sqrt(2 * n_max + 3) + 3.0) ** 2)


def build_quadrature(spec, oversample=1.0, max_order=MAX_QUADRATURE_ORDER):
    """Quadrature grid for the basis ``spec``.

    Uses Gauss-Hermite nodes compressed by ``sqrt(2)`` so that products of
    four basis functions (polynomial times ``exp(-2 y**2)``) are integrated
    exactly for ``order >= 2 * n_max + 1``.  The order is
    ``ceil(oversample * (2 n_max + 1))``, raised when needed so that products
    of two basis functions (mode orthonormality, ``x^2`` elements and the
    field norm) are also resolved to ~1e-12.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    order = max(math.ceil(oversample * (2 * spec.n_max + 1)), _min_order(spec.n_max))
    if order > max_order:
        raise ValueError(
            f"quadrature order {order} exceeds cap {max_order} "
            f"(n_max={spec.n_max}); cutoff or temperature is unreasonable"
        )
    z, v = gauss_hermite(order)
    y = z / math.sqrt(2.0)
    w_y = v / math.sqrt(2.0)
    scale = math.sqrt(spec.omega)
    nodes = y / scale
    weights = w_y / scale
    table = spec.omega**0.25 * hermite_functions(spec.n_max, y)
    return QuadratureGrid(nodes=nodes, weights=weights, mode_table=table, basis=spec)


@dataclass(frozen=True)
class ModeAmplitudes:
    """Classical-field amplitudes constrained to ``sum |alpha_n|^2 = N``."""

    alphas: np.ndarray
    n_total: float
    rtol: float = field(default=1e-12, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.alphas, dtype=complex)
        if a.ndim != 1:
            raise ValueError("alphas must be one-dimensional")
        object.__setattr__(self, "alphas", _frozen(a))
        if self.n_total < 0:
            raise ValueError("particle number must be non-negative")
        norm = float(np.vdot(a, a).real)
        if abs(norm - self.n_total) > self.rtol * max(self.n_total, 1e-300):
            raise ValueError(
                f"norm {norm!r} violates the constraint sum|alpha|^2 = {self.n_total!r}"
            )

    @classmethod
    def from_array(cls, alphas):
        a = np.asarray(alphas, dtype=complex)
        return cls(a, float(np.vdot(a, a).real))

    @classmethod
    def normalized(cls, alphas, n_total):
        """Rescale ``alphas`` onto the sphere of radius ``sqrt(n_total)``."""
        a = np.asarray(alphas, dtype=complex)
        a = a * math.sqrt(n_total / np.vdot(a, a).real)
        return cls(a, float(n_total), rtol=1e-12)

    @property
    def n_modes(self):
        return self.alphas.size

    def occupations(self):
        return np.abs(self.alphas) ** 2


def field_at_points(amps, grid):
    """Classical field ``Psi(x_k) = sum_n alpha_n phi_n(x_k)`` on a grid.

    ``grid`` may be a :class:`QuadratureGrid` or a bare mode table of shape
    ``(n_modes, n_points)``.
    """
    table = grid.mode_table if isinstance(grid, QuadratureGrid) else np.asarray(grid)
    alphas = amps.alphas if isinstance(amps, ModeAmplitudes) else np.asarray(amps)
    if alphas.shape[-1] != table.shape[0]:
        raise ValueError(
            f"amplitudes have {alphas.shape[-1]} modes, grid has {table.shape[0]}"
        )
    return alphas @ table
