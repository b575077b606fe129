"""Large-deviation Hamiltonian, its vector field, Lagrangian and path cost.

For a model with pumping rate ``mu0`` and channels ``(k_i, r_i, s_i, mu_i)``::

    H = mu0 (1 - x0) (e^sigma - 1)
        + sum_i mu_i Q(x0, r_i) Q(1 - x0, k_i - r_i) (e^{s_i (kappa_i - sigma)} - 1)

``x0`` is the excited density, ``x_i`` the scaled cumulative emission of
channel ``i`` and ``sigma``, ``kappa_i`` the conjugate momenta. ``H`` does
not depend on ``x_i``, so every ``kappa_i`` is a constant of motion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._cluster import cluster_factor, q_factor
from .errors import InfeasiblePath
from .model import ModelSpec

__all__ = [
    "PhasePoint",
    "Velocity",
    "LagrangianResult",
    "q_factor",
    "hamiltonian",
    "hamiltonian_field",
    "lagrangian",
    "rate_functional",
    "finite_difference_velocities",
]


@dataclass(frozen=True)
class PhasePoint:
    x0: float
    x: tuple
    sigma: float
    kappa: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "kappa", tuple(float(v) for v in np.atleast_1d(self.kappa)))
        if len(self.x) != len(self.kappa):
            raise ValueError("x and kappa must have the same length")

    @classmethod
    def zero_momentum(cls, x0, d, x=None):
        return cls(x0, np.zeros(d) if x is None else x, 0.0, np.zeros(d))


@dataclass(frozen=True)
class Velocity:
    v0: float
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(u) for u in np.atleast_1d(self.v)))
        if any(u < 0 for u in self.v):
            raise ValueError("emission velocities must be non-negative")


@dataclass(frozen=True)
class LagrangianResult:
    """Value of the Legendre transform and the maximizing momenta.

    ``value`` is ``math.inf`` for an impossible velocity; the momenta are
    then ``nan``. A channel with zero velocity has ``kappa = -inf``.
    """

    value: float
    sigma: float
    kappa: tuple

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)


def _channel_arrays(spec, x0):
    """Per-channel ``mu_i``, ``s_i``, cluster factor and its x0-derivative."""
    mu = spec.mu
    s = spec.s.astype(float)
    qf = np.array([cluster_factor(x0, c.k, c.r) for c in spec.channels])
    dq = np.array([cluster_factor(x0, c.k, c.r, order=1) for c in spec.channels])
    return mu, s, qf, dq


def hamiltonian(spec: ModelSpec, p: PhasePoint) -> float:
    mu, s, qf, _ = _channel_arrays(spec, p.x0)
    kappa = np.asarray(p.kappa)
    pump = spec.mu0 * (1.0 - p.x0) * math.expm1(p.sigma)
    return float(pump + np.sum(mu * qf * np.expm1(s * (kappa - p.sigma))))


def hamiltonian_field(spec: ModelSpec, p: PhasePoint):
    """Right-hand side of Hamilton's equations at ``p``.

    Returns ``(dx0, dx, dsigma, dkappa)`` with ``dx`` and ``dkappa`` numpy
    vectors of length ``d``; ``dkappa`` is identically zero.
    """
    mu, s, qf, dq = _channel_arrays(spec, p.x0)
    kappa = np.asarray(p.kappa)
    tilt = np.exp(s * (kappa - p.sigma))
    dx = mu * s * qf * tilt
    dx0 = spec.mu0 * (1.0 - p.x0) * math.exp(p.sigma) - dx.sum()
    dsigma = spec.mu0 * math.expm1(p.sigma) - np.sum(mu * dq * np.expm1(s * (kappa - p.sigma)))
    return float(dx0), dx, float(dsigma), np.zeros_like(kappa)


# -- Legendre transform ------------------------------------------------------

_SIGMA_TOL = 1e-12
_MAX_ITER = 200


def _sigma_search(rate: float, pump: float) -> float:
    """Maximize the concave ``g(sigma) = sigma * rate - pump * e^sigma``.

    Bracket grown geometrically from [-50, 50], then Newton safeguarded by
    bisection until ``|g'| <= 1e-12 * max(1, rate)``.
    """
    def grad(z):
        return rate - pump * math.exp(z)

    lo, hi = -50.0, 50.0
    while grad(lo) <= 0.0:
        lo *= 2.0
    while grad(hi) >= 0.0:
        hi *= 2.0
    z = 0.5 * (lo + hi) if not lo < 0.0 < hi else 0.0
    scale = max(1.0, rate)
    for _ in range(_MAX_ITER):
        g = grad(z)
        if abs(g) <= _SIGMA_TOL * scale:
            break
        if g > 0.0:
            lo = z
        else:
            hi = z
        step = z + g / (pump * math.exp(z))
        z = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, abs(z)):
            break
    return z


def lagrangian(spec: ModelSpec, x0: float, vel: Velocity) -> LagrangianResult:
    """``sup_{sigma, kappa} [sigma v0 + sum kappa_i v_i - H]`` at density ``x0``.

    Each ``kappa_i`` is maximized in closed form, leaving a strictly concave
    function of ``sigma`` that is maximized numerically.
    """
    if len(vel.v) != spec.d:
        raise ValueError(f"velocity has {len(vel.v)} emission components, model has {spec.d}")
    nan_kappa = (math.nan,) * spec.d
    pump = spec.mu0 * (1.0 - x0)
    total_rate = vel.v0 + sum(vel.v)  # pumping events per unit time, scaled
    const = 0.0
    offsets = []
    for chan, v in zip(spec.channels, vel.v):
        c = chan.mu * cluster_factor(x0, chan.k, chan.r)
        if v == 0.0:
            const += c
            offsets.append(-math.inf)
        elif c <= 0.0:
            return LagrangianResult(math.inf, math.nan, nan_kappa)
        else:
            log_ratio = math.log(v / (chan.s * c))
            const += v / chan.s * (log_ratio - 1.0) + c
            offsets.append(log_ratio / chan.s)

    if total_rate < 0.0:
        return LagrangianResult(math.inf, math.nan, nan_kappa)
    if pump <= 0.0:
        if total_rate > 0.0:
            return LagrangianResult(math.inf, math.nan, nan_kappa)
        sigma, pump_part = -math.inf, 0.0
    elif total_rate == 0.0:
        sigma, pump_part = -math.inf, pump
    else:
        sigma = _sigma_search(total_rate, pump)
        pump_part = sigma * total_rate - pump * math.expm1(sigma)

    kappa = tuple(sigma + off if math.isfinite(off) else -math.inf for off in offsets)
    if not math.isfinite(sigma):
        kappa = tuple(-math.inf for _ in offsets)
    return LagrangianResult(max(pump_part + const, 0.0), sigma, kappa)


# -- path cost ---------------------------------------------------------------

def finite_difference_velocities(times, positions):
    """Centered differences inside the grid, one-sided at the two ends."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    return np.gradient(positions, times, axis=0, edge_order=1)


def _path_arrays(path):
    if hasattr(path, "times") and hasattr(path, "positions"):
        return np.asarray(path.times, dtype=float), np.asarray(path.positions, dtype=float)
    if hasattr(path, "grid") and hasattr(path, "points"):
        pos = np.array([[pt.x0, *pt.x] for pt in path.points])
        return np.asarray(path.grid, dtype=float), pos
    times, positions = path
    return np.asarray(times, dtype=float), np.asarray(positions, dtype=float)


def rate_functional(spec: ModelSpec, path) -> float:
    """Trapezoidal integral of the Lagrangian along a sampled path.

    ``path`` is anything with ``times``/``positions`` (``positions`` has
    columns ``x0, x_1..x_d``), a :class:`~luminescence.optimal_path.PhaseTrajectory`,
    or a ``(times, positions)`` pair. Velocities come from
    :func:`finite_difference_velocities`.
    """
    times, pos = _path_arrays(path)
    if times.size < 2 or times[-1] == times[0]:
        return 0.0
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("path times must be strictly increasing")
    if pos.shape != (times.size, spec.d + 1):
        raise ValueError(f"positions must have shape ({times.size}, {spec.d + 1})")
    if np.any(np.diff(pos[:, 1:], axis=0) < 0.0):
        raise ValueError("emission coordinates must be non-decreasing")
    vel = finite_difference_velocities(times, pos)
    vel[:, 1:] = np.maximum(vel[:, 1:], 0.0)
    values = np.empty(times.size)
    for j in range(times.size):
        res = lagrangian(spec, float(pos[j, 0]), Velocity(vel[j, 0], vel[j, 1:]))
        if not res.feasible:
            raise InfeasiblePath(f"infinite cost at t={times[j]:g}")
        values[j] = res.value
    return float(np.trapezoid(values, times))
