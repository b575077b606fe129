"""Hamiltonian trajectories, the fluid path and the shooting BVP solver.

The phase state integrated here is ``(x0, x_1..x_d, sigma)``; the momenta
``kappa`` are constants of motion and ride along as parameters. All
integration is classical fixed-step RK4 over a batch of independent initial
conditions, so finite-difference Jacobian columns and damped Newton trials
are integrated in one call.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._cluster import cluster_factor
from ._kernels import rk4
from .errors import BlowUp, LuminescenceError, NoConvergence
from .hamiltonian import PhasePoint
from .model import ModelSpec

log = logging.getLogger(__name__)

__all__ = [
    "BoundaryData",
    "PhaseTrajectory",
    "PositionPath",
    "integrate_hamiltonian",
    "solve_bvp",
    "fluid_trajectory",
    "constant_path",
]

DEGENERATE_KAPPA = -50.0


@dataclass(frozen=True)
class BoundaryData:
    """``x0(0) = x0_init``, ``x_i(0) = 0``, ``x_i(T) = targets[i]``, ``sigma(T) = 0``."""

    x0_init: float
    targets: tuple
    T: float = 1.0
    sigma_terminal: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(float(b) for b in np.atleast_1d(self.targets)))
        if not 0.0 <= self.x0_init <= 1.0:
            raise ValueError("x0_init must lie in [0, 1]")
        if any(b < 0 for b in self.targets):
            raise ValueError("emission targets must be non-negative")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.sigma_terminal != 0.0:
            raise ValueError("sigma_terminal is fixed at 0")


@dataclass
class PositionPath:
    """Positions only: ``positions[:, 0]`` is x0, the rest are x_1..x_d."""

    times: np.ndarray
    positions: np.ndarray

    @property
    def x0(self):
        return self.positions[:, 0]

    @property
    def x(self):
        return self.positions[:, 1:]


@dataclass
class PhaseTrajectory:
    grid: np.ndarray
    x0: np.ndarray
    x: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray
    hamiltonian_values: np.ndarray

    @property
    def times(self):
        return self.grid

    @property
    def positions(self):
        return np.column_stack([self.x0, self.x])

    @property
    def points(self):
        return [
            PhasePoint(self.x0[j], self.x[j], self.sigma[j], self.kappa[j])
            for j in range(self.grid.size)
        ]

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(self.x0[-1], self.x[-1], self.sigma[-1], self.kappa[-1])

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.hamiltonian_values - self.hamiltonian_values[0])))

    def to_csv(self, path, header_lines=()):
        d = self.x.shape[1]
        cols = ["t", "x0", *[f"x_{i}" for i in range(1, d + 1)], "sigma",
                *[f"kappa_{i}" for i in range(1, d + 1)], "H"]
        data = np.column_stack(
            [self.grid, self.x0, self.x, self.sigma, self.kappa, self.hamiltonian_values]
        )
        _write_csv(path, cols, data, header_lines)


def _write_csv(path, columns, data, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# -- helpers -----------------------------------------------------------------

def _batch_hamiltonian(spec, Y, K):
    x0 = Y[..., 0]
    sig = Y[..., -1]
    H = spec.mu0 * (1.0 - x0) * np.expm1(sig)
    for i, c in enumerate(spec.channels):
        H = H + c.mu * cluster_factor(x0, c.k, c.r) * np.expm1(c.s * (K[..., i] - sig))
    return H


def _n_steps(T, step):
    if not step > 0 or not T > 0:
        raise ValueError("T and step must be positive")
    if step > T * (1.0 + 1e-12):
        raise ValueError("step must not exceed T")
    return max(1, int(round(T / step)))


# -- public API --------------------------------------------------------------

def integrate_hamiltonian(spec: ModelSpec, start: PhasePoint, T: float, step: float,
                          backward: bool = False) -> PhaseTrajectory:
    """Integrate Hamilton's equations from ``start`` over ``[0, T]``.

    ``step`` is rounded so that ``T / step`` is an integer. With
    ``backward=True`` the system is integrated in negative time and the grid
    runs from 0 down to ``-T``.

    Raises :class:`BlowUp` if a coordinate exceeds 1e12 in magnitude or x0
    leaves ``[-1e-6, 1 + 1e-6]``.
    """
    n = _n_steps(T, step)
    h = (-T if backward else T) / n
    K = np.asarray(start.kappa, dtype=float)[None, :]
    Y0 = np.array([[start.x0, *start.x, start.sigma]])
    states, ok = rk4(spec, Y0, K, h, n, record=True)
    if not ok[0]:
        raise BlowUp("Hamiltonian trajectory left the admissible region")
    states = states[:, 0, :]
    grid = np.linspace(0.0, h * n, n + 1)
    kappa = np.repeat(K, n + 1, axis=0)
    H = _batch_hamiltonian(spec, states, kappa)
    return PhaseTrajectory(grid, states[:, 0], states[:, 1:-1], states[:, -1], kappa, H)


def fluid_trajectory(spec: ModelSpec, x0_init: float, T: float, step: float) -> PositionPath:
    """Law-of-large-numbers path from ``x0(0) = x0_init``, ``x_i(0) = 0``."""
    if not 0.0 <= x0_init <= 1.0:
        raise ValueError("x0_init must lie in [0, 1]")
    n = _n_steps(T, step)
    Y0 = np.zeros((1, spec.d + 1))
    Y0[0, 0] = x0_init
    states, _ = rk4(spec, Y0, np.zeros((1, spec.d)), T / n, n, record=True, fluid=True)
    return PositionPath(np.linspace(0.0, T, n + 1), states[:, 0, :])


def constant_path(x0: float, targets, T: float = 1.0, n_points: int = 1001) -> PositionPath:
    """Constant excited density with emissions growing linearly to ``targets``."""
    times = np.linspace(0.0, T, n_points)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    pos = np.column_stack([np.full(n_points, float(x0)), np.outer(times / T, targets)])
    return PositionPath(times, pos)


# -- shooting ----------------------------------------------------------------

class _Shooter:
    """Residual map ``(sigma(0), kappa_active) -> (scaled x_i(T) - B_i, sigma(T))``."""

    def __init__(self, spec, bd, step):
        self.spec = spec
        self.bd = bd
        self.n = _n_steps(bd.T, step if step is not None else 1e-3 * bd.T)
        self.h = bd.T / self.n
        self.targets = np.array(bd.targets)
        self.active = np.flatnonzero(self.targets > 0.0)
        self.scale = np.maximum(1.0, self.targets[self.active])
        self.fixed_kappa = DEGENERATE_KAPPA / spec.s.astype(float)
        self.sensitivity = 0.0

    def kappa(self, Z):
        K = np.repeat(self.fixed_kappa[None, :], Z.shape[0], axis=0)
        K[:, self.active] = Z[:, 1:]
        return K

    def final(self, Z, targets=None):
        targets = self.targets if targets is None else targets
        K = self.kappa(Z)
        Y0 = np.zeros((Z.shape[0], self.spec.d + 2))
        Y0[:, 0] = self.bd.x0_init
        Y0[:, -1] = Z[:, 0]
        Y, ok = rk4(self.spec, Y0, K, self.h, self.n, record=False)
        R = np.empty_like(Z)
        R[:, :-1] = (Y[:, 1:-1][:, self.active] - targets[self.active]) / self.scale
        R[:, -1] = Y[:, -1]
        R[~ok] = np.inf
        return R, Y

    def converged(self, r):
        return bool(np.all(np.abs(r[:-1]) <= 1e-6) and abs(r[-1]) <= 1e-8)


def _newton(shooter, z, targets, max_iter, max_halvings):
    """Damped Newton with a central-difference Jacobian; returns z or None."""
    m = z.size
    r = shooter.final(z[None, :], targets)[0][0]
    if not np.all(np.isfinite(r)):
        return None
    for _ in range(max_iter):
        if shooter.converged(r):
            return z
        steps = 1e-6 * np.maximum(1.0, np.abs(z))
        probes = np.concatenate([z + np.diag(steps), z - np.diag(steps)])
        R, _ = shooter.final(probes, targets)
        if not np.all(np.isfinite(R)):
            return None
        J = (R[:m] - R[m:]).T / (2.0 * steps)
        shooter.sensitivity = max(shooter.sensitivity, float(np.max(np.abs(J))))
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        lams = 0.5 ** np.arange(max_halvings + 1)
        trials = z + lams[:, None] * delta
        Rt, _ = shooter.final(trials, targets)
        norms = np.linalg.norm(Rt, axis=1)
        base = np.linalg.norm(r)
        accept = np.flatnonzero(norms < (1.0 - 1e-4 * lams) * base)
        if accept.size == 0:
            return None
        j = accept[0]
        z, r = trials[j], Rt[j]
    return z if shooter.converged(r) else None


def _initial_guess(spec, bd, shooter):
    from .large_emission import asymptotic_share, stationary_solution

    targets = shooter.targets
    total = targets.sum()
    try:
        x_hat = float(asymptotic_share(spec)[0])
    except LuminescenceError:
        x_hat = None
    if x_hat is not None and abs(bd.x0_init - x_hat) <= 1e-9 and total > 0:
        try:
            sol = stationary_solution(spec, total / bd.T, split=targets / total, warn=False)
            return np.concatenate([[sol.sigma], np.asarray(sol.kappa)[shooter.active]])
        except LuminescenceError:
            pass
    z = np.zeros(1 + shooter.active.size)
    for j, i in enumerate(shooter.active):
        c = spec.channels[i]
        qf = cluster_factor(bd.x0_init, c.k, c.r)
        if qf <= 0.0:
            qf = max(cluster_factor(0.5, c.k, c.r), 1e-12)
        z[1 + j] = math.log1p(targets[i] * c.s / (c.mu * qf * bd.T)) / c.s
    return z


def solve_bvp(spec: ModelSpec, bd: BoundaryData, step: float | None = None,
              max_iter: int = 200, max_halvings: int = 20) -> PhaseTrajectory:
    """Shoot on ``(sigma(0), kappa)`` so that ``x_i(T) = B_i`` and ``sigma(T) = 0``.

    Newton starts from the stationary large-emission solution when
    ``x0_init`` is the asymptotic share, otherwise from ``sigma(0) = 0`` and
    ``kappa_i = log(1 + B_i s_i / (mu_i Q_i T)) / s_i``. If that start fails,
    the targets are continued from the fluid emissions (where zero momenta
    solve the problem exactly) to ``B``. Channels with ``B_i = 0`` keep
    ``kappa_i = -50 / s_i`` and drop out of the residual.

    Raises :class:`NoConvergence` when neither route reaches
    ``|x_i(T) - B_i| <= 1e-6 max(1, B_i)`` and ``|sigma(T)| <= 1e-8``.
    Optimal paths for large targets hug a saddle point of the Hamiltonian
    flow, so ``sigma(T)`` depends on ``sigma(0)`` like ``exp(lambda T)``
    with ``lambda`` growing with ``B``. Trial steps then leave the region
    where the flow stays bounded, and the continuation can also stall where
    the reachable targets fold. In practice the solver works up to about
    ``B = 3`` for the linear model and ``B = 2`` for ``(2,2,1)`` at ``T = 1``.
    """
    if len(bd.targets) != spec.d:
        raise ValueError(f"need {spec.d} emission targets, got {len(bd.targets)}")
    shooter = _Shooter(spec, bd, step)
    z = _newton(shooter, _initial_guess(spec, bd, shooter), None, max_iter, max_halvings)
    if z is None:
        log.info("direct shooting failed, continuing from fluid targets")
        z = _continuation(spec, bd, shooter, max_halvings)
    if z is None:
        raise NoConvergence(
            f"shooting did not converge for targets {bd.targets}; largest shooting "
            f"Jacobian entry seen {shooter.sensitivity:.3g}"
        )
    start = PhasePoint(bd.x0_init, np.zeros(spec.d), z[0], shooter.kappa(z[None, :])[0])
    return integrate_hamiltonian(spec, start, bd.T, shooter.h)


def _continuation(spec, bd, shooter, max_halvings):
    fluid = fluid_trajectory(spec, bd.x0_init, bd.T, shooter.h).positions[-1, 1:]
    target = shooter.targets
    base = np.where(target > 0.0, fluid, 0.0)
    z = np.zeros(1 + shooter.active.size)
    lam, dlam = 0.0, 0.05
    while lam < 1.0:
        nxt = min(1.0, lam + dlam)
        trial = _newton(shooter, z, base + nxt * (target - base), 50, max_halvings)
        if trial is None:
            dlam *= 0.5
            if dlam < 1e-6:
                return None
            continue
        z, lam = trial, nxt
        dlam = min(0.25, dlam * 1.5)
    return z
