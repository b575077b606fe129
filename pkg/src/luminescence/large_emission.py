"""Large-emission regime: constant-density optimal paths and their limits.

Conditioning on a scaled emission rate ``B`` and looking for a path with
constant excited density ``x0`` turns Hamilton's equations into an
algebraic system in ``(x0, sigma, kappa_1..kappa_d)``::

    mu_i s_i Q_i(x0) e^{s_i (kappa_i - sigma)} = B_i        (every channel)
    dx0/dt = 0,  dsigma/dt = 0

As ``B`` grows the density tends to ``r/(k+s)`` of the channel with the
largest ``s``, whatever the rates.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize

from ._cluster import cluster_factor
from .errors import AmbiguousDominantChannel, LuminescenceError, NoConvergence, NonPhysicalRoot
from .hamiltonian import Velocity, lagrangian
from .model import ModelSpec

log = logging.getLogger(__name__)

__all__ = [
    "StationarySolution",
    "ShareConvergence",
    "asymptotic_share",
    "fluid_equilibrium",
    "stationary_solution",
    "emission_split",
    "constant_path_cost",
    "share_convergence",
    "check_conjecture",
]

RESIDUAL_TOL = 1e-10
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class StationarySolution:
    x0: float
    sigma: float
    kappa: tuple
    velocities: tuple
    B: float
    alpha: tuple | None
    residual: float

    def phase_point(self, x=None):
        from .hamiltonian import PhasePoint

        d = len(self.kappa)
        return PhasePoint(self.x0, np.zeros(d) if x is None else x, self.sigma, self.kappa)


def asymptotic_share(spec: ModelSpec):
    """Return ``(x_hat, i0)``: ``r/(k+s)`` of the channel with the largest ``s``.

    ``x_hat`` is an exact :class:`~fractions.Fraction`; ``i0`` is 1-based.
    """
    s = [c.s for c in spec.channels]
    top = max(s)
    winners = [i for i, v in enumerate(s, start=1) if v == top]
    if len(winners) > 1:
        raise AmbiguousDominantChannel(f"channels {winners} share the largest s = {top}")
    i0 = winners[0]
    c = spec.channels[i0 - 1]
    return Fraction(c.r, c.k + c.s), i0


def fluid_equilibrium(spec: ModelSpec):
    x_star, fluxes = _fluid_equilibrium(spec)
    return x_star, np.array(fluxes)


@lru_cache(maxsize=256)
def _fluid_equilibrium(spec):
    """Fluid fixed point reached from an unexcited start, and its emission fluxes.

    The drift is positive at ``x0 = 0`` (pumping only), so the fluid path
    climbs to the first zero of the drift polynomial. That zero is located
    on a fine grid and polished with ``brentq``; when the drift only touches
    zero at ``x0 = 1`` (a tangent root, as for ``(2,1,1)`` with equal rates)
    the fixed point is 1. Returns ``(x_star, fluxes)`` with ``fluxes[i]`` the
    channel-``i+1`` emission rate.
    """
    def drift(x):
        return spec.mu0 * (1.0 - x) - sum(
            c.mu * c.s * cluster_factor(x, c.k, c.r) for c in spec.channels
        )

    grid = np.linspace(0.0, 1.0, 20001)
    values = drift(grid)
    hits = np.flatnonzero(values <= 0.0)
    j = int(hits[0]) if hits.size else grid.size - 1
    if values[j] == 0.0 or j == 0:
        x_end = float(grid[j])
    else:
        x_end = brentq(drift, grid[j - 1], grid[j], xtol=1e-15)
    return x_end, tuple(c.mu * c.s * cluster_factor(x_end, c.k, c.r) for c in spec.channels)


# -- stationary Newton -------------------------------------------------------

def _stationary_system(spec, targets, active, z):
    """Residual and Jacobian in ``z = (x0, sigma, kappa_active)``."""
    x0, sig = z[0], z[1]
    kap = dict(zip(active, z[2:]))
    n = z.size
    F = np.zeros(n)
    J = np.zeros((n, n))
    u = math.exp(sig)
    F[0] = spec.mu0 * (1.0 - x0) * u
    J[0, 0] = -spec.mu0 * u
    J[0, 1] = spec.mu0 * (1.0 - x0) * u
    F[1] = spec.mu0 * math.expm1(sig)
    J[1, 1] = spec.mu0 * u
    for i, c in enumerate(spec.channels):
        q = cluster_factor(x0, c.k, c.r)
        dq = cluster_factor(x0, c.k, c.r, order=1)
        d2q = cluster_factor(x0, c.k, c.r, order=2)
        if i not in kap:
            F[1] += c.mu * dq
            J[1, 0] += c.mu * d2q
            continue
        j = 2 + active.index(i)
        E = math.exp(c.s * (kap[i] - sig))
        flux = c.mu * c.s * q * E
        dflux_dx = c.mu * c.s * dq * E
        F[0] -= flux
        J[0, 0] -= dflux_dx
        J[0, 1] += c.s * flux
        J[0, j] -= c.s * flux
        F[1] -= c.mu * dq * (E - 1.0)
        J[1, 0] -= c.mu * d2q * (E - 1.0)
        J[1, 1] += c.mu * dq * c.s * E
        J[1, j] -= c.mu * dq * c.s * E
        F[j] = flux - targets[i]
        J[j, 0] = dflux_dx
        J[j, 1] = -c.s * flux
        J[j, j] = c.s * flux
    return F, J


def _newton_stationary(spec, targets, active, z, max_iter=100):
    F, J = _stationary_system(spec, targets, active, z)
    best = np.max(np.abs(F))
    for _ in range(max_iter):
        if best <= RESIDUAL_TOL:
            return z, best
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None, best
        lam = 1.0
        for _ in range(40):
            trial = z + lam * delta
            if 0.0 < trial[0] < 1.0:
                Ft, Jt = _stationary_system(spec, targets, active, trial)
                if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < (1.0 - 1e-4 * lam) * np.linalg.norm(F):
                    break
            lam *= 0.5
        else:
            # Newton has stagnated; accept if rounding is the only obstacle.
            return (z, best) if best <= RESIDUAL_TOL else (None, best)
        z, F, J = trial, Ft, Jt
        best = np.max(np.abs(F))
    return (z, best) if best <= RESIDUAL_TOL else (None, best)


def _start(spec, x0, targets, active):
    B = targets.sum()
    sig = math.log(B / (spec.mu0 * (1.0 - x0)))
    kap = []
    for i in active:
        c = spec.channels[i]
        q = max(cluster_factor(x0, c.k, c.r), 1e-300)
        kap.append(sig + math.log(targets[i] / (c.s * c.mu * q)) / c.s)
    return np.array([x0, sig, *kap])


def stationary_solution(spec: ModelSpec, B: float, split=None, warn: bool = True) -> StationarySolution:
    """Constant-density solution with total emission rate ``B``.

    ``split`` gives the fraction of ``B`` carried by each channel; it is
    required for ``d >= 2`` unless you want :func:`emission_split` to choose
    it (pass ``split="optimal"``). Channels with zero share get
    ``kappa = -inf``.
    """
    if not B > 0:
        raise ValueError("B must be positive")
    if spec.d == 1:
        alpha = np.array([1.0])
    elif split is None:
        raise ValueError("split is required when the model has more than one channel")
    elif isinstance(split, str) and split == "optimal":
        alpha = np.asarray(emission_split(spec, B)[0])
    else:
        alpha = np.asarray(split, dtype=float)
        if alpha.shape != (spec.d,) or np.any(alpha < 0) or not math.isclose(alpha.sum(), 1.0):
            raise ValueError("split must be d non-negative fractions summing to 1")
    targets = B * alpha
    active = [i for i in range(spec.d) if targets[i] > 0.0]

    x_star, fluxes = fluid_equilibrium(spec)
    fluid_rate = float(fluxes.sum())
    if warn and B <= fluid_rate:
        warnings.warn(
            f"B={B:g} does not exceed the fluid emission rate {fluid_rate:g}; not a large deviation",
            stacklevel=2,
        )
    try:
        x_hat = float(asymptotic_share(spec)[0])
    except AmbiguousDominantChannel:
        x_hat = None
    starts = [x_hat, x_star] if x_hat is not None else [x_star]
    if x_hat is not None and B < 2.0 * fluid_rate:
        starts.reverse()
    starts += [0.5, 0.25, 0.75]

    last = math.inf
    for x_init in starts:
        if not 0.0 < x_init < 1.0:
            continue
        z, res = _newton_stationary(spec, targets, active, _start(spec, x_init, targets, active))
        last = min(last, res)
        if z is not None:
            break
    else:
        raise NoConvergence(f"stationary Newton failed for B={B:g} (best residual {last:.3g})")
    if not 0.0 < z[0] < 1.0:
        raise NonPhysicalRoot(f"x0={z[0]:g} outside (0, 1)")
    kappa = [-math.inf] * spec.d
    for j, i in enumerate(active):
        kappa[i] = float(z[2 + j])
    return StationarySolution(
        x0=float(z[0]),
        sigma=float(z[1]),
        kappa=tuple(kappa),
        velocities=tuple(float(t) for t in targets),
        B=float(B),
        alpha=tuple(float(a) for a in alpha) if spec.d > 1 else None,
        residual=float(res),
    )


def constant_path_cost(spec: ModelSpec, sol: StationarySolution, T: float = 1.0) -> float:
    """Rate-function value of the constant path: ``T * L(x0, (0, velocities))``."""
    return T * lagrangian(spec, sol.x0, Velocity(0.0, sol.velocities)).value


# -- emission split ----------------------------------------------------------

def _split_cost(spec, B, alpha):
    try:
        sol = stationary_solution(spec, B, split=alpha, warn=False)
    except LuminescenceError:
        return math.inf
    return constant_path_cost(spec, sol)


def _golden(f, a, b, tol=1e-10, max_iter=200):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def emission_split(spec: ModelSpec, B: float):
    """Split of total emission rate ``B`` across channels minimizing path cost.

    Returns ``(alpha, I)`` where ``alpha[i]`` is channel ``i+1``'s share and
    ``I`` the constant-path rate value. Two channels: golden-section on
    ``alpha_1`` after a coarse scan locates the basin, with the endpoints
    compared explicitly. More channels: SLSQP on the simplex, compared
    against every vertex.
    """
    if spec.d < 2:
        raise ValueError("emission_split needs at least two channels")
    asymptotic_share(spec)  # refuses tied maximal s
    if spec.d == 2:
        def cost(a):
            return _split_cost(spec, B, np.array([a, 1.0 - a]))

        grid = np.linspace(0.0, 1.0, 21)
        values = np.array([cost(a) for a in grid])
        j = int(np.argmin(values))
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
        a_best, I_best = _golden(cost, lo, hi)
        for a in (0.0, 1.0):
            v = cost(a)
            if v < I_best:
                a_best, I_best = a, v
        if not math.isfinite(I_best):
            raise NoConvergence(f"no feasible split for B={B:g}")
        return np.array([a_best, 1.0 - a_best]), float(I_best)

    d = spec.d

    def cost_vec(w):
        w = np.clip(w, 0.0, None)
        return _split_cost(spec, B, w / w.sum())

    _, fluxes = fluid_equilibrium(spec)
    candidates = [np.eye(d)[i] for i in range(d)]
    if fluxes.sum() > 0:
        candidates.append(fluxes / fluxes.sum())
    best_w, best_v = None, math.inf
    for w in candidates:
        v = cost_vec(w)
        if v < best_v:
            best_w, best_v = w, v
    res = minimize(
        cost_vec,
        np.full(d, 1.0 / d),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * d,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0}],
    )
    if res.success and res.fun < best_v:
        best_w, best_v = np.clip(res.x, 0.0, None), float(res.fun)
    if best_w is None or not math.isfinite(best_v):
        raise NoConvergence(f"no feasible split for B={B:g}")
    return best_w / best_w.sum(), float(best_v)


# -- convergence studies -----------------------------------------------------

@dataclass
class ShareConvergence:
    x_hat: Fraction
    i0: int
    rows: list = field(default_factory=list)
    slope: float | None = None
    rate_rows: list = field(default_factory=list)
    rate_independent: bool | None = None
    rate_tolerance: float = 1e-2
    status: str = "proved"

    def to_summary(self):
        return {
            "x_hat": float(self.x_hat),
            "x_hat_fraction": str(self.x_hat),
            "i0": self.i0,
            "slope": self.slope,
            "rate_independent": self.rate_independent,
            "max_rate_deviation": max((r["error"] for r in self.rate_rows), default=None),
            "status": self.status,
        }


def _solve_at(spec, B):
    if spec.d == 1:
        return stationary_solution(spec, B, warn=False)
    alpha, _ = emission_split(spec, B)
    return stationary_solution(spec, B, split=alpha, warn=False)


def share_convergence(spec: ModelSpec, B_list, rate_grid=(0.1, 1.0, 10.0),
                      rate_tolerance: float = 1e-2) -> ShareConvergence:
    """Stationary ``x0(B)`` against the limit share, plus a rate sweep.

    The decay exponent is the least-squares slope of ``log|x0(B) - x_hat|``
    against ``log B`` (absent for fewer than two rows). The rate sweep
    re-solves at the largest ``B`` for every ``(mu0, mu)`` pair from
    ``rate_grid``, all channel rates set to ``mu``.
    """
    B_list = [float(b) for b in B_list]
    if any(b2 <= b1 for b1, b2 in zip(B_list, B_list[1:])):
        raise ValueError("B_list must be strictly increasing")
    x_hat, i0 = asymptotic_share(spec)
    out = ShareConvergence(x_hat, i0, rate_tolerance=rate_tolerance,
                           status="proved" if spec.d <= 2 else "conjecture-checked")
    for B in B_list:
        sol = _solve_at(spec, B)
        out.rows.append({
            "B": B,
            "x0": sol.x0,
            "error": abs(sol.x0 - float(x_hat)),
            "sigma": sol.sigma,
            "kappa": list(sol.kappa),
            "alpha": list(sol.alpha) if sol.alpha is not None else None,
        })
    errs = np.array([r["error"] for r in out.rows])
    if len(out.rows) >= 2 and np.all(errs > 0):
        out.slope = float(np.polyfit(np.log(B_list), np.log(errs), 1)[0])
    if rate_grid:
        B = B_list[-1]
        for mu0, mu in itertools.product(rate_grid, rate_grid):
            sol = _solve_at(spec.with_rates(mu0=mu0, mu=[mu] * spec.d), B)
            out.rate_rows.append({"mu0": mu0, "mu": mu, "x0": sol.x0,
                                  "error": abs(sol.x0 - float(x_hat))})
        out.rate_independent = all(r["error"] <= rate_tolerance for r in out.rate_rows)
    return out


def check_conjecture(spec: ModelSpec, B_list, tolerance: float = 1e-2) -> dict:
    """Empirical check of the dominant-channel rule at increasing ``B``.

    Reports, per ``B``, the stationary density and the share of emission
    carried by the largest-``s`` channel, and lists violations: final
    density farther than ``tolerance`` from ``x_hat`` or a dominant share
    that does not grow with ``B``. Models with more than two channels are
    labelled ``conjecture-checked``.
    """
    x_hat, i0 = asymptotic_share(spec)
    rows = []
    for B in B_list:
        sol = _solve_at(spec, float(B))
        weight = 1.0 if sol.alpha is None else sol.alpha[i0 - 1]
        rows.append({"B": float(B), "x0": sol.x0, "dominant_weight": weight})
    violations = []
    if rows and abs(rows[-1]["x0"] - float(x_hat)) > tolerance:
        violations.append(f"x0={rows[-1]['x0']:.6g} at B={rows[-1]['B']:g} is not within "
                          f"{tolerance:g} of {x_hat}")
    weights = [r["dominant_weight"] for r in rows]
    if any(w2 < w1 - 1e-9 for w1, w2 in zip(weights, weights[1:])):
        violations.append("dominant channel share decreases with B")
    return {
        "status": "proved" if spec.d <= 2 else "conjecture-checked",
        "x_hat": float(x_hat),
        "i0": i0,
        "rows": rows,
        "violations": violations,
    }
