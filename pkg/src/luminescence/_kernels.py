"""Compiled RK4 kernels for Hamilton's equations and the fluid ODE.

State rows are ``(x0, x_1..x_d, sigma)`` for the Hamiltonian system and
``(x0, x_1..x_d)`` for the fluid ODE. Channel data is packed by
:func:`pack`.
"""
import math
from functools import lru_cache

import numpy as np
from numba import njit

from ._cluster import _coefficients

BLOWUP_LIMIT = 1e12
X0_SLACK = 1e-6


@lru_cache(maxsize=256)
def pack(spec):
    """``(mu0, mu, s, coef)`` with ``coef[order, channel, power]`` ascending."""
    width = max(c.k for c in spec.channels) + 1
    coef = np.zeros((2, spec.d, width))
    for order in range(2):
        for i, c in enumerate(spec.channels):
            row = _coefficients(c.k, c.r, order)
            coef[order, i, : len(row)] = row
    return spec.mu0, spec.mu.astype(float), spec.s.astype(float), coef


@njit(cache=True)
def _poly(coef, order, i, x):
    if x < 0.0 or x > 1.0:
        return 0.0
    acc = 0.0
    for p in range(coef.shape[2] - 1, -1, -1):
        acc = acc * x + coef[order, i, p]
    return acc


@njit(cache=True)
def _hamilton_rhs(y, kappa, mu0, mu, s, coef, out):
    d = mu.shape[0]
    x0 = y[0]
    sig = y[d + 1]
    total = 0.0
    dsig = mu0 * math.expm1(sig)
    for i in range(d):
        expo = s[i] * (kappa[i] - sig)
        flux = mu[i] * s[i] * _poly(coef, 0, i, x0) * math.exp(expo)
        out[1 + i] = flux
        total += flux
        dsig -= mu[i] * _poly(coef, 1, i, x0) * math.expm1(expo)
    out[0] = mu0 * (1.0 - x0) * math.exp(sig) - total
    out[d + 1] = dsig


@njit(cache=True)
def _fluid_rhs(y, kappa, mu0, mu, s, coef, out):
    d = mu.shape[0]
    x0 = y[0]
    total = 0.0
    for i in range(d):
        flux = mu[i] * s[i] * _poly(coef, 0, i, x0)
        out[1 + i] = flux
        total += flux
    out[0] = mu0 * (1.0 - x0) - total


@njit(cache=True)
def _step_ok(y):
    if y[0] < -X0_SLACK or y[0] > 1.0 + X0_SLACK:
        return False
    for v in y:
        if not np.isfinite(v) or abs(v) > BLOWUP_LIMIT:
            return False
    return True


@njit(cache=True)
def _rk4_rows(Y0, K, h, n_steps, record, fluid, mu0, mu, s, coef):
    n, dim = Y0.shape
    ok = np.ones(n, dtype=np.bool_)
    if record:
        states = np.empty((n_steps + 1, n, dim))
    else:
        states = np.empty((1, n, dim))
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    for row in range(n):
        y = Y0[row].copy()
        kap = K[row]
        states[0, row] = y
        for step in range(n_steps):
            if fluid:
                _fluid_rhs(y, kap, mu0, mu, s, coef, k1)
            else:
                _hamilton_rhs(y, kap, mu0, mu, s, coef, k1)
            for j in range(dim):
                tmp[j] = y[j] + 0.5 * h * k1[j]
            if fluid:
                _fluid_rhs(tmp, kap, mu0, mu, s, coef, k2)
            else:
                _hamilton_rhs(tmp, kap, mu0, mu, s, coef, k2)
            for j in range(dim):
                tmp[j] = y[j] + 0.5 * h * k2[j]
            if fluid:
                _fluid_rhs(tmp, kap, mu0, mu, s, coef, k3)
            else:
                _hamilton_rhs(tmp, kap, mu0, mu, s, coef, k3)
            for j in range(dim):
                tmp[j] = y[j] + h * k3[j]
            if fluid:
                _fluid_rhs(tmp, kap, mu0, mu, s, coef, k4)
            else:
                _hamilton_rhs(tmp, kap, mu0, mu, s, coef, k4)
            for j in range(dim):
                tmp[j] = y[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if ok[row] and not _step_ok(tmp):
                ok[row] = False
            if ok[row]:
                y[:] = tmp
            if record:
                states[step + 1, row] = y
            elif not ok[row]:
                break
        if not record:
            states[0, row] = y
    return states, ok


def rk4(spec, Y0, K, h, n_steps, record, fluid=False):
    """Integrate every row of ``Y0``; rows that blow up are frozen and flagged."""
    mu0, mu, s, coef = pack(spec)
    Y0 = np.ascontiguousarray(Y0, dtype=float)
    K = np.ascontiguousarray(K, dtype=float)
    if K.shape[0] != Y0.shape[0]:
        K = np.broadcast_to(K, (Y0.shape[0], spec.d)).copy()
    states, ok = _rk4_rows(Y0, K, float(h), int(n_steps), bool(record), bool(fluid),
                           float(mu0), mu, s, coef)
    return (states if record else states[0]), ok
