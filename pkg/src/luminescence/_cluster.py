"""Cluster polynomials ``Q(z, q) = z**q / q!`` and their derivatives.

``Q`` vanishes outside ``z in [0, 1]`` and for negative ``q``; both the
propensities and the Hamiltonian are built from products
``Q(x, r) * Q(1 - x, k - r)``, which on ``[0, 1]`` is the polynomial
``x**r (1 - x)**(k - r) / (r! (k - r)!)``.
"""
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as P


def q_factor(z, q):
    """Return ``z**q / q!`` for ``z`` in [0, 1] and ``q >= 0``, else 0."""
    q = int(q)
    if np.ndim(z) == 0:
        z = float(z)
        if q < 0 or not 0.0 <= z <= 1.0:
            return 0.0
        return z**q / factorial(q)
    z = np.asarray(z, dtype=float)
    if q < 0:
        return np.zeros_like(z)
    inside = (z >= 0.0) & (z <= 1.0)
    return np.where(inside, np.where(inside, z, 0.0) ** q / factorial(q), 0.0)


@lru_cache(maxsize=None)
def _coefficients(k, r, order):
    base = P.polymul(P.polypow([0.0, 1.0], r), P.polypow([1.0, -1.0], k - r))
    base = base / (factorial(r) * factorial(k - r))
    return tuple(P.polyder(base, order)) if order else tuple(base)


def cluster_factor(x, k, r, order=0):
    """``order``-th derivative in ``x`` of ``Q(x, r) * Q(1 - x, k - r)``.

    Zero for ``x`` outside ``[0, 1]``. Accepts scalars or arrays.
    """
    coef = _coefficients(int(k), int(r), int(order))
    if np.ndim(x) == 0:
        x = float(x)
        if not 0.0 <= x <= 1.0:
            return 0.0
        acc = 0.0
        for c in reversed(coef):
            acc = acc * x + c
        return acc
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in reversed(coef):
        acc = acc * x + c
    return np.where((x >= 0.0) & (x <= 1.0), acc, 0.0)
