"""Monte Carlo checks of the large-deviation predictions at small ``N``.

The event of interest is ``total emission by T >= B * N`` (weak
inequality). Tail probabilities come from :func:`sample_ensemble`; the
exact reference is the transient master equation of :func:`master_equation_tail`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from scipy.stats import binomtest

from .errors import AllCensored, InsufficientHits, LuminescenceError, StateOutOfRange
from .hamiltonian import rate_functional
from .model import ModelSpec
from .simulator import _tables, sample_ensemble

__all__ = [
    "TailEstimate",
    "SlopeStudy",
    "ConditionedShare",
    "emission_threshold",
    "estimate_tail",
    "master_equation_tail",
    "master_equation_distribution",
    "threshold_for_rarity",
    "variational_rate",
    "ldp_slope",
    "conditioned_share",
    "MIN_HITS",
    "MAX_ORACLE_STATES",
]

MIN_HITS = 30
MAX_ORACLE_STATES = 10**5


def emission_threshold(B: float, N: int) -> int:
    """Smallest integer photon count satisfying ``count >= B * N``.

    ``B * N`` is rounded to 9 significant decimals first, so ``1.2 * 20``
    gives 24 and not 25.
    """
    if B < 0:
        raise ValueError("B must be non-negative")
    return max(0, math.ceil(round(B * N, 9)))


def _wilson(hits, n):
    ci = binomtest(int(hits), int(n)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TailEstimate:
    N: int
    B: float
    T: float
    replicas: int
    hits: int
    p_hat: float
    ci95: tuple
    seed: int
    m0: int = 0
    threshold: int = 0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.p_hat * (1.0 - self.p_hat) / self.replicas)

    def to_dict(self):
        out = asdict(self)
        out["ci95"] = list(self.ci95)
        return out

    def to_json(self, path, metadata=None):
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), "metadata": metadata or {}}, fh, indent=2, sort_keys=True)


def _tail_from_sample(sample, B, seed):
    k = emission_threshold(B, sample.N)
    hits = int(np.count_nonzero(sample.emission >= k))
    n = sample.replicas
    return TailEstimate(N=sample.N, B=float(B), T=sample.T, replicas=n, hits=hits,
                        p_hat=hits / n, ci95=_wilson(hits, n), seed=int(seed),
                        m0=sample.m0, threshold=k)


def estimate_tail(spec: ModelSpec, N: int, m0: int, T: float, B: float, replicas: int,
                  seed: int, threads: int = 1) -> TailEstimate:
    """Fraction of ``replicas`` independent runs with total emission ``>= B N``."""
    sample = sample_ensemble(spec, N, m0, T, replicas, seed, threads=threads)
    return _tail_from_sample(sample, B, seed)


# -- master-equation oracles -------------------------------------------------

def master_equation_distribution(spec: ModelSpec, N: int, m0: int, T: float) -> np.ndarray:
    """Exact law of ``m(T)`` from the ``(N+1)``-state excited-count chain."""
    table, _, dm, _ = _tables(spec, int(N))
    rows, cols, vals = [], [], []
    for m in range(N + 1):
        for c, rate in enumerate(table[m]):
            if rate > 0.0:
                rows.append(m)
                cols.append(m + int(dm[c]))
                vals.append(rate)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(N + 1, N + 1))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    p0 = np.zeros(N + 1)
    p0[m0] = 1.0
    return np.clip(expm_multiply(Q.T.tocsr() * T, p0), 0.0, 1.0)


def master_equation_tail(spec: ModelSpec, N: int, m0: int, T: float, B: float) -> float:
    """Exact ``P(total emission by T >= B N)`` from ``m0``.

    States are ``(m, e)`` with ``e`` the emitted photon count below the
    threshold ``K``, plus one absorbing state entered by any jump that
    reaches ``K``. The absorbing state's mass at ``T`` is the tail, with no
    truncation error. Refuses state spaces above ``MAX_ORACLE_STATES``.
    """
    if not 0 <= m0 <= N:
        raise StateOutOfRange(f"m0 must be in [0, {N}]")
    K = emission_threshold(B, N)
    if K == 0:
        return 1.0
    n_states = (N + 1) * K + 1
    if n_states > MAX_ORACLE_STATES:
        raise LuminescenceError(f"oracle needs {n_states} states, cap is {MAX_ORACLE_STATES}")
    table, _, dm, emit = _tables(spec, int(N))
    hit = n_states - 1

    def index(m, e):
        return m * K + e

    rows, cols, vals = [], [], []
    for m in range(N + 1):
        for e in range(K):
            src = index(m, e)
            for c, rate in enumerate(table[m]):
                if rate <= 0.0:
                    continue
                e_new = e + int(emit[c])
                rows.append(src)
                cols.append(hit if e_new >= K else index(m + int(dm[c]), e_new))
                vals.append(rate)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n_states, n_states))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    p0 = np.zeros(n_states)
    p0[index(m0, 0)] = 1.0
    p = expm_multiply(Q.T.tocsr() * T, p0)
    return float(min(max(p[hit], 0.0), 1.0))


def threshold_for_rarity(spec: ModelSpec, N: int, m0: int, T: float, p_target: float,
                         max_count: int | None = None) -> int:
    """Photon count ``K`` whose exact tail ``P(emission >= K)`` is closest to
    ``p_target`` on a log scale. Used to compare settings at matched rarity."""
    if not 0.0 < p_target < 1.0:
        raise ValueError("p_target must lie in (0, 1)")
    if max_count is None:
        max_count = max(1, math.ceil(4.0 * _tables(spec, int(N))[1][:, -1].max() * T))
    best, best_err = 1, math.inf
    for K in range(1, max_count + 1):
        p = master_equation_tail(spec, N, m0, T, K / N)
        err = abs(math.log(max(p, 1e-300) / p_target))
        if err < best_err:
            best, best_err = K, err
        if p < p_target:
            break
    return best


# -- LDP slope ---------------------------------------------------------------

def variational_rate(spec: ModelSpec, x0_init: float, T: float, B: float):
    """``I* = inf {I(path) : total scaled emission at T >= B}``.

    Returns ``(I_star, method)``. Below the fluid emission the event is
    typical and ``I* = 0``. Otherwise the shooting solver's optimal path is
    used (``method = "bvp"``); for ``d >= 2`` the terminal split follows
    :func:`emission_split` at rate ``B / T``. When shooting does not
    converge, the constant-share path from :func:`stationary_solution` is
    used instead (``method = "constant"``), which only bounds ``I*`` above.
    """
    from .large_emission import constant_path_cost, emission_split, stationary_solution
    from .optimal_path import BoundaryData, fluid_trajectory, solve_bvp

    fluid = fluid_trajectory(spec, x0_init, T, min(1e-3, T / 1000)).positions[-1, 1:]
    if B <= fluid.sum():
        return 0.0, "fluid"
    alpha = np.ones(1) if spec.d == 1 else emission_split(spec, B / T)[0]
    try:
        path = solve_bvp(spec, BoundaryData(x0_init, tuple(alpha * B), T))
        return float(rate_functional(spec, path)), "bvp"
    except LuminescenceError:
        split = None if spec.d == 1 else alpha
        sol = stationary_solution(spec, B / T, split=split, warn=False)
        return float(constant_path_cost(spec, sol, T)), "constant"


@dataclass
class SlopeStudy:
    rows: list
    I_star: float
    method: str
    trend_decreasing: bool | None = None
    final_gap: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_csv(self, path, header_lines=()):
        cols = ["N", "m0", "replicas", "hits", "p_hat", "ci_low", "ci_high", "rate", "gap", "censored"]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def ldp_slope(spec: ModelSpec, N_list, m0_fraction: float, T: float, B: float,
              replicas: int, seed: int, threads: int = 1) -> SlopeStudy:
    """Empirical ``-ln p_hat / N`` per ``N`` against the variational ``I*``.

    Each ``N`` starts from ``m0 = round(N * m0_fraction)`` and uses stream
    ``seed + index``. Rows with no hits are flagged ``censored``; the trend
    is whether the relative gap shrinks along the uncensored rows.
    """
    N_list = [int(n) for n in N_list]
    I_star, method = variational_rate(spec, m0_fraction, T, B)
    rows = []
    for j, N in enumerate(N_list):
        m0 = int(round(N * m0_fraction))
        est = estimate_tail(spec, N, m0, T, B, replicas, seed + j, threads=threads)
        censored = est.hits == 0
        rate = None if censored else -math.log(est.p_hat) / N
        gap = None
        if rate is not None:
            gap = abs(rate - I_star) / I_star if I_star > 0 else abs(rate)
        rows.append({"N": N, "m0": m0, "replicas": replicas, "hits": est.hits,
                     "p_hat": est.p_hat, "ci_low": est.ci95[0], "ci_high": est.ci95[1],
                     "rate": rate, "gap": gap, "censored": censored})
    live = [r for r in rows if not r["censored"]]
    if not live:
        raise AllCensored(f"no hits for any N in {N_list} at B={B:g}")
    study = SlopeStudy(rows=rows, I_star=I_star, method=method,
                       meta={"B": B, "T": T, "m0_fraction": m0_fraction, "seed": seed,
                             "model": spec.to_dict()})
    if len(rows) >= 2:
        gaps = [r["gap"] for r in rows]
        study.trend_decreasing = all(g is not None for g in gaps) and all(
            b < a for a, b in zip(gaps, gaps[1:]))
    study.final_gap = rows[-1]["gap"]
    return study


# -- conditioned share -------------------------------------------------------

@dataclass
class ConditionedShare:
    mean_share: float
    hits: int
    replicas: int
    unconditioned_share: float
    threshold: int
    std_error: float

    def to_dict(self):
        return asdict(self)


def conditioned_share(spec: ModelSpec, N: int, m0: int, T: float, B: float, replicas: int,
                      seed: int, threads: int = 1, min_hits: int = MIN_HITS) -> ConditionedShare:
    """Mean time-averaged ``m(t)/N`` over runs whose emission reaches ``B N``.

    Time averages are exact integrals of the piecewise-constant path.
    Raises :class:`InsufficientHits` with fewer than ``min_hits`` hits.
    """
    sample = sample_ensemble(spec, N, m0, T, replicas, seed, threads=threads)
    k = emission_threshold(B, N)
    mask = sample.emission >= k
    hits = int(mask.sum())
    if hits < min_hits:
        raise InsufficientHits(f"{hits} hits out of {replicas}, need {min_hits}")
    sel = sample.share[mask]
    return ConditionedShare(
        mean_share=float(sel.mean()),
        hits=hits,
        replicas=int(replicas),
        unconditioned_share=float(sample.share.mean()),
        threshold=k,
        std_error=float(sel.std(ddof=1) / math.sqrt(hits)),
    )
