"""Exact simulation of the excited-count / emission-count jump process.

The state is ``(m, y_1..y_d)``: ``m`` excited particles out of ``N`` and the
cumulative photons emitted through each channel. Pumping (channel 0) moves
``m -> m + 1``; channel ``i`` moves ``m -> m - s_i`` and ``y_i -> y_i + s_i``.

Two engines share one propensity table:

* :func:`simulate` runs Gillespie's direct method for one path and keeps
  every event.
* :func:`sample_ensemble` advances many replicas in lock-step with numpy
  and keeps only the summaries the Monte Carlo estimators need.

Random streams come from :class:`numpy.random.SeedSequence`: a single run
uses ``SeedSequence(seed)``, replica ``r`` of :func:`simulate_replicas` uses
``spawn_key=(r,)`` and batch ``b`` of :func:`sample_ensemble` uses
``spawn_key=(ENSEMBLE_KEY, b)``, so results never depend on thread count.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import EventBudgetExceeded, GridOutOfRange, StateOutOfRange
from .model import ModelSpec, feasible_propensities

__all__ = [
    "MicroState",
    "Trajectory",
    "EnsembleSample",
    "simulate",
    "simulate_replicas",
    "scaled_path",
    "total_emission",
    "sample_ensemble",
    "DEFAULT_MAX_EVENTS",
]

DEFAULT_MAX_EVENTS = 10**8
ENSEMBLE_KEY = 0x5EED
DEFAULT_BATCH = 1 << 16
_BLOCK = 4096


@dataclass(frozen=True)
class MicroState:
    m: int
    y: tuple
    t: float = 0.0


@dataclass
class Trajectory:
    """A full sample path. Event ``j`` happens at ``times[j]`` through
    ``channels[j]`` and leaves the process in ``(m[j], y[j])``."""

    N: int
    T: float
    initial: MicroState
    s: tuple
    times: np.ndarray
    channels: np.ndarray
    m: np.ndarray
    y: np.ndarray

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    @property
    def events(self):
        return [
            (float(t), int(c), MicroState(int(m), tuple(int(v) for v in y), float(t)))
            for t, c, m, y in zip(self.times, self.channels, self.m, self.y)
        ]

    @property
    def final(self) -> MicroState:
        if not self.n_events:
            return MicroState(self.initial.m, self.initial.y, self.T)
        return MicroState(int(self.m[-1]), tuple(int(v) for v in self.y[-1]), self.T)

    def time_average_share(self) -> float:
        """Exact time average of ``m(t)/N`` over ``[0, T]``."""
        knots = np.concatenate(([0.0], self.times, [self.T]))
        levels = np.concatenate(([self.initial.m], self.m))
        return float(np.dot(levels, np.diff(knots)) / (self.T * self.N))

    def check(self) -> None:
        """Assert the structural jump rule; raises ``AssertionError`` on failure."""
        if self.n_events:
            assert np.all(np.diff(self.times) > 0.0), "event times must increase"
            assert self.times[0] > 0.0 and self.times[-1] <= self.T
        prev_m = self.initial.m
        prev_y = np.array(self.initial.y)
        for c, m, y in zip(self.channels, self.m, self.y):
            if c == 0:
                assert m == prev_m + 1 and np.array_equal(y, prev_y)
            else:
                s = self.s[c - 1]
                expected = prev_y.copy()
                expected[c - 1] += s
                assert m == prev_m - s and np.array_equal(y, expected)
            assert 0 <= m <= self.N
            prev_m, prev_y = m, np.asarray(y)

    def to_csv(self, path, header_lines=()):
        """Columns ``time,channel,m,y_1..y_d``; first row is the initial state."""
        d = len(self.s)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(["time", "channel", "m", *[f"y_{i}" for i in range(1, d + 1)]]) + "\n")
            fh.write(",".join(["0.0", "-1", str(self.initial.m), *map(str, self.initial.y)]) + "\n")
            for t, c, m, y in zip(self.times, self.channels, self.m, self.y):
                fh.write(",".join([repr(float(t)), str(int(c)), str(int(m)), *map(str, y)]) + "\n")


@lru_cache(maxsize=64)
def _tables(spec: ModelSpec, N: int):
    """Feasible propensities for every ``m`` plus the jump vectors."""
    table = np.array([feasible_propensities(spec, N, m) for m in range(N + 1)])
    dm = np.concatenate(([1], -spec.s)).astype(np.int64)
    emit = np.concatenate(([0], spec.s)).astype(np.int64)
    return table, np.cumsum(table, axis=1), dm, emit


def _check_inputs(spec, N, m0, T):
    if int(N) != N or N < 1:
        raise StateOutOfRange(f"N must be a positive integer, got {N}")
    if int(m0) != m0 or not 0 <= m0 <= N:
        raise StateOutOfRange(f"m0 must be an integer in [0, {N}], got {m0}")
    if not T > 0:
        raise ValueError("T must be positive")
    if spec.propensity_mode == "binomial" and N < max(c.k for c in spec.channels):
        raise StateOutOfRange(f"binomial mode needs N >= max k_i, got N={N}")


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def simulate(spec: ModelSpec, N: int, m0: int, T: float, seed: int,
             max_events: int = DEFAULT_MAX_EVENTS, _key=()) -> Trajectory:
    """One exact sample path on ``[0, T]`` started from ``m0`` excited particles.

    Raises :class:`EventBudgetExceeded` when ``T`` times the largest total
    propensity exceeds ``max_events``.
    """
    _check_inputs(spec, N, m0, T)
    table, cum, dm, emit = _tables(spec, int(N))
    total = cum[:, -1]
    if total.max() * T > max_events:
        raise EventBudgetExceeded(
            f"expected up to {total.max() * T:.3g} events, cap is {max_events:.3g}"
        )
    rng = _stream(seed, *_key)
    d = spec.d
    m = int(m0)
    y = np.zeros(d, dtype=np.int64)
    t = 0.0
    times, chans, ms, ys = [], [], [], []
    expo = rng.standard_exponential(_BLOCK)
    unif = rng.random(_BLOCK)
    j = 0
    while True:
        a0 = total[m]
        if a0 <= 0.0:
            break
        if j == _BLOCK:
            expo = rng.standard_exponential(_BLOCK)
            unif = rng.random(_BLOCK)
            j = 0
        t += expo[j] / a0
        if t > T:
            break
        c = int(np.searchsorted(cum[m], unif[j] * a0, side="right"))
        j += 1
        m += int(dm[c])
        if c:
            y[c - 1] += emit[c]
        times.append(t)
        chans.append(c)
        ms.append(m)
        ys.append(y.copy())
    return Trajectory(
        N=int(N),
        T=float(T),
        initial=MicroState(int(m0), (0,) * d, 0.0),
        s=tuple(int(v) for v in spec.s),
        times=np.array(times, dtype=float),
        channels=np.array(chans, dtype=np.int64),
        m=np.array(ms, dtype=np.int64),
        y=np.array(ys, dtype=np.int64).reshape(-1, d),
    )


def simulate_replicas(spec, N, m0, T, seed, replicas, threads=1, **kwargs):
    """``replicas`` independent paths; replica ``r`` uses stream ``(seed, r)``."""
    def run(r):
        return simulate(spec, N, m0, T, seed, _key=(r,), **kwargs)

    if threads <= 1:
        return [run(r) for r in range(replicas)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(run, range(replicas)))


def scaled_path(traj: Trajectory, grid) -> np.ndarray:
    """Right-continuous ``(m/N, y_1/N, ..., y_d/N)`` at each grid time."""
    grid = np.asarray(grid, dtype=float)
    d = len(traj.s)
    if grid.size == 0:
        return np.empty((0, d + 1))
    if grid[0] < 0.0 or grid[-1] > traj.T or np.any(np.diff(grid) < 0.0):
        raise GridOutOfRange(f"grid must be sorted within [0, {traj.T}]")
    idx = np.searchsorted(traj.times, grid, side="right") - 1
    m = np.concatenate(([traj.initial.m], traj.m))[idx + 1]
    y = np.vstack([np.array(traj.initial.y, dtype=np.int64)[None, :], traj.y])[idx + 1]
    return np.column_stack([m, y]) / traj.N


def total_emission(traj: Trajectory) -> int:
    return int(sum(traj.final.y))


def write_scaled_csv(path, grid, values, header_lines=()):
    """Columns ``t,x0,x_1..x_d``."""
    d = values.shape[1] - 1
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(["t", "x0", *[f"x_{i}" for i in range(1, d + 1)]]) + "\n")
        for t, row in zip(grid, values):
            fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")


# -- ensembles ---------------------------------------------------------------

@dataclass
class EnsembleSample:
    """Per-replica summaries: total photons, time-averaged share, final ``m``."""

    N: int
    m0: int
    T: float
    seed: int
    emission: np.ndarray
    share: np.ndarray
    final_m: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def replicas(self) -> int:
        return int(self.emission.size)


def _run_batch(table_data, N, m0, T, size, rng):
    _, cum, dm, emit = table_data
    total = cum[:, -1]
    m = np.full(size, m0, dtype=np.int64)
    t = np.zeros(size)
    emitted = np.zeros(size, dtype=np.int64)
    area = np.zeros(size)
    active = np.arange(size)
    while active.size:
        mm = m[active]
        a0 = total[mm]
        tau = rng.standard_exponential(active.size)
        u = rng.random(active.size)
        with np.errstate(divide="ignore"):
            t_new = t[active] + tau / a0
        stop = t_new > T
        area[active] += mm * (np.minimum(t_new, T) - t[active])
        go = ~stop
        live = active[go]
        if live.size:
            target = (u[go] * a0[go])[:, None]
            c = np.sum(cum[mm[go]] <= target, axis=1)
            m[live] += dm[c]
            emitted[live] += emit[c]
            t[live] = t_new[go]
        active = live
    return emitted, area / (T * N), m


def sample_ensemble(spec: ModelSpec, N: int, m0: int, T: float, replicas: int, seed: int,
                    threads: int = 1, batch_size: int = DEFAULT_BATCH,
                    max_events: int = DEFAULT_MAX_EVENTS) -> EnsembleSample:
    """Run ``replicas`` independent paths and keep per-replica summaries.

    Replicas are processed in batches of ``batch_size``; batch ``b`` draws
    from stream ``(seed, ENSEMBLE_KEY, b)``, so the output is identical for
    any ``threads``. ``max_events`` caps the expected events per replica.
    """
    _check_inputs(spec, N, m0, T)
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    data = _tables(spec, int(N))
    if data[1][:, -1].max() * T > max_events:
        raise EventBudgetExceeded(f"expected events per replica exceed {max_events:.3g}")
    sizes = [min(batch_size, replicas - start) for start in range(0, replicas, batch_size)]

    def run(b):
        return _run_batch(data, int(N), int(m0), float(T), sizes[b], _stream(seed, ENSEMBLE_KEY, b))

    if threads <= 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return EnsembleSample(
        N=int(N), m0=int(m0), T=float(T), seed=int(seed),
        emission=np.concatenate([p[0] for p in parts]),
        share=np.concatenate([p[1] for p in parts]),
        final_m=np.concatenate([p[2] for p in parts]),
        meta={"batch_size": batch_size, "model": spec.to_dict()},
    )


def describe(spec, **params) -> str:
    """One-line JSON metadata used as the header of exported files."""
    return json.dumps({"model": spec.to_dict(), **params}, sort_keys=True)
