"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line (with the measured numbers and the
runtime) that is printed at the end of the pytest run; running this file
directly with ``python3 tests/test_acceptance.py`` prints the same lines.
Criteria 7 and 10 are expected to fail; see the README for why.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from luminescence.errors import BlowUp, LuminescenceError
from luminescence.hamiltonian import (
    PhasePoint,
    hamiltonian,
    hamiltonian_field,
    rate_functional,
)
from luminescence.large_emission import (
    asymptotic_share,
    emission_split,
    fluid_equilibrium,
    share_convergence,
    stationary_solution,
)
from luminescence.model import BUNDLED_MODELS, load_model
from luminescence.optimal_path import (
    BoundaryData,
    constant_path,
    fluid_trajectory,
    integrate_hamiltonian,
    solve_bvp,
)
from luminescence.validation import (
    conditioned_share,
    estimate_tail,
    ldp_slope,
    master_equation_tail,
    threshold_for_rarity,
)

from conftest import D1_MODELS, random_spec

pytestmark = pytest.mark.acceptance

RESULTS = {}


def record(n, ok, elapsed, limit, detail):
    """Store the outcome of criterion ``n`` and fail the test if it is not met."""
    in_time = elapsed < limit
    passed = bool(ok and in_time)
    RESULTS[n] = (f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}  "
                  f"[{elapsed:.1f}s, limit {limit:g}s]")
    print(RESULTS[n])
    assert ok, RESULTS[n]
    assert in_time, RESULTS[n]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


EXPECTED_SHARES = {
    "linear": Fraction(1, 2), "q222": Fraction(1, 2), "q221": Fraction(2, 3),
    "q211": Fraction(1, 3), "c333": Fraction(1, 2),
}


def test_c01_asymptotic_share_table():
    with Timer() as t:
        got = {name: asymptotic_share(load_model(name))[0] for name in EXPECTED_SHARES}
    ok = got == EXPECTED_SHARES
    record(1, ok, t.elapsed, 1.0, ", ".join(f"{k}={v}" for k, v in got.items()))


def test_c02_rate_independence():
    grid = (0.1, 1.0, 10.0)
    worst = {}
    with Timer() as t:
        for name in D1_MODELS:
            spec = load_model(name)
            x_hat = float(EXPECTED_SHARES[name])
            worst[name] = max(
                abs(stationary_solution(spec.with_rates(mu0, [mu1]), 1e4, warn=False).x0 - x_hat)
                for mu0 in grid for mu1 in grid
            )
    ok = all(v <= 1e-2 for v in worst.values())
    record(2, ok, t.elapsed, 10.0,
           "max |x0 - x_hat| over 9 rate pairs: "
           + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def test_c03_finite_b_convergence():
    with Timer() as t:
        res = share_convergence(load_model("q211"), [10.0, 1e2, 1e3, 1e4], rate_grid=())
    errs = [r["error"] for r in res.rows]
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    ok = monotone and -1.3 <= res.slope <= -0.7
    record(3, ok, t.elapsed, 10.0, f"errors {['%.2e' % e for e in errs]}, slope {res.slope:.3f}")


def test_c04_two_channel_dominance():
    spec = load_model("d2_221_333")
    with Timer() as t:
        alpha, _ = emission_split(spec, 1e4)
        sol = stationary_solution(spec, 1e4, split=alpha, warn=False)
    i3 = int(np.flatnonzero(spec.s == 3)[0])
    ok = alpha[i3] >= 0.95 and abs(sol.x0 - 0.5) <= 1e-2
    record(4, ok, t.elapsed, 30.0, f"weight on s=3 channel {alpha[i3]:.5f}, x0 {sol.x0:.6f}")


def _fd_field(spec, p, h=1e-6):
    def H(**kw):
        args = dict(x0=p.x0, x=p.x, sigma=p.sigma, kappa=p.kappa)
        args.update(kw)
        return hamiltonian(spec, PhasePoint(**args))

    dsig = (H(sigma=p.sigma + h) - H(sigma=p.sigma - h)) / (2 * h)
    dx0 = -(H(x0=p.x0 + h) - H(x0=p.x0 - h)) / (2 * h)
    dkap = []
    for i in range(len(p.kappa)):
        up, dn = list(p.kappa), list(p.kappa)
        up[i] += h
        dn[i] -= h
        dkap.append((H(kappa=up) - H(kappa=dn)) / (2 * h))
    return dsig, dx0, np.array(dkap)


def test_c05_hamiltonian_structure():
    rng = np.random.default_rng(2024)
    with Timer() as t:
        zero_max = 0.0
        for _ in range(1000):
            spec = random_spec(rng)
            zero_max = max(zero_max, abs(hamiltonian(spec, PhasePoint.zero_momentum(rng.random(), spec.d))))
        grad_err = 0.0
        for _ in range(200):
            spec = random_spec(rng)
            p = PhasePoint(rng.uniform(0.05, 0.95), np.zeros(spec.d), rng.uniform(-1, 1),
                           rng.uniform(-1, 1, spec.d))
            dx0, dx, dsig, _ = hamiltonian_field(spec, p)
            fd_x0dot, fd_sigdot, fd_xdot = _fd_field(spec, p)
            for a, b in [(dx0, fd_x0dot), (dsig, fd_sigdot), *zip(dx, fd_xdot)]:
                grad_err = max(grad_err, abs(a - b) / max(1.0, abs(a), abs(b)))
        drift, kappa_dev, runs = 0.0, 0.0, 0
        starts = []
        for _ in range(300):
            spec = random_spec(rng)
            starts.append((spec, PhasePoint(rng.uniform(0.2, 0.8), np.zeros(spec.d),
                                            rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5, spec.d))))
        for name in D1_MODELS:
            spec = load_model(name)
            starts.append((spec, stationary_solution(spec, 10.0, warn=False).phase_point()))
        for spec, start in starts:
            try:
                traj = integrate_hamiltonian(spec, start, 1.0, 1e-3)
            except BlowUp:
                continue
            runs += 1
            H0 = traj.hamiltonian_values[0]
            drift = max(drift, traj.energy_drift() / (1.0 + abs(H0)))
            kappa_dev = max(kappa_dev, float(np.max(np.abs(traj.kappa - traj.kappa[0]))))
    ok = zero_max == 0.0 and grad_err <= 1e-6 and drift <= 1e-6 and kappa_dev <= 1e-10
    record(5, ok, t.elapsed, 60.0,
           f"max|H(x,0,0)| {zero_max:g} on 1000 points, field vs FD {grad_err:.1e}, "
           f"H drift {drift:.1e} and kappa drift {kappa_dev:g} on {runs} bounded runs")


def test_c06_variational_zero():
    worst = 0.0
    with Timer() as t:
        for name in BUNDLED_MODELS:
            spec = load_model(name)
            # x0(0) = 0 is excluded: the one-sided velocity at t = 0 is then
            # positive while the emission propensity vanishes.
            for x_init in (0.05, 0.3, 0.9):
                path = fluid_trajectory(spec, x_init, 1.0, 1e-3)
                worst = max(worst, rate_functional(spec, path))
    record(6, worst <= 1e-6, t.elapsed, 10.0, f"max I(fluid path) {worst:.2e} over 6 models x 3 starts")


def test_c07_constant_solution_bvp():
    spec = load_model("linear")
    bd = BoundaryData(0.5, (10.0,), 1.0)
    with Timer() as t:
        try:
            path = solve_bvp(spec, bd)
            err = None
        except LuminescenceError as exc:
            path, err = None, exc
    if path is None:
        record(7, False, t.elapsed, 30.0, f"{type(err).__name__}: {err}")
    res_x = abs(path.x[-1, 0] - 10.0) / 10.0
    dev = float(np.max(np.abs(path.x0 - 0.5)))
    ok = res_x <= 1e-6 and abs(path.sigma[-1]) <= 1e-8 and dev <= 1e-4
    record(7, ok, t.elapsed, 30.0, f"residuals {res_x:.1e}/{abs(path.sigma[-1]):.1e}, "
                                   f"max|x0-1/2| {dev:.2e}")


def test_c08_rate_growth_law():
    ratios = {}
    B = 1e4
    with Timer() as t:
        for name in D1_MODELS:
            spec = load_model(name)
            sol = stationary_solution(spec, B, warn=False)
            I = rate_functional(spec, constant_path(sol.x0, [B], 1.0, 1001))
            ratios[name] = (I / (B * math.log(B)), 1.0 + 1.0 / spec.channels[0].s)
    ok = all(abs(r / target - 1.0) <= 0.05 for r, target in ratios.values())
    record(8, ok, t.elapsed, 10.0,
           ", ".join(f"{k} {r:.3f}/{tg:.3f}" for k, (r, tg) in ratios.items()))


def test_c09_ssa_exactness():
    spec = load_model("linear")
    settings = [(0.8, 1.0), (1.0, 1.0), (1.5, 2.0)]
    parts, ok = [], True
    with Timer() as t:
        for j, (B, T) in enumerate(settings):
            est = estimate_tail(spec, 20, 10, T, B, 1_000_000, seed=900 + j)
            p = master_equation_tail(spec, 20, 10, T, B)
            z = (est.p_hat - p) / math.sqrt(p * (1.0 - p) / est.replicas)
            ok &= abs(z) <= 3.0
            parts.append(f"(B={B},T={T}) p_hat {est.p_hat:.3e} vs {p:.3e} z={z:+.2f}")
    record(9, ok, t.elapsed, 600.0, "; ".join(parts))


def test_c10_ldp_slope_trend():
    spec = load_model("linear")
    with Timer() as t:
        study = ldp_slope(spec, [10, 20, 40], 0.5, 1.0, 1.2, 1_000_000, seed=1000)
    gaps = [r["gap"] for r in study.rows]
    ok = bool(study.trend_decreasing) and gaps[-1] is not None and gaps[-1] <= 0.3
    rows = ", ".join(f"N={r['N']}: hits {r['hits']}, gap "
                     + ("censored" if r["gap"] is None else f"{r['gap']:.3f}")
                     for r in study.rows)
    exact = ", ".join(
        f"{N}: {-math.log(master_equation_tail(spec, N, N // 2, 1.0, 1.2)) / N:.3f}"
        for N in (10, 20, 40))
    record(10, ok, t.elapsed, 1800.0,
           f"I* {study.I_star:.4f} ({study.method}); {rows}; exact -ln p/N {exact}")


# Frozen from seeds 1100/1101 with 2e6 replicas each (N = 30, T = 1, m0 at
# the fluid fixed point, threshold with exact tail closest to 1e-3).
FIXTURE_11 = {0.5: (19, 1381, 0.3244028738410774), 2.0: (32, 2662, 0.6101789510997787)}


def test_c11_conditioned_share_direction():
    base = load_model("linear")
    out = {}
    with Timer() as t:
        for j, mu0 in enumerate((0.5, 2.0)):
            spec = base.with_rates(mu0=mu0)
            x_star, _ = fluid_equilibrium(spec)
            m0 = round(30 * x_star)
            K = threshold_for_rarity(spec, 30, m0, 1.0, 1e-3)
            out[mu0] = (K, conditioned_share(spec, 30, m0, 1.0, K / 30, 2_000_000, seed=1100 + j))
    cond_gap = abs(out[0.5][1].mean_share - out[2.0][1].mean_share)
    free_gap = abs(out[0.5][1].unconditioned_share - out[2.0][1].unconditioned_share)
    fixture_ok = all(
        out[mu][0] == K and out[mu][1].hits == hits and abs(out[mu][1].mean_share - share) <= 1e-9
        for mu, (K, hits, share) in FIXTURE_11.items()
    )
    ok = cond_gap < free_gap and fixture_ok
    record(11, ok, t.elapsed, 1800.0,
           f"conditioned {out[0.5][1].mean_share:.4f} vs {out[2.0][1].mean_share:.4f} "
           f"(gap {cond_gap:.4f}); unconditioned gap {free_gap:.4f}; "
           f"thresholds {out[0.5][0]}/{out[2.0][0]}; fixture {'matches' if fixture_ok else 'differs'}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
