"""The twelve acceptance criteria at their stated scales and tolerances.

Each test records one PASS/FAIL line (echoed at the end of the pytest run)
and then asserts the criterion as stated.  Two criteria are marked as
expected failures: the computation is faithful and the assertion is the
stated one, but the measured quantity provably differs from the target (see
the reasons attached to the markers).
"""

import math
import time

import numpy as np
import pytest

from intermittency import experiments as X
from intermittency import maps
from intermittency import returns as R
from intermittency import transfer as T
from intermittency.rds import NoiseSeq

pytestmark = pytest.mark.acceptance

SEED = 2024


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


@pytest.fixture(scope="module")
def pm():
    return maps.pm(0.5)


@pytest.fixture(scope="module")
def lsv():
    return maps.lsv(0.5)


@pytest.fixture(scope="module")
def noisy_escape(pm):
    I = R.build_I(pm, 1e-3, 0.1)
    with Timer() as t:
        rep = X.tail_escape(pm, I, 1e-3, 1_000_000, 4096, seed=SEED, threads=4)
    return rep, t.seconds


# ---------------------------------------------------------------- 1


def _threshold(f, I, m, side):
    """sup{d in (0, r) : E(side * d) >= m} by bisection on forward escape times."""
    z = NoiseSeq.zeros(m + 1)
    lo, hi = 0.0, 0.1
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        E = R.escape_time(f, I, (side * mid) % 1.0, z, m + 1)
        if R.is_censored(E) or E >= m:
            lo = mid
        else:
            hi = mid
    return lo


def test_c1_escape_tail_exponent(pm, verdict):
    I = R.build_I(pm, 0.0, 0.1)
    with Timer() as t:
        m = np.unique(np.round(np.geomspace(16, 1024, 40)).astype(np.int64))
        surv = X.escape_survival_exact(pm, I, m)
        fit = X.fit_slope(m, surv)
        # oracle: thresholds x_m on both sides of 0 by direct forward iteration
        sub = m[::6]
        direct = np.array([_threshold(pm, I, int(k), 1) + _threshold(pm, I, int(k), -1)
                           for k in sub])
        rel = np.max(np.abs(direct / surv[::6] - 1.0))
    ok = abs(fit.slope + 2.0) <= 0.2 and rel < 1e-9 and t.seconds < 60
    verdict("C1", ok, f"slope {fit.slope:.4f} on m in [16, 1024] (target -2 +- 0.2); "
                      f"pullback vs forward-iteration thresholds rel. diff {rel:.1e}, "
                      f"{t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 2


@pytest.mark.xfail(strict=True, reason=(
    "at eps = 1e-3 the noise cut-off arrives before the power-law regime: every m with "
    "survival above the 10 eps plateau floor has m < 16, where the finite-radius offset "
    "keeps the local slope near -1.2"))
def test_c2a_pre_plateau_slope(noisy_escape, verdict):
    rep, secs = noisy_escape
    mc = rep.extras.get("crossover_m")
    chord = X.fit_slope(rep.m_grid, rep.survival, window=(1, mc)).slope
    ok = rep.fit is not None and abs(rep.fitted_slope + 2.0) <= 0.25 and secs < 600
    fitted = "none (no m >= 16 above the floor)" if rep.fit is None else \
        f"{rep.fitted_slope:.3f}"
    verdict("C2a", ok, f"pre-plateau fitted slope {fitted}; slope over m in [1, {mc}] "
                       f"{chord:.3f} (target -2 +- 0.25), {secs:.1f} s")
    assert ok


def test_c2b_plateau_level(noisy_escape, verdict):
    rep, secs = noisy_escape
    lvl = rep.extras["plateau_level"]
    mc = rep.extras["crossover_m"]
    beyond = rep.survival[rep.m_grid >= mc]
    ok = bool(np.all(beyond <= 24e-3)) and secs < 600
    verdict("C2b", ok, f"survival at crossover m = {mc} is {lvl:.5f}, max beyond "
                       f"{beyond.max():.5f} (bound 8 eps x 3 = 0.024), {secs:.1f} s")
    assert ok


# ---------------------------------------------------------------- 3


@pytest.mark.xfail(strict=True, reason=(
    "||zeta_eps - zeta||_1 decays like eps^((1 - alpha)/(1 + alpha)) = eps^(1/3): noise "
    "dominates the neutral drift x^(1 + alpha) below x ~ eps^(2/3), which carries "
    "mass ~ eps^(1/3); over a factor 16 in eps the ratio is 16^(-1/3) = 0.397 > 1/3"))
def test_c3_stochastic_stability_trend(pm, lsv, verdict):
    eps = (0.04, 0.02, 0.01, 0.005, 0.0025)
    parts = []
    ok = True
    with Timer() as t:
        for name, f in (("LSV", lsv), ("PM", pm)):
            rep = X.stability_sweep(f, eps, N=4096)
            ratio = rep.l1_curve[-1] / rep.l1_curve[0]
            ok &= rep.trend_ok
            parts.append(f"{name}: increases {rep.increases}, last/first {ratio:.3f}, "
                         f"rate eps^{rep.decay_exponent:.3f}")
    ok &= t.seconds < 900
    verdict("C3", ok, "; ".join(parts) + f" (need last/first < 1/3), {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 4


def test_c4_stationary_measure_consistency(pm, verdict):
    with Timer() as t:
        rep = X.birkhoff_check(pm, 0.01, 10**8, seed=SEED, threads=4)
    dev = np.abs(rep.time_avg - rep.ulam)
    ok = bool(rep.passed.all()) and rep.n == 10**8 and t.seconds < 600
    det = ", ".join(f"{n}: |diff| {d:.2e} <= {tol:.2e}"
                    for n, d, tol in zip(rep.names, dev, rep.tolerance))
    verdict("C4", ok, f"{det}; {rep.n:.0e} steps, {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 5


def test_c5_operator_identities(pm, lsv, verdict):
    dbl = maps.doubling(0.5)
    worst_row = 0.0
    worst_fact = 0.0
    with Timer() as t:
        for f in (pm, lsv, dbl):
            g = T.default_grid(f, 4096)
            P = T.ulam_build(f, g)
            worst_row = max(worst_row, np.max(np.abs(P.row_sums() - 1.0)))
            for eps in (0.0025, 0.01, 0.04):
                A = T.annealed_build(f, g, eps)
                worst_row = max(worst_row, np.max(np.abs(A.row_sums() - 1.0)))
                D = (A.matrix - P.matrix @ T.smoothing_matrix(g, eps)).tocoo()
                worst_fact = max(worst_fact, np.max(np.abs(D.data), initial=0.0))
        gd = T.Grid.uniform(4096)
        rho = T.invariant_density(dbl, gd)
        l1_dbl = T.l1_distance(rho, T.Density.uniform(gd))
        rng = np.random.default_rng(SEED)
        g = T.default_grid(pm, 4096)
        contraction = 0
        for _ in range(100):
            e = float(rng.uniform(1e-4, 0.2))
            a = T.Density.from_masses(g, rng.dirichlet(np.ones(g.N)))
            b = T.Density.from_masses(g, rng.dirichlet(np.full(g.N, 0.1)))
            before = T.l1_distance(a, b)
            after = T.l1_distance(T.smooth_uniform(a, e), T.smooth_uniform(b, e))
            contraction += after <= before + 1e-14
    ok = (worst_row <= 1e-12 and worst_fact <= 1e-10 and l1_dbl <= 1e-10
          and contraction == 100 and t.seconds < 60)
    verdict("C5", ok, f"max |row sum - 1| {worst_row:.1e}, max |A - P S| {worst_fact:.1e}, "
                      f"doubling L1 {l1_dbl:.1e}, contraction {contraction}/100, "
                      f"{t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 6


def test_c6_subadditivity(pm, verdict):
    with Timer() as t:
        chk = X.subadditivity_check(pm, 1000, seed=SEED, slack=1.05)
    ok = chk.trials == 1000 and chk.ok and t.seconds < 300
    verdict("C6", ok, f"{chk.violations} violations in {chk.trials} samples, worst "
                      f"lhs/rhs {chk.worst:.3f} (slack 1.05), {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 7


def test_c7_pliss(verdict):
    with Timer() as t:
        fails, nonmax = X.pliss_check(10_000, seed=SEED)
    ok = fails == 0 and nonmax == 0 and t.seconds < 10
    verdict("C7", ok, f"10^4 instances: {fails} invalid, {nonmax} not maximal, "
                      f"{t.seconds:.2f} s")
    assert ok


# ---------------------------------------------------------------- 8


def test_c8_omega_hat_decay(verdict):
    eps, Ns = 0.1, (1, 2, 3, 4)
    horizon = int(16 * max(Ns) * eps ** -0.5) + 1
    with Timer() as t:
        rep = X.badset_decay(eps, Ns, 100_000, horizon, seed=SEED)
    z = [abs(rep.omega_mc[i] - float(rep.omega_exact[i])) / rep.omega_se[i] for i in (0, 1)]
    slope, _, r2 = rep.omega_fit
    ok = (rep.omega_exact[0] == 0.25 and rep.omega_exact[1] == 0.125 and max(z) <= 4
          and slope < 0 and r2 > 0.9 and t.seconds < 120)
    verdict("C8", ok, f"MC vs 1/4, 1/8: {z[0]:.2f}, {z[1]:.2f} SE; log theta vs n on [4, 64]: "
                      f"slope {slope:.4f}, R^2 {r2:.5f}, {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 9


def test_c9_escape_pullback_stability(pm, verdict):
    eps = 1e-3
    I = R.build_I(pm, eps, 0.1)
    with Timer() as t:
        chk = X.escape_pullback_check(pm, I, eps, 1000, seed=SEED, probes=33)
    ok = chk.trials == 1000 and chk.ok and t.seconds < 120
    verdict("C9", ok, f"{chk.violations} probes with |E(z') - E(z)| > 1 over {chk.trials} "
                      f"(z, u) x 33 probes, worst {chk.worst:g}, {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 10


def test_c10_distortion_budget(pm, verdict):
    with Timer() as t:
        C = X.distortion_check(pm, 1e-3, [1e-2, 1e-3, 1e-4], 10_000, seed=SEED)
    vals = np.array(list(C.values()))
    spread = vals.max() / vals.min()
    ok = bool(np.all(np.isfinite(vals))) and spread <= 2.0 and t.seconds < 120
    det = ", ".join(f"|J| {h:g}: {c:.4f}" for h, c in C.items())
    verdict("C10", ok, f"C-hat {det}; max/min {spread:.3f} (<= 2), {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 11


def test_c11_induced_return_tail(pm, verdict):
    with Timer() as t:
        rep = X.tail_mV(pm, 0.05, 1e-3, 100_000, 4096, seed=SEED, threads=4)
    ok = rep.fit is not None and abs(rep.fitted_slope + 2.0) <= 0.3 and t.seconds < 600
    lo, hi = rep.window if rep.fit is not None else (math.nan, math.nan)
    verdict("C11", ok, f"slope {rep.fitted_slope:.3f} on m in [{lo:g}, {hi:g}] (target "
                       f"-2 +- 0.3); power R^2 {rep.fit.r2:.3f} vs exponential R^2 "
                       f"{rep.extras['exp_fit_r2']:.5f}, {t.seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- 12


def _small_configs(pm, lsv):
    I = R.build_I(pm, 1e-3, 0.1)
    reps = [
        X.tail_escape(pm, I, 1e-3, 50_000, 1024, seed=SEED),
        X.tail_mK(pm, I, 1e-3, 4.0, 5_000, 512, seed=SEED),
        X.tail_mV(pm, 0.05, 1e-3, 5_000, 512, seed=SEED),
        X.badset_decay(0.1, (1, 2), 20_000, 200, seed=SEED),
        X.stability_sweep(lsv, (0.04, 0.01), N=512),
        X.birkhoff_check(lsv, 0.01, 400_000, seed=SEED, grid=T.default_grid(lsv, 512)),
    ]
    return reps


def test_c12_reproducibility(pm, lsv, verdict):
    same = []
    with Timer() as t:
        for rep in _small_configs(pm, lsv):
            lines = rep.config.lines()
            serial = X.run(X.ExperimentConfig.from_lines(lines).with_threads(1))
            parallel = X.run(X.ExperimentConfig.from_lines(lines).with_threads(4))
            same.append((rep.config.experiment,
                         rep.csv() == serial.csv() == parallel.csv()))
    ok = all(s for _, s in same)
    verdict("C12", ok, ", ".join(f"{e} {'identical' if s else 'DIFFERS'}" for e, s in same)
            + f" (from manifest lines, 1 vs 4 threads), {t.seconds:.1f} s")
    assert ok
