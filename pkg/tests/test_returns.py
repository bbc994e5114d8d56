import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intermittency import returns as R
from intermittency.errors import ConditionViolated, InsufficientNoiseLength, PreconditionViolated
from intermittency.rds import NoiseSeq, orbit, sample_noise


@pytest.fixture(scope="module")
def I_pm(pm_map):
    return R.build_I(pm_map, 1e-3, 0.1)


# ------------------------------------------------------------- reference oracles


def ref_escape(f, I, x, v, horizon):
    for m in range(horizon + 1):
        if x not in I:
            return m
        if m < horizon:
            x = (f.eval(x) + v[m]) % 1.0
    return None


def ref_essential(f, I, x, v, horizon, k_max):
    pts = [x]
    for j in range(horizon):
        pts.append((f.eval(pts[-1]) + v[j]) % 1.0)
    pts = [0.0 if p >= 1.0 else p for p in pts]
    inI = [p in I for p in pts]

    def E_from(s):
        for m in range(s, horizon + 1):
            if not inI[m]:
                return m - s
        return None

    E = E_from(0)
    out = []
    if E is None:
        return E, out
    start = E
    while len(out) < k_max:
        r = next((s for s in range(max(start, 1), horizon + 1) if inI[s]), None)
        if r is None:
            break
        out.append(r)
        e = E_from(r)
        if e is None:
            break
        start = r + e
    return E, out


# ------------------------------------------------------------- neighbourhood I


def test_build_I_pm(I_pm):
    assert all(I_pm.validity.values())
    assert len(I_pm.components) == 1
    assert 0.05 in I_pm and 0.95 in I_pm and 0.5 not in I_pm


def test_build_I_too_large(pm_map):
    with pytest.raises(ConditionViolated) as e:
        R.build_I(pm_map, 1e-3, 0.5)
    assert e.value.condition in ("i", "ii")


def test_build_I_doubling(dbl):
    I = R.build_I(dbl, 0.0, 0.1)
    assert I.parabolic == ((),)  # no parabolic side: both sides repelling


def test_constants(pm_map, I_pm):
    c = R.constants(pm_map, I_pm)
    assert c.lambda_star > 1
    assert 0 < c.tau_star < 0.1
    a = pm_map.alpha
    assert a < c.kappa < 1 and c.kappa * (1 + a) > 1
    assert c.gamma > 1 - c.kappa and 2 * c.gamma * (1 + a) < a


# ------------------------------------------------------------- escape / returns


def test_escape_examples(pm_map):
    I = R.build_I(pm_map, 0.0, 0.1)
    z = NoiseSeq.zeros(200)
    assert R.escape_time(pm_map, I, 0.5, z) == 0
    E = R.escape_time(pm_map, I, 0.01, z)
    assert 11 <= E <= 17
    assert R.is_censored(R.escape_time(pm_map, I, 0.0, z))


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32))
def test_escape_matches_reference(pm_map, I_pm, x, seed):
    ts = sample_noise(1e-3, 300, seed, 0)
    E = R.escape_time(pm_map, I_pm, x, ts)
    ref = ref_escape(pm_map, I_pm, x, ts.values, 300)
    assert (ref is None and R.is_censored(E)) or E == ref


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32))
def test_essential_returns_reference(pm_map, I_pm, x, seed):
    ts = sample_noise(1e-3, 400, seed, 1)
    tr = R.essential_returns(pm_map, I_pm, x, ts, 5)
    E, rs = ref_essential(pm_map, I_pm, x, ts.values, 400, 5)
    assert tr.essential_returns == rs
    if E is None:
        assert R.is_censored(tr.E)
    else:
        assert tr.E == E
    for r in tr.essential_returns:
        assert orbit(pm_map, x, ts).points[r] in I_pm


def test_essential_returns_simple(dbl):
    I = R.build_I(dbl, 0.0, 0.1)
    # 0.55 is outside I and maps to 0.1 - an entry point of I's closure; use 0.52 -> 0.04
    tr = R.essential_returns(dbl, I, 0.52, NoiseSeq.zeros(50), 3)
    assert tr.E == 0 and tr.essential_returns[0] == 1
    # 1/3 has period 2 and never enters I
    tr = R.essential_returns(dbl, I, 1 / 3, NoiseSeq.zeros(40), 3)
    assert tr.E == 0 and tr.essential_returns == [] and tr.censored


# ------------------------------------------------------------- pullback and expansion


def test_pullback_examples(dbl, pm_map):
    p = R.pullback_U(pm_map, 0.3, NoiseSeq.zeros(0), 0, 0.1)
    assert p.offsets == (-0.1, 0.1)
    p = R.pullback_U(dbl, 0.3, NoiseSeq.zeros(3), 3, 0.1)
    assert p.length == pytest.approx(0.025, abs=1e-15)
    assert p.offsets[0] == pytest.approx(-0.0125, abs=1e-15)
    ts = sample_noise(0.01, 5, 11, 0)
    p = R.pullback_U(pm_map, 0.37, ts, 5, 0.05)
    assert p.endpoint_error < 1e-10
    with pytest.raises(PreconditionViolated):
        R.pullback_U(pm_map, 0.3, ts, 1, 0.6)


def test_expansion_doubling(dbl):
    a = 0.5
    p = R.expansion_profile(dbl, 0.3, NoiseSeq.zeros(3), 3, 0.1)
    assert p.Lambda == pytest.approx(8.0)
    assert p.Ldist == pytest.approx(8 ** -a + 4 ** -a + 2 ** -a)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32))
def test_single_step_budget(lsv_map, x, seed):
    ts = sample_noise(0.01, 1, seed, 0)
    p = R.expansion_profile(lsv_map, x, ts, 1, 0.01)
    assert p.Ldist == pytest.approx(p.Lambda ** -lsv_map.alpha, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32),
       n=st.integers(1, 20), k=st.integers(2, 40))
def test_monotone_refinement(pm_map, x, seed, n, k):
    ts = sample_noise(0.01, n, seed, 0)
    a = R.expansion_profile(pm_map, x, ts, n, 0.05, k)
    b = R.expansion_profile(pm_map, x, ts, n, 0.05, 2 * k - 1)
    assert b.Ldist >= a.Ldist and b.Lambda <= a.Lambda


def test_m_K(dbl, pm_map, I_pm):
    I = R.build_I(dbl, 0.0, 0.1)
    z = NoiseSeq.zeros(20)
    for x in (0.05, 0.3, 0.7):
        assert R.m_K(dbl, I, x, z, 2 ** -0.5, tau=0.01) == 1
    ts = sample_noise(1e-3, 5000, 3, 0)
    m = R.m_K(pm_map, I_pm, 0.5, ts, 4.0)
    assert m == 1 or (not R.is_censored(m) and m >= 1)
    with pytest.raises(PreconditionViolated):
        R.m_K(dbl, I, 0.3, z, 0.0)


def test_lemma_2_4_sampled(pm_map, I_pm):
    c = R.constants(pm_map, I_pm)
    for s in range(100):
        gen = np.random.default_rng(s)
        ts = sample_noise(1e-3, 20_000, 100, s)
        x = float(gen.uniform(0.0, 0.1))
        E = R.escape_time(pm_map, I_pm, x, ts)
        if R.is_censored(E) or E == 0:
            continue
        p = R.expansion_profile(pm_map, x, ts, E, c.tau_star)
        assert p.Lambda >= c.lambda_star * (1 - 1e-12)


# ------------------------------------------------------------- Omega-hat and BAD


def test_omega_hat_member():
    eps = 0.1
    assert all(R.omega_hat_member(NoiseSeq.zeros(10, eps), n) for n in range(1, 11))
    full = NoiseSeq.constant(10, eps)
    assert not any(R.omega_hat_member(full, n) for n in range(1, 11))
    hits = sum(R.omega_hat_member(sample_noise(eps, 10 ** 4, 1, 0, k), 10 ** 4) for k in range(20))
    assert hits == 0


def test_m_tilde():
    assert R.m_tilde(0, 0.01, 0.5) == 1
    e = math.exp(-1)
    for m in range(50):
        assert R.m_tilde(m, e, 0.5) == math.floor(m * math.exp(-0.5)) + 1
    for m in range(0, 10 ** 4, 37):
        assert R.m_tilde(m, 1e-3, 0.5) <= m * 1e-3 ** 0.5 / math.log(1e3) + 1


def test_bad_member():
    eps, a = 0.05, 0.5
    i_count, n_lo, n_hi = R.bad_window(1, eps, a)
    need = i_count - 1 + n_hi
    assert R.bad_member(NoiseSeq.zeros(need, eps), 1, eps, a)
    assert not R.bad_member(NoiseSeq.constant(need, eps), 1, eps, a)
    with pytest.raises(InsufficientNoiseLength):
        R.bad_member(NoiseSeq.zeros(need - 1, eps), 1, eps, a)


def test_special_returns(pm_map, I_pm):
    eps = 1e-3
    # all-zero noise: every window is BAD, so no special return
    z = NoiseSeq.zeros(40_000, eps)
    tr = R.special_returns(pm_map, I_pm, 0.5, z, eps, 2, horizon=400)
    assert tr.special_returns == [] and tr.censored
    ts = sample_noise(eps, 60_000, 5, 0)
    tr = R.special_returns(pm_map, I_pm, 0.5, ts, eps, 3, horizon=20_000)
    ess = R.essential_returns(pm_map, I_pm, 0.5, ts, 100, 20_000).essential_returns
    if tr.special_returns:
        # R_0 is the first essential return whose noise is not BAD at its scale
        R0 = tr.special_returns[0]
        assert R0 in ess
        for r in ess:
            v = R.bad_member(ts, R.m_tilde(r, eps, 0.5), eps, 0.5)
            if not v:
                assert r == R0
                break


# ------------------------------------------------------------- Pliss


def test_pliss_examples():
    assert R.pliss_select([3, 1, 0, 4, 1], 2) == 2 or R.pliss_select([3, 1, 0, 4, 1], 2) == 4
    assert R.pliss_select([2.0] * 7, 2.0) == 6
    assert R.pliss_select([0.0], 1.0) == 0
    with pytest.raises(PreconditionViolated):
        R.pliss_select([5, 5], 1.0)


def test_pliss_documented_example():
    a, C = [3, 1, 0, 4, 1], 2
    valid = [k for k in range(5) if R.pliss_valid(a, C, k)]
    assert R.pliss_select(a, C) == max(valid)


@settings(max_examples=300, deadline=None)
@given(a=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40), slack=st.floats(1.0, 2.0))
def test_pliss_property(a, slack):
    C = max(math.fsum(a) / len(a), 1e-9) * slack
    while sum(map(Fraction, a)) > len(a) * Fraction(C):  # rounding pushed C below the mean
        C = float(np.nextafter(C, np.inf))
    k = R.pliss_select(a, C)
    assert R.pliss_valid(a, C, k)
    assert not any(R.pliss_valid(a, C, j) for j in range(k + 1, len(a)))


# ------------------------------------------------------------- m-hat, nice sets, m_V


def test_m_hat_censored(dbl):
    I = R.build_I(dbl, 0.0, 0.1)
    # period-2 orbit of 1/3 stays at distance 1/3 from 0
    m = R.m_hat(dbl, I, 1 / 3, NoiseSeq.zeros(50), 1e-3, 0.1)
    assert R.is_censored(m)


def test_nice_sets(dbl, pm_map):
    rep = R.nice_set_check(dbl, 0.0, 0.1, 10_000)
    assert rep.exact and rep.clean
    # 0.3 -> 0.6 -> 0.2, inside B_0.3(0)
    assert R.nice_set_check(dbl, 0.0, 0.3, 100).violations[0][2] == 2
    assert not R.nice_set_check(pm_map, 0.0, 0.4, 100).clean


def test_induced_return(dbl, pm_map, I_pm):
    # doubling from 0.04: 0.08 0.16 0.32 0.64 0.28 0.56 0.12 0.24 0.48 0.96
    r = R.induced_return(dbl, 0.05, 0.04, NoiseSeq.zeros(20), tau=0.01, lam=1.5)
    assert r.m == 10 and r.Lambda == pytest.approx(1024.0)
    r = R.induced_return(pm_map, 0.05, 1e-9, NoiseSeq.zeros(50), I=I_pm)
    assert R.is_censored(r.m)
    with pytest.raises(PreconditionViolated):
        R.induced_return(dbl, 0.05, 0.5, NoiseSeq.zeros(10), tau=0.01, lam=1.5)


def test_csv_rows(pm_map, I_pm):
    ts = sample_noise(1e-3, 500, 2, 0)
    tr = R.essential_returns(pm_map, I_pm, 0.02, ts, 3)
    row = R.trace_row(0.02, tr)
    assert len(row) == len(R.TRACE_COLUMNS)
    p = R.expansion_profile(pm_map, 0.3, ts, 4, 0.05)
    assert len(R.profile_row(p)) == len(R.PROFILE_COLUMNS)
