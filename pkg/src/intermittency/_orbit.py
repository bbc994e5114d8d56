"""numba kernels for escape/return scans and pullback expansion estimates.

Intervals around an orbit are tracked as offsets ``(a, b)`` with ``a <= 0 <= b``
relative to the orbit point, so that pieces of size 1e-12 next to a neutral
fixed point keep full relative precision.
"""

import math

import numba as nb
import numpy as np

from . import _kernels as K
from ._philox import philox_block, to_unit

_jit = nb.njit(cache=True, nogil=True)


@_jit
def comp_of(comps, x):
    """Index of the component (p0, left radius, right radius) containing x, or -1."""
    for c in range(comps.shape[0]):
        d = K.signed_offset(x, comps[c, 0])
        if -comps[c, 1] < d < comps[c, 2]:
            return c
    return -1


@_jit
def dist_to_set(pts0, x):
    best = np.inf
    for p in pts0:
        d = K.circle_dist(x, p)
        if d < best:
            best = d
    return best


@_jit
def escape_scan(comps, pts, start, horizon):
    """First m in [0, horizon] with pts[start + m] outside the components, else -1."""
    for m in range(horizon + 1):
        if comp_of(comps, pts[start + m]) < 0:
            return m
    return -1


@_jit
def essential_scan(comps, pts, horizon, k_max, out):
    """Essential return times of the orbit ``pts``.

    Returns (E, count, censored).  ``out[:count]`` holds r_1 < r_2 < ...
    """
    s = 0
    k = 0
    E = -1
    while k < k_max:
        while s <= horizon and comp_of(comps, pts[s]) >= 0:
            s += 1
        if s > horizon:
            return E, k, True
        if k == 0:
            E = s
        while s <= horizon and comp_of(comps, pts[s]) < 0:
            s += 1
        if s > horizon:
            return E, k, True
        out[k] = s
        k += 1
    if E < 0:
        E = escape_scan(comps, pts, 0, horizon)
    return E, k, False


@_jit
def pullback(tab, pts, start, n, lo, hi, alpha):
    """Pull the interval (pts[start+n] + lo, pts[start+n] + hi) back n steps.

    Returns (a, b, log Df^n at a, log Df^n at b, L-sum at a, L-sum at b, status)
    where a, b are offsets around pts[start] and the L-sums are the distortion
    budgets of the two endpoints.
    """
    a = lo
    b = hi
    la = 0.0
    lb = 0.0
    pa = 1.0
    pb = 1.0
    sa = 0.0
    sb = 0.0
    for j in range(start + n - 1, start - 1, -1):
        x = pts[j]
        a, s1 = K.lift_delta_inverse(tab, x, a)
        b, s2 = K.lift_delta_inverse(tab, x, b)
        if s1 != 0 or s2 != 0:
            return a, b, la, lb, sa, sb, 1
        da = K.deriv_right(tab, K.wrap(x + a))
        db = K.deriv_right(tab, K.wrap(x + b))
        la += math.log(da)
        lb += math.log(db)
        pa *= da ** (-alpha)
        pb *= db ** (-alpha)
        sa += pa
        sb += pb
    return a, b, la, lb, sa, sb, 0


@_jit
def probe(tab, pts, start, n, a0, b0, samples, alpha):
    """Sampled (min log Df^n, max L-sum) over equispaced offsets in [a0, b0]
    plus the orbit point itself (offset 0)."""
    minlog = np.inf
    maxs = -np.inf
    for k in range(samples + 1):
        if k == samples:
            d = 0.0
        else:
            d = a0 + ((b0 - a0) * k) / (samples - 1)
        s = 0.0
        lg = 0.0
        for j in range(start, start + n):
            x = pts[j]
            D = K.deriv_right(tab, K.wrap(x + d))
            lg += math.log(D)
            s = (s + 1.0) * D ** (-alpha)
            d = K.lift_delta(tab, x, d)
        if lg < minlog:
            minlog = lg
        if s > maxs:
            maxs = s
    return minlog, maxs


@_jit
def forward_offsets(tab, pts, start, n, d):
    for j in range(start, start + n):
        d = K.lift_delta(tab, pts[j], d)
    return d


@_jit
def mK_scan(tab, comps, pts, horizon, Kval, tau, alpha, samples):
    """Minimal m in [max(E, 1), horizon] with sampled L^(m) <= K.  (-1 if none.)"""
    E = escape_scan(comps, pts, 0, horizon)
    if E < 0:
        return -1, E, np.nan
    m0 = E if E > 1 else 1
    thresh = Kval * (1.0 + 1e-9)
    for m in range(m0, horizon + 1):
        a, b, la, lb, sa, sb, st = pullback(tab, pts, 0, m, -tau, tau, alpha)
        if st != 0:
            return -2, E, np.nan
        # endpoint budgets bound the sampled sup from below
        if sa > thresh or sb > thresh:
            continue
        ml, ms = probe(tab, pts, 0, m, a, b, samples, alpha)
        if ms <= Kval:
            return m, E, ms
    return -1, E, np.nan


@_jit
def mhat_scan(tab, comps, p0s, pts, horizon, eps, gamma, alpha, samples):
    """Minimal m-hat (see returns.m_hat); -1 if none within horizon."""
    E = escape_scan(comps, pts, 0, horizon)
    if E < 0:
        return -1
    m0 = E if E > 1 else 1
    r_in = eps ** (2.0 * gamma)
    r_ball = eps ** gamma
    bound = eps ** (-gamma * alpha)
    thresh = bound * (1.0 + 1e-9)
    for m in range(m0, horizon + 1):
        x = pts[m]
        best = -1
        bd = np.inf
        for c in range(p0s.shape[0]):
            d = K.circle_dist(x, p0s[c])
            if d < bd:
                bd = d
                best = c
        if best < 0 or bd >= r_in:
            continue
        off = K.signed_offset(x, p0s[best])
        a, b, la, lb, sa, sb, st = pullback(tab, pts, 0, m, -r_ball - off, r_ball - off, alpha)
        if st != 0:
            return -2
        if sa > thresh or sb > thresh:
            continue
        ml, ms = probe(tab, pts, 0, m, a, b, samples, alpha)
        if ms <= bound:
            return m
    return -1


@_jit
def induced_scan(tab, vcomps, pts, horizon, tau, log_lam, alpha, samples):
    """Minimal m >= 1 with pts[m] in V and sampled Lambda^(m) >= lambda_*.

    Returns (m, log Lambda, L) or (-1, nan, nan).
    """
    thresh = log_lam - 1e-9
    for m in range(1, horizon + 1):
        if comp_of(vcomps, pts[m]) < 0:
            continue
        a, b, la, lb, sa, sb, st = pullback(tab, pts, 0, m, -tau, tau, alpha)
        if st != 0:
            return -2, np.nan, np.nan
        if la < thresh or lb < thresh:
            continue
        ml, ms = probe(tab, pts, 0, m, a, b, samples, alpha)
        if ml >= log_lam:
            return m, ml, ms
    return -1, np.nan, np.nan


# ------------------------------------------------------- Monte Carlo helpers


@_jit
def lane_orbit(tab, k0, k1, lane, eps, x0, n, pts):
    """Orbit of length n driven by the noise of one Philox lane.

    Noise value j is eps*(2u_j - 1) with u_j the j-th uniform of the lane,
    identical to rds.sample_noise(eps, n, seed=k0, stream=k1, lane=lane).
    """
    pts[0] = x0
    x = x0
    j = 0
    b = 0
    while j < n:
        r0, r1, r2, r3 = philox_block(k0, k1, b + 1, lane, 0, 0)
        for q in range(4):
            if j >= n:
                break
            if q == 0:
                u = to_unit(r0)
            elif q == 1:
                u = to_unit(r1)
            elif q == 2:
                u = to_unit(r2)
            else:
                u = to_unit(r3)
            x = K.step(tab, x, eps * (2.0 * u - 1.0))
            j += 1
            pts[j] = x
        b += 1
    return pts


@_jit
def lane_escape(tab, comps, k0, k1, lane, eps, x0, horizon):
    """Escape time of x0 under lane noise, generated lazily; -1 if censored."""
    x = x0
    if comp_of(comps, x) < 0:
        return 0
    m = 0
    b = 0
    while True:
        r0, r1, r2, r3 = philox_block(k0, k1, b + 1, lane, 0, 0)
        for q in range(4):
            if q == 0:
                u = to_unit(r0)
            elif q == 1:
                u = to_unit(r1)
            elif q == 2:
                u = to_unit(r2)
            else:
                u = to_unit(r3)
            x = K.step(tab, x, eps * (2.0 * u - 1.0))
            m += 1
            if comp_of(comps, x) < 0:
                return m
            if m >= horizon:
                return -1
        b += 1
