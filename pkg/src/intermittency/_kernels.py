"""Low-level numba kernels over a packed branch table.

A map is a float64 table with one row per smooth branch.  On its domain
``[a, b)`` branch ``i`` has the lift

    g(x) = k + s*x + side*c*|x - q|**(1 + beta)

with ``side = +1`` requiring ``x >= q`` and ``side = -1`` requiring ``x <= q``.
``shift`` makes the lifts glue into one continuous increasing lift ``F`` on
[0, 1) with ``F(x + 1) = F(x) + degree``; ``fa``/``fb`` cache ``F`` at the
branch endpoints.  Everything here is allocation-free scalar code so the
kernels can be called from parallel Monte Carlo loops.
"""

import math

import numba as nb
import numpy as np

COL_A, COL_B, COL_K, COL_S, COL_C, COL_Q, COL_BETA, COL_SIDE = range(8)
COL_SHIFT, COL_FA, COL_FB = 8, 9, 10
NCOL = 11

MAX_ITER = 200

_jit = nb.njit(cache=True, nogil=True)


@_jit
def branch_right(tab, x):
    """Branch whose half-open domain [a, b) contains x in [0, 1)."""
    lo = 0
    hi = tab.shape[0] - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tab[mid, COL_A] <= x:
            lo = mid
        else:
            hi = mid - 1
    return lo


@_jit
def branch_left(tab, x):
    """Branch used for left limits at x; x == 0 wraps to the last branch."""
    if x <= tab[0, COL_A]:
        return tab.shape[0] - 1
    lo = 0
    hi = tab.shape[0] - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tab[mid, COL_A] < x:
            lo = mid
        else:
            hi = mid - 1
    return lo


@_jit
def _power(tab, i, x):
    c = tab[i, COL_C]
    if c == 0.0:
        return 0.0
    u = (x - tab[i, COL_Q]) * tab[i, COL_SIDE]
    if u <= 0.0:
        return 0.0
    return tab[i, COL_SIDE] * c * u ** (1.0 + tab[i, COL_BETA])


@_jit
def g_val(tab, i, x):
    return tab[i, COL_K] + tab[i, COL_S] * x + _power(tab, i, x)


@_jit
def g_der(tab, i, x):
    c = tab[i, COL_C]
    if c == 0.0:
        return tab[i, COL_S]
    u = (x - tab[i, COL_Q]) * tab[i, COL_SIDE]
    if u <= 0.0:
        if tab[i, COL_BETA] == 0.0:
            return tab[i, COL_S] + c
        return tab[i, COL_S]
    beta = tab[i, COL_BETA]
    return tab[i, COL_S] + c * (1.0 + beta) * u ** beta


@_jit
def wrap(y):
    y = y - math.floor(y)
    if y >= 1.0:
        y = 0.0
    return y


@_jit
def f_eval(tab, x):
    i = branch_right(tab, x)
    return wrap(g_val(tab, i, x))


@_jit
def step(tab, x, t):
    i = branch_right(tab, x)
    return wrap(g_val(tab, i, x) + t)


@_jit
def deriv_right(tab, x):
    return g_der(tab, branch_right(tab, x), x)


@_jit
def deriv_left(tab, x):
    i = branch_left(tab, x)
    if x <= tab[0, COL_A]:
        return g_der(tab, i, 1.0)
    return g_der(tab, i, x)


@_jit
def degree(tab):
    return tab[tab.shape[0] - 1, COL_FB] - tab[0, COL_FA]


@_jit
def lift(tab, X):
    """Continuous lift F at any real X."""
    k = math.floor(X)
    x = X - k
    if x >= 1.0:
        x = 0.0
        k += 1.0
    i = branch_right(tab, x)
    return g_val(tab, i, x) + tab[i, COL_SHIFT] + k * degree(tab)


@_jit
def solve_branch(tab, i, y):
    """x in [a_i, b_i] with g_i(x) = y.  Returns (x, status); status 0 = ok."""
    a = tab[i, COL_A]
    b = tab[i, COL_B]
    if tab[i, COL_C] == 0.0:
        x = (y - tab[i, COL_K]) / tab[i, COL_S]
        if x < a:
            x = a
        elif x > b:
            x = b
        return x, 0
    ga = g_val(tab, i, a)
    gb = g_val(tab, i, b)
    if y <= ga:
        return a, 0
    if y >= gb:
        return b, 0
    lo = a
    hi = b
    x = a + (b - a) * (y - ga) / (gb - ga)
    for _ in range(MAX_ITER):
        r = g_val(tab, i, x) - y
        if r == 0.0:
            return x, 0
        if r > 0.0:
            hi = x
        else:
            lo = x
        d = g_der(tab, i, x)
        xn = x - r / d
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        dx = abs(xn - x)
        x = xn
        if dx <= 4e-16 * abs(x) or hi - lo <= 4e-16 * abs(x) + 1e-300:
            return x, 0
        if dx <= 1e-13 and hi - lo <= 1e-13 and dx <= 1e-15:
            return x, 0
    if hi - lo <= 1e-13:
        return 0.5 * (lo + hi), 0
    return x, 1


@_jit
def lift_inverse(tab, V):
    """X with F(X) = V for the continuous lift.  Returns (X, status)."""
    d = degree(tab)
    fa0 = tab[0, COL_FA]
    k = math.floor((V - fa0) / d)
    v = V - k * d
    if v >= fa0 + d:
        v -= d
        k += 1.0
    lo = 0
    hi = tab.shape[0] - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tab[mid, COL_FA] <= v:
            lo = mid
        else:
            hi = mid - 1
    x, status = solve_branch(tab, lo, v - tab[lo, COL_SHIFT])
    return x + k, status


@_jit
def _seg_delta(tab, i, x0, dlt):
    """g_i(x0 + dlt) - g_i(x0) without cancellation (both points in branch i)."""
    out = tab[i, COL_S] * dlt
    c = tab[i, COL_C]
    if c == 0.0 or dlt == 0.0:
        return out
    side = tab[i, COL_SIDE]
    p = 1.0 + tab[i, COL_BETA]
    u0 = (x0 - tab[i, COL_Q]) * side
    du = dlt * side
    if u0 <= 0.0:
        u1 = u0 + du
        if u1 <= 0.0:
            return out
        return out + side * c * u1 ** p
    if u0 + du <= 0.0:
        return out - side * c * u0 ** p
    if abs(du) >= u0:  # no cancellation; the ratio form may overflow for tiny u0
        return out + side * c * ((u0 + du) ** p - u0 ** p)
    return out + side * c * u0 ** p * math.expm1(p * math.log1p(du / u0))


@_jit
def lift_delta(tab, X, dlt):
    """F(X + dlt) - F(X), accurate for tiny dlt."""
    k = math.floor(X)
    x = X - k
    if x >= 1.0:
        x = 0.0
    nb_ = tab.shape[0]
    total = 0.0
    rem = dlt
    i = branch_right(tab, x)
    if rem > 0.0:
        while rem > 0.0:
            room = tab[i, COL_B] - x
            if rem <= room:
                total += _seg_delta(tab, i, x, rem)
                rem = 0.0
            else:
                total += _seg_delta(tab, i, x, room)
                rem -= room
                i += 1
                if i == nb_:
                    i = 0
                    x = 0.0
                else:
                    x = tab[i, COL_A]
    elif rem < 0.0:
        if x == tab[i, COL_A]:
            if i == 0:
                i = nb_ - 1
                x = 1.0
            else:
                i -= 1
                x = tab[i, COL_B]
        while rem < 0.0:
            room = x - tab[i, COL_A]
            if -rem <= room:
                total += _seg_delta(tab, i, x, rem)
                rem = 0.0
            else:
                total += _seg_delta(tab, i, x, -room)
                rem += room
                if i == 0:
                    i = nb_ - 1
                    x = 1.0
                else:
                    i -= 1
                    x = tab[i, COL_B]
    return total


@_jit
def lift_delta_inverse(tab, X, L):
    """dlt with F(X + dlt) - F(X) = L.  Returns (dlt, status)."""
    if L == 0.0:
        return 0.0, 0
    sgn = 1.0 if L > 0.0 else -1.0
    lo = 0.0
    hi = L
    # F' >= 1 on the class, but custom maps may be weaker: grow the bracket.
    for _ in range(64):
        if sgn * (lift_delta(tab, X, hi) - L) >= 0.0:
            break
        lo = hi
        hi = 2.0 * hi
    dlt = hi
    # bracket [lo, hi] in the direction of sgn; residual(lo) < 0 <= residual(hi)
    for _ in range(MAX_ITER):
        r = sgn * (lift_delta(tab, X, dlt) - L)
        if r == 0.0:
            return dlt, 0
        if r > 0.0:
            hi = dlt
        else:
            lo = dlt
        xx = X + dlt
        k = math.floor(xx)
        xi = xx - k
        if xi >= 1.0:
            xi = 0.0
        der = g_der(tab, branch_right(tab, xi), xi)
        dn = dlt - sgn * r / der
        if not ((lo < dn < hi) or (hi < dn < lo)):
            dn = 0.5 * (lo + hi)
        step_ = abs(dn - dlt)
        dlt = dn
        if step_ <= 4e-16 * abs(dlt) or abs(hi - lo) <= 4e-16 * abs(dlt) + 1e-320:
            return dlt, 0
    if abs(hi - lo) <= 1e-13:
        return 0.5 * (lo + hi), 0
    return dlt, 1


@_jit
def circle_dist(x, y):
    d = abs(x - y)
    d = d - math.floor(d)
    return min(d, 1.0 - d)


@_jit
def signed_offset(x, p):
    """x - p lifted into [-1/2, 1/2)."""
    d = x - p
    d = d - math.floor(d + 0.5)
    return d
