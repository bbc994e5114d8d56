"""Escape and return times, pullback expansion and distortion budgets.

Notation follows the usual one for intermittent maps: ``I`` is a small
neighbourhood of the neutral fixed points, ``E`` the first time an orbit
leaves it, ``U`` the pullback of a ball of radius ``tau`` along the orbit,
``Lambda`` the least expansion over ``U`` and ``L`` the distortion budget

    L = sup_{y in U} sum_j Df_{sigma^j t}^{n-j}(f_t^j y)^(-alpha).

All infima over time carry an explicit horizon; a search that runs out of
horizon returns :class:`Censored`.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import math

import numpy as np

from . import _kernels as K
from . import _orbit as O
from .errors import (
    ConditionViolated,
    InsufficientNoiseLength,
    PreconditionViolated,
    RootFindingFailed,
)
from .rds import NoiseSeq, orbit_points

DEFAULT_PROBES = 33


@dataclass(frozen=True)
class Censored:
    """Outcome of a search that hit its horizon without success."""

    horizon: int

    def __bool__(self):
        return False


def is_censored(v):
    return isinstance(v, Censored)


def _vals(ts):
    if isinstance(ts, NoiseSeq):
        return ts.values
    return np.ascontiguousarray(ts, dtype=np.float64)


def _orbit_of(f, x, ts, n):
    v = _vals(ts)
    if v.size < n:
        raise InsufficientNoiseLength(n, v.size)
    return orbit_points(f.table, float(x), np.ascontiguousarray(v[:n]), np.empty(n + 1))


# ------------------------------------------------------------ neighbourhood


@dataclass(frozen=True, eq=False)
class NeighborhoodI:
    """Union of open arcs (p0 - rl, p0 + rr), one per fixed point.

    ``parabolic`` lists, per component, which sides are neutral; the
    remaining sides are repelling.
    """

    comps: np.ndarray = field(repr=False)
    eps: float
    validity: dict
    parabolic: tuple

    @property
    def components(self):
        return [tuple(float(v) for v in r) for r in self.comps]

    def component_of(self, x):
        return int(O.comp_of(self.comps, float(x)))

    def __contains__(self, x):
        return self.component_of(x) >= 0

    def radius(self):
        return float(self.comps[:, 1:].max())


def _offset_image(tab, p0, d, t):
    # f_t(p0 + d) - p0 in lift coordinates (p0 is fixed)
    fp = K.f_eval(tab, p0)
    return K.lift_delta(tab, p0, d) + t + K.signed_offset(fp, p0)


def _check_conditions(f, comps, eps, grid=4001):
    tab = f.table
    ts = (-eps, 0.0, eps) if eps > 0 else (0.0,)
    flags = {"i": True, "ii": True, "iii": True, "iv": True}
    first = {}

    def fail(cond, x, msg):
        if flags[cond]:
            flags[cond] = False
            first[cond] = (x, msg)

    for c in range(comps.shape[0]):
        p0, rl, rr = comps[c]
        for t in ts:
            lo = _offset_image(tab, p0, -rl, t)
            hi = _offset_image(tab, p0, rr, t)
            if not lo < -rl:
                fail("i", (p0 - rl) % 1.0, f"f_t(left end) not beyond I at t={t}")
            if not hi > rr:
                fail("i", (p0 + rr) % 1.0, f"f_t(right end) not beyond I at t={t}")
            if not hi - lo < 1.0:
                fail("ii", (p0 + rr) % 1.0, f"image of component wraps the circle at t={t}")
        # interior grid, denser near the ends where the conditions bind
        u = np.linspace(0.0, 1.0, grid)[1:-1]
        edge = np.geomspace(1e-9, 1e-2, 200)
        offs = np.concatenate((-rl + (rl + rr) * u, -rl + rl * edge, rr - rr * edge))
        for d in offs:
            x = (p0 + d) % 1.0
            if x >= 1.0:
                x = 0.0
            for t in ts:
                y = K.step(tab, x, t)
                cy = O.comp_of(comps, y)
                if cy >= 0 and cy != c:
                    fail("iv", x, f"f_t(x) in another component at t={t}")
                if cy < 0:
                    for s in ts:
                        z = K.step(tab, y, s)
                        if O.comp_of(comps, z) >= 0:
                            fail("iii", x, f"f_t(x) leaves I and f_s f_t(x) returns (t={t}, s={s})")
    return flags, first


def build_I(f, eps, radii=0.1):
    """Neighbourhood of the fixed points satisfying conditions (i)-(iv).

    Parameters
    ----------
    f : MapSpec
    eps : float
        Noise level; the conditions are checked for f_t with t in {-eps, 0, eps}.
    radii : float or sequence
        One radius for all components, or per component either a radius or a
        ``(left, right)`` pair.

    Raises
    ------
    ConditionViolated
        For the first failing condition, with a witness point.
    """
    p0s = f.fixed_points_P0
    if not p0s:
        raise PreconditionViolated("map has no fixed points to surround")
    if np.ndim(radii) == 0:
        radii = [radii] * len(p0s)
    if len(radii) != len(p0s):
        raise PreconditionViolated(f"need {len(p0s)} radii, got {len(radii)}")
    rows = []
    for p, r in zip(p0s, radii):
        rl, rr = (float(r), float(r)) if np.ndim(r) == 0 else (float(r[0]), float(r[1]))
        if rl <= 0 or rr <= 0:
            raise PreconditionViolated("radii must be positive")
        rows.append((p, rl, rr))
    comps = np.array(rows, dtype=np.float64)
    # disjointness and one fixed point per component
    order = np.argsort(comps[:, 0])
    for i in range(len(order)):
        a = comps[order[i]]
        b = comps[order[(i + 1) % len(order)]]
        gap = (b[0] - a[0]) % 1.0 if len(order) > 1 else 1.0
        if a[2] + b[1] > gap or (len(order) == 1 and a[1] + a[2] > 1.0):
            raise PreconditionViolated("components of I overlap")
    for c in range(comps.shape[0]):
        inside = [p for p in p0s if O.comp_of(comps[c:c + 1], p) >= 0]
        if len(inside) != 1:
            raise PreconditionViolated(f"component {c} contains {len(inside)} fixed points")
    flags, first = _check_conditions(f, comps, float(eps))
    for cond in ("i", "ii", "iii", "iv"):
        if not flags[cond]:
            x, msg = first[cond]
            raise ConditionViolated(cond, x, msg)
    par = []
    for p in p0s:
        sides = {s.side for s in f.neutral_sides if s.p0 == p}
        par.append(tuple(sorted(sides)))
    comps.setflags(write=False)
    return NeighborhoodI(comps, float(eps), flags, tuple(par))


def neighborhood_ball(f, delta):
    """B_delta(P0) as a NeighborhoodI-like component array (no condition checks)."""
    comps = np.array([(p, delta, delta) for p in f.fixed_points_P0], dtype=np.float64)
    comps.setflags(write=False)
    return comps


# ---------------------------------------------------------------- constants


def default_kappa(alpha):
    lo = max(alpha, 1.0 / (1.0 + alpha), 1.0 - alpha / (2.0 * (1.0 + alpha)))
    return 0.5 * (lo + 1.0)


def default_gamma(alpha, kappa):
    return 0.5 * ((1.0 - kappa) + alpha / (2.0 * (1.0 + alpha)))


def varphi(eps):
    """log(1/eps)."""
    return math.log(1.0 / eps)


@dataclass(frozen=True)
class Constants:
    tau_star: float
    lambda_star: float
    kappa: float
    gamma: float
    alpha: float

    def varphi_of_eps(self, eps):
        return varphi(eps)


def tau_star(f, I, factor=0.9):
    """``factor`` times the distance from the noisy preimage of I inside I to T minus I."""
    tab = f.table
    eps = I.eps
    best = math.inf
    for p0, rl, rr in I.comps:
        fp = K.signed_offset(K.f_eval(tab, p0), p0)
        hi, s1 = K.lift_delta_inverse(tab, p0, rr + eps - fp)
        lo, s2 = K.lift_delta_inverse(tab, p0, -rl - eps - fp)
        if s1 or s2:
            raise RootFindingFailed(-1, p0)
        best = min(best, rr - min(hi, rr), max(lo, -rl) + rl)
    return float(factor * best)


def lambda_star(f, I, grid=1 << 16):
    """inf Df over points outside f^{-3}(I) intersected with I.

    Evaluated on a grid, with the boundaries of the set located by bisection.
    """
    tab = f.table
    comps = I.comps

    def member(x):
        if O.comp_of(comps, x) < 0:
            return False
        y = x
        for _ in range(3):
            y = K.f_eval(tab, y)
        return O.comp_of(comps, y) >= 0

    def dmin(x):
        return min(K.deriv_right(tab, x), K.deriv_left(tab, x))

    xs = np.arange(grid) / grid
    inA = np.array([member(x) for x in xs])
    best = math.inf
    for x, m in zip(xs, inA):
        if not m:
            best = min(best, dmin(x))
    for p in f.partition_P:
        if not member(p):
            best = min(best, dmin(p))
    for i in np.nonzero(inA != np.roll(inA, -1))[0]:
        lo, hi = xs[i], xs[i] + 1.0 / grid
        mlo = inA[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if member(mid % 1.0) == mlo:
                lo = mid
            else:
                hi = mid
        edge = (hi if mlo else lo) % 1.0
        best = min(best, dmin(edge))
    return float(best)


def constants(f, I, kappa=None, gamma=None, tau_factor=0.9):
    a = f.alpha
    k = default_kappa(a) if kappa is None else float(kappa)
    g = default_gamma(a, k) if gamma is None else float(gamma)
    if not (a < k < 1 and k * (1 + a) > 1):
        raise PreconditionViolated(f"kappa={k} must lie in (alpha, 1) with kappa(1+alpha) > 1")
    if not (g > 1 - k and 2 * g * (1 + a) < a):
        raise PreconditionViolated(f"gamma={g} must satisfy gamma > 1-kappa and 2 gamma (1+alpha) < alpha")
    return Constants(tau_star(f, I, tau_factor), lambda_star(f, I), k, g, a)


# ------------------------------------------------------- escapes and returns


@dataclass
class ReturnTrace:
    E: object
    essential_returns: list
    F_points: list
    censored: bool
    special_returns: list = field(default_factory=list)
    G_points: list = field(default_factory=list)
    bad_truncation: int = 0


def escape_time(f, I, x, ts, horizon=None):
    """First m <= horizon with f_t^m(x) outside I, else Censored(horizon)."""
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    if v.size < horizon:
        raise InsufficientNoiseLength(horizon, v.size)
    # the orbit is extended in doubling chunks, each resuming from the last point
    base, y, n = 0, float(x), min(horizon, 64)
    while True:
        pts = orbit_points(f.table, y, np.ascontiguousarray(v[base:base + n]), np.empty(n + 1))
        m = O.escape_scan(I.comps, pts, 0, n)
        if m >= 0:
            return base + int(m)
        base += n
        if base >= horizon:
            return Censored(horizon)
        y = float(pts[n])
        n = min(2 * n, horizon - base)


def essential_returns(f, I, x, ts, k_max, horizon=None):
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    pts = _orbit_of(f, x, v, horizon)
    out = np.empty(max(int(k_max), 1), dtype=np.int64)
    E, cnt, cens = O.essential_scan(I.comps, pts, horizon, int(k_max), out)
    r = [int(s) for s in out[:cnt]]
    return ReturnTrace(
        Censored(horizon) if E < 0 else int(E),
        r,
        [float(pts[s]) for s in r],
        bool(cens),
    )


@dataclass
class ExpansionProfile:
    n: int
    tau: float
    x: float
    offsets: tuple
    Lambda: float = math.nan
    Ldist: float = math.nan
    sample_count: int = 0
    endpoint_error: float = math.nan

    @property
    def U(self):
        a, b = self.offsets
        return ((self.x + a) % 1.0, (self.x + b) % 1.0)

    @property
    def length(self):
        return self.offsets[1] - self.offsets[0]


def _pull(f, pts, n, lo, hi):
    a, b, la, lb, sa, sb, st = O.pullback(f.table, pts, 0, n, lo, hi, f.alpha)
    if st:
        raise RootFindingFailed(-1, float(pts[n]))
    return a, b


def pullback_U(f, x, ts, n, tau):
    """Component of (f_t^n)^{-1}(B_tau(f_t^n x)) containing x."""
    if not (0.0 < tau < 0.5):
        raise PreconditionViolated("tau must lie in (0, 1/2)")
    pts = _orbit_of(f, x, ts, n)
    a, b = _pull(f, pts, n, -tau, tau)
    ea = O.forward_offsets(f.table, pts, 0, n, a)
    eb = O.forward_offsets(f.table, pts, 0, n, b)
    err = max(abs(ea + tau), abs(eb - tau))
    return ExpansionProfile(int(n), float(tau), float(x), (a, b), endpoint_error=err)


def expansion_profile(f, x, ts, n, tau, samples=DEFAULT_PROBES):
    """Sampled Lambda and L over U (endpoints, equispaced interior points and x itself).

    Refining ``samples -> 2*samples - 1`` keeps the old probes, so Lambda
    never increases and L never decreases under refinement.
    """
    if samples < 2:
        raise PreconditionViolated("need at least 2 probes")
    prof = pullback_U(f, x, ts, n, tau)
    if n == 0:
        prof.Lambda, prof.Ldist, prof.sample_count = 1.0, 0.0, samples
        return prof
    pts = _orbit_of(f, x, ts, n)
    a, b = prof.offsets
    ml, ms = O.probe(f.table, pts, 0, n, a, b, int(samples), f.alpha)
    prof.Lambda = math.exp(ml) if ml < 700 else math.inf
    prof.Ldist = ms
    prof.sample_count = int(samples)
    return prof


def m_K(f, I, x, ts, Kval, horizon=None, tau=None, samples=DEFAULT_PROBES):
    """Minimal m >= max(E, 1) with L^(m) <= K, else Censored.

    ``tau`` defaults to tau_* of ``I``.
    """
    if Kval <= 0:
        raise PreconditionViolated("K must be positive")
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    tau = tau_star(f, I) if tau is None else float(tau)
    pts = _orbit_of(f, x, v, horizon)
    m, E, L = O.mK_scan(f.table, I.comps, pts, horizon, float(Kval), tau, f.alpha, samples)
    if m == -2:
        raise RootFindingFailed(-1, float(x))
    return Censored(horizon) if m < 0 else int(m)


# --------------------------------------------------------------- BAD set


def omega_hat_member(ts, n):
    """True iff sum_{k<n} |t_k| <= eps n / 4."""
    v = _vals(ts)
    if v.size < n:
        raise InsufficientNoiseLength(n, v.size)
    eps = ts.epsilon if isinstance(ts, NoiseSeq) else None
    if eps is None:
        raise PreconditionViolated("omega_hat_member needs a NoiseSeq (carries eps)")
    q = np.abs(v[:n]) - eps / 4.0
    return bool(math.fsum(q) <= 0.0)


def m_tilde(m, eps, alpha):
    """floor(m eps^alpha / log(1/eps)) + 1."""
    if m < 0:
        raise PreconditionViolated("m must be >= 0")
    if not (0.0 < eps < 1.0):
        raise PreconditionViolated("eps must lie in (0, 1)")
    return int(math.floor(m * eps ** alpha / varphi(eps))) + 1


def bad_window(N, eps, alpha, horizon_n=None):
    """(number of start indices i, smallest n, largest n) for BAD_eps(N)."""
    scale = N * eps ** (-alpha)
    i_count = int(math.ceil(scale * varphi(eps)))
    n_lo = int(math.ceil(scale))
    n_hi = int(math.floor(16 * scale)) if horizon_n is None else int(horizon_n)
    return i_count, n_lo, n_hi


@dataclass(frozen=True)
class BadVerdict:
    member: bool
    witness: tuple  # (i, n) or ()
    horizon_n: int
    i_count: int
    n_lo: int

    def __bool__(self):
        return self.member


def bad_member(ts, N, eps, alpha, horizon_n=None):
    """Finite-horizon membership of ``ts`` in BAD_eps(N).

    True iff some 0 <= i < N eps^-alpha log(1/eps) and
    N eps^-alpha <= n <= horizon_n have sum_{k<n} |t_{i+k}| <= eps n / 4.
    The default horizon is 16 N eps^-alpha.
    """
    v = _vals(ts)
    i_count, n_lo, n_hi = bad_window(N, eps, alpha, horizon_n)
    need = i_count - 1 + n_hi
    if v.size < need:
        raise InsufficientNoiseLength(need, v.size)
    if n_hi < n_lo:
        return BadVerdict(False, (), n_hi, i_count, n_lo)
    i, n = _bad_scan(np.ascontiguousarray(v[:need]), eps, i_count, n_lo, n_hi)
    if i < 0:
        return BadVerdict(False, (), n_hi, i_count, n_lo)
    return BadVerdict(True, (int(i), int(n)), n_hi, i_count, n_lo)


@O.nb.njit(cache=True)
def _bad_scan(v, eps, i_count, n_lo, n_hi):
    q = np.empty(v.size + 1)
    q[0] = 0.0
    for k in range(v.size):
        q[k + 1] = q[k] + (abs(v[k]) - eps / 4.0)
    for i in range(i_count):
        for n in range(n_lo, n_hi + 1):
            if q[i + n] <= q[i]:
                return i, n
    return -1, -1


def special_returns(f, I, x, ts, eps, k_max, horizon=None, horizon_n=None):
    """Special return times R_0, R_1, ... with return points G_k.

    ``R_k`` is the first essential return r of ``(G_k, sigma^{S_k} t)`` whose
    shifted noise avoids BAD_eps(m_tilde(r)), where ``S_k = R_0 + ... + R_{k-1}``
    and ``G_k = f_t^{S_k}(x)``.
    """
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    alpha = f.alpha
    pts = _orbit_of(f, x, v, horizon)
    first = essential_returns(f, I, x, v, 1, horizon)
    trace = ReturnTrace(first.E, [], [], False)
    S = 0
    buf = np.empty(horizon + 1, dtype=np.int64)
    while len(trace.special_returns) < k_max:
        trace.G_points.append(float(pts[S]))
        rel = horizon - S
        E, cnt, cens = O.essential_scan(I.comps, pts[S:], rel, horizon + 1, buf)
        found = None
        for r in buf[:cnt]:
            r = int(r)
            verdict = bad_member(v[S:], m_tilde(r, eps, alpha), eps, alpha, horizon_n)
            trace.bad_truncation = max(trace.bad_truncation, verdict.horizon_n)
            if not verdict:
                found = r
                break
        if found is None:
            trace.censored = True
            trace.G_points.pop()
            break
        trace.special_returns.append(found)
        S += found
    return trace


# --------------------------------------------------------------- Pliss


def _exact_ints(a, C):
    """Scale the (dyadic) floats a and C to integers over a common denominator."""
    pairs = [float(v).as_integer_ratio() for v in a]
    cn, cd = float(C).as_integer_ratio()
    D = max([cd] + [d for _, d in pairs])
    return [n * (D // d) for n, d in pairs], cn * (D // cd)


def pliss_select(a, C):
    """Largest k with every backward partial sum a_j + ... + a_k <= (k - j + 1) C.

    Comparisons are exact (floats are scaled to integers).

    Raises
    ------
    PreconditionViolated
        If the whole sum exceeds (n + 1) C.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise PreconditionViolated("empty sequence")
    if np.any(a < 0) or not np.all(np.isfinite(a)) or not math.isfinite(C):
        raise PreconditionViolated("entries must be finite and nonnegative")
    A, Ci = _exact_ints(a, C)
    if sum(A) > len(A) * Ci:
        raise PreconditionViolated("sum exceeds (n + 1) C")
    best = -1
    run = None  # max over j of sum_{i=j}^{k} (a_i - C)
    for k, v in enumerate(A):
        b = v - Ci
        run = b if run is None or run < 0 else run + b
        if run <= 0:
            best = k
    return best


def pliss_valid(a, C, k):
    """Brute-force, exact check that every backward partial sum from k is bounded."""
    A, Ci = _exact_ints(a, C)
    s = 0
    for j in range(k, -1, -1):
        s += A[j]
        if s > (k - j + 1) * Ci:
            return False
    return True


# ---------------------------------------------------- m-hat and M


def m_hat(f, I, x, ts, eps, gamma, horizon=None, samples=DEFAULT_PROBES):
    """Minimal m >= max(E, 1) landing within eps^(2 gamma) of P0 whose pulled-back
    eps^gamma ball has distortion budget <= eps^(-gamma alpha); Censored otherwise."""
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    pts = _orbit_of(f, x, v, horizon)
    p0s = np.array(f.fixed_points_P0, dtype=np.float64)
    m = O.mhat_scan(f.table, I.comps, p0s, pts, horizon, float(eps), float(gamma),
                    f.alpha, samples)
    if m == -2:
        raise RootFindingFailed(-1, float(x))
    return Censored(horizon) if m < 0 else int(m)


def M_time(f, I, x, ts, eps, K_sharp, gamma, horizon=None, tau=None):
    """min(m_K#, m-hat), Censored if both are."""
    a = m_K(f, I, x, ts, K_sharp, horizon, tau)
    b = m_hat(f, I, x, ts, eps, gamma, horizon)
    vals = [v for v in (a, b) if not is_censored(v)]
    return min(vals) if vals else a


# ------------------------------------------------------------ nice sets


@dataclass
class NiceSetReport:
    """``exact`` is true when orbits were followed in rational arithmetic.

    Otherwise ``reliable_steps`` is the first time at which the derivative
    cocycle of some boundary orbit exceeds 2**52, past which a float orbit
    no longer tracks the true orbit of its starting point.
    """

    delta: float
    eps: float
    horizon: int
    samples: int
    violations: list  # (boundary point, sample, n, landing point)
    exact: bool = False
    reliable_steps: int = 0

    @property
    def clean(self):
        return not self.violations


def _affine(f):
    return bool(np.all(f.table[:, K.COL_C] == 0.0))


def _exact_orbit_hit(f, x, p0s, delta, horizon):
    """First n <= horizon with f^n(x) in B_delta(P0), all in exact rationals."""
    rows = [(Fraction(r[K.COL_A]), Fraction(r[K.COL_B]), Fraction(r[K.COL_K]),
             Fraction(r[K.COL_S])) for r in f.table]
    seen = {}
    for n in range(1, horizon + 1):
        for a, b, k, s in rows:
            if a <= x < b:
                x = (k + s * x) % 1
                break
        if any(min(abs(x - p), 1 - abs(x - p)) < delta for p in p0s):
            return n, x
        if x in seen:  # periodic: no later landing
            return None
        seen[x] = n
    return None


def nice_set_check(f, eps, delta, horizon, samples=1, seed=0, max_report=20):
    """Look for boundary points of B_delta(P0) whose random orbit re-enters it.

    At eps = 0 a single deterministic orbit per boundary point is followed;
    for maps with affine branches this is done exactly, with ``delta`` read
    as the decimal rational it prints as.
    """
    from .rds import sample_noise

    p0s = f.fixed_points_P0
    if eps == 0 and _affine(f):
        d = Fraction(repr(float(delta)))
        viol = []
        for p in p0s:
            for x in ((Fraction(p) + d) % 1, (Fraction(p) - d) % 1):
                hit = _exact_orbit_hit(f, x, [Fraction(q) for q in p0s], d, horizon)
                if hit is not None:
                    viol.append((float(x), 0, hit[0], float(hit[1])))
        return NiceSetReport(delta, eps, horizon, 1, viol[:max_report], True, horizon)

    comps = neighborhood_ball(f, delta)
    bpts = []
    for p in p0s:
        bpts += [(p + delta) % 1.0, (p - delta) % 1.0]
    samples = 1 if eps == 0 else int(samples)
    viol = []
    reliable = horizon
    limit = 52 * math.log(2.0)
    for s in range(samples):
        v = np.zeros(horizon) if eps == 0 else sample_noise(eps, horizon, seed, 0, s).values
        for x in bpts:
            pts = orbit_points(f.table, x, v, np.empty(horizon + 1))
            logd = 0.0
            for n in range(1, horizon + 1):
                logd += math.log(K.deriv_right(f.table, pts[n - 1]))
                if logd > limit:
                    reliable = min(reliable, n)
                if O.comp_of(comps, pts[n]) >= 0:
                    viol.append((x, s, n, float(pts[n])))
                    break
            if len(viol) >= max_report:
                return NiceSetReport(delta, eps, horizon, samples, viol, False, reliable)
    return NiceSetReport(delta, eps, horizon, samples, viol, False, reliable)


@dataclass(frozen=True)
class InducedReturn:
    m: object
    Lambda: float
    Ldist: float


def induced_return(f, delta, x, ts, horizon=None, tau=None, lam=None, I=None,
                   samples=DEFAULT_PROBES):
    """First m >= 1 with f_t^m(x) in V = B_delta(P0) and sampled Lambda^(m) >= lambda_*.

    ``tau`` and ``lam`` default to tau_* and lambda_* of ``I``.
    """
    comps = neighborhood_ball(f, delta)
    if O.comp_of(comps, float(x)) < 0:
        raise PreconditionViolated("x must lie in V")
    if tau is None or lam is None:
        if I is None:
            raise PreconditionViolated("give tau and lam, or a neighbourhood I")
        tau = tau_star(f, I) if tau is None else tau
        lam = lambda_star(f, I) if lam is None else lam
    v = _vals(ts)
    horizon = v.size if horizon is None else int(horizon)
    pts = _orbit_of(f, x, v, horizon)
    m, ml, ms = O.induced_scan(f.table, comps, pts, horizon, float(tau), math.log(lam),
                               f.alpha, samples)
    if m == -2:
        raise RootFindingFailed(-1, float(x))
    if m < 0:
        return InducedReturn(Censored(horizon), math.nan, math.nan)
    return InducedReturn(int(m), math.exp(ml), ms)


# ------------------------------------------------------------ distortion


def distortion_sample(f, x, ts, h, max_len=0.05, n_max=10_000, probes=DEFAULT_PROBES):
    """Distortion of f_t^n on J = [x, x + h] against sum_i |f_t^i J|^alpha.

    n is the largest time with every image f_t^i(J), i < n, shorter than
    ``max_len`` and disjoint from P_*.  Returns (Dist, sum, n); n = 0 if J
    itself is unusable.
    """
    tab = f.table
    v = _vals(ts)
    n_max = min(n_max, v.size)
    pts = orbit_points(tab, float(x), np.ascontiguousarray(v[:n_max]), np.empty(n_max + 1))
    pstar = f.P_star
    a, b = 0.0, float(h)
    total = 0.0
    n = 0
    for j in range(n_max):
        xj = pts[j]
        ln = b - a
        if ln >= max_len:
            break
        hit = False
        for p in pstar:
            o = K.signed_offset(p, xj)
            if a < o < b or (o == a and a != 0.0):
                hit = True
        if hit:
            break
        total += ln ** f.alpha
        a = K.lift_delta(tab, xj, a)
        b = K.lift_delta(tab, xj, b)
        n += 1
    if n == 0:
        return 0.0, 0.0, 0
    lg = np.empty(probes)
    for k in range(probes):
        d = (h * k) / (probes - 1)
        s = 0.0
        for j in range(n):
            s += math.log(K.deriv_right(tab, K.wrap(pts[j] + d)))
            d = K.lift_delta(tab, pts[j], d)
        lg[k] = s
    return float(lg.max() - lg.min()), total, n


# ------------------------------------------------------------ CSV rows

TRACE_COLUMNS = ("x", "E", "censored", "essential_returns", "special_returns")
PROFILE_COLUMNS = ("x", "n", "tau", "U_left", "U_right", "Lambda", "L", "samples")


def trace_row(x, trace):
    e = "" if is_censored(trace.E) else str(trace.E)
    return (repr(float(x)), e, str(int(trace.censored)),
            ";".join(map(str, trace.essential_returns)),
            ";".join(map(str, trace.special_returns)))


def profile_row(p):
    u = p.U
    return (repr(p.x), str(p.n), repr(p.tau), repr(u[0]), repr(u[1]),
            repr(p.Lambda), repr(p.Ldist), str(p.sample_count))
