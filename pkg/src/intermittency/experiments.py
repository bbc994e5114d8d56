"""Monte Carlo and operator experiments: tail exponents, BAD-set decay,
stochastic-stability sweeps and Birkhoff consistency.

Every Monte Carlo sample ``k`` draws its initial point and its noise from
Philox lane ``k`` of key ``(seed, stream)``, so results do not depend on how
samples are split across threads.  Reports carry their full configuration;
feeding ``report.config`` back to :func:`run` reproduces the report.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
import math

import numba as nb
import numpy as np
from scipy import optimize, stats

from . import _kernels as K
from . import _orbit as O
from . import maps, returns, transfer
from ._philox import lane_point, numpy_generator, philox_block, to_unit
from .errors import (
    ConfigError,
    InsufficientNoiseLength,
    PreconditionViolated,
    RootFindingFailed,
    WindowTooSmall,
)
from .rds import sample_noise, shift

_jit = nb.njit(cache=True, nogil=True)

STREAM_ESCAPE = 1
STREAM_MK = 2
STREAM_MV = 3
STREAM_BIRKHOFF = 4
STREAM_OMEGA = 5
STREAM_BAD = 6
STREAM_LEMMA = 7

CHUNK = 4096


# ------------------------------------------------------------ configuration


def map_source(f):
    """Config text that rebuilds ``f``."""
    if f.kind == "PomeauManneville":
        return f"kind = pm\nalpha = {f.alpha!r}\n"
    if f.kind == "LSV":
        return f"kind = lsv\nalpha = {f.alpha!r}\n"
    if f.name == "doubling":
        return f"kind = doubling\nalpha = {f.alpha!r}\n"
    return maps.map_to_text(f)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment bit for bit.

    ``params`` holds experiment-specific settings as (key, value) pairs.
    """

    experiment: str
    map_text: str = "kind = pm\nalpha = 0.5\n"
    eps: tuple = (0.0,)
    samples: int = 10_000
    horizon: int = 1024
    seed: int = None
    grid_N: int = 4096
    threads: int = 1
    params: tuple = ()

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("an explicit seed is required")
        if self.samples <= 0 or self.horizon <= 0 or self.grid_N <= 0 or self.threads <= 0:
            raise ConfigError("counts must be positive")
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        object.__setattr__(self, "params", tuple(sorted((str(k), v) for k, v in dict(self.params).items())))

    @property
    def map(self):
        return maps.parse_map_text(self.map_text)

    def param(self, key, default=None):
        return dict(self.params).get(key, default)

    def with_threads(self, threads):
        return replace(self, threads=int(threads))

    def lines(self):
        """key=value lines (the run-manifest config echo)."""
        out = [f"experiment={self.experiment}"]
        for ln in self.map_text.strip().splitlines():
            k, v = (s.strip() for s in ln.split("=", 1))
            out.append(f"map.{k}={v}")
        out.append("eps=" + ",".join(repr(e) for e in self.eps))
        for name in ("samples", "horizon", "seed", "grid_N", "threads"):
            out.append(f"{name}={getattr(self, name)}")
        for k, v in self.params:
            out.append(f"param.{k}={_fmt_value(v)}")
        return out

    @classmethod
    def from_lines(cls, lines):
        kw = {}
        map_lines = []
        params = {}
        for raw in lines:
            ln = raw.strip()
            if not ln or ln.startswith("#") or "=" not in ln:
                continue
            k, v = ln.split("=", 1)
            if k.startswith("map."):
                map_lines.append(f"{k[4:]} = {v}")
            elif k.startswith("param."):
                params[k[6:]] = _parse_value(v)
            elif k == "eps":
                kw["eps"] = tuple(float(s) for s in v.split(",") if s)
            elif k in ("samples", "horizon", "seed", "grid_N", "threads"):
                kw[k] = int(v)
            elif k == "experiment":
                kw[k] = v
        if "experiment" not in kw:
            raise ConfigError("manifest has no experiment line")
        if map_lines:
            kw["map_text"] = "\n".join(map_lines) + "\n"
        return cls(params=tuple(params.items()), **kw)


def _fmt_value(v):
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(s):
    if "," in s:
        return tuple(_parse_value(x) for x in s.split(","))
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


# --------------------------------------------------------------- statistics


def wilson(k, n, z=1.96):
    """Wilson score interval for a binomial proportion (vectorised)."""
    k = np.asarray(k, dtype=np.float64)
    n = float(n)
    p = k / n
    z2 = z * z
    den = 1.0 + z2 / n
    mid = (p + z2 / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    return np.clip(mid - half, 0.0, 1.0), np.clip(mid + half, 0.0, 1.0)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    r2: float
    intercept: float
    points: int
    window: tuple

    def __iter__(self):
        return iter((self.slope, self.stderr, self.r2))


def fit_slope(m_grid, survival, window=None, lower=None, upper=None, z=1.96):
    """Ordinary least squares of log survival on log m.

    ``window = (m_lo, m_hi)`` restricts the points; zero survivals are
    dropped.  With Wilson bounds the standard error propagates the per-point
    log-interval half-widths through the OLS weights; otherwise the classical
    residual standard error is used.

    Raises
    ------
    WindowTooSmall
        With fewer than 5 usable points.
    """
    m = np.asarray(m_grid, dtype=np.float64)
    s = np.asarray(survival, dtype=np.float64)
    keep = s > 0
    if window is not None:
        keep &= (m >= window[0]) & (m <= window[1])
    if keep.sum() < 5:
        raise WindowTooSmall(int(keep.sum()))
    x = np.log(m[keep])
    y = np.log(s[keep])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    icpt = float(y.mean() - slope * x.mean())
    res = y - (icpt + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(res @ res) / ss_tot if ss_tot > 0 else 1.0
    w = xc / sxx
    if lower is not None and upper is not None:
        lo = np.asarray(lower, dtype=np.float64)[keep]
        hi = np.asarray(upper, dtype=np.float64)[keep]
        sig = (np.log(hi) - np.log(np.maximum(lo, 1e-300))) / (2 * z)
        se = float(np.sqrt((w * w) @ (sig * sig)))
    else:
        dof = max(keep.sum() - 2, 1)
        se = float(np.sqrt(float(res @ res) / dof / sxx))
    win = (float(m[keep][0]), float(m[keep][-1]))
    return SlopeFit(slope, se, r2, icpt, int(keep.sum()), win)


def log_grid(m_max, points=64):
    """Increasing integers from 1 to m_max, roughly log-spaced."""
    g = np.unique(np.round(np.geomspace(1, m_max, points)).astype(np.int64))
    return g


def survival_curve(times, m_grid):
    """(counts of T >= m, censored count) with censored times coded as -1."""
    t = np.asarray(times)
    cens = int((t < 0).sum())
    fin = np.sort(t[t >= 0])
    ge = fin.size - np.searchsorted(fin, m_grid, side="left")
    return ge + cens, cens


# ------------------------------------------------------------------ reports


@dataclass
class TailReport:
    """Empirical survival P(T >= m) with Wilson bands and a log-log fit."""

    kind: str
    m_grid: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    censored_fraction: float
    samples: int
    fit: object
    target_slope: float
    config: ExperimentConfig = None
    extras: dict = field(default_factory=dict)

    @property
    def fitted_slope(self):
        return math.nan if self.fit is None else self.fit.slope

    @property
    def window(self):
        return None if self.fit is None else self.fit.window

    def csv(self):
        lines = ["m,survival,wilson_lo,wilson_hi"]
        for m, s, lo, hi in zip(self.m_grid, self.survival, self.lower, self.upper):
            lines.append(f"{int(m)},{float(s)!r},{float(lo)!r},{float(hi)!r}")
        return "\n".join(lines) + "\n"

    def summary(self):
        out = {
            "kind": self.kind,
            "samples": self.samples,
            "censored_fraction": self.censored_fraction,
            "target_slope": self.target_slope,
            "fitted_slope": self.fitted_slope,
        }
        if self.fit is not None:
            out.update(slope_stderr=self.fit.stderr, r2=self.fit.r2,
                       fit_m_lo=self.fit.window[0], fit_m_hi=self.fit.window[1],
                       fit_points=self.fit.points)
        out.update(self.extras)
        return out


def _tail_report(kind, times, samples, m_grid, target, config, floor, window, extras=None):
    ge, cens = survival_curve(times, m_grid)
    surv = ge / samples
    lo, hi = wilson(ge, samples)
    keep = surv > floor
    if window is not None:
        keep &= (m_grid >= window[0]) & (m_grid <= window[1])
    ex = {"fit_floor": floor}
    try:
        sel = m_grid[keep]
        fit = fit_slope(m_grid, surv, (sel.min(), sel.max()) if sel.size else (1, 0), lo, hi)
        # quality of an exponential law on the same window, for comparison
        ex["exp_fit_r2"] = _linfit(sel, np.log(surv[keep]))[2]
    except WindowTooSmall:
        fit = None
    ex.update(extras or {})
    return TailReport(kind, m_grid, surv, lo, hi, cens / samples, samples, fit, target,
                      config, ex)


# ------------------------------------------------------------ parallel lanes


def _run_lanes(job, samples, threads, out_dtype=np.int64, chunk=CHUNK):
    """Call ``job(first_lane, out_slice)`` over fixed chunks; order-independent."""
    out = np.empty(samples, dtype=out_dtype)
    chunks = [(s, min(chunk, samples - s)) for s in range(0, samples, chunk)]

    def run(c):
        s, n = c
        job(s, out[s:s + n])

    if threads <= 1 or len(chunks) == 1:
        for c in chunks:
            run(c)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, chunks))
    return out


@_jit
def _escape_batch(tab, comps, k0, k1, lane0, eps, horizon, out):
    for i in range(out.shape[0]):
        lane = lane0 + i
        x = lane_point(k0, k1, lane)
        out[i] = O.lane_escape(tab, comps, k0, k1, lane, eps, x, horizon)


@_jit
def _mK_batch(tab, comps, k0, k1, lane0, eps, horizon, Kval, tau, alpha, samples, out):
    pts = np.empty(horizon + 1)
    for i in range(out.shape[0]):
        lane = lane0 + i
        x = lane_point(k0, k1, lane)
        h = min(64, horizon)
        while True:
            # grow the orbit geometrically; most samples stop early
            O.lane_orbit(tab, k0, k1, lane, eps, x, h, pts)
            m, E, L = O.mK_scan(tab, comps, pts, h, Kval, tau, alpha, samples)
            if m >= 0 or h == horizon:
                break
            h = min(2 * h, horizon)
        out[i] = m if m >= 0 else -1


@_jit
def _mV_batch(tab, vcomps, k0, k1, lane0, eps, horizon, tau, log_lam, alpha, samples, out):
    pts = np.empty(horizon + 1)
    nc = vcomps.shape[0]
    for i in range(out.shape[0]):
        lane = lane0 + i
        u = lane_point(k0, k1, lane) * nc
        c = min(int(u), nc - 1)
        w = u - c
        x = K.wrap(vcomps[c, 0] - vcomps[c, 1] + (vcomps[c, 1] + vcomps[c, 2]) * w)
        h = min(64, horizon)
        while True:
            O.lane_orbit(tab, k0, k1, lane, eps, x, h, pts)
            m, ml, ms = O.induced_scan(tab, vcomps, pts, h, tau, log_lam, alpha, samples)
            if m >= 0 or h == horizon:
                break
            h = min(2 * h, horizon)
        out[i] = m if m >= 0 else -1


def _key(seed, stream):
    return np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)


# ------------------------------------------------------------------- tails


def escape_survival_exact(f, I, m_grid):
    """Leb{x : E(x) >= m} for the deterministic map (eps = 0).

    On each side of a fixed point the set {E >= m} is an arc ending at the
    fixed point, whose length is found by pulling the side's boundary back
    m - 1 times through the local branch.
    """
    tab = f.table
    m_grid = np.asarray(m_grid, dtype=np.int64)
    out = np.zeros(m_grid.size)
    for p0, rl, rr in I.comps:
        for d0 in (-rl, rr):
            d = d0
            k = 1
            for idx, m in enumerate(m_grid):
                if m < 1:
                    out[idx] += 1.0  # E >= 0 always
                    continue
                while k < m:
                    d, st = K.lift_delta_inverse(tab, p0, d)
                    if st:
                        raise RootFindingFailed(-1, float(p0 + d))
                    k += 1
                out[idx] += abs(d)
    return out


def _floor(eps, samples):
    return max(10.0 * eps, 100.0 / samples)


def tail_escape(f, I, eps, samples, m_max, seed, threads=1, window=(16, None), points=64,
                config=None):
    """Empirical survival of the escape time E over x ~ Leb, t ~ uniform noise.

    Censored orbits count as E = infinity.  The slope is fitted where the
    survival exceeds max(10 eps, 100/samples) and m lies in ``window``.  For
    eps > 0 the report also gives the crossover m_c at which the noiseless
    survival Leb{E >= m} drops to 8 eps, and the empirical survival there
    (the plateau level, the largest value beyond m_c).
    """
    if samples < 10_000:
        raise PreconditionViolated("tail_escape needs at least 10^4 samples")
    k0, k1 = _key(seed, STREAM_ESCAPE)
    tab = f.table

    def job(s, out):
        _escape_batch(tab, I.comps, k0, k1, s, float(eps), int(m_max), out)

    times = _run_lanes(job, samples, threads)
    grid = log_grid(m_max, points)
    win = (window[0] or 1, window[1] or m_max)
    cfg = config or ExperimentConfig(
        "tail_escape", map_source(f), (eps,), samples, m_max, seed, threads=threads,
        params=(("radius", I.radius()), ("window_lo", win[0]), ("window_hi", win[1]),
                ("points", points)))
    rep = _tail_report("escape", times, samples, grid, -1.0 / f.alpha, cfg,
                       _floor(eps, samples), win)
    if eps > 0:
        # crossover: where the noiseless power-law tail meets 8 eps
        det = escape_survival_exact(f, I, grid)
        below = np.nonzero(det <= 8 * eps)[0]
        if below.size:
            mc = int(grid[below[0]])
            rep.extras["crossover_m"] = mc
            rep.extras["plateau_level"] = float(rep.survival[below[0]])
        rep.extras["plateau_bound"] = 8 * eps
    return rep


def alpha_bar(alpha, value=None):
    """Declared exponent in (alpha, 1); default is the midpoint."""
    a = 0.5 * (alpha + 1.0) if value is None else float(value)
    if not (alpha < a < 1.0):
        raise PreconditionViolated(f"alpha_bar must lie in ({alpha}, 1)")
    return a


def tail_mK(f, I, eps, Kval, samples, m_max, seed, threads=1, tau=None, probes=33,
            abar=None, window=(16, None), points=64, config=None):
    """Empirical survival of m_K over (x, t) with x ~ Leb."""
    tau = returns.tau_star(f, I) if tau is None else float(tau)
    k0, k1 = _key(seed, STREAM_MK)
    tab = f.table

    def job(s, out):
        _mK_batch(tab, I.comps, k0, k1, s, float(eps), int(m_max), float(Kval), tau,
                  f.alpha, int(probes), out)

    times = _run_lanes(job, samples, threads)
    ab = alpha_bar(f.alpha, abar)
    win = (window[0] or 1, window[1] or m_max)
    cfg = config or ExperimentConfig(
        "tail_mK", map_source(f), (eps,), samples, m_max, seed, threads=threads,
        params=(("K", float(Kval)), ("radius", I.radius()), ("tau", tau),
                ("probes", probes), ("alpha_bar", ab), ("window_lo", win[0]),
                ("window_hi", win[1]), ("points", points)))
    # the m_K bound has no noise plateau: only the statistical floor applies
    return _tail_report("m_K", times, samples, log_grid(m_max, points), -1.0 / ab, cfg,
                        100.0 / samples, win, {"alpha_bar": ab, "K": float(Kval)})


def tail_mV(f, delta, eps, samples, m_max, seed, threads=1, tau=None, lam=None, I=None,
            probes=33, abar=None, window=(16, None), points=64, nice_horizon=200,
            config=None):
    """Empirical survival of the induced return time m_V, x ~ Leb on V = B_delta(P0).

    ``tau`` and ``lam`` default to tau_* and lambda_* of ``I`` (built at eps
    if not given).  The nice-set report for V is attached to the result.
    """
    if I is None and (tau is None or lam is None):
        I = returns.build_I(f, eps)
    tau = returns.tau_star(f, I) if tau is None else float(tau)
    lam = returns.lambda_star(f, I) if lam is None else float(lam)
    vcomps = returns.neighborhood_ball(f, delta)
    nice = returns.nice_set_check(f, eps, delta, nice_horizon, samples=8, seed=seed)
    k0, k1 = _key(seed, STREAM_MV)
    tab = f.table

    def job(s, out):
        _mV_batch(tab, vcomps, k0, k1, s, float(eps), int(m_max), tau, math.log(lam),
                  f.alpha, int(probes), out)

    times = _run_lanes(job, samples, threads)
    ab = alpha_bar(f.alpha, abar)
    win = (window[0] or 1, window[1] or m_max)
    cfg = config or ExperimentConfig(
        "tail_mV", map_source(f), (eps,), samples, m_max, seed, threads=threads,
        params=(("delta", float(delta)), ("tau", tau), ("lambda", lam), ("probes", probes),
                ("alpha_bar", ab), ("window_lo", win[0]), ("window_hi", win[1]),
                ("points", points), ("nice_horizon", nice_horizon)))
    return _tail_report("m_V", times, samples, log_grid(m_max, points), -1.0 / ab, cfg,
                        _floor(eps, samples), win,
                        {"alpha_bar": ab, "nice_set_clean": nice.clean,
                         "nice_set_violations": len(nice.violations)})


# ----------------------------------------------------------------- BAD set


def omega_hat_exact(n):
    """theta(Omega-hat(n)) = P(U_1 + ... + U_n <= n/4), U_i uniform on [0, 1].

    The Irwin-Hall distribution function, evaluated in exact rationals.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    x = Fraction(n, 4)
    tot = Fraction(0)
    for k in range(0, math.floor(x) + 1):
        tot += (-1) ** k * math.comb(n, k) * (x - k) ** n
    return tot / math.factorial(n)


def _tilt_theta(target=0.25):
    # exponential tilt of U(0, 1) whose mean is ``target``
    def mean(th):
        return 1.0 / (1.0 - math.exp(-th)) - 1.0 / th
    return optimize.brentq(lambda th: mean(th) - target, -200.0, -1e-6)


def omega_hat_mc(eps, n_list, samples, seed, tilted=False, block=1 << 14):
    """Monte Carlo estimates of theta(Omega-hat(n)) with standard errors.

    Plain mode uses the noise itself (|t_k| / eps is uniform).  Tilted mode
    samples |t_k| / eps from the exponential tilt with mean 1/4 and reweights
    by the likelihood ratio, which keeps the relative error bounded as the
    probabilities decay exponentially.
    """
    n_list = np.asarray(sorted(set(int(n) for n in n_list)))
    n_max = int(n_list.max())
    gen = numpy_generator(int(seed), STREAM_OMEGA, int(tilted))
    s1 = np.zeros(n_list.size)
    s2 = np.zeros(n_list.size)
    th = _tilt_theta() if tilted else 0.0
    logc = math.log(math.expm1(th) / th) if tilted else 0.0
    done = 0
    while done < samples:
        b = min(block, samples - done)
        v = gen.random((b, n_max))
        if tilted:
            u = np.log1p(v * math.expm1(th)) / th
        else:
            u = np.abs(2.0 * v - 1.0) if eps > 0 else v
        cs = np.cumsum(u, axis=1)[:, n_list - 1]
        hit = cs <= n_list / 4.0
        if tilted:
            w = np.exp(n_list * logc - th * cs)
            val = np.where(hit, w, 0.0)
        else:
            val = hit.astype(np.float64)
        s1 += val.sum(axis=0)
        s2 += (val * val).sum(axis=0)
        done += b
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean * mean, 0.0)
    return n_list, mean, np.sqrt(var / samples)


@_jit
def _bad_batch(k0, k1, lane0, eps, i_count, n_lo, n_hi, out):
    need = i_count - 1 + n_hi
    q = np.empty(need + 1)
    for s in range(out.shape[0]):
        lane = lane0 + s
        q[0] = 0.0
        j = 0
        b = 0
        while j < need:
            r0, r1, r2, r3 = philox_block(k0, k1, b + 1, lane, 0, 0)
            for r in (r0, r1, r2, r3):
                if j < need:
                    t = eps * (2.0 * to_unit(r) - 1.0)
                    q[j + 1] = q[j] + (abs(t) - eps / 4.0)
                    j += 1
            b += 1
        hit = 0
        for i in range(i_count):
            for n in range(n_lo, n_hi + 1):
                if q[i + n] <= q[i]:
                    hit = 1
                    break
            if hit:
                break
        out[s] = hit


@dataclass
class BadsetReport:
    eps: float
    alpha: float
    n_list: np.ndarray
    omega_exact: list
    omega_mc: np.ndarray
    omega_se: np.ndarray
    omega_is: np.ndarray
    omega_is_se: np.ndarray
    omega_fit: tuple  # (slope, intercept, r2) of log theta vs n
    N_list: np.ndarray
    bad_freq: np.ndarray
    bad_lo: np.ndarray
    bad_hi: np.ndarray
    bad_fit: tuple
    config: ExperimentConfig = None

    def csv_omega(self):
        lines = ["n,exact,mc,mc_se,tilted,tilted_se"]
        for i, n in enumerate(self.n_list):
            row = (self.omega_exact[i], self.omega_mc[i], self.omega_se[i], self.omega_is[i],
                   self.omega_is_se[i])
            lines.append(f"{int(n)}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def csv_bad(self):
        lines = ["N,frequency,wilson_lo,wilson_hi"]
        for i, N in enumerate(self.N_list):
            row = (self.bad_freq[i], self.bad_lo[i], self.bad_hi[i])
            lines.append(f"{int(N)}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def csv(self):
        return self.csv_omega()

    def summary(self):
        return {"omega_slope": self.omega_fit[0], "omega_r2": self.omega_fit[2],
                "bad_slope": self.bad_fit[0], "bad_r2": self.bad_fit[2]}


def _linfit(x, y):
    r = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return float(r.slope), float(r.intercept), float(r.rvalue ** 2)


def badset_decay(eps, N_list, samples, horizon, seed, alpha=0.5, n_list=range(1, 65),
                 fit_range=(4, 64), threads=1, config=None):
    """theta(Omega-hat(n)) versus n and the BAD_eps(N) frequency versus N.

    ``horizon`` is the largest window length n examined for BAD membership and
    must be at least 16 max(N) eps^-alpha.
    """
    N_list = np.asarray(sorted(N_list), dtype=np.int64)
    need = int(math.floor(16 * int(N_list.max()) * eps ** (-alpha)))
    if horizon < need:
        raise InsufficientNoiseLength(need, int(horizon))
    ns, mc, se = omega_hat_mc(eps, n_list, samples, seed, tilted=False)
    _, ism, isse = omega_hat_mc(eps, n_list, samples, seed, tilted=True)
    exact = [omega_hat_exact(n) for n in ns]
    sel = (ns >= fit_range[0]) & (ns <= fit_range[1]) & (ism > 0)
    ofit = _linfit(ns[sel], np.log(ism[sel])) if sel.sum() >= 2 else (math.nan,) * 3
    k0, k1 = _key(seed, STREAM_BAD)
    freq = np.empty(N_list.size)
    for j, N in enumerate(N_list):
        i_count, n_lo, _ = returns.bad_window(int(N), eps, alpha)

        def job(s, out, i_count=i_count, n_lo=n_lo):
            _bad_batch(k0, k1, s + j * (1 << 40), float(eps), i_count, n_lo, int(horizon), out)

        hits = _run_lanes(job, samples, threads)
        freq[j] = hits.sum() / samples
    lo, hi = wilson(freq * samples, samples)
    pos = freq > 0
    bfit = _linfit(N_list[pos], np.log(freq[pos])) if pos.sum() >= 2 else (math.nan,) * 3
    cfg = config or ExperimentConfig(
        "badset", "kind = doubling\nalpha = %r\n" % alpha, (eps,), samples, int(horizon),
        seed, threads=threads,
        params=(("N_list", tuple(int(n) for n in N_list)), ("n_max", int(ns.max())),
                ("fit_lo", fit_range[0]), ("fit_hi", fit_range[1])))
    return BadsetReport(eps, alpha, ns, exact, mc, se, ism, isse, ofit, N_list, freq, lo, hi,
                        bfit, cfg)


# ---------------------------------------------------------------- stability


@dataclass
class StabilityReport:
    eps_grid: tuple
    l1_curve: np.ndarray
    l1_refined: np.ndarray
    error_bars: np.ndarray
    l1_outside_core: np.ndarray
    core_radius: float
    core_mass: np.ndarray
    grid_N: int
    grading: str
    iterations: list
    config: ExperimentConfig = None

    @property
    def increases(self):
        return int(np.sum(np.diff(self.l1_curve) > 0))

    @property
    def trend_ok(self):
        """Nonincreasing up to one increase inside the error bars, and a
        factor-3 drop from first to last."""
        d = np.diff(self.l1_curve)
        eb = self.error_bars[:-1] + self.error_bars[1:]
        big = d > eb
        return bool(self.increases <= 1 and not big.any()
                    and self.l1_curve[-1] < self.l1_curve[0] / 3)

    @property
    def decay_exponent(self):
        """Least-squares slope of log l1 against log eps (reported, not asserted)."""
        pos = self.l1_curve > 0
        if pos.sum() < 2:
            return math.nan
        return _linfit(np.log(np.asarray(self.eps_grid)[pos]), np.log(self.l1_curve[pos]))[0]

    def csv(self):
        lines = ["eps,l1,l1_refined,error_bar,l1_outside_core,core_mass"]
        for i, e in enumerate(self.eps_grid):
            lines.append(f"{float(e)!r},{float(self.l1_curve[i])!r},{float(self.l1_refined[i])!r},"
                         f"{float(self.error_bars[i])!r},{float(self.l1_outside_core[i])!r},"
                         f"{float(self.core_mass[i])!r}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"grid_N": self.grid_N, "grading": self.grading, "core_radius": self.core_radius,
                "increases": self.increases, "trend_ok": self.trend_ok,
                "decay_exponent": self.decay_exponent,
                "ratio_last_first": float(self.l1_curve[-1] / self.l1_curve[0])
                if self.l1_curve[0] > 0 else math.nan}


def _sweep(f, eps_list, grid, tol, max_iters):
    zeta = transfer.invariant_density(f, grid, tol, max_iters)
    P = transfer.ulam_build(f, grid)
    out = []
    for e in eps_list:
        ze = transfer.stationary(transfer.smooth_uniform(P, e), tol, max_iters)
        out.append(ze)
    return zeta, out


def stability_sweep(f, eps_list, N=4096, tol=1e-12, max_iters=400_000, refine=True,
                    core_radius=4e-5, graded=True, config=None):
    """L1 distance between annealed stationary densities and the invariant one.

    Error bars are |l1(N) - l1(2N)|.  Cells within ``core_radius`` of P0 are
    also excluded in a separate column; the core's stationary mass is reported.
    """
    eps_list = tuple(float(e) for e in eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise PreconditionViolated("eps_list must be strictly decreasing")
    mk = (lambda n: transfer.default_grid(f, n)) if graded else transfer.Grid.uniform
    grid = mk(N)
    zeta, zes = _sweep(f, eps_list, grid, tol, max_iters)
    l1 = np.array([transfer.l1_distance(z, zeta) for z in zes])
    p0 = f.fixed_points_P0
    l1c = np.array([transfer.l1_distance_excluding(z, zeta, p0, core_radius) for z in zes])
    core = np.array([z.mass_near(p0, core_radius) for z in zes])
    if refine:
        g2 = mk(2 * N)
        z2, zes2 = _sweep(f, eps_list, g2, tol, max_iters)
        l1r = np.array([transfer.l1_distance(z, z2) for z in zes2])
    else:
        l1r = l1.copy()
    cfg = config or ExperimentConfig(
        "stability", map_source(f), eps_list, 1, 1, 0, N,
        params=(("tol", tol), ("refine", int(refine)), ("core_radius", core_radius),
                ("graded", int(graded)), ("max_iters", max_iters)))
    return StabilityReport(eps_list, l1, l1r, np.abs(l1 - l1r), l1c, core_radius, core,
                           N, grid.grading, [zeta.iterations] + [z.iterations for z in zes],
                           cfg)


# ----------------------------------------------------------------- Birkhoff


_OBS_CONST, _OBS_COS, _OBS_SIN, _OBS_BALL = 0, 1, 2, 3


def _encode(obs):
    codes = np.empty(len(obs), np.int64)
    par = np.zeros((len(obs), 10))
    for i, o in enumerate(obs):
        if isinstance(o, transfer.Constant):
            codes[i] = _OBS_CONST
        elif isinstance(o, transfer.Fourier):
            codes[i] = _OBS_COS if o.kind == "cos" else _OBS_SIN
            par[i, 0] = o.k
        elif isinstance(o, transfer.BallIndicator):
            if len(o.points) > 8:
                raise PreconditionViolated("at most 8 ball centres")
            codes[i] = _OBS_BALL
            par[i, 0] = o.radius
            par[i, 1] = len(o.points)
            par[i, 2:2 + len(o.points)] = o.points
        else:
            raise PreconditionViolated(f"unsupported observable {o!r}")
    return codes, par


@_jit
def _obs_value(code, par, x):
    if code == 0:
        return 1.0
    if code == 1:
        return math.cos(2.0 * math.pi * par[0] * x)
    if code == 2:
        return math.sin(2.0 * math.pi * par[0] * x)
    r = par[0]
    for j in range(int(par[1])):
        if K.circle_dist(x, par[2 + j]) < r:
            return 1.0
    return 0.0


@_jit
def _birkhoff_lane(tab, k0, k1, lane, eps, burn, n, nbatch, codes, par, bnds, sums, hist):
    """Run burn + n noisy steps from the lane's initial point; accumulate
    per-batch observable sums and a cell histogram over the last n points."""
    x = lane_point(k0, k1, lane)
    blen = n // nbatch
    total = burn + n
    j = 0
    b = 0
    N = bnds.shape[0] - 1
    while j < total:
        r0, r1, r2, r3 = philox_block(k0, k1, b + 1, lane, 0, 0)
        for r in (r0, r1, r2, r3):
            if j >= total:
                break
            if j >= burn:
                i = j - burn
                bi = i // blen
                if bi >= nbatch:
                    bi = nbatch - 1
                for o in range(codes.shape[0]):
                    sums[bi, o] += _obs_value(codes[o], par[o], x)
                lo = 0
                hi = N - 1
                while lo < hi:
                    mid = (lo + hi + 1) // 2
                    if bnds[mid] <= x:
                        lo = mid
                    else:
                        hi = mid - 1
                hist[lo] += 1
            x = K.step(tab, x, eps * (2.0 * to_unit(r) - 1.0))
            j += 1
        b += 1


@dataclass
class BirkhoffReport:
    eps: float
    n: int
    lanes: int
    names: list
    time_avg: np.ndarray
    stderr: np.ndarray
    ulam: np.ndarray
    grid_bound: np.ndarray
    histogram: object
    stationary: object
    config: ExperimentConfig = None

    @property
    def tolerance(self):
        return 3.0 * (self.stderr + self.grid_bound)

    @property
    def passed(self):
        return np.abs(self.time_avg - self.ulam) <= self.tolerance

    @property
    def histogram_l1(self):
        return transfer.l1_distance(self.histogram, self.stationary)

    def csv(self):
        lines = ["observable,time_average,stderr,ulam_integral,grid_bound,tolerance,pass"]
        for i, nm in enumerate(self.names):
            row = (self.time_avg[i], self.stderr[i], self.ulam[i], self.grid_bound[i],
                   self.tolerance[i])
            lines.append(f"{nm}," + ",".join(repr(float(v)) for v in row)
                         + f",{int(self.passed[i])}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"eps": self.eps, "steps": self.n, "lanes": self.lanes,
                "all_pass": bool(self.passed.all()), "histogram_l1": self.histogram_l1}


def birkhoff_check(f, eps, n, seed, grid=None, observables=None, burn_in=10_000, lanes=16,
                   batches=64, threads=1, tol=1e-12, config=None):
    """Time averages over ``n`` noisy steps (split over ``lanes`` independent
    orbits) against integrals for the Ulam stationary density.

    The Monte Carlo error is a batch-means standard error; the grid bound is
    the observable's own (sup |phi'| times max cell width for smooth ones).
    """
    grid = transfer.default_grid(f) if grid is None else grid
    obs = transfer.default_observables(f) if observables is None else list(observables)
    codes, par = _encode(obs)
    per = n // lanes
    if per < batches:
        raise PreconditionViolated("too few steps per lane for the batch count")
    k0, k1 = _key(seed, STREAM_BIRKHOFF)
    sums = np.zeros((lanes, batches, len(obs)))
    hists = np.zeros((lanes, grid.N), np.int64)
    tab = f.table
    bnds = grid.boundaries

    def run(l):
        _birkhoff_lane(tab, k0, k1, l, float(eps), int(burn_in), per, batches, codes, par,
                       bnds, sums[l], hists[l])

    if threads <= 1:
        for l in range(lanes):
            run(l)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, range(lanes)))
    blen = per // batches
    counts = np.full(batches, blen, dtype=np.float64)
    counts[-1] = per - blen * (batches - 1)
    means = sums / counts[None, :, None]
    flat = means.reshape(-1, len(obs))
    w = np.tile(counts, lanes)
    avg = (sums.sum(axis=(0, 1))) / (per * lanes)
    se = np.sqrt(((flat - avg) ** 2 * w[:, None]).sum(axis=0) / w.sum() / (flat.shape[0] - 1))
    hist = transfer.Density.from_masses(grid, hists.sum(axis=0) / float(per * lanes))
    A = transfer.annealed_build(f, grid, eps)
    rho = transfer.stationary(A, tol)
    ulam = np.array([rho.integrate(o) for o in obs])
    gb = np.array([o.grid_bound(rho) for o in obs])
    cfg = config or ExperimentConfig(
        "birkhoff", map_source(f), (eps,), n, burn_in, seed, grid.N, threads,
        params=(("lanes", lanes), ("batches", batches), ("tol", tol),
                ("observables", tuple(o.name for o in obs))))
    return BirkhoffReport(float(eps), per * lanes, lanes, [o.name for o in obs], avg, se, ulam,
                          gb, hist, rho, cfg)


def log_slope_near(density, p0=0.0, lo=1e-4, hi=1e-2, side=1):
    """Slope of log density against log distance to ``p0`` on cells whose
    distance lies in [lo, hi] on one side."""
    g = density.grid
    d = side * (g.centers - p0)
    d = np.where(d < 0, d + 1.0, d)
    sel = (d >= lo) & (d <= hi) & (density.values > 0)
    if sel.sum() < 5:
        raise WindowTooSmall(int(sel.sum()))
    return _linfit(np.log(d[sel]), np.log(density.values[sel]))[0]


def birkhoff_histogram(f, eps, n, seed, grid, burn_in=10_000, lanes=16, threads=1):
    """Cell-frequency density of ``n`` noisy steps split over ``lanes`` orbits."""
    rep_obs = [transfer.Constant()]
    codes, par = _encode(rep_obs)
    per = n // lanes
    k0, k1 = _key(seed, STREAM_BIRKHOFF)
    hists = np.zeros((lanes, grid.N), np.int64)
    sums = np.zeros((lanes, 1, 1))

    def run(l):
        _birkhoff_lane(f.table, k0, k1, l, float(eps), int(burn_in), per, 1, codes, par,
                       grid.boundaries, sums[l], hists[l])

    if threads <= 1:
        for l in range(lanes):
            run(l)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, range(lanes)))
    return transfer.Density.from_masses(grid, hists.sum(axis=0) / float(per * lanes))


# ---------------------------------------------------------- sampled lemmas


@dataclass
class SampledCheck:
    name: str
    trials: int
    violations: int
    worst: float
    details: list = field(default_factory=list)

    @property
    def ok(self):
        return self.violations == 0


def subadditivity_check(f, trials, seed, eps=0.01, m_max=40, n_max=40, tau_range=(1e-3, 0.2),
                        probes=33, slack=1.05):
    """Sampled L^(m+n)(x) <= slack [L^(m)(f^n x, sigma^n t) + Lambda^-alpha L^(n)(x)]."""
    gen = numpy_generator(int(seed), STREAM_LEMMA, 0)
    viol = 0
    worst = 0.0
    det = []
    for i in range(trials):
        x = float(gen.random())
        m = int(gen.integers(1, m_max + 1))
        n = int(gen.integers(1, n_max + 1))
        tau = float(np.exp(gen.uniform(math.log(tau_range[0]), math.log(tau_range[1]))))
        ts = sample_noise(eps, m + n, seed, STREAM_LEMMA, 1 + i)
        lhs = returns.expansion_profile(f, x, ts, m + n, tau, probes).Ldist
        xn = float(returns._orbit_of(f, x, ts, n)[n])
        pm_ = returns.expansion_profile(f, xn, shift(ts, n), m, tau, probes)
        pn = returns.expansion_profile(f, x, ts, n, tau, probes)
        rhs = pm_.Ldist + pm_.Lambda ** (-f.alpha) * pn.Ldist
        r = lhs / rhs
        worst = max(worst, r)
        if lhs > slack * rhs:
            viol += 1
            det.append((x, m, n, tau, lhs, rhs))
    return SampledCheck("subadditivity", trials, viol, worst, det)


def escape_pullback_check(f, I, eps, trials, seed, probes=33, horizon=100_000, tau=None):
    """|E(z', u) - E(z, u)| <= 1 for probes z' in U^(E)(z, u), z ~ Leb on I."""
    tau = returns.tau_star(f, I) if tau is None else tau
    gen = numpy_generator(int(seed), STREAM_LEMMA, 2)
    comps = I.comps
    viol = 0
    worst = 0
    done = 0
    det = []
    lane = 0
    while done < trials:
        c = int(gen.integers(0, comps.shape[0]))
        p0, rl, rr = comps[c]
        z = float((p0 - rl + (rl + rr) * gen.random()) % 1.0)
        lane += 1
        ts = sample_noise(eps, horizon, seed, STREAM_LEMMA + 100, lane)
        E = returns.escape_time(f, I, z, ts, horizon)
        if returns.is_censored(E) or E < 1:
            continue
        prof = returns.pullback_U(f, z, ts, E, tau)
        a, b = prof.offsets
        for k in range(1, probes + 1):
            zp = (z + a + (b - a) * k / (probes + 1)) % 1.0
            Ep = returns.escape_time(f, I, zp, ts, horizon)
            dE = horizon if returns.is_censored(Ep) else abs(Ep - E)
            worst = max(worst, dE)
            if dE > 1:
                viol += 1
                det.append((z, zp, E, Ep))
        done += 1
    return SampledCheck("escape_pullback", trials, viol, float(worst), det)


def fit_delta_star(f, I, eps, trials, seed, probes=33, horizon=100_000):
    """Empirical threshold for the pullback escape-time stability.

    Returns (Delta, check): every sampled z with d(f(z), z) > Delta eps
    satisfied |E(z') - E(z)| <= 1 for all probes.  Delta is the largest
    d(f(z), z) / eps over the violating samples, 0 if there are none.
    """
    chk = escape_pullback_check(f, I, eps, trials, seed, probes, horizon)
    delta = 0.0
    for z, _, _, _ in chk.details:
        delta = max(delta, K.circle_dist(float(f.eval(z)), z) / eps)
    return delta, chk


def distortion_check(f, eps, lengths, trials, seed, max_len=0.05, n_max=2000, probes=33):
    """Per length h: C-hat(h) = max over samples of Dist / sum |f^i J|^alpha."""
    out = {}
    for j, h in enumerate(lengths):
        gen = numpy_generator(int(seed), STREAM_LEMMA, 10 + j)
        ratios = []
        for i in range(trials):
            x = float(gen.random())
            ts = sample_noise(eps, n_max, seed, STREAM_LEMMA + 200 + j, i)
            D, S, n = returns.distortion_sample(f, x, ts, h, max_len, n_max, probes)
            if n > 0 and S > 0:
                ratios.append(D / S)
        out[float(h)] = float(max(ratios)) if ratios else math.nan
    return out


def pliss_check(instances, seed, n_max=60):
    """Random Pliss instances; returns (failures, non-maximal answers)."""
    gen = numpy_generator(int(seed), STREAM_LEMMA, 3)
    fails = 0
    nonmax = 0
    for _ in range(instances):
        n = int(gen.integers(0, n_max))
        a = gen.exponential(1.0, n + 1) * (gen.random(n + 1) < 0.7)
        C = float(a.sum() / (n + 1) * (1.0 + gen.random()))
        if C == 0.0:
            C = 1.0
        k = returns.pliss_select(a, C)
        if not returns.pliss_valid(a, C, k):
            fails += 1
        if any(returns.pliss_valid(a, C, kk) for kk in range(k + 1, n + 1)):
            nonmax += 1
    return fails, nonmax


# --------------------------------------------------------------- dispatch


def run(config):
    """Rerun an experiment from its configuration."""
    f = config.map
    p = config.param
    e = config.eps[0]
    if config.experiment == "tail_escape":
        I = returns.build_I(f, e, p("radius", 0.1))
        return tail_escape(f, I, e, config.samples, config.horizon, config.seed, config.threads,
                           (p("window_lo", 16), p("window_hi")), p("points", 64), config)
    if config.experiment == "tail_mK":
        I = returns.build_I(f, e, p("radius", 0.1))
        return tail_mK(f, I, e, p("K"), config.samples, config.horizon, config.seed,
                       config.threads, p("tau"), p("probes", 33), p("alpha_bar"),
                       (p("window_lo", 16), p("window_hi")), p("points", 64), config)
    if config.experiment == "tail_mV":
        return tail_mV(f, p("delta", 0.05), e, config.samples, config.horizon, config.seed,
                       config.threads, p("tau"), p("lambda"), None, p("probes", 33),
                       p("alpha_bar"), (p("window_lo", 16), p("window_hi")), p("points", 64),
                       p("nice_horizon", 200), config)
    if config.experiment == "badset":
        Ns = p("N_list", (1,))
        Ns = Ns if isinstance(Ns, tuple) else (Ns,)
        return badset_decay(e, Ns, config.samples, config.horizon, config.seed, f.alpha,
                            range(1, p("n_max", 64) + 1), (p("fit_lo", 4), p("fit_hi", 64)),
                            config.threads, config)
    if config.experiment == "stability":
        return stability_sweep(f, config.eps, config.grid_N, p("tol", 1e-12),
                               p("max_iters", 400_000), bool(p("refine", 1)),
                               p("core_radius", 4e-5), bool(p("graded", 1)), config)
    if config.experiment == "birkhoff":
        return birkhoff_check(f, e, config.samples, config.seed,
                              transfer.default_grid(f, config.grid_N), None, config.horizon,
                              p("lanes", 16), p("batches", 64), config.threads,
                              p("tol", 1e-12), config)
    raise ConfigError(f"unknown experiment {config.experiment!r}")


EXPERIMENTS = ("tail_escape", "tail_mK", "tail_mV", "badset", "stability", "birkhoff")
