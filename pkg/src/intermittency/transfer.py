"""Ulam discretisation of the transfer operator, with and without noise.

Densities are piecewise constant on a partition of the circle.  The
deterministic Ulam matrix is built exactly from inverse images of cell
boundaries; additive uniform noise acts after the map as a circular
convolution, whose cell-to-cell matrix is also computed in closed form.  So
the annealed operator is ``P @ S``.
"""

from dataclasses import dataclass, field
import math
import struct

import numba as nb
import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from ._philox import numpy_generator
from .errors import BranchExplosion, GridMismatch, IntermittencyError, NotConverged
from .rds import NoiseSeq, orbit_points


# ------------------------------------------------------------------ grids


@dataclass(frozen=True, eq=False)
class Grid:
    """Partition of [0, 1) into cells [boundaries[i], boundaries[i+1])."""

    boundaries: np.ndarray = field(repr=False)
    grading: str = "uniform"
    ratio: float = 1.0
    min_width: float = 0.0

    def __post_init__(self):
        b = np.array(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("boundaries must run from 0 to 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("cells must have positive length")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def N(self):
        return self.boundaries.size - 1

    @property
    def widths(self):
        return np.diff(self.boundaries)

    @property
    def centers(self):
        b = self.boundaries
        return 0.5 * (b[:-1] + b[1:])

    def cell_of(self, x):
        i = np.searchsorted(self.boundaries, x, side="right") - 1
        return np.clip(i, 0, self.N - 1)

    def same_as(self, other):
        return self is other or (
            self.N == other.N and np.array_equal(self.boundaries, other.boundaries)
        )

    def __eq__(self, other):
        return isinstance(other, Grid) and self.same_as(other)

    @classmethod
    def uniform(cls, N):
        b = np.arange(N + 1, dtype=np.float64) / N
        b[-1] = 1.0
        return cls(b)

    @classmethod
    def graded(cls, anchors, N, ratio=0.9, min_width=1e-6):
        """Cells shrink geometrically (factor ``ratio``) toward each anchor point.

        The total number of cells is exactly N; away from the anchors cells
        are uniform.
        """
        if isinstance(anchors, (int, float)):
            anchors = [anchors]
        elif hasattr(anchors, "fixed_points_P0"):
            anchors = list(anchors.fixed_points_P0)
        pts = sorted({float(p) % 1.0 for p in anchors})
        if not pts:
            return cls.uniform(N)
        if not (0 < ratio < 1) or min_width <= 0:
            raise ValueError("need 0 < ratio < 1 and min_width > 0")
        h = 1.0 / N
        side = []
        w = min_width
        while w < h:
            side.append(w)
            w /= ratio
        side = np.array(side)
        # cut points: anchors and 0 (kept as a boundary)
        cuts = sorted(set(pts) | {0.0})
        graded_cells = 2 * len(pts) * side.size
        if graded_cells >= N:
            raise ValueError(f"N={N} too small for the requested grading")
        segs = []  # (start, end, graded_left, graded_right)
        for i, c in enumerate(cuts):
            e = cuts[i + 1] if i + 1 < len(cuts) else 1.0
            gl = c in pts
            gr = (e % 1.0) in pts
            segs.append((c, e, gl, gr))
        free = [(e - s) - side.sum() * (gl + gr) for s, e, gl, gr in segs]
        if min(free) <= 0:
            raise ValueError("anchors too close for the requested grading")
        M = N - graded_cells
        share = np.array(free) / sum(free) * M
        counts = np.floor(share).astype(int)
        for k in np.argsort(-(share - counts))[: M - counts.sum()]:
            counts[k] += 1
        if np.any(counts < 1):
            raise ValueError("grid too coarse for anchor layout")
        bounds = []
        for (s, e, gl, gr), cnt in zip(segs, counts):
            left = s + np.concatenate(([0.0], np.cumsum(side))) if gl else np.array([s])
            right = e - np.concatenate(([0.0], np.cumsum(side)))[::-1] if gr else np.array([e])
            mid = np.linspace(left[-1], right[0], cnt + 1)
            bounds.append(np.concatenate((left[:-1], mid[:-1], right[:-1])))
        b = np.concatenate(bounds + [np.array([1.0])])
        return cls(b, "graded", float(ratio), float(min_width))


def default_grid(f, N=4096, ratio=0.9, min_width=1e-6):
    """Grid graded toward the neutral fixed points of ``f`` (uniform if none)."""
    return Grid.graded(sorted({ns.p0 for ns in f.neutral_sides}), N, ratio, min_width)


# ---------------------------------------------------------------- density


@dataclass(frozen=True, eq=False)
class Density:
    """Piecewise-constant probability density on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.N,):
            raise GridMismatch(f"{v.size} values for a grid of {self.grid.N} cells")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_masses(cls, grid, masses, **kw):
        m = np.asarray(masses, dtype=np.float64)
        return cls(grid, m / grid.widths, **kw)

    @classmethod
    def uniform(cls, grid):
        return cls(grid, np.ones(grid.N))

    @property
    def masses(self):
        return self.values * self.grid.widths

    @property
    def total(self):
        return math.fsum(self.masses)

    def integrate(self, obs):
        """Integral of an observable with exact per-cell integrals."""
        b = self.grid.boundaries
        return math.fsum(self.values * obs.cell_integrals(b[:-1], b[1:]))

    def mass_near(self, points, radius):
        b = self.grid.boundaries
        tot = 0.0
        for p in points:
            for lo, hi in _arc_pieces(p - radius, p + radius):
                ov = np.clip(np.minimum(b[1:], hi) - np.maximum(b[:-1], lo), 0, None)
                tot += float(np.sum(ov * self.values))
        return tot


def _arc_pieces(lo, hi):
    """Split a lifted arc [lo, hi] (length <= 1) into pieces inside [0, 1]."""
    out = []
    for k in (-1, 0, 1):
        a = max(lo + k, 0.0)
        c = min(hi + k, 1.0)
        if c > a:
            out.append((a, c))
    return out


def _same_grid(a, b):
    if not a.grid.same_as(b.grid):
        raise GridMismatch("densities live on different grids")


def l1_distance(a, b):
    _same_grid(a, b)
    return math.fsum(np.abs(a.values - b.values) * a.grid.widths)


def tv_distance(a, b):
    return 0.5 * l1_distance(a, b)


def l1_distance_cross(a, b):
    """Exact L1 distance between densities on different grids (common refinement)."""
    u = np.union1d(a.grid.boundaries, b.grid.boundaries)
    mid = 0.5 * (u[:-1] + u[1:])
    va = a.values[a.grid.cell_of(mid)]
    vb = b.values[b.grid.cell_of(mid)]
    return math.fsum(np.abs(va - vb) * np.diff(u))


def l1_distance_excluding(a, b, points, radius):
    """L1 distance restricted to cells farther than ``radius`` from ``points``."""
    _same_grid(a, b)
    g = a.grid
    c = g.centers
    keep = np.ones(g.N, dtype=bool)
    for p in points:
        d = np.abs(c - p)
        d = np.minimum(d, 1.0 - d)
        keep &= d > radius + 0.5 * g.widths
    return math.fsum((np.abs(a.values - b.values) * g.widths)[keep])


# ----------------------------------------------------------- Ulam matrix


@dataclass(frozen=True, eq=False)
class UlamMatrix:
    """Row-stochastic transition matrix between grid cells."""

    matrix: sp.csr_matrix = field(repr=False)
    grid: Grid
    eps: float = 0.0

    @property
    def N(self):
        return self.grid.N

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def apply(self, density):
        """Push a density one step forward."""
        _same_grid(density, self)
        return Density.from_masses(self.grid, self.matrix.T @ density.masses)


@nb.njit(cache=True)
def _ulam_segments(tab, bnds):
    """Segments [u, v) of [0, 1) lying in one source cell and mapping into one
    target cell.  Returns (src, dst, length) arrays."""
    N = bnds.size - 1
    d = K.degree(tab)
    F0 = tab[0, K.COL_FA]
    # lifted target boundaries inside (F0, F0 + d)
    kmin = math.floor(F0)
    nmax = (int(d) + 2) * (N + 1)
    pre = np.empty(nmax)
    tgt = np.empty(nmax, dtype=np.int64)
    cnt = 0
    for k in range(int(kmin), int(kmin) + int(d) + 2):
        for j in range(N):
            V = bnds[j] + k
            if V <= F0 or V >= F0 + d:
                continue
            X, st = K.lift_inverse(tab, V)
            if st != 0:
                return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), 1
            pre[cnt] = X
            tgt[cnt] = j
            cnt += 1
    # initial target cell: the one containing F(0) mod 1
    y0 = K.wrap(F0)
    lo = 0
    hi = N - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if bnds[mid] <= y0:
            lo = mid
        else:
            hi = mid - 1
    cur_t = lo
    size = cnt + N + 2
    src = np.empty(size, np.int64)
    dst = np.empty(size, np.int64)
    ln = np.empty(size)
    m = 0
    i = 0  # source cell
    p = 0  # next preimage
    u = 0.0
    while i < N:
        nb_ = bnds[i + 1]
        if p < cnt and pre[p] < nb_:
            v = pre[p]
            if v > u:
                src[m] = i
                dst[m] = cur_t
                ln[m] = v - u
                m += 1
                u = v
            cur_t = tgt[p]
            p += 1
        else:
            if nb_ > u:
                src[m] = i
                dst[m] = cur_t
                ln[m] = nb_ - u
                m += 1
            u = nb_
            i += 1
    return src[:m], dst[:m], ln[:m], 0


def _normalised_csr(rows, cols, vals, N):
    if rows.size > 1 and np.any(rows[1:] < rows[:-1]):
        o = np.argsort(rows, kind="stable")
        rows, cols, vals = rows[o], cols[o], vals[o]
    indptr = np.zeros(N + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=N), out=indptr[1:])
    A = sp.csr_matrix((vals, cols, indptr), shape=(N, N))
    A.sum_duplicates()  # also sorts the column indices
    s = np.add.reduceat(A.data, A.indptr[:-1]) if A.nnz else np.zeros(N)
    A.data /= np.repeat(s, np.diff(A.indptr))
    return A


def ulam_build(f, grid):
    """Exact Ulam matrix: (i, j) = |cell_i intersected with f^-1(cell_j)| / |cell_i|."""
    src, dst, ln, st = _ulam_segments(f.table, grid.boundaries)
    if st:
        from .errors import RootFindingFailed
        raise RootFindingFailed(-1, math.nan)
    return UlamMatrix(_normalised_csr(src, dst, ln, grid.N), grid, 0.0)


@nb.njit(cache=True)
def _k2(s, eps):
    # second antiderivative of the indicator of [-eps, eps]
    if s <= -eps:
        return 0.0
    if s <= eps:
        r = s + eps
        return 0.5 * r * r
    return 2.0 * eps * s


@nb.njit(cache=True)
def _overlap(A, B, L, R, eps):
    """int_A^B |[y - eps, y + eps] intersected with [L, R]| dy, in coordinates relative to A."""
    b = B - A
    l = L - A
    r = R - A
    return _k2(b - l, eps) - _k2(-l, eps) - _k2(b - r, eps) + _k2(-r, eps)


@nb.njit(cache=True)
def _smooth_pass(bnds, eps, rows, cols, vals, fill):
    # one sweep over (source, target) cell pairs; counts only unless ``fill``
    N = bnds.size - 1
    m = 0
    for j in range(N):
        A = bnds[j]
        B = bnds[j + 1]
        for k in (-1, 0, 1):
            lo = A - eps - k
            hi = B + eps - k
            if hi <= 0.0 or lo >= 1.0:
                continue
            l0 = np.searchsorted(bnds, max(lo, 0.0), side="right") - 1
            if l0 < 0:
                l0 = 0
            l = l0
            while l < N and bnds[l] < hi:
                v = _overlap(A, B, bnds[l] + k, bnds[l + 1] + k, eps)
                if v > 0.0:
                    if fill:
                        rows[m] = j
                        cols[m] = l
                        vals[m] = v
                    m += 1
                l += 1
    return m


@nb.njit(cache=True)
def _smooth_entries(bnds, eps):
    e = np.empty(0, np.int64)
    m = _smooth_pass(bnds, eps, e, e, np.empty(0), False)
    rows = np.empty(m, np.int64)
    cols = np.empty(m, np.int64)
    vals = np.empty(m)
    _smooth_pass(bnds, eps, rows, cols, vals, True)
    return rows, cols, vals


def smoothing_matrix(grid, eps):
    """Cell-to-cell matrix of y -> y + t, t uniform on [-eps, eps], for uniform mass per cell."""
    if not (0 < eps <= 0.25):
        raise ValueError("eps must lie in (0, 0.25]")
    r, c, v = _smooth_entries(grid.boundaries, float(eps))
    return _normalised_csr(r, c, v, grid.N)


def smooth_uniform(obj, eps):
    """Convolve with the uniform kernel on [-eps, eps] and project back on the grid.

    Accepts a :class:`Density` or an :class:`UlamMatrix` (composed on the right).
    """
    if eps == 0:
        return obj
    S = smoothing_matrix(obj.grid, eps)
    if isinstance(obj, Density):
        return Density.from_masses(obj.grid, S.T @ obj.masses)
    M = (obj.matrix @ S).tocsr()
    M.sort_indices()
    s = np.asarray(M.sum(axis=1)).ravel()
    M = (sp.diags(1.0 / s) @ M).tocsr()
    M.sort_indices()
    return UlamMatrix(M, obj.grid, float(eps))


def annealed_build(f, grid, eps):
    """One-step annealed operator: deterministic Ulam step followed by smoothing."""
    return smooth_uniform(ulam_build(f, grid), eps)


def stationary(matrix, tol=1e-12, max_iters=200_000, init=None):
    """Power iteration on mass vectors until ||p A - p||_1 <= tol.

    Raises
    ------
    NotConverged
    """
    g = matrix.grid
    AT = matrix.matrix.T.tocsr()
    if init is None:
        p = g.widths.copy()
    else:
        p = np.asarray(init.masses if isinstance(init, Density) else init, dtype=np.float64)
        p = p / p.sum()
    res = math.inf
    for it in range(1, max_iters + 1):
        q = AT @ p
        q /= q.sum()
        res = float(np.abs(q - p).sum())
        p = q
        if res <= tol:
            return Density.from_masses(g, p, iterations=it, residual=res)
    raise NotConverged(max_iters, res)


def invariant_density(f, grid, tol=1e-12, max_iters=200_000):
    return stationary(ulam_build(f, grid), tol, max_iters)


# ----------------------------------------------------------- pushforward


@nb.njit(cache=True)
def _lift_orbit(tab, X, ts, n):
    for j in range(n):
        X = K.lift(tab, X) + ts[j]
    return X


@nb.njit(cache=True)
def _lift_pull(tab, Y, ts, n):
    for j in range(n - 1, -1, -1):
        Y, st = K.lift_inverse(tab, Y - ts[j])
        if st != 0:
            return Y, 1
    return Y, 0


@nb.njit(cache=True)
def _push_exact(tab, bnds, X0, X1, ts, n, out):
    N = bnds.size - 1
    Y0 = _lift_orbit(tab, X0, ts, n)
    Y1 = _lift_orbit(tab, X1, ts, n)
    k = math.floor(Y0)
    # walk lifted target boundaries between Y0 and Y1
    j = np.searchsorted(bnds, Y0 - k, side="right") - 1
    if j >= N:
        j = N - 1
    prevX = X0
    while True:
        nxt_j = j + 1
        nk = k
        if nxt_j == N:
            nxt_j = 0
            nk = k + 1
        V = bnds[nxt_j] + nk
        if V >= Y1:
            out[j] += X1 - prevX
            return 0
        X, st = _lift_pull(tab, V, ts, n)
        if st != 0:
            return 1
        if X > prevX:
            out[j] += X - prevX
            prevX = X
        j = nxt_j
        k = nk


def pushforward_density(f, J, n, ts, grid, mode="exact", samples=10**6, seed=0,
                        max_strings=4096):
    """Cell averages of (f_t^n)_* of normalised Lebesgue measure on J = (a, b).

    ``J`` is given by lifted endpoints ``a < b`` with ``b - a <= 1``.  Exact
    mode pulls every cell boundary back branch by branch; Monte Carlo mode
    histograms ``samples`` uniform points and also returns per-cell standard
    errors of the density.
    """
    v = ts.values if isinstance(ts, NoiseSeq) else np.asarray(ts, dtype=np.float64)
    if v.size < n:
        raise IntermittencyError("noise sequence shorter than n")
    a, b = float(J[0]), float(J[1])
    if not (b > a and b - a <= 1.0):
        raise ValueError("J must be an arc of length in (0, 1]")
    v = np.ascontiguousarray(v[:n])
    if mode == "exact":
        if f.degree ** n > max_strings:
            raise BranchExplosion(n, f.degree ** n)
        out = np.zeros(grid.N)
        if _push_exact(f.table, grid.boundaries, a, b, v, n, out):
            from .errors import RootFindingFailed
            raise RootFindingFailed(-1, math.nan)
        return Density.from_masses(grid, out / (b - a))
    if mode != "mc":
        raise ValueError("mode must be 'exact' or 'mc'")
    u = numpy_generator(int(seed), 0).random(int(samples))
    xs = (a + (b - a) * u) % 1.0
    ys = _push_many(f.table, xs, v)
    counts = np.bincount(grid.cell_of(ys), minlength=grid.N).astype(np.float64)
    p = counts / samples
    se = np.sqrt(p * (1 - p) / samples) / grid.widths
    return Density.from_masses(grid, p), se


@nb.njit(cache=True)
def _push_many(tab, xs, ts):
    out = np.empty(xs.size)
    for i in range(xs.size):
        x = xs[i]
        if x >= 1.0:
            x = 0.0
        for j in range(ts.size):
            x = K.step(tab, x, ts[j])
        out[i] = x
    return out


# ------------------------------------------------------------ observables


class Observable:
    """Bounded observable with exact cell integrals and a grid-error bound."""

    name = "observable"
    sup_norm = 1.0

    def __call__(self, x):
        raise NotImplementedError

    def cell_integrals(self, lo, hi):
        raise NotImplementedError

    def grid_bound(self, density):
        raise NotImplementedError


class Constant(Observable):
    name = "one"

    def __call__(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def cell_integrals(self, lo, hi):
        return hi - lo

    def grid_bound(self, density):
        return 0.0


class Fourier(Observable):
    """cos(2 pi k x) or sin(2 pi k x)."""

    def __init__(self, kind="cos", k=1):
        if kind not in ("cos", "sin"):
            raise ValueError(kind)
        self.kind = kind
        self.k = int(k)
        self.name = f"{kind}{2 * self.k}pix"

    def __call__(self, x):
        w = 2 * np.pi * self.k * np.asarray(x)
        return np.cos(w) if self.kind == "cos" else np.sin(w)

    def cell_integrals(self, lo, hi):
        w = 2 * np.pi * self.k
        if self.kind == "cos":
            return (np.sin(w * hi) - np.sin(w * lo)) / w
        return (np.cos(w * lo) - np.cos(w * hi)) / w

    def grid_bound(self, density):
        # sup |phi'| times the largest cell width
        return 2 * np.pi * self.k * float(density.grid.widths.max())


class BallIndicator(Observable):
    """Indicator of the union of arcs B_r(p)."""

    def __init__(self, points, radius):
        self.points = tuple(float(p) for p in points)
        self.radius = float(radius)
        self.name = f"ind_B{radius:g}"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p in self.points:
            d = np.abs(x - p)
            out[np.minimum(d, 1 - d) < self.radius] = 1.0
        return out

    def cell_integrals(self, lo, hi):
        out = np.zeros_like(lo)
        for p in self.points:
            for a, b in _arc_pieces(p - self.radius, p + self.radius):
                out += np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0, None)
        return out

    def grid_bound(self, density):
        # density resolution at the ball edges: mass of the cells cut by the edges
        g = density.grid
        tot = 0.0
        for p in self.points:
            for e in (p - self.radius, p + self.radius):
                i = int(g.cell_of(e % 1.0))
                tot += density.values[i] * g.widths[i]
        return tot


def default_observables(f, radius=0.1):
    return [Fourier("cos"), Fourier("sin"), BallIndicator(f.fixed_points_P0, radius)]


# ------------------------------------------------------------ serialisation

_MAGIC = b"ULAM"
_VERSION = 1
_HEAD = struct.Struct("<4sIIQdIdd")  # magic, version, kind, N, eps, graded, ratio, min_width


def _grid_header(grid, kind, eps):
    return _HEAD.pack(_MAGIC, _VERSION, kind, grid.N, float(eps),
                      int(grid.grading == "graded"), grid.ratio, grid.min_width)


def write_binary(path, obj):
    """Compact little-endian format; header = magic, version, kind (0 matrix,
    1 density), N, eps, graded flag, ratio, min width; then the N+1 grid
    boundaries; then CSR arrays (matrix) or N density values."""
    with open(path, "wb") as fh:
        if isinstance(obj, UlamMatrix):
            M = obj.matrix.tocsr()
            fh.write(_grid_header(obj.grid, 0, obj.eps))
            fh.write(obj.grid.boundaries.astype("<f8").tobytes())
            fh.write(struct.pack("<Q", M.nnz))
            fh.write(M.indptr.astype("<i8").tobytes())
            fh.write(M.indices.astype("<i8").tobytes())
            fh.write(M.data.astype("<f8").tobytes())
        elif isinstance(obj, Density):
            fh.write(_grid_header(obj.grid, 1, 0.0))
            fh.write(obj.grid.boundaries.astype("<f8").tobytes())
            fh.write(obj.values.astype("<f8").tobytes())
        else:
            raise TypeError("expected UlamMatrix or Density")


def read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise IntermittencyError(f"{path}: truncated header")
    magic, ver, kind, N, eps, graded, ratio, mw = _HEAD.unpack_from(raw, 0)
    if magic != _MAGIC or ver != _VERSION:
        raise IntermittencyError(f"{path}: not an Ulam file (version {ver})")
    off = _HEAD.size
    b = np.frombuffer(raw, "<f8", N + 1, off).astype(np.float64)
    off += 8 * (N + 1)
    grid = Grid(b, "graded" if graded else "uniform", ratio, mw)
    if kind == 1:
        return Density(grid, np.frombuffer(raw, "<f8", N, off).astype(np.float64))
    (nnz,) = struct.unpack_from("<Q", raw, off)
    off += 8
    indptr = np.frombuffer(raw, "<i8", N + 1, off)
    off += 8 * (N + 1)
    indices = np.frombuffer(raw, "<i8", nnz, off)
    off += 8 * nnz
    data = np.frombuffer(raw, "<f8", nnz, off).astype(np.float64)
    M = sp.csr_matrix((data, indices.astype(np.int64), indptr.astype(np.int64)), shape=(N, N))
    return UlamMatrix(M, grid, eps)


def density_csv(density):
    """Rows ``index,left,right,value``."""
    b = density.grid.boundaries
    lines = ["index,left,right,value"]
    for i, v in enumerate(density.values):
        lines.append(f"{i},{float(b[i])!r},{float(b[i + 1])!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def matrix_csv(matrix):
    """Rows ``row,col,value`` in CSR order."""
    M = matrix.matrix.tocoo()
    order = np.lexsort((M.col, M.row))
    lines = ["row,col,value"]
    for k in order:
        lines.append(f"{int(M.row[k])},{int(M.col[k])},{float(M.data[k])!r}")
    return "\n".join(lines) + "\n"
