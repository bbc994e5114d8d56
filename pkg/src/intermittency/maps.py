"""Circle covering maps with neutral fixed points.

A map is stored as a table of smooth increasing branches, each of the form

    g(x) = k + s*x + side*c*|x - q|**(1 + beta)        (a <= x < b)

which covers the Pomeau-Manneville map ``x + x**(1+alpha) mod 1``, the
Liverani-Saussol-Vaienti map, affine expanding maps, and custom maps with a
one-sided neutral point.  Derivatives are always one-sided and explicit; the
value at a branch endpoint is the right limit.
"""

from dataclasses import dataclass, field
import math

import numba as nb
import numpy as np

from . import _kernels as K
from .errors import MapDefinitionError, RootFindingFailed, YNotInBranchImage

KINDS = ("PomeauManneville", "LSV", "CustomPiecewise")
_FIX_TOL = 1e-12
_GLUE_TOL = 1e-9


@dataclass(frozen=True)
class NeutralSide:
    """One side of a fixed point where the derivative tends to 1.

    Near ``p0`` on this side, ``Df(x) - 1 ~ A * d(x, p0)**alpha``.
    """

    p0: float
    side: str  # "right" or "left"
    alpha: float
    A: float
    branch: int


@dataclass(frozen=True, eq=False)
class MapSpec:
    """Immutable description of a circle covering map.

    Build with :func:`pm`, :func:`lsv`, :func:`doubling`, :func:`custom` or
    :func:`load_map` rather than directly.
    """

    kind: str
    alpha: float
    table: np.ndarray = field(repr=False)
    partition_P: tuple
    fixed_points_P0: tuple
    neutral_sides: tuple
    P_star: tuple
    degree: int
    name: str = ""
    glue_error: float = 0.0

    @property
    def n_branches(self):
        return self.table.shape[0]

    def branch_domain(self, b):
        return float(self.table[b, K.COL_A]), float(self.table[b, K.COL_B])

    def branch_of(self, x):
        return int(K.branch_right(self.table, float(x)))

    def eval(self, x):
        return eval_map(self, x)

    def deriv(self, x, side="right"):
        return deriv(self, x, side)

    def inverse(self, b, y):
        return inverse(self, b, y)

    def lift(self, X):
        return K.lift(self.table, float(X))

    def distance_to_P0(self, x):
        if not self.fixed_points_P0:
            return math.inf
        return min(K.circle_dist(x, p) for p in self.fixed_points_P0)


@nb.njit(cache=True)
def _eval_many(tab, xs, out):
    for j in range(xs.shape[0]):
        out[j] = K.f_eval(tab, xs[j])
    return out


@nb.njit(cache=True)
def _deriv_many(tab, xs, right, out):
    for j in range(xs.shape[0]):
        if right:
            out[j] = K.deriv_right(tab, xs[j])
        else:
            out[j] = K.deriv_left(tab, xs[j])
    return out


def _check_point(x):
    x = float(x)
    if not (0.0 <= x < 1.0):
        raise ValueError(f"circle point must lie in [0, 1), got {x!r}")
    return x


def eval_map(f, x):
    """f(x) mod 1; right limits at branch endpoints.  Accepts arrays."""
    if np.ndim(x) == 0:
        return K.f_eval(f.table, _check_point(x))
    xs = np.ascontiguousarray(x, dtype=np.float64)
    if xs.size and (xs.min() < 0.0 or xs.max() >= 1.0):
        raise ValueError("circle points must lie in [0, 1)")
    return _eval_many(f.table, xs.ravel(), np.empty(xs.size)).reshape(xs.shape)


def deriv(f, x, side="right"):
    """One-sided derivative Df(x^+) or Df(x^-).  Accepts arrays."""
    if side not in ("right", "left"):
        raise ValueError("side must be 'right' or 'left'")
    right = side == "right"
    if np.ndim(x) == 0:
        x = _check_point(x)
        return K.deriv_right(f.table, x) if right else K.deriv_left(f.table, x)
    xs = np.ascontiguousarray(x, dtype=np.float64)
    return _deriv_many(f.table, xs.ravel(), right, np.empty(xs.size)).reshape(xs.shape)


def inverse(f, b, y):
    """The point of branch ``b``'s domain that maps to the circle point ``y``.

    Raises
    ------
    YNotInBranchImage
        If ``y`` is not in the closure of the branch image.
    RootFindingFailed
        If the safeguarded Newton iteration does not reach 1e-13.
    """
    tab = f.table
    if not (0 <= b < tab.shape[0]):
        raise IndexError(f"branch {b} out of range")
    y = float(y)
    ga = K.g_val(tab, b, tab[b, K.COL_A])
    gb = K.g_val(tab, b, tab[b, K.COL_B])
    tol = 1e-13
    k = math.ceil(ga - y - tol)
    yl = y + k
    if yl > gb + tol:
        raise YNotInBranchImage(b, y)
    x, status = K.solve_branch(tab, b, yl)
    if status != 0:
        raise RootFindingFailed(b, y)
    return x


# ---------------------------------------------------------------- building


def _pack(rows):
    rows = sorted((tuple(float(v) for v in r) for r in rows), key=lambda r: r[0])
    if not rows:
        raise MapDefinitionError("a map needs at least one branch")
    tab = np.zeros((len(rows), K.NCOL))
    tab[:, :8] = np.array(rows)
    if abs(tab[0, K.COL_A]) > 0 or abs(tab[-1, K.COL_B] - 1.0) > 0:
        raise MapDefinitionError("branch domains must start at 0 and end at 1")
    for i in range(len(rows) - 1):
        if tab[i, K.COL_B] != tab[i + 1, K.COL_A]:
            raise MapDefinitionError(
                f"branch domains must be contiguous: gap or overlap at branch {i}"
            )
    if np.any(tab[:, K.COL_B] <= tab[:, K.COL_A]):
        raise MapDefinitionError("every branch domain needs positive length")
    if np.any(np.abs(tab[:, K.COL_SIDE]) != 1.0):
        raise MapDefinitionError("branch side must be +1 or -1")
    if np.any(tab[:, K.COL_BETA] < 0) or np.any(tab[:, K.COL_C] < 0):
        raise MapDefinitionError("branch exponent and power coefficient must be >= 0")
    # glue the branch lifts into one continuous lift
    glue = 0.0
    for i in range(len(rows)):
        if i == 0:
            shift = 0.0
        else:
            prev_end = K.g_val(tab, i - 1, tab[i - 1, K.COL_B]) + tab[i - 1, K.COL_SHIFT]
            jump = prev_end - K.g_val(tab, i, tab[i, K.COL_A])
            shift = float(round(jump))
            glue = max(glue, abs(jump - shift))
        tab[i, K.COL_SHIFT] = shift
        tab[i, K.COL_FA] = K.g_val(tab, i, tab[i, K.COL_A]) + shift
        tab[i, K.COL_FB] = K.g_val(tab, i, tab[i, K.COL_B]) + shift
    span = tab[-1, K.COL_FB] - tab[0, K.COL_FA]
    glue = max(glue, abs(span - round(span)))
    return tab, glue, int(round(span))


def _fixed_points(tab, partition):
    pts = []
    for p in partition:
        x = p
        for _ in range(16):
            if K.circle_dist(K.f_eval(tab, x), x) <= _FIX_TOL:
                break
            x = K.f_eval(tab, x)
        else:
            continue
        if not any(K.circle_dist(x, q) <= _FIX_TOL for q in pts):
            pts.append(x)
    return tuple(sorted(pts))


def _neutral_sides(tab, p0s):
    out = []
    for p in p0s:
        i = K.branch_right(tab, p)
        if (tab[i, K.COL_S] == 1.0 and tab[i, K.COL_C] > 0 and tab[i, K.COL_SIDE] > 0
                and K.circle_dist(tab[i, K.COL_Q], p) == 0.0):
            beta = tab[i, K.COL_BETA]
            A = float(tab[i, K.COL_C] * (1 + beta))
            out.append(NeutralSide(float(p), "right", float(beta), A, int(i)))
        j = K.branch_left(tab, p)
        if (tab[j, K.COL_S] == 1.0 and tab[j, K.COL_C] > 0 and tab[j, K.COL_SIDE] < 0
                and K.circle_dist(tab[j, K.COL_Q], p) == 0.0):
            beta = tab[j, K.COL_BETA]
            A = float(tab[j, K.COL_C] * (1 + beta))
            out.append(NeutralSide(float(p), "left", float(beta), A, int(j)))
    return tuple(out)


def _build(kind, rows, alpha=None, name=""):
    if kind not in KINDS:
        raise MapDefinitionError(f"unknown map kind {kind!r}")
    tab, glue, d = _pack(rows)
    tab.setflags(write=False)
    partition = tuple(float(a) for a in tab[:, K.COL_A])
    p0s = _fixed_points(tab, partition)
    sides = _neutral_sides(tab, p0s)
    if alpha is None:
        if not sides:
            raise MapDefinitionError("alpha must be given for a map without neutral sides")
        alpha = max(s.alpha for s in sides)
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise MapDefinitionError(f"alpha must lie in (0, 1), got {alpha}")
    pstar = tuple(
        p for p in partition if K.deriv_left(tab, p) > K.deriv_right(tab, p)
    )
    return MapSpec(kind, alpha, tab, partition, p0s, sides, pstar, d, name, glue)


def pm(alpha=0.5):
    """Pomeau-Manneville map x + x**(1+alpha) mod 1 (degree 2)."""
    a = float(alpha)
    if not (0.0 < a < 1.0):
        raise MapDefinitionError(f"alpha must lie in (0, 1), got {alpha}")
    # x* with x* + x***(1+a) = 1 splits the two laps
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid + mid ** (1 + a) < 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17:
            break
    xs = hi if hi + hi ** (1 + a) - 1.0 <= 1.0 - lo - lo ** (1 + a) else lo
    rows = [
        (0.0, xs, 0.0, 1.0, 1.0, 0.0, a, 1.0),
        (xs, 1.0, -1.0, 1.0, 1.0, 0.0, a, 1.0),
    ]
    return _build("PomeauManneville", rows, a, f"pm(alpha={a})")


def lsv(alpha=0.5):
    """Liverani-Saussol-Vaienti map: x(1 + 2**alpha x**alpha) on [0, 1/2), 2x - 1 after."""
    a = float(alpha)
    if not (0.0 < a < 1.0):
        raise MapDefinitionError(f"alpha must lie in (0, 1), got {alpha}")
    rows = [
        (0.0, 0.5, 0.0, 1.0, 2.0 ** a, 0.0, a, 1.0),
        (0.5, 1.0, -1.0, 2.0, 0.0, 0.0, 0.0, 1.0),
    ]
    return _build("LSV", rows, a, f"lsv(alpha={a})")


def doubling(alpha=0.5):
    """x -> 2x mod 1.  ``alpha`` only sets the exponent used by distortion sums."""
    rows = [
        (0.0, 0.5, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0),
        (0.5, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0),
    ]
    return _build("CustomPiecewise", rows, alpha, "doubling")


def custom(branches, alpha=None, name="custom"):
    """Map from rows ``(a, b, k, s, c, q, beta, side)``; see module docstring."""
    rows = [tuple(r) for r in branches]
    if any(len(r) != 8 for r in rows):
        raise MapDefinitionError("each branch row needs 8 numbers: a b k s c q beta side")
    return _build("CustomPiecewise", rows, alpha, name)


_KIND_ALIASES = {
    "pm": "pm", "pomeaumanneville": "pm", "pomeau-manneville": "pm",
    "lsv": "lsv", "doubling": "doubling",
    "custom": "custom", "custompiecewise": "custom",
}


def parse_map_text(text):
    """Parse the key=value map format.

    ::

        kind = pm            # pm | lsv | doubling | custom
        alpha = 0.5
        branch = 0 0.5 0 2 0 0 0 1   # custom only, repeated
    """
    kind = None
    alpha = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MapDefinitionError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        try:
            if key == "kind":
                kind = _KIND_ALIASES.get(val.lower())
                if kind is None:
                    raise MapDefinitionError(f"line {lineno}: unknown kind {val!r}")
            elif key == "alpha":
                alpha = float(val)
            elif key == "branch":
                nums = [float(v) for v in val.replace(",", " ").split()]
                if len(nums) != 8:
                    raise MapDefinitionError(
                        f"line {lineno}: branch needs 8 numbers, got {len(nums)}"
                    )
                rows.append(nums)
            else:
                raise MapDefinitionError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise MapDefinitionError(f"line {lineno}: {exc}") from None
    if kind is None:
        raise MapDefinitionError("map file has no kind")
    if kind == "custom":
        return custom(rows, alpha)
    if rows:
        raise MapDefinitionError("branch rows are only allowed for kind = custom")
    if kind == "doubling":
        return doubling(0.5 if alpha is None else alpha)
    if alpha is None:
        raise MapDefinitionError("map file needs alpha")
    return pm(alpha) if kind == "pm" else lsv(alpha)


def load_map(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MapDefinitionError(f"cannot read map file {path}: {exc}") from None
    return parse_map_text(text)


def map_to_text(f):
    """Inverse of :func:`parse_map_text` (always written as a custom map)."""
    lines = ["kind = custom", f"alpha = {f.alpha!r}"]
    for r in f.table[:, :8]:
        lines.append("branch = " + " ".join(repr(float(v)) for v in r))
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- validation


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    witness: float = math.nan


@dataclass
class NeutralRatios:
    side: NeutralSide
    offsets: np.ndarray
    ratios: np.ndarray

    @property
    def deviation(self):
        return np.abs(self.ratios - self.side.A)


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_class`; ``ok`` is true iff every check passed."""

    map_name: str
    checks: list
    neutral: list

    @property
    def ok(self):
        return all(c.ok for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.ok]

    def lines(self):
        out = [f"map: {self.map_name}"]
        for c in self.checks:
            w = "" if math.isnan(c.witness) else f" witness={float(c.witness)!r}"
            out.append(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}{w}")
        for nr in self.neutral:
            s = nr.side
            out.append(
                f"neutral p0={s.p0!r} side={s.side} alpha={s.alpha} A={s.A!r}"
            )
            for h, r in zip(nr.offsets, nr.ratios):
                out.append(f"  h={h:.3e} ratio={float(r)!r} dev={abs(r - s.A):.3e}")
        out.append("result: " + ("valid" if self.ok else "INVALID"))
        return out


def validate_class(f, offsets=None, grid=20001, tol_A=1e-4):
    """Numerical membership check for the neutral-expanding circle map class.

    Parameters
    ----------
    f : MapSpec
    offsets : array_like, optional
        Decreasing offsets h for the neutral ratios ``(Df(p0 +- h) - 1)/h**alpha``.
        Defaults to 1e-2, 1e-3, ..., 1e-6.
    grid : int
        Number of equispaced sample points for the monotonicity and expansion
        checks (points within 1e-3 of a fixed point are probed separately).
    tol_A : float
        Allowed deviation of the ratio at the smallest offset from ``A``.
    """
    if offsets is None:
        offsets = 10.0 ** -np.arange(2, 7)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.size == 0 or np.any(offsets <= 0) or np.any(np.diff(offsets) >= 0):
        raise ValueError("offsets must be positive and strictly decreasing")
    tab = f.table
    checks = []

    # orientation: every branch strictly increasing
    bad = math.nan
    for i in range(tab.shape[0]):
        a, b = tab[i, K.COL_A], tab[i, K.COL_B]
        xs = np.linspace(a, b, 257)
        ds = np.array([K.g_der(tab, i, x) for x in xs])
        if np.any(ds <= 0) or K.g_val(tab, i, b) <= K.g_val(tab, i, a):
            bad = float(xs[np.argmin(ds)])
            break
    checks.append(Check("orientation", math.isnan(bad),
                        "branches strictly increasing" if math.isnan(bad)
                        else "decreasing branch found", bad))

    checks.append(Check(
        "covering",
        f.glue_error <= _GLUE_TOL and f.degree >= 1,
        f"degree {f.degree}, lift continuity defect {f.glue_error:.2e}",
    ))
    checks.append(Check(
        "fixed_points",
        len(f.fixed_points_P0) > 0,
        f"P0 = {list(f.fixed_points_P0)}",
    ))

    # expansion off P0 on an equispaced grid
    xs = np.linspace(0.0, 1.0, grid, endpoint=False)
    far = np.array([f.distance_to_P0(x) >= 1e-3 for x in xs])
    dr = deriv(f, xs[far], "right")
    dl = deriv(f, xs[far], "left")
    worst = int(np.argmin(dr)) if dr.size else -1
    ok = bool(dr.size == 0 or dr[worst] > 1.0)
    checks.append(Check(
        "expanding",
        ok,
        f"min Df(x+) = {dr[worst]:.6g} at distance >= 1e-3 from P0" if dr.size else "no samples",
        math.nan if ok else float(xs[far][worst]),
    ))
    lr = np.nonzero(dl < dr * (1 - 1e-12))[0]
    checks.append(Check(
        "one_sided_order",
        lr.size == 0,
        "Df(x-) >= Df(x+) on samples" if lr.size == 0 else "Df(x-) < Df(x+)",
        math.nan if lr.size == 0 else float(xs[far][lr[0]]),
    ))

    # behaviour at and near the fixed points
    neutral = []
    for p in f.fixed_points_P0:
        r = K.deriv_right(tab, p)
        lft = K.deriv_left(tab, p)
        good = r >= 1.0 and lft >= r
        checks.append(Check(
            f"fixed_point_derivs@{p!r}", good,
            f"Df(p0+) = {r!r}, Df(p0-) = {lft!r}", math.nan if good else p,
        ))
        near = []
        for h in np.geomspace(1e-3, 1e-12, 40):
            for x in (p + h, p - h):
                x = x - math.floor(x)
                near.append((x, K.deriv_right(tab, x)))
        xmin, dmin = min(near, key=lambda t: t[1])
        checks.append(Check(
            f"expanding_near@{p!r}", dmin > 1.0,
            f"min Df(x+) = {dmin!r} for 1e-12 <= d(x, p0) <= 1e-3",
            math.nan if dmin > 1.0 else xmin,
        ))
    for s in f.neutral_sides:
        sgn = 1.0 if s.side == "right" else -1.0
        ratios = []
        for h in offsets:
            x = s.p0 + sgn * h
            x = x - math.floor(x)
            ratios.append((K.deriv_right(tab, x) - 1.0) / h ** s.alpha)
        nr = NeutralRatios(s, offsets.copy(), np.array(ratios))
        neutral.append(nr)
        dev = float(nr.deviation[-1])
        checks.append(Check(
            f"neutral_ratio@{s.p0!r}{'+' if sgn > 0 else '-'}",
            dev <= tol_A,
            f"ratio at h={offsets[-1]:.1e} deviates from A={s.A!r} by {dev:.2e}",
        ))
    return ValidationReport(f.name or f.kind, checks, neutral)
