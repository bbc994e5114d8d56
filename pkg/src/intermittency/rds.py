"""Random dynamics under additive uniform noise: f_t(x) = f(x) + t mod 1."""

from dataclasses import dataclass, field
import math
import struct

import numba as nb
import numpy as np

from . import _kernels as K
from ._philox import numpy_generator
from .errors import IntermittencyError, PreconditionViolated

EPS_MAX = 0.25


@dataclass(frozen=True)
class NoiseModel:
    """Uniform noise on [-epsilon, epsilon].

    ``epsilon = 0`` is accepted as the deterministic limit.
    """

    epsilon: float

    def __post_init__(self):
        e = float(self.epsilon)
        if not (0.0 <= e <= EPS_MAX):
            raise PreconditionViolated(f"epsilon must lie in [0, {EPS_MAX}], got {e}")
        object.__setattr__(self, "epsilon", e)


@dataclass(frozen=True, eq=False)
class NoiseSeq:
    """A finite noise realization t_0, ..., t_{n-1} with |t_k| <= epsilon."""

    values: np.ndarray
    epsilon: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        e = float(self.epsilon)
        if v.size and np.max(np.abs(v)) > e:
            raise PreconditionViolated(
                f"noise value {v[np.argmax(np.abs(v))]!r} exceeds epsilon={e}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "epsilon", e)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]

    def __eq__(self, other):
        return (isinstance(other, NoiseSeq) and self.epsilon == other.epsilon
                and np.array_equal(self.values, other.values))

    @classmethod
    def zeros(cls, n, epsilon=0.0):
        return cls(np.zeros(n), epsilon)

    @classmethod
    def constant(cls, n, value, epsilon=None):
        return cls(np.full(n, float(value)), abs(value) if epsilon is None else epsilon)


@dataclass(frozen=True, eq=False)
class OrbitRecord:
    """Orbit x_0..x_n driven by a noise sequence, with its derivative cocycle.

    ``log_cocycle[j]`` is the sum of ``log Df(x_i^+)`` over ``i < j``.
    """

    points: np.ndarray
    step_derivs_right: np.ndarray
    step_derivs_left: np.ndarray
    log_cocycle: np.ndarray = field(repr=False)

    def __len__(self):
        return self.points.size

    def Df(self, n=None, start=0):
        """Df_{sigma^start t}^{n}(x_start^+) as the product of stored step derivatives."""
        stop = self.points.size - 1 if n is None else start + n
        return float(np.prod(self.step_derivs_right[start:stop]))

    @property
    def cocycle(self):
        return self.Df()


def step(f, x, t, eps=EPS_MAX):
    """One noisy step f(x) + t mod 1.  ``|t| <= eps`` is enforced."""
    if abs(t) > eps:
        raise PreconditionViolated(f"|t|={abs(t)!r} exceeds epsilon={eps}")
    x = float(x)
    if not (0.0 <= x < 1.0):
        raise ValueError(f"circle point must lie in [0, 1), got {x!r}")
    return K.step(f.table, x, float(t))


@nb.njit(cache=True, nogil=True)
def orbit_points(tab, x0, ts, out):
    out[0] = x0
    x = x0
    for j in range(ts.shape[0]):
        x = K.step(tab, x, ts[j])
        out[j + 1] = x
    return out


@nb.njit(cache=True)
def _orbit(tab, x0, ts, pts, dr, dl):
    x = x0
    pts[0] = x
    for j in range(ts.shape[0]):
        dr[j] = K.deriv_right(tab, x)
        dl[j] = K.deriv_left(tab, x)
        x = K.step(tab, x, ts[j])
        pts[j + 1] = x


def orbit(f, x0, ts):
    """Orbit of ``x0`` under f_{t_{n-1}} o ... o f_{t_0}."""
    vals = ts.values if isinstance(ts, NoiseSeq) else np.asarray(ts, dtype=np.float64)
    n = vals.size
    pts = np.empty(n + 1)
    dr = np.empty(n)
    dl = np.empty(n)
    _orbit(f.table, float(x0), np.ascontiguousarray(vals), pts, dr, dl)
    logc = np.concatenate(([0.0], np.cumsum(np.log(dr))))
    for a in (pts, dr, dl, logc):
        a.setflags(write=False)
    return OrbitRecord(pts, dr, dl, logc)


def sample_noise(model, n, seed, stream=0, lane=0):
    """n i.i.d. uniforms on [-eps, eps], reproducible from (seed, stream, lane)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    eps = model.epsilon if isinstance(model, NoiseModel) else float(model)
    u = numpy_generator(int(seed), int(stream), int(lane)).random(int(n))
    return NoiseSeq(eps * (2.0 * u - 1.0), eps)


def shift(ts, i):
    """sigma^i: drop the first i entries."""
    if not (0 <= i <= len(ts)):
        raise PreconditionViolated(f"shift index {i} outside [0, {len(ts)}]")
    return NoiseSeq(ts.values[i:], ts.epsilon)


def preimages(f, n, ts, y, limit=2 ** 20):
    """All x with f_t^n(x) = y, found by branchwise pullback."""
    vals = ts.values if isinstance(ts, NoiseSeq) else np.asarray(ts, dtype=np.float64)
    if n > vals.size:
        raise PreconditionViolated("noise sequence shorter than n")
    if f.degree ** n > limit:
        raise IntermittencyError(f"degree^n = {f.degree ** n} exceeds limit {limit}")
    tab = f.table
    cur = [float(y)]
    for j in range(n - 1, -1, -1):
        nxt = []
        for z in cur:
            target = z - vals[j]
            for b in range(tab.shape[0]):
                ga = K.g_val(tab, b, tab[b, K.COL_A])
                gb = K.g_val(tab, b, tab[b, K.COL_B])
                # half-open image [ga, gb) so shared endpoints count once
                k = math.ceil(ga - target)
                yl = target + k
                if yl < gb:
                    x, st = K.solve_branch(tab, b, yl)
                    if st:
                        raise IntermittencyError("root finding failed in preimage count")
                    nxt.append(x)
        cur = nxt
    return np.array(sorted(cur))


def preimage_count(f, n, ts, y):
    return preimages(f, n, ts, y).size


_NOISE_HEADER = struct.Struct("<Qd")


def write_noise(path, ts):
    """Binary format: uint64 n, float64 eps, then n float64 (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_NOISE_HEADER.pack(len(ts), ts.epsilon))
        fh.write(np.asarray(ts.values, dtype="<f8").tobytes())


def read_noise(path):
    with open(path, "rb") as fh:
        head = fh.read(_NOISE_HEADER.size)
        if len(head) != _NOISE_HEADER.size:
            raise IntermittencyError(f"{path}: truncated noise header")
        n, eps = _NOISE_HEADER.unpack(head)
        body = fh.read()
    if len(body) != 8 * n:
        raise IntermittencyError(f"{path}: expected {n} values, found {len(body) // 8}")
    return NoiseSeq(np.frombuffer(body, dtype="<f8").astype(np.float64), eps)
