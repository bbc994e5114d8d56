import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intermittency import rds
from intermittency.errors import PreconditionViolated
from intermittency.rds import NoiseModel, NoiseSeq


def test_step(pm_map, lsv_map):
    assert rds.step(pm_map, 0.25, 0.01) == pytest.approx(0.385, abs=1e-15)
    for x in (0.1, 0.3, 0.9):
        assert rds.step(lsv_map, x, 0.0) == lsv_map.eval(x)
    with pytest.raises(PreconditionViolated):
        rds.step(lsv_map, 0.75, -0.5 + 1e-3, eps=1e-3)


def test_orbit_examples(dbl, pm_map):
    o = rds.orbit(dbl, 0.1, NoiseSeq.zeros(3))
    assert np.allclose(o.points, (0.1, 0.2, 0.4, 0.8), atol=1e-15)
    assert o.cocycle == 8.0
    o = rds.orbit(pm_map, 0.25, NoiseSeq.zeros(2))
    assert np.allclose(o.points, (0.25, 0.375, 0.375 + 0.375 ** 1.5), atol=1e-15)
    o = rds.orbit(pm_map, 0.3, NoiseSeq.zeros(0))
    assert list(o.points) == [0.3] and o.cocycle == 1.0


def test_noise_model_bounds():
    with pytest.raises(PreconditionViolated):
        NoiseModel(0.3)
    with pytest.raises(PreconditionViolated):
        NoiseSeq([0.2], 0.1)


def test_sample_noise_examples():
    assert len(rds.sample_noise(NoiseModel(0.1), 0, seed=1, stream=0)) == 0
    eps = 0.05
    n = 10 ** 6
    t = rds.sample_noise(NoiseModel(eps), n, seed=7, stream=3).values
    assert np.max(np.abs(t)) <= eps
    # |t| is uniform on [0, eps]: mean eps/2, sd eps/sqrt(12)
    se = eps / math.sqrt(12 * n)
    assert abs(np.mean(np.abs(t)) - eps / 2) < 4 * se


def test_determinism_and_streams():
    a = rds.sample_noise(0.01, 1000, 42, 5)
    b = rds.sample_noise(0.01, 1000, 42, 5)
    c = rds.sample_noise(0.01, 1000, 42, 6)
    assert a == b
    assert not np.array_equal(a.values, c.values)
    assert abs(np.corrcoef(a.values, c.values)[0, 1]) < 0.15


def test_shift():
    ts = NoiseSeq([0.1, 0.2, 0.3], 0.5)
    assert list(rds.shift(ts, 1).values) == [0.2, 0.3]
    assert rds.shift(ts, 0) == ts
    with pytest.raises(PreconditionViolated):
        rds.shift(ts, 4)


def test_noise_binary_round_trip(tmp_path):
    ts = rds.sample_noise(0.02, 257, 3, 1)
    p = tmp_path / "noise.bin"
    rds.write_noise(str(p), ts)
    raw = p.read_bytes()
    assert len(raw) == 16 + 8 * 257
    assert rds.read_noise(str(p)) == ts


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32),
       n=st.integers(1, 30), m=st.integers(1, 30))
def test_cocycle_chain_rule(pm_map, x, seed, n, m):
    ts = rds.sample_noise(0.01, n + m, seed, 0)
    o = rds.orbit(pm_map, x, ts)
    o2 = rds.orbit(pm_map, o.points[n], rds.shift(ts, n))
    assert math.isclose(o.Df(m + n), o2.Df(m) * o.Df(n), rel_tol=1e-10)
    assert np.array_equal(o.points[n:], o2.points)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32))
def test_orbit_bit_identical(lsv_map, x, seed):
    ts1 = rds.sample_noise(0.02, 50, seed, 9)
    ts2 = rds.sample_noise(0.02, 50, seed, 9)
    assert np.array_equal(rds.orbit(lsv_map, x, ts1).points, rds.orbit(lsv_map, x, ts2).points)


@settings(max_examples=30, deadline=None)
@given(y=st.floats(0.0, 1.0, exclude_max=True), seed=st.integers(0, 2 ** 32),
       n=st.integers(1, 8))
def test_degree_of_iterates(pm_map, y, seed, n):
    ts = rds.sample_noise(0.01, n, seed, 0)
    assert rds.preimage_count(pm_map, n, ts, y) == 2 ** n
