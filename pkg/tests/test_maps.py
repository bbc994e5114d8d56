import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intermittency import maps
from intermittency.errors import MapDefinitionError, YNotInBranchImage


def test_pm_eval_and_deriv(pm_map):
    assert pm_map.eval(0.25) == pytest.approx(0.375, abs=1e-15)
    assert pm_map.deriv(0.25) == pytest.approx(1.75, abs=1e-14)
    assert pm_map.eval(0.0) == 0.0
    assert pm_map.deriv(0.0, "right") == 1.0


def test_lsv_eval_and_deriv(lsv_map):
    assert lsv_map.eval(0.75) == pytest.approx(0.5, abs=1e-15)
    assert lsv_map.deriv(0.75, "left") == pytest.approx(2.0)
    # first lap: x (1 + 2^a x^a)
    x = 0.2
    assert lsv_map.eval(x) == pytest.approx(x * (1 + 2 ** 0.5 * x ** 0.5), abs=1e-15)


def test_inverses(pm_map, lsv_map, dbl):
    assert pm_map.inverse(0, 0.375) == pytest.approx(0.25, abs=1e-13)
    assert lsv_map.inverse(1, 0.5) == pytest.approx(0.75, abs=1e-13)
    assert dbl.inverse(0, 0.6) == pytest.approx(0.3, abs=1e-15)
    assert dbl.inverse(1, 0.6) == pytest.approx(0.8, abs=1e-15)


def test_structure(pm_map, lsv_map, dbl):
    assert pm_map.degree == 2 and lsv_map.degree == 2 and dbl.degree == 2
    assert pm_map.fixed_points_P0 == (0.0,)
    assert pm_map.P_star == (0.0,)
    assert lsv_map.P_star == (0.0, 0.5)
    assert dbl.fixed_points_P0 == (0.0,) and dbl.P_star == ()
    assert [s.side for s in pm_map.neutral_sides] == ["right"]


def test_validate_known_maps(pm_map, lsv_map, dbl):
    for f in (pm_map, lsv_map, dbl):
        rep = maps.validate_class(f)
        assert rep.ok, rep.lines()
    # PM neutral ratio (Df - 1)/h^a -> 1 + a
    nr = maps.validate_class(pm_map).neutral[0]
    assert abs(nr.ratios[-1] - 1.5) < 1e-6
    nr = maps.validate_class(lsv_map).neutral[0]
    assert abs(nr.ratios[-1] - 2 ** 0.5 * 1.5) < 1e-4


def test_decreasing_branch_rejected():
    f = maps.custom([(0.0, 0.5, 1.0, -2.0, 0.0, 0.0, 0.0, 1.0),
                     (0.5, 1.0, 1.0, -2.0, 0.0, 0.0, 0.0, 1.0)], alpha=0.5)
    rep = maps.validate_class(f)
    assert not rep.ok
    assert any(c.name == "orientation" and not math.isnan(c.witness) for c in rep.failures())


def test_bad_alpha():
    with pytest.raises(MapDefinitionError):
        maps.pm(1.5)
    with pytest.raises(MapDefinitionError):
        maps.lsv(0.0)


def test_inverse_out_of_image():
    # doubling with its first lap split in two: branch 0 only covers [0, 1/2)
    f = maps.custom([(0, 0.25, 0, 2, 0, 0, 0, 1), (0.25, 0.5, 0, 2, 0, 0, 0, 1),
                     (0.5, 1, 0, 2, 0, 0, 0, 1)], alpha=0.5)
    assert f.degree == 2
    with pytest.raises(YNotInBranchImage):
        f.inverse(0, 0.7)
    assert f.inverse(1, 0.7) == pytest.approx(0.35)


def test_text_round_trip(pm_map, tmp_path):
    text = maps.map_to_text(pm_map)
    g = maps.parse_map_text(text)
    xs = np.linspace(0, 1, 101, endpoint=False)
    assert all(g.eval(x) == pm_map.eval(x) for x in xs)
    p = tmp_path / "m.txt"
    p.write_text("kind = lsv\nalpha = 0.3\n")
    assert maps.load_map(str(p)).alpha == 0.3
    with pytest.raises(MapDefinitionError):
        maps.parse_map_text("kind = nope")
    with pytest.raises(MapDefinitionError):
        maps.load_map(str(tmp_path / "missing.txt"))


@settings(max_examples=200, deadline=None)
@given(y=st.floats(0.0, 1.0, exclude_max=True), alpha=st.sampled_from([0.2, 0.5, 0.8]),
       which=st.sampled_from(["pm", "lsv"]))
def test_branch_consistency(y, alpha, which):
    f = maps.pm(alpha) if which == "pm" else maps.lsv(alpha)
    for b in range(f.n_branches):
        x = f.inverse(b, y)
        a, c = f.branch_domain(b)
        assert a - 1e-15 <= x <= c
        assert maps.K.circle_dist(f.eval(x % 1.0), y) < 1e-12


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True))
def test_covering_degree(pm_map, x):
    # every point has exactly d preimages, one per branch
    pre = {round(pm_map.inverse(b, x), 12) for b in range(pm_map.n_branches)}
    assert len(pre) == pm_map.degree


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.0, 1.0, exclude_max=True))
def test_derivative_at_least_one(lsv_map, x):
    assert lsv_map.deriv(x, "right") >= 1.0
    assert lsv_map.deriv(x, "left") >= 1.0
