from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st
from scipy import integrate

from killsde.domain import Ball, HalfSpace, Slab, domain_from_config, half_line, interval


def test_distance_examples():
    assert HalfSpace(normal=(1.0, 0.0)).distance_to_boundary((0.5, 3.0)) == 0.5
    assert interval(0.0, 2.0).distance_to_boundary(1.0) == 1.0
    assert Ball(center=(0.0, 0.0), radius=1.0).distance_to_boundary((0.0, 0.0)) == 1.0


def test_distance_is_exact_outside_too():
    assert interval(0.0, 2.0).distance_to_boundary(-0.5) == 0.5
    assert Ball(center=(0.0, 0.0), radius=1.0).distance_to_boundary((3.0, 4.0)) == 4.0


def test_contains_and_closure():
    d = half_line()
    assert d.contains(0.1) and not d.contains(0.0) and d.in_closure(0.0) and not d.in_closure(-0.1)
    assert d.on_boundary(0.0)


@given(st.floats(-3, 3), st.floats(-3, 3))
@example(0.0, 5.227332740556277e-160)  # offset whose square underflows
def test_projection_lands_on_boundary(a, b):
    for dom, pt in ((Ball(center=(0.0, 0.0), radius=1.5), (a, b)), (Slab(a=-1.0, b=2.0, normal=(1.0, 1.0)), (a, b)),
                    (HalfSpace(normal=(1.0, -2.0), offset=0.3), (a, b))):
        proj = dom.project_to_boundary(pt)
        assert abs(dom.signed_distance(proj)) < 1e-9
        if dom.contains(pt):
            assert np.linalg.norm(proj - np.asarray(pt)) == pytest.approx(dom.distance_to_boundary(pt), abs=1e-9)


def test_faces_of_slab():
    dist, normals = Slab(a=0.0, b=2.0).faces(0.5)
    assert dist.tolist() == [[0.5, 1.5]]
    assert normals[0, 0].tolist() == [1.0] and normals[0, 1].tolist() == [-1.0]


def test_intrinsic_distance_examples():
    assert interval(0.0, 2.0).intrinsic_distance(1.0, 1.0) == 0.0
    assert half_line().intrinsic_distance(0.5, 1.0) == pytest.approx(math.log(2.0), abs=1e-12)
    assert half_line().intrinsic_distance(0.5, 0.0) == math.inf
    assert Ball(center=(0.0, 0.0), radius=1.0).intrinsic_distance((0.0, 0.0), (1.0, 0.0)) == math.inf


def test_intrinsic_distance_quadrature_blows_up_near_boundary():
    # the weight 1/r is not integrable at 0: values grow like log(1/eps)
    d = half_line()
    vals = [d.intrinsic_distance(eps, 1.0) for eps in (1e-2, 1e-4, 1e-8)]
    assert vals == pytest.approx([math.log(1e2), math.log(1e4), math.log(1e8)], rel=1e-9)


def test_intrinsic_distance_beyond_unit_range():
    # weight is 1 where the distance to the boundary exceeds 1
    assert half_line().intrinsic_distance(2.0, 5.0) == pytest.approx(3.0, abs=1e-12)
    expected = math.log(1 / 0.5) + 1.5
    assert half_line().intrinsic_distance(0.5, 2.5) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0.01, 3.9), st.floats(0.01, 3.9))
def test_intrinsic_distance_symmetric_and_dominates(x, y):
    d = interval(0.0, 4.0)
    a, b = d.intrinsic_distance(x, y), d.intrinsic_distance(y, x)
    assert a == b
    assert a >= abs(x - y) - 1e-12


def test_intrinsic_chord_vs_grid_in_2d():
    d = Ball(center=(0.0, 0.0), radius=1.0)
    x, y = np.array([-0.3, 0.0]), np.array([0.3, 0.2])
    chord = d.intrinsic_distance(x, y)
    ref, _ = integrate.quad(lambda s: np.linalg.norm(y - x) / min(d.distance_to_boundary(x + s * (y - x)), 1), 0, 1)
    assert chord == pytest.approx(ref, rel=1e-9)
    grid = d.intrinsic_distance_grid(x, y, spacing=0.02)
    assert grid <= chord * 1.02


def test_radius_rules():
    with pytest.raises(ValueError):
        half_line(r0=2.0, r1=1.5)
    with pytest.raises(ValueError):
        half_line(r0=0.5, r1=0.7)
    d = half_line()
    assert (d.r0, d.r1) == (1.0, 0.5)


@pytest.mark.parametrize("dom", [half_line(offset=0.2), Ball(center=(0.0, 1.0), radius=2.0),
                                 Slab(a=-1.0, b=1.0, normal=(0.0, 1.0)), interval(0.0, 3.0, r0=0.5)])
def test_config_round_trip(dom):
    assert domain_from_config(dom.to_config()) == dom


def test_config_errors_name_the_field():
    with pytest.raises(ValueError, match="domain.kind"):
        domain_from_config({"kind": "torus"})
    with pytest.raises(ValueError, match="domain.radius_x"):
        domain_from_config({"kind": "ball", "center": [0, 0], "radius_x": 1})
    with pytest.raises(ValueError, match="domain.center"):
        domain_from_config({"kind": "ball"})


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Ball(center=(0.0, 0.0), radius=1.0).distance_to_boundary((1.0, 2.0, 3.0))
