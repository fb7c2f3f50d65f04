import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dldnet.errors import DomainError
from dldnet.geometry import (ReynoldsSpec, fluid_fraction, is_solid, is_solid_tilted, make_cell,
                             nearest_post, point_solid, reynolds, solid_mask)


def test_make_cell_derived_values():
    c = make_cell(0.5, 10, 0.4)
    assert c.D0 == pytest.approx(0.2)
    assert c.epsilon == pytest.approx(0.04)
    assert c.gap == pytest.approx(0.2)
    assert c.Dx == c.Dy == 0.4


def test_caption_geometry_diameter():
    assert make_cell(0.57, 10).D0 == pytest.approx(0.228)


@pytest.mark.parametrize("F,N,Ds", [(1.0, 5, 0.4), (0.0, 5, 0.4), (1.3, 5, 0.4),
                                    (0.5, 0, 0.4), (0.5, 2.5, 0.4), (0.5, 5, 0.0)])
def test_make_cell_rejects_invalid(F, N, Ds):
    with pytest.raises(DomainError):
        make_cell(F, N, Ds)


def test_post_centers_are_corners():
    c = make_cell(0.3, 7)
    assert c.post_centers == ((0, 0), (0.4, 0), (0, 0.4), (0.4, 0.4))


@pytest.mark.parametrize("pt,expected", [((0, 0), True), ((0.2, 0.2), False), ((0.1, 0), True)])
def test_is_solid_examples(pt, expected):
    assert is_solid(make_cell(0.5, 10), *pt) is expected


def test_is_solid_outside_cell():
    with pytest.raises(DomainError):
        is_solid(make_cell(0.5, 10), 0.5, 0.1)


def test_tilted_cell_right_posts_raised():
    c = make_cell(0.5, 10)
    # right post centre sits at (Dx, eps)
    assert is_solid_tilted(c, 0.4, 0.04)
    assert is_solid_tilted(c, 0.4, 0.04 + 0.1)
    assert not is_solid_tilted(c, 0.4, 0.04 + 0.101)
    assert not is_solid_tilted(c, 0.4, 0.04 + 0.2)
    # left posts unchanged
    assert is_solid_tilted(c, 0.0, 0.0) and is_solid_tilted(c, 0.0, 0.4)


@pytest.mark.parametrize("spec,expected", [((1, 1, 1, 1), 1.0),
                                           ((1000, 0.001, 0.0002, 0.001), 0.2),
                                           ((2, 3, 4, 6), 4.0)])
def test_reynolds(spec, expected):
    assert reynolds(ReynoldsSpec(*spec)) == pytest.approx(expected)


def test_reynolds_spec_positive():
    with pytest.raises(DomainError):
        ReynoldsSpec(1, 0, 1, 1)


@settings(max_examples=200, deadline=None)
@given(F=st.floats(0.05, 0.95), N=st.integers(1, 20),
       x=st.floats(0, 1), y=st.floats(0, 1))
def test_corner_symmetry(F, N, x, y):
    c = make_cell(F, N)
    x, y = x * c.Dx, y * c.Dy
    s = is_solid(c, x, y)
    assert s == is_solid(c, c.Dx - x, y) == is_solid(c, x, c.Dy - y)


@settings(max_examples=50, deadline=None)
@given(F=st.floats(0.01, 0.99), N=st.integers(1, 30), Ds=st.floats(0.05, 5))
def test_epsilon_times_n(F, N, Ds):
    c = make_cell(F, N, Ds)
    assert c.epsilon * c.N == pytest.approx(Ds, rel=1e-14)
    assert c.gap > 0


@pytest.mark.parametrize("F", [0.25, 0.5, 0.7])
@pytest.mark.parametrize("tilted", [False, True])
def test_fluid_fraction_monte_carlo(F, tilted):
    c = make_cell(F, 10)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, c.Dx, 1_000_000)
    y = rng.uniform(0, c.Dy, 1_000_000)
    est = 1.0 - solid_mask(c, x, y, tilted=tilted).mean()
    exact = 1.0 - math.pi * c.radius**2 / (c.Dx * c.Dy)
    assert fluid_fraction(c) == pytest.approx(exact)
    assert abs(est - exact) / exact < 0.01


def test_point_solid_matches_vectorised(rng):
    c = make_cell(0.6, 7)
    x = rng.uniform(0, c.Dx, 2000)
    y = rng.uniform(0, c.Dy, 2000)
    for tilted in (False, True):
        m = solid_mask(c, x, y, tilted=tilted)
        assert all(point_solid(c, a, b, tilted) == s for a, b, s in zip(x, y, m))
        # unwrapped y is folded periodically
        assert all(point_solid(c, a, b + c.Dy, tilted) == s for a, b, s in zip(x[:200], y[:200], m))


def test_nearest_post():
    c = make_cell(0.5, 10)
    assert nearest_post(c, 0.05, 0.38) == (0.0, 0.4)
    assert nearest_post(c, 0.35, 0.1) == (0.4, pytest.approx(0.04))
    assert nearest_post(c, 0.35, 0.1, tilted=False) == (0.4, 0.0)


def test_make_cell_pure():
    assert make_cell(0.41, 9) == make_cell(0.41, 9)
