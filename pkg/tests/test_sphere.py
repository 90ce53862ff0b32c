import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shellseg.sphere import build_direction_grid, solid_angle_weights


def test_four_equatorial_directions():
    g = build_direction_grid(4, 1)
    assert np.allclose(g.azimuths, [0, math.pi / 2, math.pi, 3 * math.pi / 2])
    assert np.allclose(g.dirs[:, 0], [(1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0)], atol=1e-15)


def test_three_latitudes():
    g = build_direction_grid(5, 3)
    assert np.allclose(sorted(g.polars), sorted([math.pi / 6, 0.0, -math.pi / 6]), atol=1e-15)


def test_polar_formula():
    mp = 7
    g = build_direction_grid(3, mp)
    expected = [math.acos(2 * m2 / (mp + 1) - 1) - math.pi / 2 for m2 in range(1, mp + 1)]
    assert np.allclose(g.polars, expected, atol=1e-14)
    assert np.allclose(g.azimuths, 2 * np.arange(3) * math.pi / 3, atol=0)


def test_default_resolution():
    g = build_direction_grid(120, 120)
    assert g.size == 14400 and g.dirs.shape == (120, 120, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_grid_properties(ma, mp):
    g = build_direction_grid(ma, mp)
    assert np.max(np.abs(np.linalg.norm(g.dirs, axis=-1) - 1)) <= 1e-12
    z = g.dirs[0, :, 2]
    assert np.array_equal(np.sort(z), np.sort(-z))        # exact equator symmetry
    w = solid_angle_weights(g)
    assert np.all(w > 0) and abs(w.sum() - 4 * math.pi) <= 1e-9
    if ma >= 2:
        assert np.linalg.norm(g.dirs.reshape(-1, 3).mean(axis=0)) <= 1e-9


def test_weights_examples():
    assert solid_angle_weights(build_direction_grid(1, 1))[0, 0] == pytest.approx(4 * math.pi)
    w = solid_angle_weights(build_direction_grid(6, 2))
    assert np.allclose(w, 2 * math.pi / 6)


def test_index_helpers_invert_grid():
    g = build_direction_grid(10, 9)
    assert np.allclose(g.polar_index(g.dirs[0, :, 2]), np.arange(9))
    assert np.allclose(g.azimuth_index(g.azimuths), np.arange(10))
