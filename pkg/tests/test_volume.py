import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shellseg.volume import (Mask, Volume, boundary_voxels, dsc, load_mask, load_volume, save_mask,
                             save_volume, trilinear, voxel_stats)


def test_integer_coordinate_returns_grid_value():
    data = np.zeros((8, 8, 8), dtype=np.float32)
    data[3, 4, 5] = 7
    assert trilinear(data, np.array([3.0, 4.0, 5.0])) == 7


def test_midpoint_between_neighbors():
    data = np.zeros((2, 1, 1), dtype=np.float32)
    data[1] = 2
    assert trilinear(data, np.array([0.5, 0.0, 0.0])) == pytest.approx(1.0)


def test_cube_center_is_mean_of_corners():
    data = np.random.default_rng(3).permutation(8).reshape(2, 2, 2).astype(np.float32)
    assert trilinear(data, np.array([0.5, 0.5, 0.5])) == pytest.approx(data.mean())


def test_out_of_domain_clamps_to_face():
    data = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    assert trilinear(data, np.array([-5.0, 1.0, 1.0])) == data[0, 1, 1]
    assert trilinear(data, np.array([1.0, 1.0, 9.5])) == data[1, 1, 2]


def _naive_trilinear(data, p):
    # independent oracle: explicit weighted sum over the 8 corners
    p = np.clip(p, 0, np.array(data.shape) - 1)
    i0 = np.minimum(np.floor(p).astype(int), np.array(data.shape) - 2)
    f = p - i0
    total = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1]) * (f[2] if dz else 1 - f[2])
                total += w * data[i0[0] + dx, i0[1] + dy, i0[2] + dz]
    return total


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.floats(-2, 8) for _ in range(3)]), st.integers(0, 2**31))
def test_matches_corner_weight_oracle(p, seed):
    data = np.random.default_rng(seed).normal(size=(6, 5, 7))
    p = np.array(p)
    assert trilinear(data, p) == pytest.approx(_naive_trilinear(data, p), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_monotone_between_adjacent_voxels(a, b, seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(4, 4, 4))
    y, z = rng.uniform(0, 3, 2)
    lo, hi = sorted((a, b))
    va, vb = (trilinear(data, np.array([1 + t, y, z])) for t in (lo, hi))
    v0, v1 = (trilinear(data, np.array([1 + t, y, z])) for t in (0.0, 1.0))
    if v1 >= v0:
        assert vb >= va - 1e-12
    else:
        assert vb <= va + 1e-12


def test_dsc_examples():
    a = np.zeros((4, 4, 4), bool)
    b = np.zeros((4, 4, 4), bool)
    a[0, 0, 0] = a[0, 0, 1] = True
    b[0, 0, 0] = True
    assert dsc(a, a) == 1.0
    assert dsc(a, b) == pytest.approx(2 / 3)
    c = np.zeros_like(a)
    c[3, 3, 3] = True
    assert dsc(a, c) == 0.0
    assert dsc(np.zeros_like(a), np.zeros_like(a)) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_dsc_symmetric_and_one_only_when_equal(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5, 5)) < 0.4
    b = rng.random((5, 5, 5)) < 0.4
    assert dsc(a, b) == dsc(b, a)
    assert 0.0 <= dsc(a, b) <= 1.0
    if a.any() and dsc(a, b) == 1.0:
        assert np.array_equal(a, b)


def test_voxel_stats_counts():
    a = np.zeros((3, 3, 3), bool)
    a[0] = True
    b = np.zeros_like(a)
    b[:, 0] = True
    st_ = voxel_stats(a, b)
    assert (st_.true_count, st_.pred_count, st_.intersection_count) == (9, 9, 3)
    with pytest.raises(ValueError):
        voxel_stats(a, np.zeros((2, 2, 2), bool))


def test_boundary_examples():
    m = np.zeros((5, 5, 5), bool)
    m[2, 2, 2] = True
    assert boundary_voxels(m).tolist() == [[2, 2, 2]]
    m[1:4, 1:4, 1:4] = True
    b = boundary_voxels(m)
    assert len(b) == 26 and [2, 2, 2] not in b.tolist()
    assert len(boundary_voxels(np.zeros((3, 3, 3), bool))) == 0


def _brute_boundary(m):
    out = []
    for idx in np.argwhere(m):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            q = idx + d
            if np.any(q < 0) or np.any(q >= m.shape) or not m[tuple(q)]:
                out.append(idx.tolist())
                break
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_boundary_matches_brute_force(seed):
    m = np.random.default_rng(seed).random((6, 7, 5)) < 0.6
    b = boundary_voxels(m)
    assert b.tolist() == _brute_boundary(m)
    assert all(m[tuple(v)] for v in b)
    interior = m.copy()
    if len(b):
        interior[tuple(b.T)] = False
    padded = np.pad(m, 1)
    for x, y, z in np.argwhere(interior) + 1:
        assert padded[x - 1:x + 2, y, z].all() and padded[x, y - 1:y + 2, z].all()
        assert padded[x, y, z - 1:z + 2].all()


def test_grid_round_trip_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    save_volume(tmp_path / "v", Volume(data))
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    assert raw[1] == data[1, 0, 0]          # x varies fastest
    assert np.array_equal(load_volume(tmp_path / "v").data, data)
    m = Mask(data > 10)
    save_mask(tmp_path / "m", m)
    assert np.array_equal(load_mask(tmp_path / "m").data, m.data)
