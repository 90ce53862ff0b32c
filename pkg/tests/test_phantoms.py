import math

import numpy as np
import pytest

from shellseg.phantoms import (PhantomSpec, analytic_signed_distance, generate_phantom, inside,
                               load_spec, save_spec, voxel_centers)


def test_sphere_volume_matches_ball():
    _, mask = generate_phantom(PhantomSpec())
    assert mask.count == pytest.approx(4 / 3 * math.pi * 30 ** 3, rel=0.01)


def test_noise_free_volume_is_two_valued():
    vol, _ = generate_phantom(PhantomSpec(dims=(32, 32, 32), radius=8, noise_sigma=0, smoothing_width=0))
    assert set(np.unique(vol.data).tolist()) == {-100.0, 100.0}


def test_same_seed_same_volume_different_seed_differs():
    spec = PhantomSpec(dims=(24, 24, 24), radius=6)
    a, _ = generate_phantom(spec)
    b, _ = generate_phantom(spec)
    c, _ = generate_phantom(PhantomSpec(dims=(24, 24, 24), radius=6, seed=1))
    assert np.array_equal(a.data, b.data) and not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("bad", [
    dict(radius=80.0),
    dict(kind="dumbbell", offsets=((-30, 0, 0), (30, 0, 0)), radii=(10, 10)),
    dict(kind="cube"),
    dict(kind="torus", ring_radius=10, tube_radius=12),
])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        generate_phantom(PhantomSpec(**bad))


def test_signed_distance_examples():
    s = PhantomSpec()
    c = s.origin
    assert analytic_signed_distance(s, c[None])[0] == pytest.approx(30)
    assert analytic_signed_distance(s, (c + [30, 0, 0])[None])[0] == pytest.approx(0, abs=1e-12)
    t = PhantomSpec(kind="torus")
    ring = t.origin + [t.ring_radius, 0, 0]
    assert analytic_signed_distance(t, ring[None])[0] == pytest.approx(t.tube_radius)


@pytest.mark.parametrize("kind", ["sphere", "ellipsoid", "dumbbell", "torus"])
def test_mask_agrees_with_sign_away_from_surface(kind):
    spec = PhantomSpec(kind=kind, dims=(96, 96, 96), radius=20, semi_axes=(26, 18, 14),
                       radii=(16, 16), offsets=((-12, 0, 0), (12, 0, 0)), ring_radius=22, tube_radius=8)
    _, mask = generate_phantom(spec)
    pts = voxel_centers(spec.dims)
    sdf = analytic_signed_distance(spec, pts).reshape(spec.dims)
    if kind == "ellipsoid":
        # approximate distance: only the sign is meaningful
        assert np.array_equal(mask.data, sdf >= 0)
    else:
        far = np.abs(sdf) > 0.75
        assert np.array_equal(mask.data[far], sdf[far] > 0)
    assert np.array_equal(inside(spec, pts).reshape(spec.dims), mask.data)


def test_spec_round_trip(tmp_path):
    s = PhantomSpec(kind="ellipsoid", seed=4)
    save_spec(tmp_path / "p.json", s)
    assert load_spec(tmp_path / "p.json") == s
    with pytest.raises(ValueError):
        PhantomSpec.from_dict({"kind": "sphere", "colour": "red"})
