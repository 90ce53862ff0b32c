"""Synthetic phantoms with analytic ground truth.

Each phantom is an analytic signed distance (positive inside); the mask is its
sign at voxel centers and the intensity volume blends two means across the
zero level, plus seeded Gaussian noise.
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .distance import DEFAULT_TAU, DistanceField
from .volume import Mask, Volume

KINDS = ("sphere", "ellipsoid", "dumbbell", "torus")


@dataclass
class PhantomSpec:
    kind: str = "sphere"
    dims: tuple = (128, 128, 128)
    center: tuple | None = None           # defaults to the grid center
    radius: float = 30.0                  # sphere
    semi_axes: tuple = (35.0, 25.0, 20.0)  # ellipsoid
    offsets: tuple = ((-16.0, 0.0, 0.0), (16.0, 0.0, 0.0))  # dumbbell sphere centers relative to center
    radii: tuple = (22.0, 22.0)           # dumbbell
    ring_radius: float = 28.0             # torus, ring in the xy plane
    tube_radius: float = 12.0
    inside_mean: float = 100.0
    outside_mean: float = -100.0
    noise_sigma: float = 20.0
    smoothing_width: float = 1.5
    seed: int = 0
    margin: float = DEFAULT_TAU

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.center is not None:
            self.center = tuple(float(c) for c in self.center)
        self.semi_axes = tuple(float(a) for a in self.semi_axes)
        self.offsets = tuple(tuple(float(c) for c in o) for o in self.offsets)
        self.radii = tuple(float(r) for r in self.radii)

    @property
    def origin(self):
        if self.center is not None:
            return np.asarray(self.center, dtype=np.float64)
        return (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown phantom keys: {sorted(unknown)}")
        return cls(**doc)

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; expected one of {KINDS}")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if self.noise_sigma < 0 or self.smoothing_width < 0:
            raise ValueError("noise_sigma and smoothing_width must be non-negative")
        lo, hi = self.extent()
        if np.any(lo < self.margin) or np.any(hi > np.asarray(self.dims) - 1 - self.margin):
            raise ValueError(
                f"{self.kind} phantom extent {lo.tolist()}..{hi.tolist()} does not fit in "
                f"dims {list(self.dims)} with margin {self.margin}"
            )
        if self.kind == "sphere" and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == "ellipsoid" and (len(self.semi_axes) != 3 or min(self.semi_axes) <= 0):
            raise ValueError("ellipsoid needs three positive semi-axes")
        if self.kind == "dumbbell":
            if len(self.offsets) != 2 or len(self.radii) != 2 or min(self.radii) <= 0:
                raise ValueError("dumbbell needs two offsets and two positive radii")
            gap = np.linalg.norm(np.subtract(self.offsets[0], self.offsets[1]))
            if gap >= sum(self.radii):
                raise ValueError("dumbbell spheres do not overlap; the object would be disconnected")
        if self.kind == "torus" and not 0 < self.tube_radius < self.ring_radius:
            raise ValueError("torus needs 0 < tube_radius < ring_radius")
        return self

    def extent(self):
        """Axis-aligned bounding box (lo, hi) of the shape."""
        c = self.origin
        if self.kind == "sphere":
            half = np.full(3, self.radius)
            return c - half, c + half
        if self.kind == "ellipsoid":
            a = np.asarray(self.semi_axes)
            return c - a, c + a
        if self.kind == "dumbbell":
            lo = [c + np.asarray(o) - r for o, r in zip(self.offsets, self.radii)]
            hi = [c + np.asarray(o) + r for o, r in zip(self.offsets, self.radii)]
            return np.min(lo, axis=0), np.max(hi, axis=0)
        if self.kind == "torus":
            outer = self.ring_radius + self.tube_radius
            half = np.array([outer, outer, self.tube_radius])
            return c - half, c + half
        raise ValueError(f"unknown phantom kind {self.kind!r}")


def analytic_signed_distance(spec, points):
    """Signed distance to the phantom surface, positive inside.

    Exact for sphere, dumbbell (union of spheres) and torus. The ellipsoid value
    is the scaled-space distance times the smallest semi-axis: its sign and
    zero set are exact but its magnitude is only approximate.
    """
    p = np.asarray(points, dtype=np.float64) - spec.origin
    if spec.kind == "sphere":
        return spec.radius - np.linalg.norm(p, axis=-1)
    if spec.kind == "ellipsoid":
        a = np.asarray(spec.semi_axes)
        return (1.0 - np.linalg.norm(p / a, axis=-1)) * a.min()
    if spec.kind == "dumbbell":
        parts = [r - np.linalg.norm(p - np.asarray(o), axis=-1) for o, r in zip(spec.offsets, spec.radii)]
        return np.maximum(*parts)
    if spec.kind == "torus":
        ring = np.hypot(p[..., 0], p[..., 1]) - spec.ring_radius
        return spec.tube_radius - np.hypot(ring, p[..., 2])
    raise ValueError(f"unknown phantom kind {spec.kind!r}")


def voxel_centers(dims):
    return np.stack(np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"), axis=-1)


def generate_phantom(spec):
    """Return ``(Volume, Mask)`` for a validated spec; deterministic given ``spec.seed``."""
    spec.validate()
    sdf = analytic_signed_distance(spec, voxel_centers(spec.dims))
    inside = sdf >= 0
    if spec.smoothing_width > 0:
        w = np.clip(0.5 + sdf / spec.smoothing_width, 0.0, 1.0)
    else:
        w = inside.astype(np.float64)
    data = spec.outside_mean + w * (spec.inside_mean - spec.outside_mean)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.normal(0.0, spec.noise_sigma, size=spec.dims)
    return Volume(data.astype(np.float32)), Mask(inside)


def analytic_field(spec, tau=DEFAULT_TAU):
    """Distance field sampled from the analytic signed distance, clamped to tau."""
    sdf = analytic_signed_distance(spec, voxel_centers(spec.dims))
    return DistanceField(np.clip(sdf, -tau, tau).astype(np.float32), tau)


def inside(spec, points):
    return analytic_signed_distance(spec, points) >= 0


def save_spec(path, spec):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_spec(path):
    return PhantomSpec.from_dict(json.loads(Path(path).read_text()))
