"""Truncated signed distance to the mask boundary.

Only voxels whose Chebyshev distance to the boundary set is below ``tau`` can
have a Euclidean distance below ``tau``, so a bounded breadth-first expansion
from the boundary voxels selects the voxels that need a nearest-neighbor
query. Everything else is set to ``+tau`` (foreground) or ``-tau``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .volume import Mask, _frozen, boundary_map, load_grid, save_grid, trilinear

DEFAULT_TAU = 2.0

_NEIGHBORS_26 = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
    dtype=np.intp,
)


@dataclass(frozen=True)
class DistanceField:
    """Signed distance grid clamped to ``[-tau, tau]``; positive inside."""

    data: np.ndarray
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "data", _frozen(np.asarray(self.data, dtype=np.float32)))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    def sample(self, points):
        """Trilinear interpolation of the field at real coordinates."""
        return trilinear(self.data, points)


class BoundaryIndex:
    """Exact nearest-neighbor index over the boundary voxels of a mask."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.intp)
        if len(self.points) == 0:
            raise ValueError("boundary set is empty")
        # median splits give a balanced static tree; queries are exact (eps=0)
        self._tree = cKDTree(self.points.astype(np.float64), balanced_tree=True, compact_nodes=True)

    @classmethod
    def from_mask(cls, mask):
        return cls(np.argwhere(boundary_map(mask)))

    def __len__(self):
        return len(self.points)

    def query(self, coords, workers=1):
        """Distance to and index of the nearest boundary voxel for each row of ``coords``."""
        return self._tree.query(np.asarray(coords, dtype=np.float64), k=1, workers=workers)


def near_boundary(boundary, tau):
    """Voxels with Chebyshev distance to ``boundary`` strictly below ``tau``.

    Multi-source breadth-first expansion over the 26-neighborhood; each level
    increases the Chebyshev radius by one, and only reached voxels are touched.
    """
    boundary = np.asarray(boundary, dtype=bool)
    shape = np.asarray(boundary.shape, dtype=np.intp)
    reached = boundary.copy()
    frontier = np.argwhere(boundary)
    levels = max(int(math.ceil(tau)) - 1, 0)
    for _ in range(levels):
        if len(frontier) == 0:
            break
        cand = (frontier[:, None, :] + _NEIGHBORS_26[None, :, :]).reshape(-1, 3)
        inside = np.all((cand >= 0) & (cand < shape), axis=1)
        cand = cand[inside]
        flat = np.ravel_multi_index(cand.T, boundary.shape)
        flat = np.unique(flat)
        flat = flat[~reached.reshape(-1)[flat]]
        reached.reshape(-1)[flat] = True
        frontier = np.column_stack(np.unravel_index(flat, boundary.shape))
    return reached


def build_distance_field(mask, tau=DEFAULT_TAU, workers=1):
    """Truncated signed Euclidean distance to the boundary voxels of ``mask``.

    Boundary voxels store 0, other foreground voxels ``+min(d, tau)`` and
    background voxels ``-min(d, tau)``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    fg = mask.data if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    n_fg = int(np.count_nonzero(fg))
    if n_fg == 0 or n_fg == fg.size:
        raise ValueError("mask is all background or all foreground; the boundary is undefined")

    bmap = boundary_map(fg)
    index = BoundaryIndex(np.argwhere(bmap))
    near = near_boundary(bmap, tau)

    out = np.where(fg, np.float32(tau), np.float32(-tau)).astype(np.float32)
    coords = np.argwhere(near)
    dist, _ = index.query(coords, workers=workers)
    mag = np.minimum(dist, tau)
    sign = np.where(fg[tuple(coords.T)], 1.0, -1.0)
    out[tuple(coords.T)] = (sign * mag).astype(np.float32)
    return DistanceField(out, tau)


def save_field(path, field):
    save_grid(path, field.data, "f32", tau=field.tau)


def load_field(path):
    arr, meta = load_grid(path)
    if "tau" not in meta:
        raise ValueError(f"{path}: sidecar has no tau")
    return DistanceField(arr, meta["tau"])
