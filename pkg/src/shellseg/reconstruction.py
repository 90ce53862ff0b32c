"""From ending points to a voxel mask.

Stages: kernel density filtering onto integer coordinates, Delaunay
tetrahedralization, alpha-shape trimming, rasterization with hole filling,
and surface thinning. Only the stage parameters in ``ReconParams`` are tunable.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError

from .volume import mask_array

EPANECHNIKOV_3D = 15.0 / (8.0 * math.pi)
_SIX = ndimage.generate_binary_structure(3, 1)
_KDE_CHUNK = 1 << 16
_RASTER_BUDGET = 1 << 22


class ReconstructionError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"reconstruction failed at stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ReconParams:
    bandwidth: float = 1.0
    log_threshold: float = -14.0
    alpha: float = 16.0
    thinning: int = 3
    closing: int | None = None   # dilation before hole filling; defaults to ``thinning``

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.thinning < 0 or (self.closing is not None and self.closing < 0):
            raise ValueError("thinning and closing must be non-negative")

    @property
    def closing_slices(self):
        return self.thinning if self.closing is None else self.closing


@dataclass
class TetMesh:
    vertices: np.ndarray      # (V, 3)
    tets: np.ndarray          # (T, 4), positively oriented
    circumradius: np.ndarray  # (T,)

    def __len__(self):
        return len(self.tets)

    def volumes(self):
        return _signed_volumes(self.vertices, self.tets)


def _epanechnikov(u):
    return np.where(u <= 1.0, EPANECHNIKOV_3D * (1.0 - u * u), 0.0)


def kde_log_density(points, bandwidth=1.0):
    """Log density on every integer coordinate within ``bandwidth`` of a point.

    ``density(g) = (1/n) * sum_i K(|g - p_i| / h) / h^3`` with the radial
    Epanechnikov kernel ``K(u) = 15/(8 pi) (1 - u^2)`` on ``u <= 1``. Returns
    ``(coords, log_density)`` with coordinates in lexicographic order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n, h = len(pts), float(bandwidth)
    if n == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud has non-finite coordinates")
    lo_off, hi_off = -math.ceil(h), math.floor(h) + 1
    rng = np.arange(lo_off, hi_off + 1)
    offsets = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)
    base = np.floor(pts).astype(np.int64)
    lo = base.min(axis=0) + lo_off
    shape = base.max(axis=0) + hi_off - lo + 1
    acc = np.zeros(int(np.prod(shape)))
    for s in range(0, n, _KDE_CHUNK):
        p = pts[s:s + _KDE_CHUNK]
        g = base[s:s + _KDE_CHUNK, None, :] + offsets[None]           # (c, O, 3)
        u = np.linalg.norm(g - p[:, None, :], axis=-1) / h
        keep = u <= 1.0
        lin = np.ravel_multi_index((g[keep] - lo).T, shape)
        acc += np.bincount(lin, weights=_epanechnikov(u[keep]), minlength=acc.size)
    hit = np.flatnonzero(acc > 0)
    coords = np.column_stack(np.unravel_index(hit, shape)) + lo
    return coords, np.log(acc[hit] / (n * h ** 3))


def kde_filter(points, bandwidth=1.0, log_threshold=-14.0):
    """Integer coordinates whose kernel density log-likelihood is at least ``log_threshold``."""
    coords, logd = kde_log_density(points, bandwidth)
    return coords[logd >= log_threshold]


def _signed_volumes(v, tets):
    a, b, c, d = (v[tets[:, k]] for k in range(4))
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6.0


def circumradii(vertices, tets):
    v = np.asarray(vertices, dtype=np.float64)
    a = v[tets[:, 0]]
    m = np.stack([v[tets[:, k]] - a for k in (1, 2, 3)], axis=1)   # (T, 3, 3)
    rhs = 0.5 * np.einsum("tij,tij->ti", m, m)
    x = np.linalg.solve(m, rhs[..., None])[..., 0]
    return np.linalg.norm(x, axis=1)


def delaunay(points, min_volume=1e-12):
    """Delaunay tetrahedralization; drops zero-volume tets from degenerate (cospherical) input.

    Points are sorted lexicographically first so the result does not depend on
    input order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points, got {len(pts)}")
    pts = pts[np.lexsort(pts.T[::-1])]
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) < 3:
        raise ValueError("points are coplanar")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise ValueError(f"triangulation failed: {exc}") from exc
    tets = tri.simplices.astype(np.int64)
    vol = _signed_volumes(pts, tets)
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    keep = np.abs(vol) > min_volume
    tets = tets[keep]
    return TetMesh(pts, tets, circumradii(pts, tets))


def alpha_shape(mesh, alpha):
    """Keep the tetrahedra with circumradius at most ``alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    keep = mesh.circumradius <= alpha
    return TetMesh(mesh.vertices, mesh.tets[keep], mesh.circumradius[keep])


def rasterize(mesh, dims, eps=1e-9):
    """Voxels whose center lies inside (or on) any tetrahedron of the mesh."""
    out = np.zeros(dims, dtype=bool)
    if len(mesh) == 0:
        return out
    v = mesh.vertices
    corners = v[mesh.tets]                                     # (T, 4, 3)
    lo = np.maximum(np.ceil(corners.min(axis=1) - eps), 0).astype(np.int64)
    hi = np.minimum(np.floor(corners.max(axis=1) + eps), np.asarray(dims) - 1).astype(np.int64)
    ext = np.maximum(hi - lo + 1, 0)
    counts = np.prod(ext, axis=1)
    live = np.flatnonzero(counts > 0)
    if len(live) == 0:
        return out
    a = corners[:, 0]
    inv = np.linalg.inv(np.stack([corners[:, k] - a for k in (1, 2, 3)], axis=2))  # columns b-a, c-a, d-a
    cum = np.cumsum(counts[live])
    start = 0
    while start < len(live):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _RASTER_BUDGET, side="right"))
        stop = max(stop, start + 1)
        t = live[start:stop]
        c = counts[t]
        owner = np.repeat(t, c)
        local = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
        e = ext[owner]
        ix = local // (e[:, 1] * e[:, 2])
        iy = (local // e[:, 2]) % e[:, 1]
        iz = local % e[:, 2]
        vox = lo[owner] + np.stack([ix, iy, iz], axis=1)
        lam = np.einsum("nij,nj->ni", inv[owner], vox - a[owner])
        inside = np.all(lam >= -eps, axis=1) & (lam.sum(axis=1) <= 1 + eps)
        hitv = vox[inside]
        out[hitv[:, 0], hitv[:, 1], hitv[:, 2]] = True
        start = stop
    return out


def fill_holes(mask):
    """Set every background voxel not 6-connected to the volume faces."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool), structure=_SIX)


def voxelize_and_fill(mesh, dims, dilate=0):
    """Rasterize the mesh, optionally dilate it ``dilate`` times (6-neighborhood), then fill cavities."""
    solid = rasterize(mesh, dims)
    if dilate > 0 and solid.any():
        solid = ndimage.binary_dilation(solid, structure=_SIX, iterations=int(dilate))
    return fill_holes(solid)


def thin_and_finalize(mask, slices=3):
    """Erode by ``slices`` voxels (6-neighborhood), then refill cavities."""
    if slices < 0:
        raise ValueError("slices must be non-negative")
    solid = mask_array(mask)
    if slices > 0 and solid.any():
        solid = ndimage.binary_erosion(solid, structure=_SIX, iterations=int(slices), border_value=0)
    return fill_holes(solid)


def reconstruct(points, dims, params=None, stages=None):
    """Ending points to a boolean grid of shape ``dims``.

    The rasterized alpha shape is dilated by ``params.closing_slices`` before
    hole filling so that small gaps in the surface band cannot leak, and the
    final thinning removes the same number of layers. ``stages``, if given, is
    filled with intermediate results.
    """
    params = params or ReconParams()
    stages = {} if stages is None else stages
    dims = tuple(int(d) for d in dims)
    try:
        survivors = kde_filter(points, params.bandwidth, params.log_threshold)
    except Exception as exc:
        raise ReconstructionError("kde", exc) from exc
    stages["survivors"] = survivors
    if len(survivors) == 0:
        return np.zeros(dims, dtype=bool)
    try:
        mesh = delaunay(survivors)
    except Exception as exc:
        raise ReconstructionError("delaunay", exc) from exc
    stages["mesh"] = mesh
    try:
        shape = alpha_shape(mesh, params.alpha)
    except Exception as exc:
        raise ReconstructionError("alpha", exc) from exc
    stages["alpha_mesh"] = shape
    try:
        solid = voxelize_and_fill(shape, dims, params.closing_slices)
    except Exception as exc:
        raise ReconstructionError("voxelize", exc) from exc
    try:
        return thin_and_finalize(solid, params.thinning)
    except Exception as exc:
        raise ReconstructionError("thinning", exc) from exc


def write_cloud_csv(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in np.asarray(points).reshape(-1, 3).tolist():
            w.writerow([repr(float(c)) for c in p])


def read_cloud_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def write_off(path, mesh):
    """Boundary triangles of the tet mesh as an OFF surface."""
    faces = np.concatenate([mesh.tets[:, [1, 2, 3]], mesh.tets[:, [0, 3, 2]],
                            mesh.tets[:, [0, 1, 3]], mesh.tets[:, [0, 2, 1]]])
    key = np.sort(faces, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    outer = faces[cnt[inv.reshape(-1)] == 1]
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(outer)} 0\n")
        for p in mesh.vertices.tolist():
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for f in outer.tolist():
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
