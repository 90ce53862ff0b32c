"""Voxel containers, trilinear sampling, boundary extraction and the DSC metric.

Arrays are indexed ``[x, y, z]`` with voxel centers at integer coordinates.
On disk every grid is a raw little-endian blob in x-fastest order plus a JSON
sidecar holding ``dims`` and ``dtype``.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_CHUNK = 1 << 20

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume:
    """3D intensity grid, float32, indexed ``[x, y, z]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D array, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    def sample(self, points):
        return trilinear(self.data, points)


@dataclass(frozen=True)
class Mask:
    """Binary foreground grid, indexed ``[x, y, z]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data).astype(bool, copy=False)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"mask must be a non-empty 3D array, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return tuple(int(d) for d in self.data.shape)

    @property
    def count(self):
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class VoxelSetStats:
    true_count: int
    pred_count: int
    intersection_count: int

    @property
    def dsc(self):
        total = self.true_count + self.pred_count
        if total == 0:
            return 1.0
        return 2.0 * self.intersection_count / total


def trilinear(data, points):
    """Trilinearly interpolate ``data`` at real coordinates ``points`` (..., 3).

    Coordinates outside ``[0, H-1]`` are clamped per axis before blending, so
    the function is total on finite input. Returns float64 with the leading
    shape of ``points``.
    """
    data = np.asarray(data)
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ValueError("points must have a trailing axis of length 3")
    out_shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    flat = data.reshape(-1)
    hi = np.asarray(data.shape, dtype=np.intp) - 1
    base_hi = np.maximum(hi - 1, 0)
    sx, sy = data.shape[1] * data.shape[2], data.shape[2]
    out = np.empty(len(pts), dtype=np.float64)
    for start in range(0, len(pts), _CHUNK):
        p = np.clip(pts[start:start + _CHUNK], 0.0, hi)
        i0 = np.minimum(np.floor(p).astype(np.intp), base_hi)
        f = p - i0
        step = np.minimum(i0 + 1, hi) - i0
        ix, iy, iz = i0[:, 0] * sx, i0[:, 1] * sy, i0[:, 2]
        dx, dy, dz = step[:, 0] * sx, step[:, 1] * sy, step[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        b = ix + iy + iz
        c00 = flat[b] * gz + flat[b + dz] * fz
        c01 = flat[b + dy] * gz + flat[b + dy + dz] * fz
        c10 = flat[b + dx] * gz + flat[b + dx + dz] * fz
        c11 = flat[b + dx + dy] * gz + flat[b + dx + dy + dz] * fz
        out[start:start + _CHUNK] = (c00 * gy + c01 * fy) * gx + (c10 * gy + c11 * fy) * fx
    return out.reshape(out_shape)


def voxel_stats(a, b):
    a_data, b_data = mask_array(a), mask_array(b)
    if a_data.shape != b_data.shape:
        raise ValueError(f"mask dims differ: {a_data.shape} vs {b_data.shape}")
    return VoxelSetStats(
        true_count=int(np.count_nonzero(a_data)),
        pred_count=int(np.count_nonzero(b_data)),
        intersection_count=int(np.count_nonzero(a_data & b_data)),
    )


def dsc(a, b):
    """Dice-Sorensen coefficient of two masks; 1.0 when both are empty."""
    return voxel_stats(a, b).dsc


def mask_array(m):
    """Boolean array of a ``Mask`` or any array-like."""
    return m.data if isinstance(m, Mask) else np.asarray(m, dtype=bool)


def boundary_map(mask):
    """Boolean grid of foreground voxels with at least one background 6-neighbor.

    Out-of-domain neighbors count as background.
    """
    fg = mask_array(mask)
    padded = np.pad(fg, 1, constant_values=False)
    interior = np.ones_like(fg)
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return fg & ~interior


def boundary_voxels(mask):
    """Boundary voxel coordinates, shape (N, 3), in lexicographic order."""
    return np.argwhere(boundary_map(mask))


def save_grid(path, array, dtype, **extra):
    """Write ``path.raw`` (x-fastest little-endian) and ``path.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    raw = np.asarray(arr, dtype=_DTYPES[dtype]).ravel(order="F")
    path.with_suffix(".raw").write_bytes(raw.tobytes())
    meta = {"dims": [int(d) for d in arr.shape], "dtype": dtype}
    meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_grid(path):
    """Read a raw+JSON grid; returns ``(array, sidecar)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    dtype = _DTYPES[meta["dtype"]]
    dims = tuple(int(d) for d in meta["dims"])
    raw = np.frombuffer(path.with_suffix(".raw").read_bytes(), dtype=dtype)
    if raw.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {np.prod(dims)} values, found {raw.size}")
    arr = raw.reshape(dims, order="F").astype(dtype.newbyteorder("="))
    return np.ascontiguousarray(arr), meta


def save_volume(path, vol):
    save_grid(path, vol.data, "f32")


def load_volume(path):
    arr, meta = load_grid(path)
    if meta["dtype"] != "f32":
        raise ValueError(f"{path}: expected f32 volume, got {meta['dtype']}")
    return Volume(arr)


def save_mask(path, mask):
    save_grid(path, mask_array(mask).astype(np.uint8), "u8")


def load_mask(path):
    arr, meta = load_grid(path)
    if meta["dtype"] != "u8":
        raise ValueError(f"{path}: expected u8 mask, got {meta['dtype']}")
    return Mask(arr != 0)
