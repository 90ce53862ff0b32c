"""Direction set laid out as an azimuth x polar rectangle.

Azimuths are uniform, ``alpha = 2*pi*m1/Ma`` for ``m1 = 0..Ma-1``. Polar angles
are ``phi = arccos(2*m2/(Mp+1) - 1) - pi/2`` for ``m2 = 1..Mp``, which makes the
z components ``1 - 2*m2/(Mp+1)`` evenly spaced, i.e. latitudes are denser near
the equator. Array axis 1 holds ``m2 - 1``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DirectionGrid:
    ma: int
    mp: int
    azimuths: np.ndarray   # (ma,)
    polars: np.ndarray     # (mp,)
    dirs: np.ndarray       # (ma, mp, 3)

    @property
    def shape(self):
        return (self.ma, self.mp)

    @property
    def size(self):
        return self.ma * self.mp

    def polar_index(self, z):
        """Continuous array index along the polar axis for a z component."""
        return (1.0 - np.asarray(z, dtype=np.float64)) * (self.mp + 1) / 2.0 - 1.0

    def azimuth_index(self, alpha):
        """Continuous array index along the azimuth axis, in ``[0, ma)``."""
        return np.mod(np.asarray(alpha, dtype=np.float64), 2 * np.pi) * self.ma / (2 * np.pi)


def build_direction_grid(ma, mp):
    if int(ma) != ma or int(mp) != mp or ma < 1 or mp < 1:
        raise ValueError(f"grid sizes must be positive integers, got Ma={ma}, Mp={mp}")
    ma, mp = int(ma), int(mp)
    alpha = 2.0 * np.arange(ma) * np.pi / ma
    t = (2.0 * np.arange(1, mp + 1) - (mp + 1)) / (mp + 1)
    phi = np.arccos(t) - np.pi / 2
    ca, sa = np.cos(alpha)[:, None], np.sin(alpha)[:, None]
    # sin(phi) == -t exactly in real arithmetic; using -t keeps z symmetric bit-for-bit
    cp, sp = np.sqrt(1.0 - t * t)[None, :], -t[None, :]
    dirs = np.stack(np.broadcast_arrays(ca * cp, sa * cp, sp), axis=-1)
    for arr in (alpha, phi, dirs):
        arr.flags.writeable = False
    return DirectionGrid(ma, mp, alpha, phi, dirs)


def solid_angle_weights(grid):
    """Per-direction solid angle; the cells partition the sphere (sum 4*pi).

    Latitude band edges sit halfway between neighboring z values, with the
    outermost bands running to the poles.
    """
    z = 1.0 - 2.0 * np.arange(1, grid.mp + 1) / (grid.mp + 1)
    edges = np.concatenate([[1.0], (z[:-1] + z[1:]) / 2.0, [-1.0]])
    band = edges[:-1] - edges[1:]
    return np.broadcast_to(2.0 * np.pi / grid.ma * band[None, :], grid.shape).copy()
