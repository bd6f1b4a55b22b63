"""Detector geometry, voxel grid, and point/direction primitives.

Coordinate convention: z is the detector axis, millimetres everywhere,
and the voxel grid is centred on the detector centre.  Voxel index
``j = ix + nx * (iy + ny * iz)`` (x fastest).
"""

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit

_UNIT_TOL = 1e-12


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def as_tuple(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Direction3:
    """Unit vector; norm must be 1 within 1e-12."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"direction norm {n!r} deviates from 1 by more than {_UNIT_TOL}")

    @classmethod
    def normalized(cls, x, y, z):
        n = math.sqrt(x * x + y * y + z * z)
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return cls(x / n, y / n, z / n)

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def as_tuple(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular 3-D grid; ``origin`` is the geometric centre of the grid."""

    dims: tuple
    voxel_size: tuple
    origin: Point3 = Point3(0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.dims) != 3 or len(self.voxel_size) != 3:
            raise ValueError("dims and voxel_size must have three components")
        if any(int(n) != n or n < 1 for n in self.dims):
            raise ValueError(f"grid dims must be positive integers, got {self.dims}")
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError(f"voxel dimensions must be strictly positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(s) for s in self.voxel_size))

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self):
        """Full grid extent (ex, ey, ez) in mm."""
        return tuple(n * s for n, s in zip(self.dims, self.voxel_size))

    @property
    def lower_corner(self):
        ex, ey, ez = self.extent
        return Point3(self.origin.x - ex / 2, self.origin.y - ey / 2, self.origin.z - ez / 2)

    def voxel_indices(self, j):
        nx, ny, nz = self.dims
        if not 0 <= j < self.n_voxels:
            raise IndexError(f"voxel index {j} out of range [0, {self.n_voxels})")
        ix = j % nx
        iy = (j // nx) % ny
        iz = j // (nx * ny)
        return ix, iy, iz

    def flat_index(self, ix, iy, iz):
        nx, ny, nz = self.dims
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise IndexError(f"voxel coordinates {(ix, iy, iz)} out of range for dims {self.dims}")
        return ix + nx * (iy + ny * iz)

    def voxel_center(self, j):
        """Geometric centre of voxel ``j``."""
        ix, iy, iz = self.voxel_indices(j)
        lo = self.lower_corner
        dx, dy, dz = self.voxel_size
        return Point3(lo.x + (ix + 0.5) * dx, lo.y + (iy + 0.5) * dy, lo.z + (iz + 0.5) * dz)

    def point_to_voxel(self, p):
        """Flat index of the voxel containing ``p``, or None when outside."""
        lo = self.lower_corner
        nx, ny, nz = self.dims
        dx, dy, dz = self.voxel_size
        ix = int(math.floor((p.x - lo.x) / dx))
        iy = int(math.floor((p.y - lo.y) / dy))
        iz = int(math.floor((p.z - lo.z) / dz))
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            return None
        return self.flat_index(ix, iy, iz)

    def centers(self):
        """(J, 3) array of voxel centres, x fastest."""
        nx, ny, nz = self.dims
        dx, dy, dz = self.voxel_size
        lo = self.lower_corner
        xs = lo.x + (np.arange(nx) + 0.5) * dx
        ys = lo.y + (np.arange(ny) + 0.5) * dy
        zs = lo.z + (np.arange(nz) + 0.5) * dz
        out = np.empty((nx * ny * nz, 3), dtype=np.float64)
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        out[:, 0] = xx.ravel()
        out[:, 1] = yy.ravel()
        out[:, 2] = zz.ravel()
        return out

    def z_slice_centers(self):
        nz = self.dims[2]
        dz = self.voxel_size[2]
        return self.lower_corner.z + (np.arange(nz) + 0.5) * dz


@dataclass(frozen=True)
class DetectorAnnulus:
    """Hollow-cylinder detection medium around the field of view."""

    inner_radius_mm: float = 70.0
    outer_radius_mm: float = 90.0
    axial_half_length_mm: float = 120.0

    def __post_init__(self):
        if not 0 < self.inner_radius_mm < self.outer_radius_mm:
            raise ValueError(
                f"need 0 < inner < outer radius, got {self.inner_radius_mm}, {self.outer_radius_mm}"
            )
        if self.axial_half_length_mm <= 0:
            raise ValueError("axial half length must be positive")

    def contains_in_bore(self, p):
        r = math.hypot(p.x, p.y)
        return r < self.inner_radius_mm and abs(p.z) < self.axial_half_length_mm


def check_grid_fits_bore(grid, det):
    """Raise when the grid's bounding box sticks out of the inner bore."""
    ex, ey, ez = grid.extent
    ox, oy, oz = grid.origin.as_tuple()
    corner = math.hypot(abs(ox) + ex / 2, abs(oy) + ey / 2)
    if corner > det.inner_radius_mm + 1e-9:
        raise ValueError(
            f"grid corner radius {corner:.3f} mm exceeds the inner bore "
            f"radius {det.inner_radius_mm:.3f} mm"
        )
    if abs(oz) + ez / 2 > det.axial_half_length_mm + 1e-9:
        raise ValueError(
            f"grid axial half-extent {abs(oz) + ez / 2:.3f} mm exceeds the detector "
            f"half length {det.axial_half_length_mm:.3f} mm"
        )


@njit(cache=True)
def _material_segments(px, py, pz, dx, dy, dz, rin, rout, hl):
    """Forward-ray intervals inside the annulus wall.

    Returns (s0, e0, s1, e1); an interval with e <= s is empty.  The result
    is the set {t >= 0 : rin <= r(t) <= rout, |z(t)| <= hl}, which has at
    most two components for a straight line.
    """
    a = dx * dx + dy * dy
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py

    big = 1e300

    # slab |z| <= hl
    if dz == 0.0:
        if abs(pz) <= hl:
            tz0, tz1 = -big, big
        else:
            return 0.0, -1.0, 0.0, -1.0
    else:
        t1 = (-hl - pz) / dz
        t2 = (hl - pz) / dz
        tz0, tz1 = (t1, t2) if t1 < t2 else (t2, t1)

    # outer cylinder r <= rout
    if a == 0.0:
        if c <= rout * rout:
            to0, to1 = -big, big
        else:
            return 0.0, -1.0, 0.0, -1.0
    else:
        disc = b * b - 4.0 * a * (c - rout * rout)
        if disc <= 0.0:
            return 0.0, -1.0, 0.0, -1.0
        sq = math.sqrt(disc)
        to0 = (-b - sq) / (2.0 * a)
        to1 = (-b + sq) / (2.0 * a)

    lo = max(tz0, to0, 0.0)
    hi = min(tz1, to1)
    if hi <= lo:
        return 0.0, -1.0, 0.0, -1.0

    # inner cylinder hole r < rin
    ti0, ti1 = big, -big
    if a == 0.0:
        if c < rin * rin:
            ti0, ti1 = -big, big
    else:
        disc = b * b - 4.0 * a * (c - rin * rin)
        if disc > 0.0:
            sq = math.sqrt(disc)
            ti0 = (-b - sq) / (2.0 * a)
            ti1 = (-b + sq) / (2.0 * a)

    if ti1 <= ti0 or ti1 <= lo or ti0 >= hi:
        return lo, hi, 0.0, -1.0

    s0, e0 = lo, min(hi, ti0)
    s1, e1 = max(lo, ti1), hi
    if e0 <= s0:
        return s1, e1, 0.0, -1.0
    return s0, e0, s1, e1


def ray_annulus_entry(p, d, det):
    """Ray-parameter interval over which a ray from the bore crosses detector
    material, or None when it escapes axially without touching it."""
    if not det.contains_in_bore(p):
        raise ValueError("ray origin must lie inside the inner bore")
    s0, e0, _, _ = _material_segments(
        p.x,
        p.y,
        p.z,
        d.x,
        d.y,
        d.z,
        det.inner_radius_mm,
        det.outer_radius_mm,
        det.axial_half_length_mm,
    )
    if e0 <= s0:
        return None
    return (s0, e0)
