"""Voxel grid indexing, detector geometry, and ray-annulus intersections."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamma3.geometry import (
    DetectorAnnulus,
    Direction3,
    Point3,
    VoxelGrid,
    _material_segments,
    check_grid_fits_bore,
    ray_annulus_entry,
)


class TestVoxelGrid:
    def test_single_voxel_center(self):
        g = VoxelGrid((1, 1, 1), (5.0, 5.0, 10.0))
        assert g.voxel_center(0) == Point3(0.0, 0.0, 0.0)

    def test_default_grid_corners(self, default_grid):
        # hand evaluation: origin - extent/2 + size/2
        assert default_grid.voxel_center(0) == Point3(-45.0, -45.0, -115.0)
        assert default_grid.voxel_center(default_grid.n_voxels - 1) == Point3(45.0, 45.0, 115.0)

    def test_out_of_range_index(self, default_grid):
        with pytest.raises(IndexError):
            default_grid.voxel_center(default_grid.n_voxels)
        with pytest.raises(IndexError):
            default_grid.voxel_center(-1)

    @given(
        dims=st.tuples(*[st.integers(1, 12)] * 3),
        sizes=st.tuples(*[st.floats(0.5, 20.0)] * 3),
        data=st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_index_center_roundtrip(self, dims, sizes, data):
        g = VoxelGrid(dims, sizes)
        j = data.draw(st.integers(0, g.n_voxels - 1))
        assert g.point_to_voxel(g.voxel_center(j)) == j

    def test_centers_array_matches_scalar(self, default_grid):
        centers = default_grid.centers()
        for j in (0, 1, 19, 400, default_grid.n_voxels - 1):
            assert tuple(centers[j]) == default_grid.voxel_center(j).as_tuple()

    def test_invalid_grids(self):
        with pytest.raises(ValueError):
            VoxelGrid((0, 1, 1), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            VoxelGrid((1, 1, 1), (0.0, 1.0, 1.0))


class TestDirection:
    def test_norm_enforced(self):
        Direction3(1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            Direction3(1.0, 0.1, 0.0)
        d = Direction3.normalized(3.0, 4.0, 0.0)
        assert d == Direction3(0.6, 0.8, 0.0)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            Direction3.normalized(0.0, 0.0, 0.0)


class TestDetector:
    def test_validation(self):
        with pytest.raises(ValueError):
            DetectorAnnulus(90.0, 70.0, 120.0)
        with pytest.raises(ValueError):
            DetectorAnnulus(70.0, 90.0, 0.0)

    def test_grid_fits_bore(self, default_grid, detector):
        check_grid_fits_bore(default_grid, detector)
        big = VoxelGrid((19, 19, 24), (8.0, 8.0, 10.0))
        with pytest.raises(ValueError):
            check_grid_fits_bore(big, detector)
        long = VoxelGrid((5, 5, 30), (5.0, 5.0, 10.0))
        with pytest.raises(ValueError):
            check_grid_fits_bore(long, detector)


class TestRayAnnulus:
    def test_radial_ray(self, detector):
        assert ray_annulus_entry(Point3(0, 0, 0), Direction3(1, 0, 0), detector) == (70.0, 90.0)

    def test_axial_escape(self, detector):
        assert ray_annulus_entry(Point3(0, 0, 0), Direction3(0, 0, 1), detector) is None

    def test_diagonal_ray(self, detector):
        d = Direction3.normalized(1.0, 0.0, 1.0)
        t0, t1 = ray_annulus_entry(Point3(0, 0, 0), d, detector)
        assert t0 == pytest.approx(70.0 * math.sqrt(2.0), rel=1e-12)
        assert t1 == pytest.approx(90.0 * math.sqrt(2.0), rel=1e-12)

    def test_origin_outside_bore_rejected(self, detector):
        with pytest.raises(ValueError):
            ray_annulus_entry(Point3(80.0, 0.0, 0.0), Direction3(1, 0, 0), detector)

    def test_cap_clipping(self, detector):
        # steep ray: enters the wall, exits through the end cap
        d = Direction3.normalized(1.0, 0.0, 1.6)
        p = Point3(0.0, 0.0, 0.0)
        t0, t1 = ray_annulus_entry(p, d, detector)
        z_exit = p.z + t1 * d.z
        assert z_exit == pytest.approx(120.0, abs=1e-9)
        r_exit = math.hypot(p.x + t1 * d.x, p.y + t1 * d.y)
        assert 70.0 <= r_exit <= 90.0

    def test_two_segment_path_through_bore(self, detector):
        # from inside the wall, straight through the bore to the far wall
        s0, e0, s1, e1 = _material_segments(75.0, 0.0, 0.0, -1.0, 0.0, 0.0, 70.0, 90.0, 120.0)
        assert (s0, e0) == (0.0, 5.0)
        assert (s1, e1) == (145.0, 165.0)

    def test_million_ray_bounds(self, detector):
        """Entry <= exit; entry >= inner radius; exit <= the stated diagonal
        bound, for rays from the detector axis (vectorized oracle, checked
        against the scalar API on a subsample)."""
        n = 1_000_000
        gen = np.random.default_rng(5)
        z0 = gen.uniform(-119.0, 119.0, n)
        cz = gen.uniform(-1.0, 1.0, n)
        phi = gen.uniform(0.0, 2.0 * np.pi, n)
        s = np.sqrt(1.0 - cz**2)
        dx, dy, dz = s * np.cos(phi), s * np.sin(phi), cz

        # analytic: on-axis quadratic a t^2 = r^2
        a = dx**2 + dy**2
        present = a > 0
        rin, rout, hl = 70.0, 90.0, 120.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_in = rin / np.sqrt(a)
            t_out = rout / np.sqrt(a)
            t_cap = np.where(dz > 0, (hl - z0) / dz, np.where(dz < 0, (-hl - z0) / dz, np.inf))
        present &= t_cap > t_in
        entry = t_in[present]
        exit_ = np.minimum(t_out, t_cap)[present]
        bound = math.sqrt(rout**2 + (2.0 * hl) ** 2)
        assert np.all(entry <= exit_)
        assert np.all(entry >= rin - 1e-9)
        assert np.all(exit_ <= bound + 1e-9)

        idx = gen.choice(np.nonzero(present)[0], 2000, replace=False)
        for i in idx:
            got = ray_annulus_entry(
                Point3(0.0, 0.0, z0[i]), Direction3.normalized(dx[i], dy[i], dz[i]), detector
            )
            assert got is not None
            assert got[0] == pytest.approx(t_in[i], rel=1e-9)
            assert got[1] == pytest.approx(min(t_out[i], t_cap[i]), rel=1e-9)
        for i in gen.choice(np.nonzero(~present)[0], 200, replace=False):
            assert (
                ray_annulus_entry(
                    Point3(0.0, 0.0, z0[i]), Direction3.normalized(dx[i], dy[i], dz[i]), detector
                )
                is None
            )
