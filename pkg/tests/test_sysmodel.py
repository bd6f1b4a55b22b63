"""Kernel factors, sensitivity estimation, axial profiles, and map files."""

import json
import math

import numpy as np
import pytest

from gamma3.geometry import Point3, VoxelGrid
from gamma3.physics import PhysicsParams
from gamma3.simulate import CLASS_TAGS, DetectionEvent, ToyModel
from gamma3.sysmodel import (
    KernelParams,
    SensitivityMap,
    ZERO_GAMMA,
    _cone_kernel_point,
    _lor_kernel_point,
    axial_profile,
    estimate_sensitivity,
    kernel_value,
    load_sensitivity,
    save_sensitivity,
    write_profiles_csv,
    write_transaxial_slice_csv,
)

from conftest import make_cone, make_event

SQRT_2PI = math.sqrt(2.0 * math.pi)


def uniform_map(grid, value=0.1, M=100, seed=0):
    return SensitivityMap(
        grid, {tag: np.full(grid.n_voxels, value) for tag in CLASS_TAGS}, M, seed
    )


class TestLorKernel:
    def test_peak_value_and_ratio(self):
        """On the line: 1/(sqrt(2 pi) sigma); one sigma off: ratio e^{1/2}."""
        sigma = 3.0
        params = KernelParams(lor_transverse_sigma_mm=sigma)
        grid = VoxelGrid((1, 1, 1), (1.0, 1.0, 1.0))  # voxel centre at origin
        on_line = kernel_value("C02", make_event("C02"), 0, grid, params)
        assert on_line == pytest.approx(1.0 / (SQRT_2PI * sigma), rel=1e-12)
        shifted = VoxelGrid((1, 1, 1), (1.0, 1.0, 1.0), Point3(0.0, sigma, 0.0))
        off_line = kernel_value("C02", make_event("C02"), 0, shifted, params)
        assert on_line / off_line == pytest.approx(math.exp(0.5), rel=1e-12)

    def test_monotone_in_transverse_distance(self):
        params = KernelParams()
        dists = np.linspace(0.0, 30.0, 200)
        vals = [
            _lor_kernel_point(0.0, d, 0.0, 80.0, 0.0, 0.0, -80.0, 0.0, 0.0, np.nan, 3.0, -1.0)
            for d in dists
        ]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_tof_factor(self):
        """TOF term is a normal density along the line about dt*c/2."""
        sigma_l, sigma_t = 3.0, 10.0
        c_mm_ps = 0.299792458
        dt = 100.0  # origin 14.99 mm toward p2
        base = _lor_kernel_point(0.0, 0.0, 0.0, -80.0, 0.0, 0.0, 80.0, 0.0, 0.0, np.nan, sigma_l, sigma_t)
        at_mid = _lor_kernel_point(0.0, 0.0, 0.0, -80.0, 0.0, 0.0, 80.0, 0.0, 0.0, dt, sigma_l, sigma_t)
        at_tof = _lor_kernel_point(
            dt * c_mm_ps / 2.0, 0.0, 0.0, -80.0, 0.0, 0.0, 80.0, 0.0, 0.0, dt, sigma_l, sigma_t
        )
        peak = base / (SQRT_2PI * sigma_t)
        assert at_tof == pytest.approx(peak, rel=1e-12)
        shift = dt * c_mm_ps / 2.0
        assert at_mid == pytest.approx(peak * math.exp(-shift**2 / (2 * sigma_t**2)), rel=1e-12)


class TestConeKernel:
    def test_peak_and_sin_corrected_ratio(self):
        """At the cone surface the angular Gaussian peaks; one sigma off the
        ratio is e^{1/2} times the ring-circumference correction."""
        sigma = 0.05
        cone = make_cone()  # apex (80,0,0), axis -x, beta = acos(0.71888...)
        beta = cone.half_angle_beta
        apex = np.array([80.0, 0.0, 0.0])

        def at_angle(theta):
            p = apex + 50.0 * np.array([-math.cos(theta), math.sin(theta), 0.0])
            return _cone_kernel_point(
                p[0], p[1], p[2], apex[0], apex[1], apex[2], -1.0, 0.0, 0.0, beta, sigma
            )

        on = at_angle(beta)
        off = at_angle(beta + sigma)
        assert on == pytest.approx(1.0 / (SQRT_2PI * sigma * math.sin(beta)), rel=1e-9)
        want_ratio = math.exp(0.5) * math.sin(beta + sigma) / math.sin(beta)
        assert on / off == pytest.approx(want_ratio, rel=1e-9)

    def test_ring_clamp_near_axis(self):
        # theta -> 0: divisor clamps at sin(sigma) instead of diverging
        sigma = 0.05
        v = _cone_kernel_point(0.0, 0.0, 0.0, 80.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, sigma)
        assert v == pytest.approx(1.0 / (SQRT_2PI * sigma * math.sin(sigma)), rel=1e-12)

    def test_continuity_under_point_perturbation(self):
        # probe within a sigma of the cone surface, where the kernel has
        # its mass; far tails have much larger log-derivatives
        cone = make_cone()
        beta = cone.half_angle_beta
        theta = beta + 0.5 * 0.05
        p = np.array([80.0 - 50.0 * math.cos(theta), 50.0 * math.sin(theta), 0.0])
        base = _cone_kernel_point(*p, 80.0, 0.0, 0.0, -1.0, 0.0, 0.0, beta, 0.05)
        for axis in range(3):
            q = p.copy()
            q[axis] += 1e-6
            moved = _cone_kernel_point(*q, 80.0, 0.0, 0.0, -1.0, 0.0, 0.0, beta, 0.05)
            assert abs(moved - base) / base < 1e-6

    def test_lor_continuity_under_point_perturbation(self):
        p = np.array([0.0, 2.0, 5.0])
        base = _lor_kernel_point(*p, 80.0, 0.0, 0.0, -80.0, 0.0, 0.0, np.nan, 3.0, -1.0)
        for axis in range(3):
            q = p.copy()
            q[axis] += 1e-6
            moved = _lor_kernel_point(*q, 80.0, 0.0, 0.0, -80.0, 0.0, 0.0, np.nan, 3.0, -1.0)
            assert abs(moved - base) / base < 1e-6


class TestKernelValue:
    def test_c12_factorizes(self, default_grid):
        params = KernelParams()
        ev12 = make_event("C12")
        ev02 = DetectionEvent("C02", lor=ev12.lor)
        ev10 = DetectionEvent("C10", cones=ev12.cones)
        for j in (0, 100, 2000, default_grid.n_voxels - 1):
            a12 = kernel_value("C12", ev12, j, default_grid, params)
            a02 = kernel_value("C02", ev02, j, default_grid, params)
            a10 = kernel_value("C10", ev10, j, default_grid, params)
            assert a12 == pytest.approx(a02 * a10, rel=1e-12, abs=0.0)

    def test_c11_is_product_of_two_cones(self, default_grid):
        params = KernelParams()
        ev = make_event("C11")
        one = DetectionEvent("C01", cones=ev.cones[:1])
        two = DetectionEvent("C10", cones=ev.cones[1:])
        j = 1200
        assert kernel_value("C11", ev, j, default_grid, params) == pytest.approx(
            kernel_value("C01", one, j, default_grid, params)
            * kernel_value("C10", two, j, default_grid, params),
            rel=1e-12,
        )

    def test_class_mismatch_rejected(self, default_grid):
        with pytest.raises(ValueError):
            kernel_value("C02", make_event("C10"), 0, default_grid, KernelParams())

    def test_index_range(self, default_grid):
        with pytest.raises(IndexError):
            kernel_value("C02", make_event("C02"), default_grid.n_voxels, default_grid, KernelParams())

    def test_zero_is_legal(self, default_grid):
        # a far-off cone underflows to exactly zero
        cone = make_cone(apex=(80.0, 0.0, 110.0), axis=(0.0, 0.0, 1.0))
        ev = DetectionEvent("C10", cones=(cone,))
        v = kernel_value("C10", ev, 0, default_grid, KernelParams(cone_angular_sigma_rad=(0.01, 0.01)))
        assert v == 0.0

    def test_branch_sigma_selection(self):
        params = KernelParams(cone_angular_sigma_rad=(0.07, 0.02))
        assert params.cone_sigma_for(511.0) == 0.07
        assert params.cone_sigma_for(1157.0) == 0.02

    def test_params_validation(self):
        with pytest.raises(ValueError):
            KernelParams(lor_transverse_sigma_mm=0.0)
        with pytest.raises(ValueError):
            KernelParams(tof_sigma_mm=-1.0)
        with pytest.raises(ValueError):
            KernelParams(cone_angular_sigma_rad=(0.1,))


class TestSensitivity:
    def test_detection_off_gives_zero(self, tiny_grid, detector):
        phys = PhysicsParams(mfp_511_mm=math.inf, mfp_1157_mm=math.inf)
        sens = estimate_sensitivity(tiny_grid, detector, phys, 50, seed=1)
        for tag in CLASS_TAGS:
            assert np.all(sens.values[tag] == 0.0)

    def test_toy_matches_closed_form(self, tiny_grid, detector, physics_quiet):
        p, q = 0.4, 0.6
        M = 600
        sens = estimate_sensitivity(
            tiny_grid, detector, physics_quiet, M, seed=2, toy=ToyModel(p, q)
        )
        want = p * p * q
        se = math.sqrt(want * (1 - want) / M)
        assert np.all(np.abs(sens.values["C12"] - want) < 3 * se)

    def test_m1_bernoulli(self, tiny_grid, detector):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 1, seed=3)
        for tag in CLASS_TAGS:
            assert set(np.unique(sens.values[tag])) <= {0.0, 1.0}

    def test_partition_bound(self, tiny_grid, detector):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 300, seed=4)
        total = sens.total()
        assert np.all(total <= 1.0) and np.all(total >= 0.0)

    def test_thread_invariance(self, tiny_grid, detector):
        from gamma3._accel import set_worker_threads

        set_worker_threads(1)
        a = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 100, seed=5)
        set_worker_threads(8)
        b = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 100, seed=5)
        for tag in CLASS_TAGS:
            assert np.array_equal(a.values[tag], b.values[tag])

    def test_sqrt_m_convergence(self, detector):
        """|s(M) - s(4M)| stays within five standard errors of the coarser
        run on three probe voxels."""
        grid = VoxelGrid((3, 3, 1), (20.0, 20.0, 40.0))
        phys = PhysicsParams()
        m = 400
        a = estimate_sensitivity(grid, detector, phys, m, seed=6)
        b = estimate_sensitivity(grid, detector, phys, 4 * m, seed=7)
        for j in (0, 4, 8):
            for tag in ("C01", "C02"):
                s = a.values[tag][j]
                se = math.sqrt(max(s * (1 - s), 1e-6) / m)
                assert abs(s - b.values[tag][j]) < 5 * se

    def test_validation(self, tiny_grid):
        with pytest.raises(ValueError):
            SensitivityMap(tiny_grid, {t: np.full(tiny_grid.n_voxels, 0.5) for t in CLASS_TAGS}, 10, 0)
        with pytest.raises(ValueError):
            SensitivityMap(tiny_grid, {}, 10, 0)
        with pytest.raises(ValueError):
            SensitivityMap(tiny_grid, {"C99": np.zeros(tiny_grid.n_voxels)}, 10, 0)
        # a subset of classes is a legal map (e.g. files written per class)
        subset = SensitivityMap(tiny_grid, {"C12": np.full(tiny_grid.n_voxels, 0.3)}, 10, 0)
        assert subset.classes == ("C12",)

    def test_standard_error_formula(self, tiny_grid):
        m = uniform_map(tiny_grid, 0.1, M=100)
        assert m.standard_error("C01")[0] == pytest.approx(math.sqrt(0.1 * 0.9 / 100))


class TestProfiles:
    def test_uniform_map_profiles(self, tiny_grid):
        m = uniform_map(tiny_grid, 0.1)
        for tag in CLASS_TAGS:
            prof = axial_profile(m, tag)
            assert all(v == pytest.approx(10.0, abs=1e-12) for _, v in prof)
        zg = axial_profile(m, ZERO_GAMMA)
        assert all(v == pytest.approx(50.0, abs=1e-12) for _, v in zg)

    def test_partition_sums_to_100(self, tiny_grid, detector):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 200, seed=8)
        profs = {tag: axial_profile(sens, tag) for tag in CLASS_TAGS + (ZERO_GAMMA,)}
        nz = tiny_grid.dims[2]
        for i in range(nz):
            total = sum(profs[tag][i][1] for tag in profs)
            assert total == pytest.approx(100.0, abs=1e-9)

    def test_z_symmetry(self, detector):
        grid = VoxelGrid((3, 3, 8), (20.0, 20.0, 25.0))
        sens = estimate_sensitivity(grid, detector, PhysicsParams(), 800, seed=9)
        prof = np.array([v for _, v in axial_profile(sens, "C02")])
        # symmetric detector: mirrored slices agree within MC noise
        se = 100.0 * math.sqrt(0.25 / (800 * 9))
        assert np.all(np.abs(prof - prof[::-1]) < 6 * se)

    def test_unknown_tag(self, tiny_grid):
        with pytest.raises(ValueError):
            axial_profile(uniform_map(tiny_grid), "C99")


class TestMapFiles:
    def test_roundtrip(self, tiny_grid, detector, tmp_path):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 64, seed=11)
        stem = str(tmp_path / "sens")
        save_sensitivity(stem, sens, config_echo={"seed": 11})
        back = load_sensitivity(stem)
        assert back.grid == tiny_grid
        assert back.emissions_per_voxel == 64
        assert back.seed == 11
        for tag in CLASS_TAGS:
            # counts/64 are exact in float32
            assert np.array_equal(back.values[tag], sens.values[tag])
        header = json.loads((tmp_path / "sens.json").read_text())
        assert header["classes"] == list(CLASS_TAGS)
        assert header["config"] == {"seed": 11}

    def test_rewrite_is_byte_identical(self, tiny_grid, detector, tmp_path):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 50, seed=12)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        save_sensitivity(a, sens)
        save_sensitivity(b, sens)
        for tag in CLASS_TAGS:
            assert (tmp_path / f"a.{tag}.raw").read_bytes() == (tmp_path / f"b.{tag}.raw").read_bytes()

    def test_csv_outputs(self, tiny_grid, detector, tmp_path):
        sens = estimate_sensitivity(tiny_grid, detector, PhysicsParams(), 64, seed=13)
        prof_path = tmp_path / "prof.csv"
        write_profiles_csv(prof_path, sens, meta={"seed": 13})
        lines = prof_path.read_text().strip().splitlines()
        assert lines[1] == "z_mm,C01,C10,C02,C11,C12,zero_gamma"
        row = lines[2].split(",")
        assert len(row) == 7
        assert sum(float(x) for x in row[1:]) == pytest.approx(100.0, abs=1e-9)

        slice_path = tmp_path / "slice.csv"
        write_transaxial_slice_csv(slice_path, sens, 0.0, meta={"seed": 13})
        lines = slice_path.read_text().strip().splitlines()
        assert lines[1] == "x_mm,y_mm,C01,C10,C02,C11,C12"
        assert len(lines) == 2 + tiny_grid.dims[0] * tiny_grid.dims[1]
