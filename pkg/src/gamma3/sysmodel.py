"""Per-class system-model kernels and Monte-Carlo sensitivity maps.

The system model A_j(y) is a product of Gaussian factors evaluated at the
voxel centre:

  LOR      normal density in the transverse distance to the line, times an
           optional normal density along the line centred at the TOF
           estimate;
  cone     normal density in the angular residual (theta_j - beta), where
           theta_j is the polar angle of the voxel about the cone axis,
           divided by the ring-circumference factor sin(theta_j) clamped
           below at sin(sigma);
  C11/C12  products of their component kernels.

Sensitivities are estimated by transporting M decays per voxel through the
same simulator that generates events: s_j^k = (class-k detections from
voxel j) / M.  Kernel integrals and transport probabilities therefore
agree only approximately; the gap is measured by
``infer.model_consistency_report`` and documented in the README.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from ._accel import njit, prange
from .physics import ANNIHILATION_KEV, SPEED_OF_LIGHT_MM_PER_PS
from .simulate import CLASS_TAGS, _branch_of_e0, _simulate_decay

_SQRT_2PI = math.sqrt(2.0 * math.pi)

ZERO_GAMMA = "zero_gamma"

_CHUNK_EVENTS = 256


@dataclass(frozen=True)
class KernelParams:
    """Widths of the Gaussian kernel factors (reconstruction model, not
    simulation noise).  ``cone_angular_sigma_rad`` is (511, 1157) branch."""

    lor_transverse_sigma_mm: float = 3.0
    tof_sigma_mm: Optional[float] = None
    cone_angular_sigma_rad: tuple = (0.04, 0.03)

    def __post_init__(self):
        if self.lor_transverse_sigma_mm <= 0:
            raise ValueError("LOR transverse sigma must be positive")
        if self.tof_sigma_mm is not None and self.tof_sigma_mm <= 0:
            raise ValueError("TOF sigma must be positive when enabled")
        if len(self.cone_angular_sigma_rad) != 2 or any(
            s <= 0 for s in self.cone_angular_sigma_rad
        ):
            raise ValueError("cone angular sigmas must be two positive values")

    def cone_sigma_for(self, e0_kev):
        return self.cone_angular_sigma_rad[0 if _branch_of_e0(e0_kev) == ANNIHILATION_KEV else 1]


# ---------------------------------------------------------------------------
# jitted kernel evaluation


@njit(cache=True)
def _lor_kernel_point(px, py, pz, x1, y1, z1, x2, y2, z2, dt_ps, sigma_lor, sigma_tof):
    ux, uy, uz = x2 - x1, y2 - y1, z2 - z1
    un = math.sqrt(ux * ux + uy * uy + uz * uz)
    if un < 1e-12:
        return 0.0
    ux, uy, uz = ux / un, uy / un, uz / un
    vx, vy, vz = px - x1, py - y1, pz - z1
    along = vx * ux + vy * uy + vz * uz
    d2 = max(vx * vx + vy * vy + vz * vz - along * along, 0.0)
    g = math.exp(-d2 / (2.0 * sigma_lor * sigma_lor)) / (_SQRT_2PI * sigma_lor)
    if sigma_tof > 0.0 and not math.isnan(dt_ps):
        l_mid = along - 0.5 * un
        l_tof = 0.5 * dt_ps * SPEED_OF_LIGHT_MM_PER_PS
        dl = l_mid - l_tof
        g *= math.exp(-dl * dl / (2.0 * sigma_tof * sigma_tof)) / (_SQRT_2PI * sigma_tof)
    return g


@njit(cache=True)
def _cone_kernel_point(px, py, pz, ax, ay, az, ux, uy, uz, beta, sigma):
    vx, vy, vz = px - ax, py - ay, pz - az
    vn = math.sqrt(vx * vx + vy * vy + vz * vz)
    if vn < 1e-12:
        return 0.0
    ct = (vx * ux + vy * uy + vz * uz) / vn
    ct = min(1.0, max(-1.0, ct))
    theta = math.acos(ct)
    delta = theta - beta
    ring = max(math.sin(theta), math.sin(min(sigma, 0.5 * math.pi)))
    return math.exp(-delta * delta / (2.0 * sigma * sigma)) / (_SQRT_2PI * sigma * ring)


@njit(cache=True, parallel=True)
def _fill_rows(centers, lor, cones, ncones, sigmas, sigma_lor, sigma_tof, i0, n, out):
    """A-row evaluation for events [i0, i0+n) into out (n, J)."""
    nvox = centers.shape[0]
    for r in prange(n):
        i = i0 + r
        has_lor = not math.isnan(lor[i, 0])
        for j in range(nvox):
            a = 1.0
            if has_lor:
                a *= _lor_kernel_point(
                    centers[j, 0], centers[j, 1], centers[j, 2],
                    lor[i, 0], lor[i, 1], lor[i, 2],
                    lor[i, 3], lor[i, 4], lor[i, 5],
                    lor[i, 6], sigma_lor, sigma_tof,
                )
            for k in range(ncones[i]):
                a *= _cone_kernel_point(
                    centers[j, 0], centers[j, 1], centers[j, 2],
                    cones[i, k, 0], cones[i, k, 1], cones[i, k, 2],
                    cones[i, k, 3], cones[i, k, 4], cones[i, k, 5],
                    cones[i, k, 6], sigmas[i, k],
                )
            out[r, j] = a


@dataclass
class FlatEvents:
    """Struct-of-arrays event layout consumed by the jitted kernels."""

    n: int
    lor: np.ndarray  # (n, 7) p1 p2 dt, NaN when absent
    cones: np.ndarray  # (n, 2, 9) apex axis beta e0 e1
    ncones: np.ndarray  # (n,)
    sigmas: np.ndarray  # (n, 2) angular sigma per cone
    eps: np.ndarray  # (n,) per-event override, NaN when unset


def flatten_events(events, params):
    n = len(events)
    lor = np.full((n, 7), np.nan)
    cones = np.zeros((n, 2, 9))
    ncones = np.zeros(n, dtype=np.int64)
    sigmas = np.zeros((n, 2))
    eps = np.full(n, np.nan)
    for i, ev in enumerate(events):
        if ev.lor is not None:
            lor[i, 0:3] = ev.lor.p1.as_array()
            lor[i, 3:6] = ev.lor.p2.as_array()
            lor[i, 6] = np.nan if ev.lor.dt_ps is None else ev.lor.dt_ps
        ncones[i] = len(ev.cones)
        for k, c in enumerate(ev.cones):
            cones[i, k, 0:3] = c.apex.as_array()
            cones[i, k, 3:6] = c.axis.as_array()
            cones[i, k, 6] = c.half_angle_beta
            cones[i, k, 7] = c.e0_kev
            cones[i, k, 8] = c.e1_kev
            sigmas[i, k] = params.cone_sigma_for(c.e0_kev)
        if ev.eps is not None:
            eps[i] = ev.eps
    return FlatEvents(n, lor, cones, ncones, sigmas, eps)


def event_rows(flat, centers, params, i0, n, out=None):
    """Dense A rows for ``n`` events starting at ``i0``; returns (n, J)."""
    if out is None:
        out = np.empty((n, centers.shape[0]))
    sigma_tof = -1.0 if params.tof_sigma_mm is None else params.tof_sigma_mm
    _fill_rows(
        centers, flat.lor, flat.cones, flat.ncones, flat.sigmas,
        params.lor_transverse_sigma_mm, sigma_tof, i0, n, out,
    )
    return out


def iter_event_rows(events, grid, params, chunk=_CHUNK_EVENTS):
    """Yield (start index, dense A-row block) over an event list.

    The yielded block is a view into a reused buffer: consume (or copy) it
    before advancing the iterator."""
    flat = events if isinstance(events, FlatEvents) else flatten_events(events, params)
    centers = grid.centers()
    buf = np.empty((min(chunk, max(flat.n, 1)), centers.shape[0]))
    i = 0
    while i < flat.n:
        n = min(chunk, flat.n - i)
        yield i, event_rows(flat, centers, params, i, n, buf[:n])
        i += n


def kernel_value(class_tag, event, j, grid, params):
    """System-model density A_j(y) of one event at voxel ``j``."""
    if event.class_tag != class_tag:
        raise ValueError(
            f"event of class {event.class_tag} passed to kernel for {class_tag}"
        )
    if not 0 <= j < grid.n_voxels:
        raise IndexError(f"voxel index {j} out of range")
    c = grid.voxel_center(j)
    a = 1.0
    if event.lor is not None:
        dt = np.nan if event.lor.dt_ps is None else event.lor.dt_ps
        sigma_tof = -1.0 if params.tof_sigma_mm is None else params.tof_sigma_mm
        a *= _lor_kernel_point(
            c.x, c.y, c.z,
            event.lor.p1.x, event.lor.p1.y, event.lor.p1.z,
            event.lor.p2.x, event.lor.p2.y, event.lor.p2.z,
            dt, params.lor_transverse_sigma_mm, sigma_tof,
        )
    for cone in event.cones:
        a *= _cone_kernel_point(
            c.x, c.y, c.z,
            cone.apex.x, cone.apex.y, cone.apex.z,
            cone.axis.x, cone.axis.y, cone.axis.z,
            cone.half_angle_beta, params.cone_sigma_for(cone.e0_kev),
        )
    return a


# ---------------------------------------------------------------------------
# Monte-Carlo sensitivity


@dataclass
class SensitivityMap:
    """Per-class detection probabilities s_j^k with their MC sample count."""

    grid: object
    values: dict
    emissions_per_voxel: int
    seed: int

    def __post_init__(self):
        if not self.values:
            raise ValueError("sensitivity map has no classes")
        total = np.zeros(self.grid.n_voxels)
        for tag, v in self.values.items():
            if tag not in CLASS_TAGS:
                raise ValueError(f"unknown class tag {tag!r} in sensitivity map")
            if v.shape != (self.grid.n_voxels,):
                raise ValueError("sensitivity array does not match the grid")
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError("sensitivities must lie in [0, 1]")
            total += v
        # slack covers float32 round-trip of maps stored on disk
        if np.any(total > 1.0 + 1e-6):
            raise ValueError("per-voxel class sensitivities exceed 1")

    @property
    def classes(self):
        return tuple(tag for tag in CLASS_TAGS if tag in self.values)

    def total(self, class_subset=None):
        tags = self.classes if class_subset is None else tuple(class_subset)
        out = np.zeros(self.grid.n_voxels)
        for tag in tags:
            out += self.values[tag]
        return out

    def standard_error(self, tag):
        s = self.values[tag]
        return np.sqrt(s * (1.0 - s) / self.emissions_per_voxel)


@njit(cache=True, parallel=True)
def _sensitivity_block(
    seed, n_voxels, per_voxel, nx, ny, dx, dy, dz, lox, loy, loz,
    rin, rout, hl, mfp511, mfp1157, eres, pa_frac, window_w,
    toy_enabled, toy_p, toy_q, counts,
):
    for v in prange(n_voxels):
        out_class = np.empty(1, dtype=np.int64)
        out_lor = np.empty((1, 7))
        out_ncones = np.empty(1, dtype=np.int64)
        out_cones = np.empty((1, 2, 9))
        out_truth = np.empty((1, 3))
        ix = v % nx
        iy = (v // nx) % ny
        iz = v // (nx * ny)
        for m in range(per_voxel):
            stream = rng.DOMAIN_SENSITIVITY * (1 << 48) + v * per_voxel + m
            ctr = 0
            u1, u2, ctr = rng.uniform_pair(seed, stream, ctr)
            u3, ctr = rng.uniform(seed, stream, ctr)
            _simulate_decay(
                seed, stream,
                lox + (ix + u1) * dx, loy + (iy + u2) * dy, loz + (iz + u3) * dz,
                rin, rout, hl, mfp511, mfp1157, eres, pa_frac, -1.0, window_w,
                toy_enabled, toy_p, toy_q,
                0, out_class, out_lor, out_ncones, out_cones, out_truth, ctr,
            )
            counts[v, out_class[0]] += 1


def estimate_sensitivity(
    grid, det, params, emissions_per_voxel, seed,
    window_fraction=0.1, toy=None,
):
    """Monte-Carlo sensitivity: for each voxel, transport
    ``emissions_per_voxel`` decays generated uniformly inside it and record
    the class of every one; s_j^k is the class-k fraction."""
    if emissions_per_voxel < 1:
        raise ValueError("emissions_per_voxel must be >= 1")
    nx, ny, _ = grid.dims
    dx, dy, dz = grid.voxel_size
    lo = grid.lower_corner
    toy_enabled, toy_p, toy_q = (1, toy.p, toy.q) if toy is not None else (0, 0.0, 0.0)
    counts = np.zeros((grid.n_voxels, 7), dtype=np.int64)
    _sensitivity_block(
        seed, grid.n_voxels, emissions_per_voxel,
        nx, ny, dx, dy, dz, lo.x, lo.y, lo.z,
        det.inner_radius_mm, det.outer_radius_mm, det.axial_half_length_mm,
        params.mfp_511_mm, params.mfp_1157_mm,
        params.energy_resolution_fwhm_fraction, params.photoabsorption_fraction,
        window_fraction, toy_enabled, toy_p, toy_q, counts,
    )
    values = {
        tag: counts[:, i].astype(np.float64) / emissions_per_voxel
        for i, tag in enumerate(CLASS_TAGS)
    }
    return SensitivityMap(grid, values, int(emissions_per_voxel), int(seed))


def axial_profile(sens_map, class_tag):
    """Per-z-slice transaxial mean sensitivity in percent; the
    ``zero_gamma`` tag gives 100 * (1 - sum over classes)."""
    grid = sens_map.grid
    nx, ny, nz = grid.dims
    if class_tag == ZERO_GAMMA:
        v = 1.0 - sens_map.total()
    elif class_tag in CLASS_TAGS:
        if class_tag not in sens_map.values:
            raise ValueError(f"class {class_tag} not present in this map")
        v = sens_map.values[class_tag]
    else:
        raise ValueError(f"unknown class tag {class_tag!r}")
    means = 100.0 * v.reshape(nz, ny * nx).mean(axis=1)
    return list(zip(grid.z_slice_centers().tolist(), means.tolist()))


# ---------------------------------------------------------------------------
# file formats


def save_sensitivity(stem, sens_map, config_echo=None):
    """JSON header at <stem>.json plus one raw little-endian float32 array
    per class at <stem>.<class>.raw (x-fastest voxel order)."""
    grid = sens_map.grid
    header = {
        "format": "gamma3-sensitivity-v1",
        "dims": list(grid.dims),
        "voxel_size_mm": list(grid.voxel_size),
        "origin_mm": list(grid.origin.as_tuple()),
        "classes": list(sens_map.classes),
        "M": sens_map.emissions_per_voxel,
        "seed": sens_map.seed,
    }
    if config_echo is not None:
        header["config"] = config_echo
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for tag in sens_map.classes:
        sens_map.values[tag].astype("<f4").tofile(f"{stem}.{tag}.raw")


def load_sensitivity(stem):
    from .geometry import Point3, VoxelGrid

    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    grid = VoxelGrid(
        tuple(header["dims"]),
        tuple(header["voxel_size_mm"]),
        Point3(*header.get("origin_mm", (0.0, 0.0, 0.0))),
    )
    values = {}
    for tag in header["classes"]:
        arr = np.fromfile(f"{stem}.{tag}.raw", dtype="<f4").astype(np.float64)
        if arr.size != grid.n_voxels:
            raise ValueError(f"raw array for {tag} does not match the grid")
        values[tag] = arr
    return SensitivityMap(grid, values, int(header["M"]), int(header["seed"]))


def write_profiles_csv(path, sens_map, meta=None):
    """CSV z_mm,C01,C10,C02,C11,C12,zero_gamma (percent per slice)."""
    cols = {tag: axial_profile(sens_map, tag) for tag in CLASS_TAGS + (ZERO_GAMMA,)}
    zs = [z for z, _ in cols["C01"]]
    lines = []
    if meta:
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append("z_mm," + ",".join(CLASS_TAGS) + ",zero_gamma")
    for i, z in enumerate(zs):
        row = [repr(z)] + [repr(cols[tag][i][1]) for tag in CLASS_TAGS + (ZERO_GAMMA,)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_transaxial_slice_csv(path, sens_map, z_mm, meta=None):
    """Long-format CSV x_mm,y_mm,<classes> of the slice nearest z_mm."""
    grid = sens_map.grid
    nx, ny, nz = grid.dims
    zs = grid.z_slice_centers()
    iz = int(np.argmin(np.abs(zs - z_mm)))
    lo = grid.lower_corner
    dx, dy = grid.voxel_size[0], grid.voxel_size[1]
    lines = []
    if meta is not None:
        meta = dict(meta)
        meta["slice_z_mm"] = zs[iz]
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append("x_mm,y_mm," + ",".join(CLASS_TAGS))
    for iy in range(ny):
        for ix in range(nx):
            j = ix + nx * (iy + ny * iz)
            row = [repr(lo.x + (ix + 0.5) * dx), repr(lo.y + (iy + 0.5) * dy)]
            row += [repr(float(sens_map.values[tag][j])) for tag in CLASS_TAGS]
            lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
