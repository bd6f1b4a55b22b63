"""Monte-Carlo generation of 3-photon decays, detection, and classification.

A decay emits a back-to-back 511 keV pair plus one isotropic 1157 keV
photon.  Each photon is transported independently through the annulus with
at most one Compton scatter followed by one photoabsorption.  A photon
with two recorded interactions yields a Compton cone; any recorded
interaction of an annihilation photon can serve as a LOR endpoint.  Every
decay is then assigned to exactly one of five detection classes or counted
as undetected:

    C01  one annihilation-photon cone (511 keV energy window)
    C10  one third-photon cone (1157 keV window)
    C02  LOR from both annihilation photons
    C11  one cone per window, no LOR
    C12  LOR plus a 1157-window cone

Cone-to-window attribution uses the measured (blurred) total deposit, so
energy blur produces realistic leakage between classes.  Decays run on
independent counter-based streams keyed by decay index, which makes every
output invariant under the worker-thread count.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from ._accel import njit, prange
from .geometry import Direction3, Point3, _material_segments
from .physics import (
    ANNIHILATION_KEV,
    FWHM_TO_SIGMA,
    SPEED_OF_LIGHT_MM_PER_PS,
    THIRD_PHOTON_KEV,
    ComptonCone,
    _blur_deposit,
    _cos_beta,
    _mfp_at,
    _sample_kn_cos,
)

CLASS_TAGS = ("C01", "C10", "C02", "C11", "C12")
UNDETECTED = "undetected"

# integer codes used by the kernels
_C01, _C10, _C02, _C11, _C12 = 0, 1, 2, 3, 4
_UNDETECTED_CODE = 5
_UNCLASSIFIED_CODE = 6

DEFAULT_WINDOW_FRACTION = 0.1

_CHUNK_DECAYS = 16384


class InvalidConeError(ValueError):
    """Event record whose cone energies are kinematically impossible."""


@dataclass(frozen=True)
class Decay:
    """One 3-photon emission: origin, annihilation-pair axis, third photon."""

    origin: Point3
    lor_direction: Direction3
    third_direction: Direction3


@dataclass(frozen=True)
class LineOfResponse:
    p1: Point3
    p2: Point3
    dt_ps: Optional[float] = None


@dataclass(frozen=True)
class ToyModel:
    """Independence toy: each annihilation photon is detected (endpoint plus
    511-window cone) with probability p, the third photon yields a cone
    with probability q, independently of geometry.  Observables are still
    geometrically consistent: endpoints sit on the photon rays at the
    annulus mid-radius and every cone contains the emission point."""

    p: float
    q: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise ValueError("toy probabilities must lie in [0, 1]")


def _branch_of_e0(e0_kev):
    return (
        ANNIHILATION_KEV
        if abs(e0_kev - ANNIHILATION_KEV) <= abs(e0_kev - THIRD_PHOTON_KEV)
        else THIRD_PHOTON_KEV
    )


@dataclass(frozen=True)
class DetectionEvent:
    """Tagged per-class measurement record.

    ``true_origin`` carries the simulation truth and is ignored (and may
    be stripped) by reconstruction.  ``eps`` optionally overrides the
    per-class constant background term for this event.
    """

    class_tag: str
    lor: Optional[LineOfResponse] = None
    cones: tuple = ()
    true_origin: Optional[Point3] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if self.class_tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {self.class_tag!r}")
        branches = tuple(_branch_of_e0(c.e0_kev) for c in self.cones)
        has_lor, want_branches = {
            "C01": (False, (ANNIHILATION_KEV,)),
            "C10": (False, (THIRD_PHOTON_KEV,)),
            "C02": (True, ()),
            "C11": (False, (ANNIHILATION_KEV, THIRD_PHOTON_KEV)),
            "C12": (True, (THIRD_PHOTON_KEV,)),
        }[self.class_tag]
        if has_lor != (self.lor is not None):
            raise ValueError(f"class {self.class_tag} has the wrong LOR presence")
        if branches != want_branches:
            raise ValueError(
                f"class {self.class_tag} expects cone branches {want_branches}, got {branches}"
            )
        if self.eps is not None and self.eps < 0:
            raise ValueError("per-event eps must be non-negative")


def generate_decay(origin_sampler, stream):
    """Draw one decay: origin from ``origin_sampler(stream)``, isotropic
    annihilation axis, independent isotropic third-photon direction."""
    origin = origin_sampler(stream)
    dx, dy, dz, stream.counter = rng.isotropic_direction(
        stream.seed, stream.stream, stream.counter
    )
    lor_dir = Direction3(dx, dy, dz)
    dx, dy, dz, stream.counter = rng.isotropic_direction(
        stream.seed, stream.stream, stream.counter
    )
    return Decay(origin, lor_dir, Direction3(dx, dy, dz))


def uniform_voxel_sampler(grid, j):
    """Origin sampler: uniform inside voxel ``j``."""
    lo = grid.lower_corner
    ix, iy, iz = grid.voxel_indices(j)
    dx, dy, dz = grid.voxel_size

    def sample(stream):
        u1, u2, stream.counter = rng.uniform_pair(stream.seed, stream.stream, stream.counter)
        u3, stream.counter = rng.uniform(stream.seed, stream.stream, stream.counter)
        return Point3(lo.x + (ix + u1) * dx, lo.y + (iy + u2) * dy, lo.z + (iz + u3) * dz)

    return sample


# ---------------------------------------------------------------------------
# jitted transport core


@njit(cache=True)
def _window_code(etot, w):
    # 0 none, 1 = 511 window, 2 = 1157 window, 3 = both (ambiguous)
    in_511 = abs(etot - ANNIHILATION_KEV) <= ANNIHILATION_KEV * w
    in_1157 = abs(etot - THIRD_PHOTON_KEV) <= THIRD_PHOTON_KEV * w
    if in_511 and in_1157:
        return 3
    if in_511:
        return 1
    if in_1157:
        return 2
    return 0


@njit(cache=True)
def _walk_free_path(px, py, pz, dx, dy, dz, mfp, rin, rout, hl, seed, stream, ctr):
    """Ray parameter of the next interaction, or -1 when the photon leaves
    all detector material without interacting."""
    s0, e0, s1, e1 = _material_segments(px, py, pz, dx, dy, dz, rin, rout, hl)
    if e0 <= s0 or math.isinf(mfp):
        return -1.0, ctr
    draw, ctr = rng.exponential(seed, stream, ctr)
    path = max(draw, 1e-15) * mfp
    if path < e0 - s0:
        return s0 + path, ctr
    path -= e0 - s0
    if e1 > s1 and path < e1 - s1:
        return s1 + path, ctr
    return -1.0, ctr


@njit(cache=True)
def _orthonormal_to(dx, dy, dz):
    # deterministic unit vector orthogonal to d
    if abs(dz) < 0.9:
        ax, ay, az = dy, -dx, 0.0
    else:
        ax, ay, az = 0.0, dz, -dy
    an = math.sqrt(ax * ax + ay * ay + az * az)
    return ax / an, ay / an, az / an


@njit(cache=True)
def _transport_photon(
    px, py, pz, dx, dy, dz, e0, rin, rout, hl, mfp511, mfp1157, pa_frac, eres, seed, stream, ctr
):
    """Transport one photon; returns
    (n_interactions, x1, y1, z1, x2, y2, z2, e1_meas, e2_meas, ctr).

    Deposits are blurred already.  One interaction: only the first position
    is meaningful (either full photoabsorption or a scatter whose photon
    escaped).  Two: scatter at the first point, absorption at the second.
    """
    t, ctr = _walk_free_path(
        px, py, pz, dx, dy, dz, _mfp_at(e0, mfp511, mfp1157), rin, rout, hl, seed, stream, ctr
    )
    if t < 0.0:
        return 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, ctr
    x1 = px + t * dx
    y1 = py + t * dy
    z1 = pz + t * dz

    u, ctr = rng.uniform(seed, stream, ctr)
    if u < pa_frac:
        e1m, ctr = _blur_deposit(e0, eres, seed, stream, ctr)
        return 1, x1, y1, z1, 0.0, 0.0, 0.0, e1m, 0.0, ctr

    c, ctr = _sample_kn_cos(e0, seed, stream, ctr)
    alpha = e0 / ANNIHILATION_KEV
    e_scat = e0 / (1.0 + alpha * (1.0 - c))
    deposit = e0 - e_scat

    ax, ay, az = _orthonormal_to(dx, dy, dz)
    bx = dy * az - dz * ay
    by = dz * ax - dx * az
    bz = dx * ay - dy * ax
    u, ctr = rng.uniform(seed, stream, ctr)
    phi = 2.0 * math.pi * u
    s = math.sqrt(max(0.0, 1.0 - c * c))
    ndx = c * dx + s * (math.cos(phi) * ax + math.sin(phi) * bx)
    ndy = c * dy + s * (math.cos(phi) * ay + math.sin(phi) * by)
    ndz = c * dz + s * (math.cos(phi) * az + math.sin(phi) * bz)

    t2, ctr = _walk_free_path(
        x1, y1, z1, ndx, ndy, ndz, _mfp_at(e_scat, mfp511, mfp1157), rin, rout, hl, seed, stream, ctr
    )
    e1m, ctr = _blur_deposit(deposit, eres, seed, stream, ctr)
    if t2 < 0.0:
        return 1, x1, y1, z1, 0.0, 0.0, 0.0, e1m, 0.0, ctr
    # any second interaction terminates the photon with a full deposit
    e2m, ctr = _blur_deposit(e_scat, eres, seed, stream, ctr)
    return 2, x1, y1, z1, x1 + t2 * ndx, y1 + t2 * ndy, z1 + t2 * ndz, e1m, e2m, ctr


@njit(cache=True)
def _mid_radius_crossing(px, py, pz, dx, dy, dz, r_mid):
    """Forward crossing parameter of the cylinder r = r_mid, or -1."""
    a = dx * dx + dy * dy
    if a < 1e-30:
        return -1.0
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py - r_mid * r_mid
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return -1.0
    t = (-b + math.sqrt(disc)) / (2.0 * a)
    return t if t > 0.0 else -1.0


@njit(cache=True)
def _tilted_axis(rx, ry, rz, cos_beta, seed, stream, ctr):
    """Unit vector at exactly angle arccos(cos_beta) from r, with a
    stream-drawn azimuth."""
    ax, ay, az = _orthonormal_to(rx, ry, rz)
    bx = ry * az - rz * ay
    by = rz * ax - rx * az
    bz = rx * ay - ry * ax
    u, ctr = rng.uniform(seed, stream, ctr)
    psi = 2.0 * math.pi * u
    s = math.sqrt(max(0.0, 1.0 - cos_beta * cos_beta))
    ux = cos_beta * rx + s * (math.cos(psi) * ax + math.sin(psi) * bx)
    uy = cos_beta * ry + s * (math.cos(psi) * ay + math.sin(psi) * by)
    uz = cos_beta * rz + s * (math.cos(psi) * az + math.sin(psi) * bz)
    return ux, uy, uz, ctr


@njit(cache=True)
def _toy_beta_params(e0):
    # deposit of half the Compton edge: e1 = alpha*e0/(1+2*alpha), which
    # gives cos(beta) = alpha/(1+alpha), a fixed angle per branch
    alpha = e0 / ANNIHILATION_KEV
    return alpha * e0 / (1.0 + 2.0 * alpha), alpha / (1.0 + alpha)


@njit(cache=True)
def _decide_class(lor_ok, cone_ok, cone_etot):
    """Decision tree over the usable observables of one decay.

    ``cone_ok[ph]`` holds the window code of photon ``ph``'s cone (0 when
    no usable cone).  Returns (class code, index of the selected 511-window
    cone or -1, index of the selected 1157-window cone or -1).  Among
    several same-window cones the one with total deposit closest to the
    window's nominal energy wins.
    """
    best511 = -1
    best1157 = -1
    for ph in range(3):
        if cone_ok[ph] == 1:
            if best511 < 0 or abs(cone_etot[ph] - ANNIHILATION_KEV) < abs(
                cone_etot[best511] - ANNIHILATION_KEV
            ):
                best511 = ph
        elif cone_ok[ph] == 2:
            if best1157 < 0 or abs(cone_etot[ph] - THIRD_PHOTON_KEV) < abs(
                cone_etot[best1157] - THIRD_PHOTON_KEV
            ):
                best1157 = ph

    if lor_ok and best1157 >= 0:
        return _C12, -1, best1157
    if lor_ok:
        return _C02, -1, -1
    if best511 >= 0 and best1157 >= 0:
        return _C11, best511, best1157
    if best1157 >= 0:
        return _C10, -1, best1157
    if best511 >= 0:
        return _C01, best511, -1
    return _UNDETECTED_CODE, -1, -1


@njit(cache=True)
def _classify_decay(
    seed,
    stream,
    ctr,
    ox,
    oy,
    oz,
    ldx,
    ldy,
    ldz,
    tdx,
    tdy,
    tdz,
    rin,
    rout,
    hl,
    mfp511,
    mfp1157,
    eres,
    pa_frac,
    tof_fwhm_ps,
    window_w,
    toy_enabled,
    toy_p,
    toy_q,
    row,
    out_class,
    out_lor,
    out_ncones,
    out_cones,
    out_truth,
):
    """Transport the three photons of one decay (or apply the toy model) and
    write its classified record into row ``row`` of the output arrays."""
    out_truth[row, 0] = ox
    out_truth[row, 1] = oy
    out_truth[row, 2] = oz
    for k in range(7):
        out_lor[row, k] = np.nan
    out_ncones[row] = 0

    hit = np.zeros(2, dtype=np.int64)
    hx = np.zeros(2)
    hy = np.zeros(2)
    hz = np.zeros(2)
    cone_ok = np.zeros(3, dtype=np.int64)
    cone = np.zeros((3, 9))
    cone_etot = np.zeros(3)

    pdx = np.empty(3)
    pdy = np.empty(3)
    pdz = np.empty(3)
    pe0 = np.empty(3)
    pdx[0], pdy[0], pdz[0], pe0[0] = ldx, ldy, ldz, ANNIHILATION_KEV
    pdx[1], pdy[1], pdz[1], pe0[1] = -ldx, -ldy, -ldz, ANNIHILATION_KEV
    pdx[2], pdy[2], pdz[2], pe0[2] = tdx, tdy, tdz, THIRD_PHOTON_KEV

    ambiguous = False
    if toy_enabled == 1:
        r_mid = 0.5 * (rin + rout)
        for ph in range(3):
            u, ctr = rng.uniform(seed, stream, ctr)
            prob = toy_q if ph == 2 else toy_p
            if u >= prob:
                continue
            t = _mid_radius_crossing(ox, oy, oz, pdx[ph], pdy[ph], pdz[ph], r_mid)
            if t < 0.0:
                continue
            x1 = ox + t * pdx[ph]
            y1 = oy + t * pdy[ph]
            z1 = oz + t * pdz[ph]
            if ph < 2:
                hit[ph] = 1
                hx[ph], hy[ph], hz[ph] = x1, y1, z1
            e1, cb = _toy_beta_params(pe0[ph])
            ux, uy, uz, ctr = _tilted_axis(-pdx[ph], -pdy[ph], -pdz[ph], cb, seed, stream, ctr)
            cone_ok[ph] = 1 if ph < 2 else 2
            cone_etot[ph] = pe0[ph]
            cone[ph, 0], cone[ph, 1], cone[ph, 2] = x1, y1, z1
            cone[ph, 3], cone[ph, 4], cone[ph, 5] = ux, uy, uz
            cone[ph, 6] = math.acos(cb)
            cone[ph, 7] = pe0[ph]
            cone[ph, 8] = e1
    else:
        for ph in range(3):
            n, x1, y1, z1, x2, y2, z2, e1m, e2m, ctr = _transport_photon(
                ox, oy, oz, pdx[ph], pdy[ph], pdz[ph], pe0[ph],
                rin, rout, hl, mfp511, mfp1157, pa_frac, eres, seed, stream, ctr,
            )
            if n == 0:
                continue
            if ph < 2:
                hit[ph] = 1
                hx[ph], hy[ph], hz[ph] = x1, y1, z1
            if n == 2:
                code = _window_code(e1m + e2m, window_w)
                if code == 0:
                    continue
                if code == 3:
                    ambiguous = True
                    continue
                e0n = ANNIHILATION_KEV if code == 1 else THIRD_PHOTON_KEV
                if e1m <= 0.0 or e1m >= e0n:
                    continue
                cb = _cos_beta(e0n, e1m)
                if cb < -1.0 or cb > 1.0:
                    continue
                ux, uy, uz = x1 - x2, y1 - y2, z1 - z2
                un = math.sqrt(ux * ux + uy * uy + uz * uz)
                if un < 1e-12:
                    continue
                cone_ok[ph] = code
                cone_etot[ph] = e1m + e2m
                cone[ph, 0], cone[ph, 1], cone[ph, 2] = x1, y1, z1
                cone[ph, 3], cone[ph, 4], cone[ph, 5] = ux / un, uy / un, uz / un
                cone[ph, 6] = math.acos(cb)
                cone[ph, 7] = e0n
                cone[ph, 8] = e1m

    if ambiguous:
        out_class[row] = _UNCLASSIFIED_CODE
        return ctr

    lor_ok = hit[0] == 1 and hit[1] == 1
    cls, best511, best1157 = _decide_class(lor_ok, cone_ok, cone_etot)
    out_class[row] = cls
    if cls >= _UNDETECTED_CODE:
        return ctr

    if lor_ok and (cls == _C02 or cls == _C12):
        out_lor[row, 0], out_lor[row, 1], out_lor[row, 2] = hx[0], hy[0], hz[0]
        out_lor[row, 3], out_lor[row, 4], out_lor[row, 5] = hx[1], hy[1], hz[1]
        if tof_fwhm_ps >= 0.0:
            l1 = math.sqrt((hx[0] - ox) ** 2 + (hy[0] - oy) ** 2 + (hz[0] - oz) ** 2)
            l2 = math.sqrt((hx[1] - ox) ** 2 + (hy[1] - oy) ** 2 + (hz[1] - oz) ** 2)
            dt = (l1 - l2) / SPEED_OF_LIGHT_MM_PER_PS
            if tof_fwhm_ps > 0.0:
                g, ctr = rng.gaussian(seed, stream, ctr)
                dt += g * tof_fwhm_ps * FWHM_TO_SIGMA
            out_lor[row, 6] = dt

    nc = 0
    if best511 >= 0:
        for k in range(9):
            out_cones[row, nc, k] = cone[best511, k]
        nc += 1
    if best1157 >= 0:
        for k in range(9):
            out_cones[row, nc, k] = cone[best1157, k]
        nc += 1
    out_ncones[row] = nc
    return ctr


@njit(cache=True)
def _simulate_decay(
    seed, stream, ox, oy, oz,
    rin, rout, hl, mfp511, mfp1157, eres, pa_frac, tof_fwhm_ps, window_w,
    toy_enabled, toy_p, toy_q,
    row, out_class, out_lor, out_ncones, out_cones, out_truth, ctr,
):
    ldx, ldy, ldz, ctr = rng.isotropic_direction(seed, stream, ctr)
    tdx, tdy, tdz, ctr = rng.isotropic_direction(seed, stream, ctr)
    return _classify_decay(
        seed, stream, ctr, ox, oy, oz, ldx, ldy, ldz, tdx, tdy, tdz,
        rin, rout, hl, mfp511, mfp1157, eres, pa_frac, tof_fwhm_ps, window_w,
        toy_enabled, toy_p, toy_q,
        row, out_class, out_lor, out_ncones, out_cones, out_truth,
    )


@njit(cache=True)
def _bisect_cdf(cdf, u):
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, parallel=True)
def _simulate_chunk(
    seed, domain, first_index, n, cdf,
    nx, ny, dx, dy, dz, lox, loy, loz,
    rin, rout, hl, mfp511, mfp1157, eres, pa_frac, tof_fwhm_ps, window_w,
    toy_enabled, toy_p, toy_q,
    out_class, out_lor, out_ncones, out_cones, out_truth,
):
    for r in prange(n):
        stream = domain * (1 << 48) + first_index + r
        ctr = 0
        u, ctr = rng.uniform(seed, stream, ctr)
        j = _bisect_cdf(cdf, u)
        ix = j % nx
        iy = (j // nx) % ny
        iz = j // (nx * ny)
        u1, u2, ctr = rng.uniform_pair(seed, stream, ctr)
        u3, ctr = rng.uniform(seed, stream, ctr)
        _simulate_decay(
            seed, stream,
            lox + (ix + u1) * dx, loy + (iy + u2) * dy, loz + (iz + u3) * dz,
            rin, rout, hl, mfp511, mfp1157, eres, pa_frac, tof_fwhm_ps, window_w,
            toy_enabled, toy_p, toy_q,
            r, out_class, out_lor, out_ncones, out_cones, out_truth, ctr,
        )


# ---------------------------------------------------------------------------
# Python drivers


@dataclass
class SimulationResult:
    """Class-count table plus (optionally) the collected event list."""

    n_decays: int
    counts: dict
    n_unclassified: int
    events: Optional[list] = None

    @property
    def n_detected(self):
        return sum(self.counts[t] for t in CLASS_TAGS)


def _physics_scalars(params):
    tof = -1.0 if params.tof_fwhm_ps is None else float(params.tof_fwhm_ps)
    return (
        params.mfp_511_mm,
        params.mfp_1157_mm,
        params.energy_resolution_fwhm_fraction,
        params.photoabsorption_fraction,
        tof,
    )


def _rows_to_event(i, out_class, out_lor, out_ncones, out_cones, out_truth, keep_truth):
    tag = CLASS_TAGS[out_class[i]]
    lor = None
    if not math.isnan(out_lor[i, 0]):
        dt = out_lor[i, 6]
        lor = LineOfResponse(
            Point3(out_lor[i, 0], out_lor[i, 1], out_lor[i, 2]),
            Point3(out_lor[i, 3], out_lor[i, 4], out_lor[i, 5]),
            None if math.isnan(dt) else float(dt),
        )
    cones = []
    for k in range(out_ncones[i]):
        c = out_cones[i, k]
        cones.append(
            ComptonCone(
                Point3(c[0], c[1], c[2]),
                Direction3(c[3], c[4], c[5]),
                float(c[6]),
                float(c[7]),
                float(c[8]),
            )
        )
    truth = Point3(out_truth[i, 0], out_truth[i, 1], out_truth[i, 2]) if keep_truth else None
    return DetectionEvent(tag, lor, tuple(cones), truth)


def transport_and_classify(
    decay, det, params, stream, window_fraction=DEFAULT_WINDOW_FRACTION, toy=None
):
    """Transport the three photons of ``decay`` and return its classified
    DetectionEvent, or None for an undetected/unclassifiable decay."""
    if not det.contains_in_bore(decay.origin):
        raise ValueError("decay origin must lie inside the inner bore")
    out_class = np.empty(1, dtype=np.int64)
    out_lor = np.empty((1, 7))
    out_ncones = np.empty(1, dtype=np.int64)
    out_cones = np.empty((1, 2, 9))
    out_truth = np.empty((1, 3))
    toy_enabled, toy_p, toy_q = (1, toy.p, toy.q) if toy is not None else (0, 0.0, 0.0)
    mfp511, mfp1157, eres, pa_frac, tof = _physics_scalars(params)
    stream.counter = _classify_decay(
        stream.seed, stream.stream, stream.counter,
        decay.origin.x, decay.origin.y, decay.origin.z,
        decay.lor_direction.x, decay.lor_direction.y, decay.lor_direction.z,
        decay.third_direction.x, decay.third_direction.y, decay.third_direction.z,
        det.inner_radius_mm, det.outer_radius_mm, det.axial_half_length_mm,
        mfp511, mfp1157, eres, pa_frac, tof, window_fraction,
        toy_enabled, toy_p, toy_q,
        0, out_class, out_lor, out_ncones, out_cones, out_truth,
    )
    if out_class[0] >= _UNDETECTED_CODE:
        return None
    return _rows_to_event(0, out_class, out_lor, out_ncones, out_cones, out_truth, True)


def run_simulation(
    grid,
    activity,
    n_decays,
    det,
    params,
    seed,
    window_fraction=DEFAULT_WINDOW_FRACTION,
    toy=None,
    sink=None,
    collect=True,
    keep_truth=True,
    header=None,
    first_index=0,
    stream_domain=rng.DOMAIN_DECAY,
):
    """Simulate ``n_decays`` decays with origins distributed per the
    ``activity`` weights over ``grid`` voxels (uniform within a voxel).

    Detected events stream to ``sink`` (a path or file object) as JSON
    lines and/or into the returned result when ``collect``.  The class
    count table always covers all n_decays.
    """
    if n_decays < 1:
        raise ValueError(f"n_decays must be >= 1, got {n_decays}")
    activity = np.asarray(activity, dtype=np.float64).ravel()
    if activity.size != grid.n_voxels:
        raise ValueError("activity array does not match the grid")
    if np.any(activity < 0) or not np.any(activity > 0):
        raise ValueError("activity must be non-negative with at least one positive voxel")
    cdf = np.cumsum(activity)
    cdf /= cdf[-1]
    cdf[-1] = 1.0

    nx, ny, _ = grid.dims
    dx, dy, dz = grid.voxel_size
    lo = grid.lower_corner
    mfp511, mfp1157, eres, pa_frac, tof = _physics_scalars(params)
    toy_enabled, toy_p, toy_q = (1, toy.p, toy.q) if toy is not None else (0, 0.0, 0.0)

    close_sink = False
    fh = None
    if sink is not None:
        if hasattr(sink, "write"):
            fh = sink
        else:
            fh = open(sink, "w")
            close_sink = True
        meta = {"format": "gamma3-events-v1", "n_decays": int(n_decays), "seed": int(seed)}
        if header:
            meta.update(header)
        fh.write(json.dumps(meta, sort_keys=True) + "\n")

    counts = np.zeros(7, dtype=np.int64)
    events = [] if collect else None
    try:
        done = 0
        while done < n_decays:
            n = min(_CHUNK_DECAYS, n_decays - done)
            out_class = np.empty(n, dtype=np.int64)
            out_lor = np.empty((n, 7))
            out_ncones = np.empty(n, dtype=np.int64)
            out_cones = np.empty((n, 2, 9))
            out_truth = np.empty((n, 3))
            _simulate_chunk(
                seed, stream_domain, first_index + done, n, cdf,
                nx, ny, dx, dy, dz, lo.x, lo.y, lo.z,
                det.inner_radius_mm, det.outer_radius_mm, det.axial_half_length_mm,
                mfp511, mfp1157, eres, pa_frac, tof, window_fraction,
                toy_enabled, toy_p, toy_q,
                out_class, out_lor, out_ncones, out_cones, out_truth,
            )
            counts += np.bincount(out_class, minlength=7)
            if fh is not None or collect:
                for i in np.nonzero(out_class < _UNDETECTED_CODE)[0]:
                    ev = _rows_to_event(
                        i, out_class, out_lor, out_ncones, out_cones, out_truth, keep_truth
                    )
                    if fh is not None:
                        fh.write(json.dumps(event_to_record(ev), sort_keys=False) + "\n")
                    if collect:
                        events.append(ev)
            done += n
    finally:
        if close_sink:
            fh.close()

    table = {tag: int(counts[i]) for i, tag in enumerate(CLASS_TAGS)}
    table[UNDETECTED] = int(counts[_UNDETECTED_CODE] + counts[_UNCLASSIFIED_CODE])
    return SimulationResult(
        n_decays=int(n_decays),
        counts=table,
        n_unclassified=int(counts[_UNCLASSIFIED_CODE]),
        events=events,
    )


# ---------------------------------------------------------------------------
# event records and files


def event_to_record(ev):
    lor = None
    if ev.lor is not None:
        lor = {
            "p1": list(ev.lor.p1.as_tuple()),
            "p2": list(ev.lor.p2.as_tuple()),
            "dt_ps": ev.lor.dt_ps,
        }
    cones = [
        {
            "apex": list(c.apex.as_tuple()),
            "axis": list(c.axis.as_tuple()),
            "beta_rad": c.half_angle_beta,
            "e0_kev": c.e0_kev,
            "e1_kev": c.e1_kev,
        }
        for c in ev.cones
    ]
    truth = None if ev.true_origin is None else {"origin": list(ev.true_origin.as_tuple())}
    rec = {"class": ev.class_tag, "lor": lor, "cones": cones, "truth": truth}
    if ev.eps is not None:
        rec["eps"] = ev.eps
    return rec


def record_to_event(rec):
    tag = rec["class"]
    lor = None
    if rec.get("lor") is not None:
        r = rec["lor"]
        lor = LineOfResponse(Point3(*r["p1"]), Point3(*r["p2"]), r.get("dt_ps"))
    cones = []
    for c in rec.get("cones") or ():
        e0, e1 = float(c["e0_kev"]), float(c["e1_kev"])
        if not 0.0 < e1 < e0 or abs(_cos_beta(e0, e1)) > 1.0 + 1e-12:
            raise InvalidConeError(f"cone energies e0={e0}, e1={e1} are not physical")
        cones.append(
            ComptonCone(Point3(*c["apex"]), Direction3(*c["axis"]), float(c["beta_rad"]), e0, e1)
        )
    truth = None
    if rec.get("truth") is not None:
        truth = Point3(*rec["truth"]["origin"])
    return DetectionEvent(tag, lor, tuple(cones), truth, rec.get("eps"))


def write_events(path, events, header=None):
    """Write events as JSON lines with a leading header line."""
    meta = {"format": "gamma3-events-v1"}
    if header:
        meta.update(header)
    with open(path, "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for ev in events:
            fh.write(json.dumps(event_to_record(ev), sort_keys=False) + "\n")


def read_events(path):
    """Read an event file; returns (events, header, diagnostics).

    Records whose cone energies are kinematically impossible are discarded
    and counted in ``diagnostics['n_discarded_cone']``; other malformed
    lines land in ``diagnostics['n_malformed']``.
    """
    events = []
    headerdoc = {}
    diag = {"n_malformed": 0, "n_discarded_cone": 0}
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                diag["n_malformed"] += 1
                continue
            if lineno == 0 and isinstance(rec, dict) and "format" in rec:
                headerdoc = rec
                continue
            try:
                events.append(record_to_event(rec))
            except InvalidConeError:
                diag["n_discarded_cone"] += 1
            except (KeyError, TypeError, ValueError):
                diag["n_malformed"] += 1
    return events, headerdoc, diag


def write_class_counts(path, counts, n_decays, meta=None):
    """CSV table class,count,fraction over the five classes + undetected."""
    lines = []
    if meta:
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append("class,count,fraction")
    for tag in CLASS_TAGS + (UNDETECTED,):
        c = counts[tag]
        lines.append(f"{tag},{c},{c / n_decays!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
