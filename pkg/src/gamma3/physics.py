"""Compton kinematics, interaction sampling, and energy-resolution model.

Energies in keV, angles in radians.  The scattering-angle half-aperture of
a Compton cone follows from the measured energy deposit of the scatter:

    cos(beta) = 1 - m_e c^2 * E1 / (E0 * (E0 - E1)),   m_e c^2 = 511 keV

where E0 is the incident photon energy and E1 the deposit.
"""

import math
from dataclasses import dataclass
from typing import Optional

from . import rng
from ._accel import njit
from .geometry import Direction3, Point3

ELECTRON_MASS_KEV = 511.0
ANNIHILATION_KEV = 511.0
THIRD_PHOTON_KEV = 1157.0
SPEED_OF_LIGHT_MM_PER_PS = 0.299792458

# FWHM = 2*sqrt(2*ln 2) * sigma
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

_COS_TOL = 1e-12


@njit(cache=True)
def _cos_beta(e0, e1):
    return 1.0 - ELECTRON_MASS_KEV * e1 / (e0 * (e0 - e1))


def compton_cos_beta(e0, e1):
    """Cosine of the Compton half-aperture for deposit ``e1`` out of ``e0``.

    The raw kinematic value is returned even when measurement noise pushes
    it below -1; the caller decides whether to clamp or discard.
    """
    if e0 <= 0.0 or e1 <= 0.0:
        raise ValueError(f"energies must be positive, got e0={e0}, e1={e1}")
    if e1 >= e0:
        raise ValueError(f"deposit e1={e1} must be below the incident energy e0={e0}")
    return _cos_beta(e0, e1)


@njit(cache=True)
def _compton_edge(e0):
    alpha = e0 / ELECTRON_MASS_KEV
    return e0 * 2.0 * alpha / (1.0 + 2.0 * alpha)


def compton_edge(e0):
    """Maximal single-scatter energy deposit for incident energy ``e0``."""
    if e0 <= 0.0:
        raise ValueError(f"incident energy must be positive, got {e0}")
    return _compton_edge(e0)


@dataclass(frozen=True)
class ComptonCone:
    """Cone of possible source directions from one scatter-plus-absorption.

    ``apex`` is the first interaction point and ``axis`` points from the
    second interaction toward the first (reversed scattered-photon
    direction).  ``e0_kev`` is the nominal incident energy of the branch
    the cone was attributed to, ``e1_kev`` the measured scatter deposit.
    """

    apex: Point3
    axis: Direction3
    half_angle_beta: float
    e0_kev: float
    e1_kev: float

    def __post_init__(self):
        if not 0.0 < self.e1_kev < self.e0_kev:
            raise ValueError(
                f"need 0 < e1 < e0, got e1={self.e1_kev}, e0={self.e0_kev}"
            )
        c = _cos_beta(self.e0_kev, self.e1_kev)
        if abs(c) > 1.0 + _COS_TOL:
            raise ValueError(f"energies give cos(beta)={c}, outside [-1, 1]")
        if abs(math.cos(self.half_angle_beta) - c) > _COS_TOL:
            raise ValueError("half_angle_beta inconsistent with the energy pair")

    @classmethod
    def from_energies(cls, apex, axis, e0_kev, e1_kev):
        c = compton_cos_beta(e0_kev, e1_kev)
        if abs(c) > 1.0:
            raise ValueError(f"cos(beta)={c} outside [-1, 1]; cone is not physical")
        return cls(apex, axis, math.acos(c), e0_kev, e1_kev)


@dataclass(frozen=True)
class PhysicsParams:
    """Detection-medium parameters.

    Mean free paths form a two-point table at the 511 and 1157 keV
    reference energies and are interpolated linearly in energy elsewhere;
    an infinite value switches detection off.  The energy resolution is a
    relative FWHM (FWHM = fraction * E), applied per deposit.
    """

    mfp_511_mm: float = 30.0
    mfp_1157_mm: float = 45.0
    energy_resolution_fwhm_fraction: float = 0.04
    photoabsorption_fraction: float = 0.35
    tof_fwhm_ps: Optional[float] = None

    def __post_init__(self):
        if self.mfp_511_mm <= 0 or self.mfp_1157_mm <= 0:
            raise ValueError("mean free paths must be positive")
        if not 0.0 <= self.energy_resolution_fwhm_fraction < 1.0:
            raise ValueError("energy resolution fraction must lie in [0, 1)")
        if not 0.0 <= self.photoabsorption_fraction <= 1.0:
            raise ValueError("photoabsorption fraction must lie in [0, 1]")
        if self.tof_fwhm_ps is not None and self.tof_fwhm_ps < 0:
            raise ValueError("TOF resolution must be non-negative")


@njit(cache=True)
def _mfp_at(e_kev, mfp_511, mfp_1157):
    if math.isinf(mfp_511) or math.isinf(mfp_1157):
        return math.inf
    slope = (mfp_1157 - mfp_511) / (THIRD_PHOTON_KEV - ANNIHILATION_KEV)
    return max(mfp_511 + (e_kev - ANNIHILATION_KEV) * slope, 1e-6)


@njit(cache=True)
def _kn_density(c, alpha):
    # Unnormalized Klein-Nishina density in cos(theta); bounded above by 2.
    r = 1.0 / (1.0 + alpha * (1.0 - c))
    return r * r * (r + 1.0 / r - (1.0 - c * c))


@njit(cache=True)
def _sample_kn_cos(e0, seed, stream, ctr):
    alpha = e0 / ELECTRON_MASS_KEV
    while True:
        u1, u2, ctr = rng.uniform_pair(seed, stream, ctr)
        c = 2.0 * u1 - 1.0
        if 2.0 * u2 <= _kn_density(c, alpha):
            return c, ctr


@njit(cache=True)
def _blur_deposit(e_true, fwhm_fraction, seed, stream, ctr):
    if fwhm_fraction == 0.0:
        return e_true, ctr
    g, ctr = rng.gaussian(seed, stream, ctr)
    sigma = fwhm_fraction * e_true * FWHM_TO_SIGMA
    return max(0.0, e_true + sigma * g), ctr


def sample_klein_nishina_angle(e0, stream):
    """Scatter angle in [0, pi] distributed per the Klein-Nishina
    differential cross-section at energy ``e0`` (rejection sampling)."""
    if e0 <= 0.0:
        raise ValueError(f"incident energy must be positive, got {e0}")
    c, stream.counter = _sample_kn_cos(e0, stream.seed, stream.stream, stream.counter)
    return math.acos(max(-1.0, min(1.0, c)))


def blur_energy(e_true, params, stream):
    """Measured deposit: Gaussian blur with FWHM = fraction * e_true,
    truncated at zero.  Identity when the fraction is zero."""
    if e_true <= 0.0:
        raise ValueError(f"true energy must be positive, got {e_true}")
    e, stream.counter = _blur_deposit(
        e_true, params.energy_resolution_fwhm_fraction, stream.seed, stream.stream, stream.counter
    )
    return e


def isotropic_direction(stream):
    """Unit direction uniform on the sphere, drawn from ``stream``."""
    dx, dy, dz, stream.counter = rng.isotropic_direction(
        stream.seed, stream.stream, stream.counter
    )
    return Direction3(dx, dy, dz)
