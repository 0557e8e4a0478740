"""Physical constants, dispersion and measurement-strength conversions.

Everything here is a pure function of its arguments. Quantities are SI;
helpers at the bottom convert the lab units used in config files
(micrometres, milliseconds, nanokelvin) at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const


class InvalidArgument(ValueError):
    """Raised when an argument violates a documented precondition."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Atomic species and probe-line constants.

    ``sigma0`` is derived from the wavelength so the two cannot drift apart.
    """

    hbar: float
    atom_mass: float
    wavelength: float
    linewidth: float  # natural linewidth Gamma, rad/s
    i_sat: float  # W/m^2
    k0: float = field(init=False)
    sigma0: float = field(init=False)

    def __post_init__(self):
        for name in ("hbar", "atom_mass", "wavelength", "linewidth", "i_sat"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidArgument(f"{name} must be finite and positive, got {value!r}")
        k0 = 2 * math.pi / self.wavelength
        object.__setattr__(self, "k0", k0)
        object.__setattr__(self, "sigma0", 6 * math.pi / k0**2)


# 87Rb D2 line; I_sat is the far-detuned pi-polarised value quoted for the probe.
RB87 = PhysicalConstants(
    hbar=const.hbar,
    atom_mass=86.909180527 * const.atomic_mass,
    wavelength=780.241e-9,
    linewidth=2 * math.pi * 6.0666e6,
    i_sat=16.7,
)


def healing_length(c: float, constants: PhysicalConstants = RB87) -> float:
    """Healing length xi = hbar / (sqrt(2) m c) for sound speed ``c``."""
    if not c > 0:
        raise InvalidArgument(f"sound speed must be positive, got {c!r}")
    return constants.hbar / (math.sqrt(2) * constants.atom_mass * c)


@dataclass(frozen=True)
class CondensateParams:
    """Condensate description.

    The healing length and chemical potential are derived from ``sound_speed``
    rather than stored, so they can never be inconsistent with it.
    """

    atom_number: float = 2.0e5
    sound_speed: float = 1.35e-3
    condensate_fraction: float = 1.0
    tf_radius_x: float = 45e-6
    tf_radius_z: float = 3e-6
    trap_frequencies: tuple = (2 * math.pi * 10.0, 2 * math.pi * 150.0, 2 * math.pi * 150.0)
    omega_ratio_sq: float = 1.0  # omega_c^2 / omega_0^2 for the finite-T model
    temperature: float = 20e-9
    constants: PhysicalConstants = RB87

    def __post_init__(self):
        if not (np.isfinite(self.sound_speed) and self.sound_speed > 0):
            raise InvalidArgument("sound_speed must be positive")
        if not 0 < self.condensate_fraction <= 1:
            raise InvalidArgument("condensate_fraction must lie in (0, 1]")
        if self.atom_number <= 0:
            raise InvalidArgument("atom_number must be positive")
        if self.tf_radius_x <= 0 or self.tf_radius_z <= 0:
            raise InvalidArgument("Thomas-Fermi radii must be positive")
        if self.temperature < 0:
            raise InvalidArgument("temperature must be non-negative")

    @property
    def healing_length(self) -> float:
        return healing_length(self.sound_speed, self.constants)

    @property
    def chemical_potential(self) -> float:
        return self.constants.atom_mass * self.sound_speed**2


@dataclass(frozen=True)
class ProbeParams:
    """Phase-contrast probe settings.

    ``detuning_ratio`` is delta/Gamma and may carry a sign (red detuning is
    negative); only its magnitude enters the measurement strength.
    """

    detuning_ratio: float = 124.3
    intensity_ratio: float = 12.0
    pulse_duration: float = 16.4e-6
    numerical_aperture: float = 0.32
    pixel_area: float = 0.25e-12
    constants: PhysicalConstants = RB87

    def __post_init__(self):
        if abs(self.detuning_ratio) < 50:
            raise InvalidArgument("|delta/Gamma| must be >= 50 for a dispersive probe")
        if not 0 < self.numerical_aperture < 1:
            raise InvalidArgument("numerical aperture must lie in (0, 1)")
        if self.intensity_ratio < 0 or self.pulse_duration <= 0 or self.pixel_area <= 0:
            raise InvalidArgument("intensity must be >= 0; duration and pixel area > 0")

    @property
    def recoil_wavenumber(self) -> float:
        return self.constants.k0

    @property
    def k_na(self) -> float:
        return self.numerical_aperture * self.constants.k0


def bogoliubov_omega(k, params: CondensateParams):
    """Bogoliubov angular frequency omega(k) = c k sqrt(1 + (k xi)^2 / 2).

    Works elementwise on arrays; the result is even in ``k``.
    """
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise InvalidArgument("wavenumber must be finite")
    xi = params.healing_length
    ak = np.abs(k)
    out = params.sound_speed * ak * np.sqrt(1.0 + 0.5 * (ak * xi) ** 2)
    return out if out.ndim else float(out)


def n_scat(g: float) -> float:
    """Mean number of photons scattered per atom, g^2 / 8."""
    if g < 0:
        raise InvalidArgument("g must be non-negative")
    return g * g / 8.0


def g_from_probe(probe: ProbeParams) -> float:
    """Dimensionless strength g = sqrt(Gamma t_m I/I_sat) / |delta/Gamma|."""
    if probe.detuning_ratio == 0:
        raise InvalidArgument("detuning ratio must be nonzero")
    gamma_t = probe.constants.linewidth * probe.pulse_duration
    return math.sqrt(gamma_t * probe.intensity_ratio) / abs(probe.detuning_ratio)


def phi_pixel(g: float, area: float, sigma0: float = RB87.sigma0) -> float:
    """Per-pixel measurement strength (g/4) sqrt(sigma0 / A)."""
    if area <= 0 or sigma0 <= 0:
        raise InvalidArgument("areas must be positive")
    return 0.25 * g * math.sqrt(sigma0 / area)


def phi_na(g: float, na: float) -> float:
    """Resolution-limited measurement strength (1/4) sqrt(3/2) g NA."""
    if not 0 < na <= 1:
        raise InvalidArgument("NA must lie in (0, 1]")
    return 0.25 * math.sqrt(1.5) * g * na


def photons_per_pixel(g: float, detuning_ratio: float, area: float,
                      sigma0: float = RB87.sigma0) -> float:
    """Probe photon count per pixel N0 = g^2 (delta/Gamma)^2 A / (2 sigma0)."""
    return 0.5 * g * g * detuning_ratio**2 * area / sigma0


def sound_speed_ratio(r_c, omega_ratio_sq):
    """Finite-temperature sound speed c/c0 for condensate fraction ``r_c``.

    c/c0 = R_c^(1/5) [w + R_c (1 - w)]^(3/10) with w = omega_c^2 / omega_0^2.
    """
    r_c = np.asarray(r_c, dtype=float)
    if np.any(r_c <= 0) or np.any(r_c > 1):
        raise InvalidArgument("condensate fraction must lie in (0, 1]")
    if omega_ratio_sq < 1:
        raise InvalidArgument("omega_ratio_sq must be >= 1")
    bracket = omega_ratio_sq + r_c * (1.0 - omega_ratio_sq)
    out = r_c**0.2 * bracket**0.3
    return out if out.ndim else float(out)


def omega_ratio_sq_for(r_c: float, c_over_c0: float) -> float:
    """Back-solve omega_c^2/omega_0^2 so that the model passes through a point."""
    if not 0 < r_c < 1:
        raise InvalidArgument("need 0 < R_c < 1 to back-solve the trap ratio")
    bracket = (c_over_c0 / r_c**0.2) ** (10.0 / 3.0)
    return (bracket - r_c) / (1.0 - r_c)


def thermal_occupation(omega, temperature: float, hbar: float = const.hbar):
    """Bose occupation 1/(exp(hbar omega / kT) - 1); zero at T = 0."""
    omega = np.asarray(omega, dtype=float)
    if temperature < 0:
        raise InvalidArgument("temperature must be non-negative")
    if temperature == 0:
        return np.zeros_like(omega)
    x = hbar * omega / (const.k * temperature)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, 1.0 / np.expm1(np.where(x > 0, x, 1.0)), 0.0)


# Boundary conversions for config files.
UM = 1e-6
MS = 1e-3
NK = 1e-9
MM_PER_S = 1e-3
