"""Closed-loop weak-measurement laboratory for elongated condensates.

Simulates repeated weak density measurements of a Bogoliubov phonon field,
renders phase-contrast frames, and recovers the two-time Van Hove function,
the dynamical structure factor and post-selected weak values.
"""

from weakcorr.model import (
    RB87,
    CondensateParams,
    PhysicalConstants,
    ProbeParams,
    bogoliubov_omega,
    g_from_probe,
    n_scat,
    phi_na,
    phi_pixel,
    sound_speed_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "RB87",
    "CondensateParams",
    "PhysicalConstants",
    "ProbeParams",
    "bogoliubov_omega",
    "g_from_probe",
    "n_scat",
    "phi_na",
    "phi_pixel",
    "sound_speed_ratio",
]
