"""Cavity-magnonics spectroscopy toolkit.

Forward models for the reflection spectrum of a hybridized cavity photon and
Kittel-mode magnon, synthetic sweep generation, and the staged inverse
analysis that extracts the internal magnon linewidth and fits it to the
two-level-system loss tangent.
"""

__version__ = "0.1.0"

from cavmag.physics import (
    CavityParams,
    DispersionCal,
    ExcitationCalibration,
    HopfieldFractions,
    MagnonParams,
    MaterialParams,
    TLSParams,
    branch_frequencies,
    coupling_strength_theory,
    dbm_to_watts,
    excitation_number,
    hopfield_fractions,
    magnon_dispersion,
    magnon_number,
    reflection_amplitude,
    reflection_s11,
    tls_linewidth,
)

__all__ = [
    "CavityParams",
    "DispersionCal",
    "ExcitationCalibration",
    "HopfieldFractions",
    "MagnonParams",
    "MaterialParams",
    "TLSParams",
    "branch_frequencies",
    "coupling_strength_theory",
    "dbm_to_watts",
    "excitation_number",
    "hopfield_fractions",
    "magnon_dispersion",
    "magnon_number",
    "reflection_amplitude",
    "reflection_s11",
    "tls_linewidth",
]
