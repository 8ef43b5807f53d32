"""Closed-form models of the hybrid cavity-magnon system.

All frequencies and rates are angular (rad/s) and all linewidths are HWHM.
Conversion to ``/2pi`` Hz happens only at the I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cavmag.constants import GAMMA_E, HBAR, K_B, MU_0, TWO_PI
from cavmag import presets


def _check_finite(**values) -> None:
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class CavityParams:
    """Single-port cavity resonance (angular frequency, HWHM rates)."""

    omega_r: float
    kappa_c: float
    kappa_i: float

    def __post_init__(self):
        _check_finite(omega_r=self.omega_r, kappa_c=self.kappa_c, kappa_i=self.kappa_i)
        if self.omega_r <= 0 or self.kappa_c <= 0 or self.kappa_i < 0:
            raise ValueError(f"non-physical cavity parameters: {self}")

    @property
    def kappa_l(self) -> float:
        return self.kappa_c + self.kappa_i

    @property
    def q_c(self) -> float:
        return self.omega_r / (2 * self.kappa_c)

    @property
    def q_i(self) -> float:
        return self.omega_r / (2 * self.kappa_i) if self.kappa_i > 0 else math.inf

    @property
    def q_l(self) -> float:
        return self.omega_r / (2 * self.kappa_l)

    @classmethod
    def from_quality_factors(cls, omega_r: float, q_i: float, q_c: float) -> "CavityParams":
        return cls(omega_r=omega_r, kappa_c=omega_r / (2 * q_c), kappa_i=omega_r / (2 * q_i))

    def with_frequency(self, omega_r: float) -> "CavityParams":
        return CavityParams(omega_r=omega_r, kappa_c=self.kappa_c, kappa_i=self.kappa_i)


@dataclass(frozen=True)
class MagnonParams:
    omega_m: float
    kappa_m: float
    g: float

    def __post_init__(self):
        _check_finite(omega_m=self.omega_m, kappa_m=self.kappa_m, g=self.g)
        if self.kappa_m <= 0 or self.g < 0:
            raise ValueError(f"non-physical magnon parameters: {self}")


@dataclass(frozen=True)
class TLSParams:
    """Loss-tangent parameters. ``p_c`` is in watts at the input port."""

    kappa_0: float
    p_c: float
    kappa_off: float
    omega_ref: float

    def __post_init__(self):
        _check_finite(kappa_0=self.kappa_0, p_c=self.p_c, kappa_off=self.kappa_off,
                      omega_ref=self.omega_ref)
        if self.kappa_0 < 0 or self.p_c <= 0 or self.kappa_off < 0 or self.omega_ref <= 0:
            raise ValueError(f"non-physical TLS parameters: {self}")

    @property
    def p_c_dbm(self) -> float:
        return watts_to_dbm(self.p_c)


@dataclass(frozen=True)
class MaterialParams:
    eta: float
    V_a: float
    N_s: float
    s: float
    gamma_e: float = GAMMA_E
    mu_0: float = MU_0
    hbar: float = HBAR
    k_B: float = K_B

    def __post_init__(self):
        _check_finite(eta=self.eta, V_a=self.V_a, N_s=self.N_s, s=self.s)
        # eta == 0 is accepted as the no-overlap limit
        if not 0 <= self.eta <= 1 or self.V_a <= 0 or self.N_s <= 0 or self.s <= 0:
            raise ValueError(f"non-physical material parameters: {self}")


@dataclass(frozen=True)
class DispersionCal:
    """Bare cavity frequency, linear magnon tuning and coupling, all angular."""

    omega_r_bare: float
    omega_m_zero: float
    slope: float  # rad/s per A
    g: float

    def omega_m(self, current):
        return magnon_dispersion(current, self)

    def degeneracy_current(self) -> float:
        if self.slope == 0:
            raise ValueError("magnon frequency does not tune with current")
        return (self.omega_r_bare - self.omega_m_zero) / self.slope

    def branches(self, current):
        return branch_frequencies(self.omega_r_bare, self.omega_m(current), self.g)


@dataclass(frozen=True)
class HopfieldFractions:
    upper_magnon: float
    upper_photon: float
    lower_magnon: float
    lower_photon: float


@dataclass(frozen=True)
class ExcitationCalibration:
    """Power-law map from input power to total excitation number.

    ``N_e = coefficient_per_fw * (P_in / 1 fW) ** exponent``
    """

    coefficient_per_fw: float = presets.EXCITATION_COEFF_PER_FW
    exponent: float = presets.EXCITATION_EXPONENT

    def total(self, p_in_watts):
        return self.coefficient_per_fw * (np.asarray(p_in_watts) / 1e-15) ** self.exponent

    def total_dbm(self, p_dbm):
        return self.total(dbm_to_watts(p_dbm))


def reflection_s11(omega_p, cav: CavityParams, mag: MagnonParams):
    """Complex reflection of the coupled cavity-magnon system.

    Input-output result for a cavity probed through one port and coupled to
    a single magnon mode; ``g = 0`` reduces to the bare resonator.
    """
    omega_p = np.asarray(omega_p, dtype=float)
    _check_finite(omega_p=omega_p)
    magnon = mag.g**2 / (1j * (mag.omega_m - omega_p) + mag.kappa_m)
    return -1 + 2 * cav.kappa_c / (1j * (cav.omega_r - omega_p) + cav.kappa_l + magnon)


def reflection_s11_modes(omega_p, cav: CavityParams, modes):
    """Reflection with several magnon modes ``(omega_m, kappa_m, g)`` on one cavity."""
    omega_p = np.asarray(omega_p, dtype=float)
    self_energy = np.zeros(omega_p.shape, dtype=complex)
    for omega_m, kappa_m, g in modes:
        self_energy = self_energy + g**2 / (1j * (omega_m - omega_p) + kappa_m)
    return -1 + 2 * cav.kappa_c / (1j * (cav.omega_r - omega_p) + cav.kappa_l + self_energy)


def reflection_amplitude(omega_p, cav: CavityParams, mag: MagnonParams):
    return np.abs(reflection_s11(omega_p, cav, mag))


def s11_amplitude(omega_p, omega_r, kappa_c, kappa_l, omega_m, kappa_m, g):
    """Array-friendly |S11| used as the fitting kernel (no validation)."""
    magnon = g**2 / (1j * (omega_m - omega_p) + kappa_m)
    return np.abs(-1 + 2 * kappa_c / (1j * (omega_r - omega_p) + kappa_l + magnon))


def branch_frequencies(omega_r, omega_m, g):
    """Eigenfrequencies ``(omega_plus, omega_minus)`` of two coupled oscillators."""
    _check_finite(omega_r=omega_r, omega_m=omega_m, g=g)
    if np.any(np.asarray(g) < 0):
        raise ValueError("coupling must be non-negative")
    mean = 0.5 * (np.asarray(omega_r) + np.asarray(omega_m))
    half_split = np.sqrt((0.5 * (np.asarray(omega_r) - np.asarray(omega_m))) ** 2 + np.asarray(g) ** 2)
    return mean + half_split, mean - half_split


def hopfield_fractions(omega_r, omega_m, g) -> HopfieldFractions:
    """Magnon and photon content of both polariton branches.

    Fractions are the squared eigenvector components of the real symmetric
    matrix ``[[omega_r, g], [g, omega_m]]``.  The upper branch carries the
    magnon fraction ``(1 + d / sqrt(d^2 + 4 g^2)) / 2`` with ``d = omega_m - omega_r``.
    Works elementwise on arrays.
    """
    _check_finite(omega_r=omega_r, omega_m=omega_m, g=g)
    detuning = np.asarray(omega_m, dtype=float) - np.asarray(omega_r, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("coupling must be non-negative")
    norm = np.sqrt(detuning**2 + 4 * g**2)
    if np.any(norm == 0):
        raise ValueError("degenerate uncoupled modes: branch eigenvectors undefined")
    upper_magnon = 0.5 * (1 + detuning / norm)
    lower_magnon = 1 - upper_magnon
    if upper_magnon.ndim == 0:
        upper_magnon, lower_magnon = float(upper_magnon), float(lower_magnon)
    return HopfieldFractions(
        upper_magnon=upper_magnon,
        upper_photon=1 - upper_magnon,
        lower_magnon=lower_magnon,
        lower_photon=1 - lower_magnon,
    )


def branch_energy_weights(cav: CavityParams, mag: MagnonParams):
    """Relative stored energy of each branch when driven on its own resonance.

    Each branch acts as a single resonator whose port coupling is the photon
    part of ``kappa_c`` and whose total HWHM mixes ``kappa_l`` and ``kappa_m``
    by the Hopfield fractions.  Returns ``(E_upper, E_lower)`` in units of
    ``2 P_in / hbar``.
    """
    frac = hopfield_fractions(cav.omega_r, mag.omega_m, mag.g)
    w_up, w_low = branch_frequencies(cav.omega_r, mag.omega_m, mag.g)
    out = []
    for photon, magnon, omega in ((frac.upper_photon, frac.upper_magnon, w_up),
                                  (frac.lower_photon, frac.lower_magnon, w_low)):
        kappa_ext = cav.kappa_c * photon
        kappa_tot = cav.kappa_l * photon + mag.kappa_m * magnon
        out.append(kappa_ext / (omega * kappa_tot**2))
    return tuple(out)


def magnon_share_model(cav: CavityParams, mag: MagnonParams):
    """Energy-weighted magnon share of the total excitation over both branches."""
    frac = hopfield_fractions(cav.omega_r, mag.omega_m, mag.g)
    e_up, e_low = branch_energy_weights(cav, mag)
    return (e_up * frac.upper_magnon + e_low * frac.lower_magnon) / (e_up + e_low)


def tls_linewidth(T, P_in, p: TLSParams):
    """Magnon linewidth limited by a saturable two-level-system bath.

    ``T`` in kelvin, ``P_in`` in watts at the input port.
    """
    T = np.asarray(T, dtype=float)
    P_in = np.asarray(P_in, dtype=float)
    _check_finite(T=T, P_in=P_in)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    if np.any(P_in < 0):
        raise ValueError("input power must be non-negative")
    thermal = np.tanh(HBAR * p.omega_ref / (2 * K_B * T))
    out = p.kappa_0 * thermal / np.sqrt(1 + P_in / p.p_c) + p.kappa_off
    return out if out.ndim else float(out)


def tls_linewidth_dbm(T, p_dbm, kappa_0, p_c_dbm, kappa_off, omega_ref):
    """Array-friendly TLS law with powers in dBm (fitting kernel)."""
    thermal = np.tanh(HBAR * omega_ref / (2 * K_B * np.asarray(T)))
    return kappa_0 * thermal / np.sqrt(1 + 10 ** ((np.asarray(p_dbm) - p_c_dbm) / 10)) + kappa_off


def coupling_strength_theory(m: MaterialParams, omega_r: float) -> float:
    """Collective coupling of ``N_s`` spins to the cavity vacuum field."""
    _check_finite(omega_r=omega_r)
    vacuum_field = math.sqrt(m.mu_0 * m.hbar * omega_r / (2 * m.V_a))
    return m.gamma_e * m.eta / 2 * vacuum_field * math.sqrt(2 * m.N_s * m.s)


def excitation_number(P_in, cav: CavityParams):
    """Mean total excitation (photons plus magnons) in units of hbar*omega_r."""
    P_in = np.asarray(P_in, dtype=float)
    _check_finite(P_in=P_in)
    if np.any(P_in < 0):
        raise ValueError("input power must be non-negative")
    out = 4 * cav.q_l**2 / cav.q_c * P_in / (HBAR * cav.omega_r**2)
    return out if out.ndim else float(out)


def magnon_number(n_e, fractions: HopfieldFractions | None = None, energies=None):
    """Mean magnon number from the total excitation.

    Without ``fractions`` the modes are taken as degenerate and the energy is
    split evenly.  Otherwise the magnon share is the energy-weighted mean of
    the branch magnon fractions; ``energies`` defaults to equal branch weight.
    """
    n_e = np.asarray(n_e, dtype=float)
    if np.any(n_e < 0):
        raise ValueError("excitation number must be non-negative")
    if fractions is None:
        share = 0.5
    else:
        e_up, e_low = (1.0, 1.0) if energies is None else energies
        share = (e_up * fractions.upper_magnon + e_low * fractions.lower_magnon) / (e_up + e_low)
    out = share * n_e
    return out if np.ndim(out) else float(out)


def dbm_to_watts(p_dbm):
    _check_finite(p_dbm=p_dbm)
    out = 10 ** (np.asarray(p_dbm, dtype=float) / 10) * 1e-3
    return out if out.ndim else float(out)


def watts_to_dbm(p_watts):
    out = 10 * np.log10(np.asarray(p_watts, dtype=float) / 1e-3)
    return out if out.ndim else float(out)


def magnon_dispersion(current, cal: DispersionCal):
    """Kittel-mode frequency, linear in coil current."""
    out = cal.omega_m_zero + cal.slope * np.asarray(current, dtype=float)
    return out if out.ndim else float(out)


def paper_cavity() -> CavityParams:
    """Cavity at the bare frequency with the low-power quality factors."""
    return CavityParams.from_quality_factors(TWO_PI * presets.F_R_BARE, presets.Q_I, presets.Q_C)


def paper_dispersion() -> DispersionCal:
    omega_r = TWO_PI * presets.F_R_BARE
    omega_m0 = TWO_PI * presets.F_M_ZERO
    return DispersionCal(
        omega_r_bare=omega_r,
        omega_m_zero=omega_m0,
        slope=(omega_r - omega_m0) / presets.I_DEGENERACY,
        g=TWO_PI * presets.G_COUPLING,
    )


def paper_tls(omega_ref: float | None = None) -> TLSParams:
    return TLSParams(
        kappa_0=TWO_PI * presets.KAPPA_0,
        p_c=dbm_to_watts(presets.P_C_DBM),
        kappa_off=TWO_PI * presets.KAPPA_OFF,
        omega_ref=TWO_PI * presets.F_R_BARE if omega_ref is None else omega_ref,
    )


def paper_material() -> MaterialParams:
    return MaterialParams(eta=presets.ETA, V_a=presets.MODE_VOLUME, N_s=presets.N_SPINS, s=presets.SPIN)
