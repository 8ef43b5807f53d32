"""Config dataclasses for the simulator and the top-level config file.

A config file is a mapping with optional ``seed``, ``simulate`` and
``pipeline`` sections; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from cavmag import presets
from cavmag.constants import TWO_PI
from cavmag.physics import CavityParams, DispersionCal, TLSParams, dbm_to_watts
from cavmag.pipeline import PipelineConfig
from cavmag.synth import DEFAULT_BACKGROUND, Background, ExtraMode, make_campaign


def _strict(cls, d: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class SimulationConfig:
    seed: int = 0
    temperatures: list = field(default_factory=lambda: [presets.T_BASE, presets.T_WARM])
    powers_dbm: object = field(default_factory=lambda: {"start": presets.POWER_MIN_DBM,
                                                        "stop": presets.POWER_MAX_DBM, "num": 10})
    n_current: int = 41
    n_freq: int = 1001
    snr_db: float | None = 30.0
    span_hz: float = 80e6
    boundary_share: float = 0.2
    noise_model: str = "complex"
    background: dict | None = None
    extra_modes: list = field(default_factory=list)  # [{"offset_hz", "g_hz", "kappa_hz"}]
    # truth overrides (defaults: measured-system calibration)
    f_r_bare_hz: float = presets.F_R_BARE
    q_i: float = presets.Q_I
    q_c: float = presets.Q_C
    f_m_zero_hz: float = presets.F_M_ZERO
    degeneracy_current_a: float = presets.I_DEGENERACY
    g_hz: float = presets.G_COUPLING
    kappa_0_hz: float = presets.KAPPA_0
    p_c_dbm: float = presets.P_C_DBM
    kappa_off_hz: float = presets.KAPPA_OFF
    kappa_m_hz: float | None = None  # constant linewidth instead of the TLS law

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return _strict(cls, d, "simulate")

    def powers(self) -> np.ndarray:
        p = self.powers_dbm
        if isinstance(p, dict):
            return np.linspace(float(p["start"]), float(p["stop"]), int(p["num"]))
        return np.asarray(p, dtype=float)

    def truth_parts(self):
        omega_r = TWO_PI * self.f_r_bare_hz
        omega_m0 = TWO_PI * self.f_m_zero_hz
        cav = CavityParams.from_quality_factors(omega_r, self.q_i, self.q_c)
        cal = DispersionCal(omega_r_bare=omega_r, omega_m_zero=omega_m0,
                            slope=(omega_r - omega_m0) / self.degeneracy_current_a, g=TWO_PI * self.g_hz)
        if self.kappa_m_hz is not None:
            law = TWO_PI * self.kappa_m_hz
        else:
            law = TLSParams(kappa_0=TWO_PI * self.kappa_0_hz, p_c=dbm_to_watts(self.p_c_dbm),
                            kappa_off=TWO_PI * self.kappa_off_hz, omega_ref=omega_r)
        return cav, cal, law

    def campaign(self):
        cav, cal, law = self.truth_parts()
        background = DEFAULT_BACKGROUND if self.background is None else Background(
            poly=tuple(self.background.get("poly", (1.0,))),
            ripple_amplitude=self.background.get("ripple_amplitude", 0.0),
            ripple_period_hz=self.background.get("ripple_period_hz", 50e6),
            ripple_phase=self.background.get("ripple_phase", 0.0))
        modes = tuple(ExtraMode(offset=TWO_PI * m["offset_hz"], g=TWO_PI * m["g_hz"], kappa=TWO_PI * m["kappa_hz"])
                      for m in self.extra_modes)
        return make_campaign(cav, cal, law, seed=self.seed, temperatures=tuple(self.temperatures),
                             powers_dbm=self.powers(), n_current=self.n_current, n_freq=self.n_freq,
                             snr_db=self.snr_db, span_hz=self.span_hz, boundary_share=self.boundary_share,
                             background=background, extra_modes=modes, noise_model=self.noise_model)


@dataclass
class Config:
    seed: int = 0
    simulate: SimulationConfig = field(default_factory=SimulationConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def from_dict(cls, d: dict | None, seed: int | None = None) -> "Config":
        d = dict(d or {})
        unknown = set(d) - {"seed", "simulate", "pipeline"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        base_seed = int(d.get("seed", 0)) if seed is None else int(seed)
        sim = dict(d.get("simulate") or {})
        pipe = dict(d.get("pipeline") or {})
        if seed is not None or "seed" not in sim:
            sim["seed"] = base_seed
        if seed is not None or "seed" not in pipe:
            pipe["seed"] = base_seed
        return cls(seed=base_seed, simulate=SimulationConfig.from_dict(sim), pipeline=PipelineConfig.from_dict(pipe))
