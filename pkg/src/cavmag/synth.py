"""Ground-truth synthetic sweeps, TLS campaigns and a brute-force fit oracle.

Randomness comes from numpy's PCG64 bit generator seeded through a
``SeedSequence([seed, index])``, so every sweep of a campaign has its own
reproducible stream independent of generation order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from cavmag import presets
from cavmag.constants import TWO_PI
from cavmag.physics import (
    CavityParams,
    DispersionCal,
    MagnonParams,
    TLSParams,
    dbm_to_watts,
    magnon_share_model,
    paper_cavity,
    paper_dispersion,
    paper_tls,
    reflection_s11_modes,
    tls_linewidth,
)
from cavmag.sweep import Sweep


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


@dataclass(frozen=True)
class Background:
    """Smooth multiplicative setup transfer: polynomial times sinusoidal ripple.

    The polynomial runs over ``x = (f - centre) / half_span`` of the axis it
    is evaluated on, coefficients in ascending order.
    """

    poly: tuple = (1.0,)
    ripple_amplitude: float = 0.0
    ripple_period_hz: float = 50e6
    ripple_phase: float = 0.0

    def __post_init__(self):
        if len(self.poly) > 6:
            raise ValueError("background polynomial degree must be <= 5")

    def __call__(self, freq_hz):
        f = np.asarray(freq_hz, dtype=float)
        centre = 0.5 * (f.max() + f.min())
        half = 0.5 * np.ptp(f) or 1.0
        x = (f - centre) / half
        value = np.polynomial.polynomial.polyval(x, self.poly)
        value = value * (1 + self.ripple_amplitude * np.sin(TWO_PI * f / self.ripple_period_hz + self.ripple_phase))
        if np.any(value <= 0):
            raise ValueError("background must be strictly positive over the frequency span")
        return value


@dataclass(frozen=True)
class ExtraMode:
    """A weakly coupled magnetostatic mode riding parallel to the Kittel mode."""

    offset: float  # rad/s, relative to the Kittel frequency
    g: float
    kappa: float


@dataclass(frozen=True)
class TruthSpec:
    cav: CavityParams
    cal: DispersionCal
    kappa_m: float | TLSParams
    background: Background = Background()
    noise_sigma: float = 0.0
    seed: int = 0
    extra_modes: tuple = ()
    noise_model: str = "complex"  # or "amplitude"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.noise_model not in ("complex", "amplitude"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")

    def kappa_m_at(self, temperature_K: float, power_dbm: float) -> float:
        if isinstance(self.kappa_m, TLSParams):
            if not math.isfinite(power_dbm):
                raise ValueError("a TLS linewidth law needs the probe power")
            return tls_linewidth(temperature_K, dbm_to_watts(power_dbm), self.kappa_m)
        return float(self.kappa_m)


def noiseless_s11(t: TruthSpec, freq_hz, current, kappa_m):
    """Complex physics-only reflection map ``[freq x current]``."""
    omega = TWO_PI * np.asarray(freq_hz, dtype=float)[:, None]
    current = np.atleast_1d(np.asarray(current, dtype=float))
    omega_m = t.cal.omega_m_zero + t.cal.slope * current
    # the cavity seen by the magnon is the bare one from the dispersion
    cav = t.cav.with_frequency(t.cal.omega_r_bare)
    modes = [(omega_m[None, :], kappa_m, t.cal.g)]
    modes += [(omega_m[None, :] + m.offset, m.kappa, m.g) for m in t.extra_modes]
    return reflection_s11_modes(omega, cav, modes)


def generate_sweep(t: TruthSpec, freq_axis, current_axis, meta: dict, index: int = 0) -> Sweep:
    """Synthesise one sweep: ``background * S11`` plus noise.

    Complex noise ``n`` has ``E|n|^2 = noise_sigma^2`` and amplitude and
    phase are those of the noisy signal.  With ``noise_model="amplitude"``
    a real Gaussian of width ``noise_sigma`` is added to ``|signal|``
    (clipped at zero) and the phase stays noiseless.
    """
    meta = dict(meta)
    kappa_m = t.kappa_m_at(meta["temperature_K"], meta.get("power_dbm", math.nan))
    s11 = noiseless_s11(t, freq_axis, current_axis, kappa_m)
    signal = t.background(freq_axis)[:, None] * s11
    amplitude, phase = np.abs(signal), np.angle(signal)
    if t.noise_sigma > 0:
        rng = rng_for(t.seed, index)
        if t.noise_model == "complex":
            noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
            signal = signal + t.noise_sigma / math.sqrt(2) * noise
            amplitude, phase = np.abs(signal), np.angle(signal)
        else:
            amplitude = np.clip(amplitude + t.noise_sigma * rng.standard_normal(signal.shape), 0.0, None)
    meta.setdefault("tags", {})
    meta["tags"] = dict(meta["tags"], kappa_m_true_hz=kappa_m / TWO_PI, noise_sigma=t.noise_sigma,
                        seed=t.seed, index=index)
    return Sweep(freq=np.asarray(freq_axis, dtype=float), current=np.asarray(current_axis, dtype=float),
                 amplitude=amplitude, phase=phase, meta=meta)


@dataclass
class TLSSamples:
    T: np.ndarray
    p_dbm: np.ndarray
    kappa: np.ndarray
    sigma: np.ndarray


def generate_tls_campaign(p: TLSParams, temperatures, powers_dbm, noise_rel: float,
                          seed: int = 0, sigma_floor_rel: float = 0.01) -> TLSSamples:
    """Linewidth samples on the full ``temperature x power`` grid.

    Each sample gets relative Gaussian noise ``noise_rel``; the reported
    sigma is ``noise_rel * kappa`` (``sigma_floor_rel`` when noiseless, so
    the weights stay finite).
    """
    T, P = (a.ravel() for a in np.meshgrid(np.asarray(temperatures, float), np.asarray(powers_dbm, float),
                                            indexing="ij"))
    if np.unique(T).size < 2 and np.unique(P).size < 2:
        raise ValueError("degenerate sampling grid")
    truth = np.asarray(tls_linewidth(T, dbm_to_watts(P), p))
    rel = noise_rel if noise_rel > 0 else sigma_floor_rel
    kappa = truth.copy()
    if noise_rel > 0:
        kappa = truth * (1 + noise_rel * rng_for(seed).standard_normal(truth.shape))
    return TLSSamples(T=T, p_dbm=P, kappa=kappa, sigma=rel * truth)


# --------------------------------------------------------------------------
# grid-search oracle
# --------------------------------------------------------------------------

@dataclass
class GridSpec:
    axes: Sequence  # one 1D array (or (lo, hi, n) triple) per parameter
    cap: int = 10_000_000

    def arrays(self):
        out = []
        for axis in self.axes:
            if isinstance(axis, tuple) and len(axis) == 3:
                out.append(np.linspace(axis[0], axis[1], int(axis[2])))
            else:
                out.append(np.asarray(axis, dtype=float))
        return out

    @property
    def size(self) -> int:
        return int(np.prod([a.size for a in self.arrays()]))

    def cell(self) -> np.ndarray:
        return np.array([a[1] - a[0] if a.size > 1 else 0.0 for a in self.arrays()])


def grid_search_fit(model, x, y, grid: GridSpec, weights=None, vectorized: bool = True, chunk: int = 256):
    """Exhaustive minimum of the weighted squared residual over a grid.

    Uses the same residual definition as the LM solver.  With
    ``vectorized`` the model receives parameter rows of shape ``(batch, 1)``
    and must broadcast against ``x``.
    """
    axes = grid.arrays()
    if grid.size > grid.cap:
        raise ValueError(f"grid of {grid.size} points exceeds the cap of {grid.cap}")
    y = np.asarray(y)
    w = np.ones(y.shape) if weights is None else np.asarray(weights, dtype=float)
    best_cost, best = math.inf, None
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])
    for start in range(0, mesh.shape[1], chunk):
        block = mesh[:, start:start + chunk]
        if vectorized:
            pred = np.asarray(model(block[:, :, None], x))
            resid = w * (pred - y)
            cost = np.sum(np.abs(resid) ** 2, axis=-1)
        else:
            cost = np.array([np.sum(np.abs(w * (np.asarray(model(col, x)) - y)) ** 2) for col in block.T])
        k = int(np.argmin(cost))
        if cost[k] < best_cost:
            best_cost, best = float(cost[k]), block[:, k].copy()
    return best, best_cost


# --------------------------------------------------------------------------
# campaigns modelled on the measured system
# --------------------------------------------------------------------------

def sigma_from_snr(snr_db: float, level: float = 1.0) -> float:
    """Complex noise RMS for a power SNR relative to signal ``level``."""
    return level * 10 ** (-snr_db / 20)


def share_boundary_detuning(cav: CavityParams, g: float, kappa_m: float, share: float = 0.2) -> float:
    """Positive magnon-minus-cavity detuning where the magnon share falls to ``share``."""
    def f(d):
        return magnon_share_model(cav, MagnonParams(cav.omega_r + d, kappa_m, g)) - share
    return brentq(f, 1e-6 * g, 100 * g, xtol=1e-9 * g)


DEFAULT_BACKGROUND = Background(poly=(0.32, 0.03, -0.02, 0.01), ripple_amplitude=0.03,
                                ripple_period_hz=61e6, ripple_phase=0.4)


@dataclass
class Campaign:
    truth: TruthSpec
    sweeps: list
    resonator: Sweep
    freq: np.ndarray
    current: np.ndarray
    boundary_share: float
    boundary_detuning: float
    meta: dict = field(default_factory=dict)


def make_campaign(cav: CavityParams, cal: DispersionCal, tls: TLSParams | float, seed: int = 0,
                  temperatures=(presets.T_BASE, presets.T_WARM), powers_dbm=None, n_current: int = 41,
                  n_freq: int = 1001, snr_db: float | None = 30.0, span_hz: float = 80e6,
                  boundary_share: float = 0.2, background: Background = DEFAULT_BACKGROUND,
                  extra_modes: tuple = (), noise_model: str = "complex") -> Campaign:
    """Synthetic temperature/power campaign around the avoided crossing.

    The current window is symmetric about the degeneracy point and ends
    where the modelled magnon share at the reference condition (lowest
    temperature and power) drops to ``boundary_share``.  The frequency axis
    is centred on the bare cavity.  A zero-current resonator trace with the
    same background is included for the cavity fit.
    """
    if powers_dbm is None:
        powers_dbm = np.linspace(presets.POWER_MIN_DBM, presets.POWER_MAX_DBM, 10)
    f_centre = cal.omega_r_bare / TWO_PI
    freq = f_centre + np.linspace(-span_hz / 2, span_hz / 2, n_freq)
    level = float(np.mean(background(freq)))
    sigma = 0.0 if snr_db is None else sigma_from_snr(snr_db, level)
    truth = TruthSpec(cav=cav, cal=cal, kappa_m=tls, background=background, noise_sigma=sigma,
                      seed=seed, extra_modes=tuple(extra_modes), noise_model=noise_model)

    t_ref, p_ref = min(temperatures), min(powers_dbm)
    kappa_ref = truth.kappa_m_at(t_ref, p_ref)
    detuning = share_boundary_detuning(cav.with_frequency(cal.omega_r_bare), cal.g, kappa_ref, boundary_share)
    i0 = cal.degeneracy_current()
    di = detuning / abs(cal.slope)
    current = i0 + np.linspace(-di, di, n_current)

    sweeps = []
    for index, (T, P) in enumerate(itertools.product(temperatures, powers_dbm)):
        meta = {"name": f"T{T * 1e3:.0f}mK_P{P:+.1f}dBm", "temperature_K": float(T),
                "power_dbm": float(P), "attenuation_db": -75.0}
        sweeps.append(generate_sweep(truth, freq, current, meta, index=index + 1))
    res_meta = {"name": "resonator_I0", "temperature_K": float(t_ref), "power_dbm": float(p_ref),
                "attenuation_db": -75.0}
    resonator = generate_sweep(truth, freq, np.array([0.0]), res_meta, index=0)
    return Campaign(truth=truth, sweeps=sweeps, resonator=resonator, freq=freq, current=current,
                    boundary_share=boundary_share, boundary_detuning=detuning,
                    meta={"snr_db": snr_db, "seed": seed})


def paper_campaign(seed: int = 0, **options) -> Campaign:
    """:func:`make_campaign` with the measured-system calibration and TLS law."""
    return make_campaign(paper_cavity(), paper_dispersion(), paper_tls(), seed=seed, **options)
