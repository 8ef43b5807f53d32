"""The concrete fits of the analysis chain.

Each fit builds a :class:`~cavmag.lm.FitProblem` around a broadcasting-safe
model so the same closure can be handed to the grid-search oracle in
:mod:`cavmag.synth`.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from cavmag.constants import TWO_PI
from cavmag.lm import ClampedBoundError, FitError, FitProblem, FitResult, solve_least_squares
from cavmag.physics import (
    CavityParams,
    DispersionCal,
    MagnonParams,
    TLSParams,
    dbm_to_watts,
    s11_amplitude,
    tls_linewidth_dbm,
)

log = logging.getLogger(__name__)

ANGULAR = "angular"


def robust_sigma(values, order: int = 1) -> float:
    """White-noise level from the MAD of ``order``-th differences along axis 0.

    Second differences ignore smooth slopes, so they read ~0 on noiseless
    curved data.
    """
    diff = np.diff(np.asarray(values, dtype=float), n=order, axis=0).ravel()
    if diff.size == 0:
        return 0.0
    gain = {1: math.sqrt(2), 2: math.sqrt(6)}[order]
    return float(1.4826 * np.median(np.abs(diff - np.median(diff))) / gain)


def _expand(p, layout):
    """Map a free-parameter vector onto the full list, keeping fixed values."""
    return [p[entry] if isinstance(entry, int) else entry[1] for entry in layout]


# --------------------------------------------------------------------------
# single resonator
# --------------------------------------------------------------------------

def resonator_model(omega, omega_r, kappa_c, kappa_i):
    return -1 + 2 * kappa_c / (1j * (omega_r - omega) + kappa_c + kappa_i)


def _dip_estimates(omega, amp):
    """Centre, baseline, relative depth and HWHM of the deepest dip."""
    n = amp.size
    edge = max(n // 10, 1)
    base = float(np.median(np.concatenate([amp[:edge], amp[-edge:]])))
    k = int(np.argmin(amp))
    depth = float(amp[k] / base) if base > 0 else 0.0
    level = math.sqrt((1 + depth**2) / 2) * base
    left = k
    while left > 0 and amp[left] < level:
        left -= 1
    right = k
    while right < n - 1 and amp[right] < level:
        right += 1
    step = float(np.median(np.diff(omega)))
    hwhm = max(0.5 * (omega[right] - omega[left]), 2 * step)
    return float(omega[k]), base, min(depth, 0.999), hwhm


def fit_resonator(freq_hz, data, *, coupling: str | None = "over", background: str = "linear",
                  window: float | None = 10.0, magnon: MagnonParams | None = None,
                  **lm_options) -> tuple[CavityParams, FitResult]:
    """Fit the bare single-port resonator (the coupled model with ``g = 0``).

    ``data`` may be complex (amplitude and phase known) or real amplitude.
    With amplitude only, ``kappa_c`` and ``kappa_i`` enter symmetrically, so
    ``coupling`` ("over" or "under") picks the branch; complex data tries
    both and keeps the better one.

    ``background`` is "none", "scale" or "linear" (scale times a linear
    frequency tilt); complex data additionally fits a constant phase.
    ``window`` restricts the fit to that many linewidths around the dip.
    A fixed ``magnon`` adds its (detuned) coupling term to the model so the
    cavity parameters come out bare rather than dressed.
    """
    omega_all = TWO_PI * np.asarray(freq_hz, dtype=float)
    data = np.asarray(data)
    is_complex = np.iscomplexobj(data)
    amp_all = np.abs(data)

    noise = robust_sigma(amp_all)
    centre, base, depth, hwhm = _dip_estimates(omega_all, amp_all)
    # the deepest of n noise samples sits near sqrt(2 ln n) sigma
    floor = (math.sqrt(2 * math.log(amp_all.size)) + 2) * noise
    if base <= 0 or base - amp_all.min() <= max(floor, 1e-9 * base):
        raise FitError("no resonance dip above the noise floor")
    step = float(np.median(np.diff(omega_all)))
    if 2 * hwhm / step < 5:
        warnings.warn("fewer than 5 points per resonator linewidth", RuntimeWarning, stacklevel=2)

    sel = slice(None)
    if window is not None:
        sel = np.abs(omega_all - centre) <= window * hwhm
        if sel.sum() < 12:
            sel = slice(None)
    omega, y = omega_all[sel], data[sel]
    ref = float(np.mean(omega))
    half = float(np.ptp(omega)) / 2 or 1.0

    names = ["omega_r", "kappa_c", "kappa_i"]
    kinds = [ANGULAR] * 3
    if background not in ("none", "scale", "linear"):
        raise ValueError(f"unknown background model {background!r}")
    n_extra = {"none": 0, "scale": 1, "linear": 2}[background]
    names += ["scale", "tilt"][:n_extra]
    if is_complex and background != "none":
        names.append("phase")
    kinds += [""] * (len(names) - 3)

    def model(p, x):
        if magnon is None:
            s = resonator_model(x, p[0], p[1], p[2])
        else:
            m = magnon.g**2 / (1j * (magnon.omega_m - x) + magnon.kappa_m)
            s = -1 + 2 * p[1] / (1j * (p[0] - x) + p[1] + p[2] + m)
        if background == "none":
            return s if is_complex else np.abs(s)
        env = p[3] * (1 + p[4] * (x - ref) / half) if background == "linear" else p[3]
        if is_complex:
            return env * np.exp(1j * p[-1]) * s
        return env * np.abs(s)

    if coupling not in ("over", "under", None):
        raise ValueError("coupling must be 'over', 'under' or None")
    branches = ["over", "under"] if (is_complex or coupling is None) else [coupling]
    lo = [omega.min(), 0.0, 0.0]
    hi = [omega.max(), 50 * hwhm + 10 * half, 50 * hwhm + 10 * half]
    if n_extra >= 1:
        lo.append(0.0)
        hi.append(np.inf)
    if n_extra == 2:
        lo.append(-0.9)
        hi.append(0.9)
    if is_complex and background != "none":
        lo.append(-4 * math.pi)
        hi.append(4 * math.pi)

    best = None
    for branch in branches:
        frac = (1 + depth) / 2 if branch == "over" else (1 - depth) / 2
        init = [centre, hwhm * frac, max(hwhm * (1 - frac), 1e-6 * hwhm)]
        if n_extra >= 1:
            init.append(base)
        if n_extra == 2:
            init.append(0.0)
        if is_complex and background != "none":
            far = np.concatenate([y[:3], y[-3:]])
            init.append(float(np.angle(-np.mean(far))))
        problem = FitProblem(model=model, x=omega, y=y, init=np.array(init), bounds=(lo, hi),
                             names=names, kinds=kinds, typical=[hwhm, hwhm, hwhm] + [1.0] * (len(init) - 3),
                             **lm_options)
        result = solve_least_squares(problem)
        if best is None or result.residual_norm < best.residual_norm:
            best = result
    p = best.params
    cav = CavityParams(omega_r=float(p[0]), kappa_c=float(p[1]), kappa_i=float(p[2]))
    return cav, best


# --------------------------------------------------------------------------
# polariton cut
# --------------------------------------------------------------------------

def polariton_model(cav: CavityParams, layout):
    """Cut model ``scale * |S11| + offset`` over the free/fixed ``layout``.

    Layout order is ``omega_m, kappa_m, g, scale, offset``; entries are an
    index into the free vector or ``("fixed", value)``.
    """
    omega_r, kappa_c, kappa_l = cav.omega_r, cav.kappa_c, cav.kappa_l

    def model(p, x):
        omega_m, kappa_m, g, scale, offset = _expand(p, layout)
        return scale * s11_amplitude(x, omega_r, kappa_c, kappa_l, omega_m, kappa_m, g) + offset

    return model


def fit_polariton_cut(freq_hz, amplitude, cav: CavityParams, g: float, omega_m_init: float,
                      kappa_m_init: float | None = None, *, free_g: bool = False,
                      free_scale: bool = True, free_offset: bool = False,
                      **lm_options) -> tuple[MagnonParams, FitResult]:
    """Fit ``kappa_m`` and ``omega_m`` of one baseline-normalised cut.

    Cavity parameters stay fixed at ``cav``; ``g`` is fixed unless
    ``free_g``.  The amplitude scale absorbs residual baseline error; an
    additive offset can be freed as well.
    Raises :class:`ClampedBoundError` if ``kappa_m`` collapses onto its
    lower bound.
    """
    omega = TWO_PI * np.asarray(freq_hz, dtype=float)
    y = np.asarray(amplitude, dtype=float)
    kappa_l = cav.kappa_l
    span = float(np.ptp(omega))

    spec = [
        ("omega_m", ANGULAR, True, omega_m_init, omega.min() - span, omega.max() + span, kappa_l),
        ("kappa_m", ANGULAR, True, None, 1e-3 * kappa_l, 200 * kappa_l, kappa_l),
        ("g", ANGULAR, free_g, g, 0.0, max(20 * g, span), max(g, kappa_l)),
        ("scale", "", free_scale, 1.0, 0.2, 5.0, 1.0),
        ("offset", "", free_offset, 0.0, -0.5, 0.5, 1.0),
    ]
    layout, names, kinds, init, lo, hi, typical = [], [], [], [], [], [], []
    fixed = {}
    for name, kind, free, value, low, high, typ in spec:
        if free:
            layout.append(len(names))
            names.append(name)
            kinds.append(kind)
            init.append(value)
            lo.append(low)
            hi.append(high)
            typical.append(typ)
        else:
            layout.append(("fixed", value))
            fixed[name] = (value, kind)
    model = polariton_model(cav, layout)

    if kappa_m_init is None:
        # coarse deterministic scan; no random restarts
        trial = np.array(init, dtype=float)
        best_cost = math.inf
        for k in kappa_l * np.geomspace(0.2, 8, 13):
            trial[1] = k
            cost = float(np.sum((model(trial, omega) - y) ** 2))
            if cost < best_cost:
                best_cost, kappa_m_init = cost, k
    init[1] = float(np.clip(kappa_m_init, lo[1], hi[1]))
    init[0] = float(np.clip(init[0], lo[0], hi[0]))

    problem = FitProblem(model=model, x=omega, y=y, init=np.array(init, dtype=float),
                         bounds=(lo, hi), names=names, kinds=kinds, typical=typical, **lm_options)
    result = solve_least_squares(problem)
    result.fixed = {"omega_r": (cav.omega_r, ANGULAR), "kappa_c": (cav.kappa_c, ANGULAR),
                    "kappa_l": (cav.kappa_l, ANGULAR), **fixed}
    if "kappa_m" in result.at_bounds:
        raise ClampedBoundError("kappa_m clamped at its bound", result)
    full = _expand(result.params, layout)
    mag = MagnonParams(omega_m=float(full[0]), kappa_m=float(full[1]), g=float(full[2]))
    return mag, result


# --------------------------------------------------------------------------
# single dip (used for branch energies)
# --------------------------------------------------------------------------

def dip_model(p, x):
    """``scale * |S|`` of a lone resonance parameterised by centre, HWHM, depth."""
    centre, hwhm, depth, scale = p[0], p[1], p[2], p[3]
    dx = x - centre
    return scale * np.sqrt((depth**2 * hwhm**2 + dx**2) / (hwhm**2 + dx**2))


def fit_single_dip(omega, amplitude, centre_init, hwhm_init, **lm_options) -> FitResult:
    omega = np.asarray(omega, dtype=float)
    y = np.asarray(amplitude, dtype=float)
    k = int(np.argmin(np.abs(omega - centre_init)))
    depth0 = float(np.clip(y[k] / max(np.median(y), 1e-12), 0.01, 0.99))
    problem = FitProblem(
        model=dip_model, x=omega, y=y,
        init=np.array([centre_init, hwhm_init, depth0, 1.0]),
        bounds=([omega.min(), 1e-3 * hwhm_init, 0.0, 0.2], [omega.max(), 50 * hwhm_init, 1.0, 5.0]),
        names=("centre", "hwhm", "depth", "scale"), kinds=(ANGULAR, ANGULAR, "", ""),
        typical=[hwhm_init, hwhm_init, 1.0, 1.0], **lm_options)
    return solve_least_squares(problem)


# --------------------------------------------------------------------------
# dispersion
# --------------------------------------------------------------------------

def dispersion_model(p, x):
    """Branch frequencies; ``x = [current, sign]`` with sign +1 upper, -1 lower."""
    current, sign = x[0], x[1]
    omega_r, omega_m0, slope, g = p[0], p[1], p[2], p[3]
    omega_m = omega_m0 + slope * current
    return 0.5 * (omega_r + omega_m) + sign * np.sqrt((0.5 * (omega_r - omega_m)) ** 2 + g**2)


def _abs2_slope(w, omega_r, omega_m, g, kappa_c, kappa_l, kappa_m):
    m = 1j * (omega_m - w) + kappa_m
    d = 1j * (omega_r - w) + kappa_l + g**2 / m
    s = -1 + 2 * kappa_c / d
    d_prime = -1j + 1j * g**2 / m**2
    s_prime = -2 * kappa_c * d_prime / d**2
    return 2 * np.real(np.conj(s) * s_prime)


def dressed_minima(omega_r, omega_m, g, kappa_c, kappa_l, kappa_m, sign, iterations=40):
    """Frequencies of the |S11| minima next to each undamped branch.

    Damping and the port interference pull the reflection minima away from
    the coupled-oscillator eigenfrequencies by a fraction of a linewidth.
    Newton iteration on ``d|S11|^2/domega`` started from the eigenfrequency
    recovers where a minima tracker actually finds the dip.
    """
    omega_m = np.asarray(omega_m, dtype=float)
    mean = 0.5 * (omega_r + omega_m)
    w = mean + sign * np.sqrt((0.5 * (omega_r - omega_m)) ** 2 + g**2)
    start = w.copy()
    h = 1e-4 * kappa_l
    max_move = 0.5 * min(kappa_l, kappa_m)
    for _ in range(iterations):
        f = _abs2_slope(w, omega_r, omega_m, g, kappa_c, kappa_l, kappa_m)
        fp = (_abs2_slope(w + h, omega_r, omega_m, g, kappa_c, kappa_l, kappa_m)
              - _abs2_slope(w - h, omega_r, omega_m, g, kappa_c, kappa_l, kappa_m)) / (2 * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = np.where(fp > 0, -f / fp, -np.sign(f) * max_move)
        move = np.clip(newton, -max_move, max_move)
        w = w + move
        if np.all(np.abs(move) < 1e-9 * kappa_l):
            break
    bad = ~np.isfinite(w) | (np.abs(w - start) > 5 * max(kappa_l, kappa_m))
    return np.where(bad, start, w)


@dataclass(frozen=True)
class Lineshape:
    """Damping used to map eigenfrequencies onto reflection minima."""

    kappa_c: float
    kappa_l: float
    kappa_m: float


def fit_dispersion(current, omega_plus, omega_minus, *, lineshape: Lineshape | None = None,
                   weights=None, **lm_options) -> tuple[DispersionCal, FitResult]:
    """Fit bare cavity frequency, linear magnon tuning and coupling to branches.

    Inputs are angular branch frequencies per current.  With ``lineshape``
    the model predicts the reflection minima (see :func:`dressed_minima`)
    instead of the undamped eigenfrequencies, which removes the bias of
    fitting tracked minima with the bare formula.
    """
    current = np.asarray(current, dtype=float)
    up = np.asarray(omega_plus, dtype=float)
    low = np.asarray(omega_minus, dtype=float)
    if current.size < 4:
        raise FitError("need at least 4 current points for the dispersion fit")
    if np.any(up < low):
        raise ValueError("upper branch below lower branch")

    # closed-form start: the branch sum is omega_r + omega_m(I) and the
    # squared splitting is quadratic in I with minimum 4 g^2
    slope0, intercept = np.polyfit(current, up + low, 1)
    a, b, c = np.polyfit(current, (up - low) ** 2, 2)
    if a > 0:
        i_cross = -b / (2 * a)
        g0 = 0.5 * math.sqrt(max(c - b * b / (4 * a), 0.0))
    else:
        i_cross = float(current[np.argmin(up - low)])
        g0 = 0.5 * float(np.min(up - low))
    g0 = max(g0, 1e-6 * abs(float(np.mean(up))))
    omega_r0 = 0.5 * (intercept + slope0 * i_cross)
    omega_m00 = intercept - omega_r0
    if not (current.min() <= i_cross <= current.max()):
        warnings.warn("branches do not cross within the current span; g is poorly conditioned",
                      RuntimeWarning, stacklevel=2)

    x = np.vstack([np.concatenate([current, current]),
                   np.concatenate([np.ones_like(current), -np.ones_like(current)])])
    y = np.concatenate([up, low])

    if lineshape is None:
        model = dispersion_model
    else:
        ls = lineshape

        def model(p, x):
            omega_m = p[1] + p[2] * x[0]
            return dressed_minima(p[0], omega_m, p[3], ls.kappa_c, ls.kappa_l, ls.kappa_m, x[1])

    span = float(np.ptp(y)) + 10 * g0
    typ_slope = abs(slope0) if slope0 != 0 else 1.0
    problem = FitProblem(
        model=model, x=x, y=y, init=np.array([omega_r0, omega_m00, slope0, g0]),
        bounds=([omega_r0 - span, -np.inf, -np.inf, 0.0], [omega_r0 + span, np.inf, np.inf, np.inf]),
        weights=weights, names=("omega_r_bare", "omega_m_zero", "slope", "g"),
        kinds=(ANGULAR, ANGULAR, "rad/s/A", ANGULAR),
        typical=[g0, g0, typ_slope, g0], **lm_options)
    result = solve_least_squares(problem)
    if lineshape is not None:
        result.fixed = {"kappa_c": (ls.kappa_c, ANGULAR), "kappa_l": (ls.kappa_l, ANGULAR),
                        "kappa_m": (ls.kappa_m, ANGULAR)}
    p = result.params
    cal = DispersionCal(omega_r_bare=float(p[0]), omega_m_zero=float(p[1]), slope=float(p[2]), g=float(p[3]))
    return cal, result


# --------------------------------------------------------------------------
# TLS surface and power law
# --------------------------------------------------------------------------

def tls_model(omega_ref):
    def model(p, x):
        return tls_linewidth_dbm(x[0], x[1], p[0], p[1], p[2], omega_ref)
    return model


def fit_tls_surface(T, p_dbm, kappa, sigma, omega_ref: float, **lm_options) -> tuple[TLSParams, FitResult]:
    """Weighted fit of the saturable-TLS linewidth law over temperature and power.

    The critical power is fitted in dBm, so its uncertainty comes out in dB.
    """
    T = np.asarray(T, dtype=float)
    p_dbm = np.asarray(p_dbm, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not (T.shape == p_dbm.shape == kappa.shape == sigma.shape):
        raise ValueError("sample arrays must have equal length")
    if np.unique(T).size < 2 and np.unique(p_dbm).size < 2:
        raise FitError("single temperature and single power: TLS parameters unidentifiable")
    if T.max() / T.min() < 3 or np.ptp(p_dbm) < 20:
        warnings.warn("samples span less than a factor 3 in T or 20 dB in P", RuntimeWarning, stacklevel=2)

    order = np.argsort(p_dbm)
    k_sorted = kappa[order]
    k_min, k_max = float(kappa.min()), float(kappa.max())
    mid = 0.5 * (k_min + k_max)
    below = np.nonzero(k_sorted < mid)[0]
    p_c0 = float(p_dbm[order][below[0]]) if below.size else float(np.median(p_dbm))
    init = np.array([max(k_max - k_min, 1e-3 * k_max), p_c0, 0.9 * k_min])
    problem = FitProblem(
        model=tls_model(omega_ref), x=np.vstack([T, p_dbm]), y=kappa, weights=1 / sigma,
        init=init, bounds=([0.0, -250.0, 0.0], [np.inf, 100.0, np.inf]),
        names=("kappa_0", "p_c_dbm", "kappa_off"), kinds=(ANGULAR, "dBm", ANGULAR),
        typical=[k_max, 10.0, k_max], **lm_options)
    result = solve_least_squares(problem)
    result.fixed = {"omega_ref": (omega_ref, ANGULAR)}
    k0, pc, koff = result.params
    return TLSParams(kappa_0=float(k0), p_c=float(dbm_to_watts(pc)), kappa_off=float(koff),
                     omega_ref=omega_ref), result


def _line(p, x):
    return p[0] + p[1] * x


def fit_powerlaw(p_in, n_e, **lm_options) -> tuple[float, float, FitResult]:
    """Straight-line fit of ``log10 N_e`` against ``log10(P_in / 1 fW)``.

    Returns ``(coefficient_per_fW, exponent, result)``.
    """
    p_in = np.asarray(p_in, dtype=float)
    n_e = np.asarray(n_e, dtype=float)
    if p_in.size < 2:
        raise FitError("need at least two points for a power-law fit")
    if np.any(p_in <= 0) or np.any(n_e <= 0):
        raise ValueError("powers and excitation numbers must be positive")
    x = np.log10(p_in / 1e-15)
    y = np.log10(n_e)
    slope0, icpt0 = np.polyfit(x, y, 1) if x.size > 1 and np.ptp(x) > 0 else (1.0, float(y[0]))
    problem = FitProblem(model=_line, x=x, y=y, init=np.array([icpt0, slope0]),
                         names=("log10_coefficient_per_fW", "exponent"), kinds=("", ""),
                         typical=[1.0, 1.0], **lm_options)
    result = solve_least_squares(problem)
    return float(10 ** result.params[0]), float(result.params[1]), result
