"""Two-dimensional spectroscopy sweeps and their per-column processing.

A :class:`Sweep` holds the reflection amplitude over probe frequency (rows)
and coil current (columns).  The functions here normalise away the
current-independent setup background, track the polariton minima, build the
squared-gradient map and turn cuts into linewidths and magnon shares.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks, savgol_filter

from cavmag.constants import TWO_PI
from cavmag.fits import (
    FitError,
    fit_dispersion,
    fit_polariton_cut,
    fit_single_dip,
    robust_sigma,
)
from cavmag.lm import FitResult
from cavmag.physics import CavityParams, DispersionCal, hopfield_fractions, s11_amplitude

log = logging.getLogger(__name__)


@dataclass
class Sweep:
    freq: np.ndarray  # Hz, strictly increasing
    current: np.ndarray  # A, strictly monotone
    amplitude: np.ndarray  # linear, shape (n_freq, n_current)
    phase: np.ndarray | None = None  # rad
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.freq.ndim != 1 or self.current.ndim != 1:
            raise ValueError("axes must be one-dimensional")
        if self.amplitude.shape != (self.freq.size, self.current.size):
            raise ValueError(f"amplitude shape {self.amplitude.shape} does not match axes "
                             f"({self.freq.size}, {self.current.size})")
        if self.phase is not None:
            self.phase = np.asarray(self.phase, dtype=float)
            if self.phase.shape != self.amplitude.shape:
                raise ValueError("phase shape does not match amplitude")
        if self.freq.size > 1 and np.any(np.diff(self.freq) <= 0):
            raise ValueError("frequency axis must be strictly increasing")
        if self.current.size > 1:
            d = np.diff(self.current)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError("current axis must be strictly monotone")
        if not np.all(np.isfinite(self.amplitude)) or np.any(self.amplitude < 0):
            raise ValueError("amplitude must be finite and non-negative")
        temperature = self.meta.get("temperature_K")
        if temperature is None or not temperature > 0:
            raise ValueError("sweep metadata needs a positive temperature_K")
        self.meta = dict(self.meta)
        self.meta.setdefault("tags", {})

    @property
    def name(self) -> str:
        return str(self.meta.get("name", "sweep"))

    @property
    def omega(self) -> np.ndarray:
        return TWO_PI * self.freq

    @property
    def freq_step(self) -> float:
        return float(np.median(np.diff(self.freq))) if self.freq.size > 1 else 0.0

    def complex_column(self, j: int):
        if self.phase is None:
            return self.amplitude[:, j]
        return self.amplitude[:, j] * np.exp(1j * self.phase[:, j])

    def with_amplitude(self, amplitude, **meta) -> "Sweep":
        return replace(self, amplitude=amplitude, meta={**self.meta, **meta})


@dataclass(frozen=True)
class BranchTrace:
    current: float
    omega_plus: float  # Hz
    omega_minus: float  # Hz
    depth_plus: float  # amplitude at the minimum
    depth_minus: float


@dataclass
class Tracking:
    traces: list
    gaps: list
    noise_sigma: float

    def __iter__(self):
        return iter(self.traces)

    def __len__(self):
        return len(self.traces)

    def arrays(self):
        """``(current, f_plus, f_minus)`` arrays in A and Hz."""
        if not self.traces:
            return np.empty(0), np.empty(0), np.empty(0)
        a = np.array([(t.current, t.omega_plus, t.omega_minus) for t in self.traces])
        return a[:, 0], a[:, 1], a[:, 2]

    def at(self, current, tol=1e-12):
        for t in self.traces:
            if abs(t.current - current) <= tol:
                return t
        return None


# --------------------------------------------------------------------------
# baseline
# --------------------------------------------------------------------------

def exclusion_mask(freq_hz, centres_hz, half_width_hz):
    """Boolean ``[freq x current]`` mask of points within ``half_width`` of a centre.

    ``centres_hz`` has shape ``(n_current, k)``; NaN centres are ignored.
    """
    f = np.asarray(freq_hz, dtype=float)[:, None, None]
    c = np.asarray(centres_hz, dtype=float)[None, :, :]
    with np.errstate(invalid="ignore"):
        near = np.abs(f - c) <= half_width_hz
    return np.any(near, axis=2)


def normalize_baseline(s: Sweep, exclude=None, min_usable: float = 0.3, model=None) -> Sweep:
    """Divide every frequency row by its current-independent background.

    The background at each frequency is a weighted mean along the current
    axis over entries not in ``exclude``.  Columns are weighted by their
    inverse noise variance (robust scatter of first differences); uniform
    weights are used when any column looks noiseless.  Rows with nothing
    usable are interpolated from their neighbours and listed in the meta.

    ``model`` (same shape as the amplitude) is an estimate of the
    normalised response; the averaged quantity is then ``amplitude / model``,
    which removes the dip tails reaching past the exclusion windows.
    """
    amp = s.amplitude if model is None else s.amplitude / model
    usable = np.ones(amp.shape, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)

    col_sigma = np.array([robust_sigma(amp[usable[:, j], j]) if usable[:, j].sum() > 3 else 0.0
                          for j in range(amp.shape[1])])
    if np.all(col_sigma > 0) and np.all(np.isfinite(col_sigma)):
        col_w = 1.0 / col_sigma**2
        weighting = "inverse-variance"
    else:
        col_w = np.ones(amp.shape[1])
        weighting = "uniform"

    w = usable * col_w[None, :]
    total = w.sum(axis=1)
    ok = total > 0
    baseline = np.full(amp.shape[0], np.nan)
    baseline[ok] = (w[ok] * amp[ok]).sum(axis=1) / total[ok]
    interpolated = np.nonzero(~ok)[0]
    if interpolated.size:
        if not ok.any():
            raise ValueError("every frequency row is excluded")
        baseline[~ok] = np.interp(s.freq[~ok], s.freq[ok], baseline[ok])
        log.warning("%s: %d fully excluded rows interpolated", s.name, interpolated.size)
    sparse = np.nonzero(usable.mean(axis=1) < min_usable)[0]
    if np.any(baseline <= 0):
        raise ValueError("non-positive baseline estimate")
    return s.with_amplitude(
        s.amplitude / baseline[:, None],
        normalized=True,
        baseline_weighting=weighting,
        baseline_interpolated_rows=interpolated.tolist(),
        baseline_sparse_rows=sparse.tolist(),
    )


def auto_normalize(s: Sweep, kappa_l: float, exclusion_kappa_l: float = 5.0,
                   threshold_sigma: float = 3.0, smooth_points: int | None = None) -> Sweep:
    """Normalise with exclusion windows around the dressed branches.

    A first pass divides by the per-row median, tracks the minima and fits
    the branch dispersion; the windows of the final pass sit at
    ``exclusion_kappa_l * kappa_l`` around the predicted (and tracked)
    branch frequencies of each current.
    """
    rough = s.with_amplitude(s.amplitude / np.median(s.amplitude, axis=1, keepdims=True))
    tracking = track_minima(rough, kappa_l=kappa_l, threshold_sigma=threshold_sigma,
                            smooth_points=smooth_points)
    centres = np.full((s.current.size, 4), np.nan)
    for t in tracking:
        j = int(np.argmin(np.abs(s.current - t.current)))
        centres[j, :2] = (t.omega_plus, t.omega_minus)
    if len(tracking) >= 4:
        current, fp, fm = tracking.arrays()
        try:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cal, _ = fit_dispersion(current, TWO_PI * fp, TWO_PI * fm)
            up, low = cal.branches(s.current)
            centres[:, 2] = up / TWO_PI
            centres[:, 3] = low / TWO_PI
        except (FitError, ValueError) as exc:
            log.warning("%s: rough dispersion failed (%s); using tracked minima only", s.name, exc)
    half_width = exclusion_kappa_l * kappa_l / TWO_PI
    return normalize_baseline(s, exclusion_mask(s.freq, centres, half_width))


def branch_exclusion(s: Sweep, cal: DispersionCal, half_width: float, tracking=None):
    """Exclusion mask around the predicted (and, if given, tracked) branches.

    ``half_width`` is angular.
    """
    up, low = cal.branches(s.current)
    centres = np.full((s.current.size, 4), np.nan)
    centres[:, 0] = up / TWO_PI
    centres[:, 1] = low / TWO_PI
    if tracking is not None:
        for t in tracking:
            j = int(np.argmin(np.abs(s.current - t.current)))
            centres[j, 2:] = (t.omega_plus, t.omega_minus)
    return exclusion_mask(s.freq, centres, half_width / TWO_PI)


def model_amplitude_map(s: Sweep, cal: DispersionCal, cav: CavityParams, kappa_m: float, g: float | None = None):
    """Normalised ``|S11|`` over the sweep grid for a fixed magnon linewidth."""
    g = cal.g if g is None else g
    omega_m = cal.omega_m(s.current)[None, :]
    return s11_amplitude(s.omega[:, None], cal.omega_r_bare, cav.kappa_c, cav.kappa_l, omega_m, kappa_m, g)


@dataclass
class Normalized:
    sweep: Sweep
    degeneracy_index: int
    magnon: object  # MagnonParams of the final degeneracy fit
    result: FitResult
    kappa_history: list


def normalize_sweep(raw: Sweep, cal: DispersionCal, cav: CavityParams, exclusion_kappa_l: float = 5.0,
                    refine_iterations: int = 3, free_g: bool = True, **lm_options) -> Normalized:
    """Baseline normalisation refined with the fitted degeneracy-cut model.

    The first pass averages outside the exclusion windows.  Each refinement
    fits the degeneracy cut, predicts the normalised response of every
    column from it and re-averages ``amplitude / prediction``, so Lorentzian
    tails outside the windows no longer pull the baseline down.
    """
    exclude = branch_exclusion(raw, cal, exclusion_kappa_l * cav.kappa_l)
    norm = normalize_baseline(raw, exclude)
    j, mag, result = fit_degeneracy_cut(norm, cal, cav, free_g=free_g, **lm_options)
    history = [mag.kappa_m]
    for _ in range(refine_iterations):
        model = model_amplitude_map(raw, cal, cav, mag.kappa_m, mag.g)
        norm = normalize_baseline(raw, exclude, model=model)
        j, mag, result = fit_degeneracy_cut(norm, cal, cav, free_g=free_g, **lm_options)
        history.append(mag.kappa_m)
    norm.meta["baseline_refinements"] = refine_iterations
    return Normalized(sweep=norm, degeneracy_index=j, magnon=mag, result=result, kappa_history=history)


# --------------------------------------------------------------------------
# minima tracking
# --------------------------------------------------------------------------

def _parabolic_vertex(y, k):
    if k <= 0 or k >= y.size - 1:
        return float(k), float(y[k])
    a, b, c = y[k - 1], y[k], y[k + 1]
    denom = a - 2 * b + c
    if denom <= 0:
        return float(k), float(b)
    shift = 0.5 * (a - c) / denom
    return k + shift, float(b - 0.25 * (a - c) * shift)


def _local_vertex(col, wide, k):
    """Minimum of a least-squares cubic matched to the width of the dip at ``k``.

    The half-depth width is read off ``wide`` (a heavily smoothed copy of
    the column); the cubic is fitted to the raw column over about a half of
    that width either side of the running minimum.
    """
    n = wide.size
    k = int(np.clip(k, 0, n - 1))
    # move to the local minimum of the wide curve
    while 0 < k < n - 1 and min(wide[k - 1], wide[k + 1]) < wide[k]:
        k = k - 1 if wide[k - 1] < wide[k + 1] else k + 1
    level = wide[k] + 0.5 * (1.0 - wide[k])
    left, right = k, k
    while left > 0 and wide[left] < level:
        left -= 1
    while right < n - 1 and wide[right] < level:
        right += 1
    half = int(round(0.45 * (right - left)))
    if half <= 2:
        return None
    centre, vertex = k, float(k)
    for _ in range(6):
        lo, hi = max(centre - half, 0), min(centre + half + 1, n)
        if hi - lo < 6:
            return None
        x = np.arange(lo, hi) - centre
        # a cubic follows the skew of dips near the crossing, which biases a parabola
        poly = np.polynomial.Polynomial.fit(x, col[lo:hi], 3, window=[-1, 1])
        roots = poly.deriv().roots()
        roots = roots[np.isreal(roots)].real
        roots = roots[poly.deriv(2)(roots) > 0]
        if roots.size == 0:
            return None
        shift = float(roots[np.argmin(np.abs(roots))])
        if abs(shift) > half:
            return None
        vertex = centre + shift
        if int(round(vertex)) == centre:
            break
        centre = int(round(vertex))
    return float(vertex), float(poly(shift))


def _column_minima(col, threshold, smooth_points, min_distance):
    smoothed = smooth_points > 2
    y = savgol_filter(col, smooth_points, 2, mode="interp") if smoothed else col
    wide = None
    if smoothed:
        wide_points = min(3 * smooth_points, col.size - (1 - col.size % 2))
        wide = savgol_filter(col, wide_points, 2, mode="interp") if wide_points > smooth_points else y
    peaks, props = find_peaks(-y, prominence=threshold, distance=min_distance)
    found = []
    for k in peaks:
        if 1 - y[k] <= threshold:
            continue
        local = _local_vertex(col, wide, int(k)) if smoothed else None
        found.append(local if local is not None else _parabolic_vertex(y, int(k)))
    found.sort(key=lambda item: item[1])
    return found


def track_minima(s: Sweep, kappa_l: float | None = None, threshold_sigma: float = 3.0,
                 smooth_points: int | None = None, max_candidates: int = 4) -> Tracking:
    """Follow both polariton minima through the current sweep.

    Per column, dips deeper than ``threshold_sigma`` times the robust noise
    level are located with a 3-point parabola on the (Savitzky-Golay
    smoothed, when noisy) amplitude.  Branch assignment starts at the column
    of largest splitting and continues outward by nearest-frequency
    continuity, which keeps the branches from swapping near the crossing.
    """
    amp = s.amplitude
    step = s.freq_step
    n_freq, n_cur = amp.shape
    noise = robust_sigma(amp, order=2)
    threshold = max(threshold_sigma * noise, 1e-4)
    if smooth_points is None:
        if noise <= 1e-6:
            smooth_points = 1
        elif kappa_l is not None:
            smooth_points = int(np.clip(0.8 * kappa_l / TWO_PI / step, 5, 101))
        else:
            smooth_points = 9
    if smooth_points > 2 and smooth_points % 2 == 0:
        smooth_points += 1
    width_pts = (kappa_l / TWO_PI / step) if kappa_l is not None else 5.0
    min_distance = max(int(width_pts), 1)
    merge_hz = 2 * (kappa_l / TWO_PI if kappa_l is not None else 5 * step)
    max_jump = max(10 * step, 3 * kappa_l / TWO_PI if kappa_l is not None else 0.0)

    cand = []
    for j in range(n_cur):
        found = _column_minima(amp[:, j], threshold, smooth_points, min_distance)[:max_candidates]
        cand.append([(float(np.interp(pos, np.arange(n_freq), s.freq)), val) for pos, val in found])

    def splitting(c):
        if len(c) < 2:
            return -1.0
        a, b = c[0][0], c[1][0]
        return abs(a - b)

    order = np.argsort(s.current)
    split = np.array([splitting(cand[j]) for j in order])
    # the branch sum follows omega_r + omega_m(I), so its change between
    # columns bounds how far either branch can move
    sums = np.array([cand[j][0][0] + cand[j][1][0] if len(cand[j]) >= 2 else np.nan for j in order])
    moves = np.abs(np.diff(sums))
    moves = moves[np.isfinite(moves)]
    if moves.size:
        max_jump = max(max_jump, 2 * float(np.median(moves)))
    assigned = {}
    if np.all(split < 0):
        # branches merged everywhere: seed on the deepest single dip
        found = [pos for pos in range(n_cur) if cand[order[pos]]]
        if not found:
            return Tracking(traces=[], gaps=s.current.tolist(), noise_sigma=noise)
        seed_pos = min(found, key=lambda pos: cand[order[pos]][0][1])
        seed = order[seed_pos]
        assigned[seed] = (cand[seed][0], cand[seed][0])
    else:
        seed_pos = int(np.argmax(split))
        seed = order[seed_pos]
        (fa, da), (fb, db) = cand[seed][0], cand[seed][1]
        upper, lower = ((fa, da), (fb, db)) if fa > fb else ((fb, db), (fa, da))
        assigned[seed] = (upper, lower)

    for direction in (1, -1):
        history = [assigned[seed]]
        pos = seed_pos + direction
        while 0 <= pos < n_cur:
            j = order[pos]
            if len(history) >= 2:
                pred_u = 2 * history[-1][0][0] - history[-2][0][0]
                pred_l = 2 * history[-1][1][0] - history[-2][1][0]
            else:
                pred_u, pred_l = history[-1][0][0], history[-1][1][0]
            options = cand[j]
            result = None
            if len(options) >= 2:
                best = None
                for a in range(len(options)):
                    for b in range(len(options)):
                        if a == b or options[a][0] < options[b][0]:
                            continue
                        cost = abs(options[a][0] - pred_u) + abs(options[b][0] - pred_l)
                        if best is None or cost < best[0]:
                            best = (cost, options[a], options[b])
                if (best is not None and abs(best[1][0] - pred_u) <= max_jump
                        and abs(best[2][0] - pred_l) <= max_jump):
                    result = (best[1], best[2])
            if result is None and options and abs(pred_u - pred_l) <= merge_hz:
                only = min(options, key=lambda o: abs(o[0] - 0.5 * (pred_u + pred_l)))
                result = (only, only)
            if result is not None:
                assigned[j] = result
                history.append(result)
            pos += direction

    traces, gaps = [], []
    for j in order:
        if j in assigned:
            (fu, du), (fl, dl) = assigned[j]
            traces.append(BranchTrace(current=float(s.current[j]), omega_plus=fu, omega_minus=fl,
                                      depth_plus=du, depth_minus=dl))
        else:
            gaps.append(float(s.current[j]))
    return Tracking(traces=traces, gaps=gaps, noise_sigma=noise)


def gradient_squared_map(s: Sweep) -> np.ndarray:
    """Squared magnitude of the finite-difference amplitude gradient (per bin)."""
    d_freq, d_cur = np.gradient(s.amplitude)
    return d_freq**2 + d_cur**2


def detect_mode_kinks(tracking: Tracking, cal: DispersionCal, threshold_sigma: float = 6.0,
                      window: int = 4, min_excess_hz: float = 0.0):
    """Currents where a tracked branch jumps off the smooth dispersion.

    A weakly coupled extra mode pushes the branch up on one side of its
    crossing and down on the other.  For each branch the residual against
    ``cal`` is compared between ``window`` columns left and right of every
    point (difference of medians); runs where that step exceeds
    ``threshold_sigma`` robust deviations and ``min_excess_hz`` are
    reported at their largest step.
    """
    current, fp, fm = tracking.arrays()
    if current.size < 2 * window + 1:
        return []
    up, low = cal.branches(current)
    kinks = set()
    for resid in (fp - up / TWO_PI, fm - low / TWO_PI):
        n = resid.size
        step = np.zeros(n)
        for k in range(window - 1, n - window):
            step[k] = np.median(resid[k + 1:k + 1 + window]) - np.median(resid[k - window + 1:k + 1])
        inner = step[window - 1:n - window]
        scale = 1.4826 * np.median(np.abs(inner - np.median(inner)))
        limit = max(threshold_sigma * scale, min_excess_hz)
        if limit <= 0:
            continue
        hot = np.abs(step) > limit
        k = 0
        while k < n:
            if hot[k]:
                end = k
                while end + 1 < n and hot[end + 1]:
                    end += 1
                peak = k + int(np.argmax(np.abs(step[k:end + 1])))
                # the jump sits between columns peak and peak + 1
                kinks.add(float(0.5 * (current[peak] + current[peak + 1])))
                k = end + 1
            else:
                k += 1
    return sorted(kinks)


def consensus_kinks(candidates, linkage: float, min_fraction: float = 0.5):
    """Kinks seen consistently across sweeps.

    The extra mode belongs to the sample, so it shows up at the same current
    in every sweep while noise-driven candidates scatter.  Candidates are
    grouped by single linkage (gap ``<= linkage``) and a group is kept when
    it holds candidates from at least ``min_fraction`` of the sweeps; its
    median current is returned.
    """
    pooled = sorted((c, k) for k, cand in enumerate(candidates) for c in cand)
    n_sweeps = len(candidates)
    if not pooled or n_sweeps == 0:
        return []
    need = max(1, math.ceil(min_fraction * n_sweeps))
    groups, group = [], [pooled[0]]
    for item in pooled[1:]:
        if item[0] - group[-1][0] <= linkage:
            group.append(item)
        else:
            groups.append(group)
            group = [item]
    groups.append(group)
    return [float(np.median([c for c, _ in g])) for g in groups if len({k for _, k in g}) >= need]


# --------------------------------------------------------------------------
# magnon share
# --------------------------------------------------------------------------

@dataclass
class RatioCurve:
    current: np.ndarray
    magnon_share: np.ndarray
    photon_share: np.ndarray
    energy_plus: np.ndarray
    energy_minus: np.ndarray
    valid: np.ndarray
    gaps: list


def _branch_energy(fit: FitResult, kappa_c: float, photon: float):
    """Stored energy of a branch driven on resonance, from its fitted dip.

    The depth fixes ``kappa_ext / kappa_tot`` up to the over/under-coupled
    ambiguity; the root closer to the Hopfield expectation is taken.
    """
    centre, kappa_tot, depth = fit.value("centre"), fit.value("hwhm"), fit.value("depth")
    roots = np.array([(1 + depth) / 2, (1 - depth) / 2]) * kappa_tot
    expected = kappa_c * photon
    kappa_ext = float(roots[np.argmin(np.abs(roots - expected))])
    return kappa_ext / (centre * kappa_tot**2)


def excitation_ratio_curve(s: Sweep, cal: DispersionCal, cav: CavityParams,
                           tracking: Tracking | None = None, window_kappa_l: float = 8.0) -> RatioCurve:
    """Magnon share of the stored excitation per current.

    Each branch dip is fitted on its own as a single resonance; its stored
    energy follows from the fitted linewidth and depth, and the shares
    weight the branch Hopfield fractions by those energies.
    """
    if tracking is None:
        tracking = track_minima(s, kappa_l=cav.kappa_l)
    n = s.current.size
    share = np.full(n, np.nan)
    e_plus = np.full(n, np.nan)
    e_minus = np.full(n, np.nan)
    omega = s.omega
    gaps = []
    for j, current in enumerate(s.current):
        t = tracking.at(current)
        if t is None:
            gaps.append(float(current))
            continue
        frac = hopfield_fractions(cal.omega_r_bare, cal.omega_m(current), cal.g)
        centres = TWO_PI * np.array([t.omega_plus, t.omega_minus])
        sep = abs(centres[0] - centres[1])
        half = min(window_kappa_l * cav.kappa_l, 0.45 * sep) if sep > 0 else window_kappa_l * cav.kappa_l
        energies = []
        try:
            for centre, photon in zip(centres, (frac.upper_photon, frac.lower_photon)):
                sel = np.abs(omega - centre) <= half
                if sel.sum() < 8:
                    raise FitError("dip window too small")
                guess = cav.kappa_l * photon + max(cav.kappa_l, 1e-9) * (1 - photon)
                fit = fit_single_dip(omega[sel], s.amplitude[sel, j], centre, guess)
                energies.append(_branch_energy(fit, cav.kappa_c, photon))
        except (FitError, ValueError) as exc:
            log.info("%s: ratio fit failed at %.4f A (%s)", s.name, current, exc)
            gaps.append(float(current))
            continue
        e_plus[j], e_minus[j] = energies
        share[j] = (energies[0] * frac.upper_magnon + energies[1] * frac.lower_magnon) / sum(energies)
    valid = np.isfinite(share)
    return RatioCurve(current=s.current.copy(), magnon_share=share, photon_share=1 - share,
                      energy_plus=e_plus, energy_minus=e_minus, valid=valid, gaps=gaps)


# --------------------------------------------------------------------------
# linewidths
# --------------------------------------------------------------------------

@dataclass
class LinewidthTable:
    sweep: list = field(default_factory=list)
    current: list = field(default_factory=list)
    temperature: list = field(default_factory=list)
    power_dbm: list = field(default_factory=list)
    kappa_m: list = field(default_factory=list)  # rad/s
    sigma: list = field(default_factory=list)  # rad/s
    magnon_share: list = field(default_factory=list)
    degeneracy: list = field(default_factory=list)
    g_free: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    COLUMNS = ("sweep", "current", "temperature", "power_dbm", "kappa_m", "sigma",
               "magnon_share", "degeneracy", "g_free", "flagged")

    def add(self, **row):
        if not row["kappa_m"] > 0:
            raise ValueError("kappa_m must be positive")
        share = row["magnon_share"]
        if not (math.isnan(share) or 0 <= share <= 1):
            raise ValueError("magnon share outside [0, 1]")
        for name in self.COLUMNS:
            getattr(self, name).append(row[name])

    def __len__(self):
        return len(self.kappa_m)

    def rows(self):
        for k in range(len(self)):
            yield {name: getattr(self, name)[k] for name in self.COLUMNS}

    def select(self, **criteria) -> "LinewidthTable":
        out = LinewidthTable()
        for row in self.rows():
            if all(row[key] == value for key, value in criteria.items()):
                out.add(**row)
        return out

    def extend(self, other: "LinewidthTable"):
        for row in other.rows():
            self.add(**row)


@dataclass
class SweepLinewidths:
    table: LinewidthTable
    fits: dict  # current -> FitResult
    degeneracy_current: float
    g: float
    failures: list
    ratios: RatioCurve | None = None


def nearest_index(values, target) -> int:
    return int(np.argmin(np.abs(np.asarray(values) - target)))


def fit_degeneracy_cut(s: Sweep, cal: DispersionCal, cav: CavityParams, free_g: bool = True, **lm_options):
    """Cut fit at the current closest to the degeneracy point."""
    j = nearest_index(s.current, cal.degeneracy_current())
    cav_cut = cav.with_frequency(cal.omega_r_bare)
    mag, result = fit_polariton_cut(s.freq, s.amplitude[:, j], cav_cut, cal.g, cal.omega_m(s.current[j]),
                                    free_g=free_g, **lm_options)
    return j, mag, result


def sweep_linewidths(s: Sweep, cal: DispersionCal, cav: CavityParams, tracking: Tracking | None = None,
                     free_g_at_degeneracy: bool = True, kinks=(), guard_band: float = 0.0,
                     **lm_options) -> SweepLinewidths:
    """All cut fits of one normalised sweep.

    The degeneracy cut is fitted first (with ``g`` free by default); the
    remaining cuts hold ``g`` at that value.
    """
    cav_cut = cav.with_frequency(cal.omega_r_bare)
    if tracking is None:
        tracking = track_minima(s, kappa_l=cav.kappa_l)
    ratios = excitation_ratio_curve(s, cal, cav, tracking)
    j_deg, mag_deg, res_deg = fit_degeneracy_cut(s, cal, cav, free_g=free_g_at_degeneracy, **lm_options)
    g_sweep = mag_deg.g
    table = LinewidthTable()
    fits = {}
    failures = []
    T = float(s.meta["temperature_K"])
    P = float(s.meta.get("power_dbm", math.nan))
    for j, current in enumerate(s.current):
        try:
            if j == j_deg:
                mag, result, g_free = mag_deg, res_deg, free_g_at_degeneracy
            else:
                mag, result = fit_polariton_cut(s.freq, s.amplitude[:, j], cav_cut, g_sweep,
                                                cal.omega_m(current), **lm_options)
                g_free = False
        except (FitError, ValueError) as exc:
            log.warning("%s: cut at %.4f A dropped (%s)", s.name, current, exc)
            failures.append({"sweep": s.name, "current": float(current), "reason": str(exc)})
            continue
        share = float(ratios.magnon_share[j]) if ratios.valid[j] else math.nan
        flagged = any(abs(current - k) <= guard_band for k in kinks)
        table.add(sweep=s.name, current=float(current), temperature=T, power_dbm=P,
                  kappa_m=mag.kappa_m, sigma=result.error("kappa_m"), magnon_share=share,
                  degeneracy=(j == j_deg), g_free=g_free, flagged=flagged)
        fits[float(current)] = result
    return SweepLinewidths(table=table, fits=fits, degeneracy_current=float(s.current[j_deg]),
                           g=g_sweep, failures=failures, ratios=ratios)


def extract_linewidths(sweeps, cal: DispersionCal, cav: CavityParams, trackings=None,
                       free_g_at_degeneracy: bool = True, **lm_options) -> LinewidthTable:
    """Linewidth table over a set of normalised sweeps (rows for every cut)."""
    table = LinewidthTable()
    for k, s in enumerate(sweeps):
        tracking = None if trackings is None else trackings[k]
        out = sweep_linewidths(s, cal, cav, tracking, free_g_at_degeneracy=free_g_at_degeneracy, **lm_options)
        table.extend(out.table)
    return table
