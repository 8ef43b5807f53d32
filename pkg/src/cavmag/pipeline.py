"""Staged analysis of a temperature/power sweep campaign.

resonator -> dispersion calibration (reference sweep) -> per sweep
(normalise, track, cut fits, ratios) -> TLS surface.  Per-sweep stages are
isolated: a failing sweep is recorded and skipped, and the bundle is
marked partial.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cavmag import __version__
from cavmag.constants import TWO_PI
from cavmag.fits import ANGULAR, FitError, Lineshape, fit_dispersion, fit_resonator, fit_tls_surface
from cavmag.lm import FitResult
from cavmag.physics import CavityParams, DispersionCal, MagnonParams, TLSParams
from cavmag.sweep import (
    LinewidthTable,
    Sweep,
    auto_normalize,
    consensus_kinks,
    detect_mode_kinks,
    normalize_sweep,
    sweep_linewidths,
    track_minima,
)

log = logging.getLogger(__name__)

LM_KEYS = ("max_iter", "gtol", "xtol", "lambda0")


@dataclass
class PipelineConfig:
    inputs: list = field(default_factory=list)  # SweepFile paths
    resonator: str | None = None  # SweepFile with the zero-current trace
    cavity: dict | None = None  # {"f_r_hz", "q_i", "q_c"} instead of a resonator fit
    reference: str | None = None  # sweep name used for the dispersion; default lowest T then P
    resonator_background: str = "linear"
    coupling: str = "over"  # branch for amplitude-only resonator data
    exclusion_kappa_l: float = 5.0
    refine_iterations: int = 3
    calibration_iterations: int = 3
    depth_threshold_sigma: float = 3.0
    smooth_points: int | None = None
    free_g_at_degeneracy: bool = True
    lineshape_refinement: bool = True
    cavity_magnon_correction: bool = True  # refit the resonator trace with the calibrated magnon term
    guard_band_a: float = 0.02
    kink_threshold_sigma: float = 6.0
    omega_ref_hz: float | None = None  # TLS reference frequency; default bare cavity
    seed: int = 0
    n_workers: int = 1
    lm: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.lm) - set(LM_KEYS)
        if unknown:
            raise ValueError(f"unknown LM options: {sorted(unknown)}")
        if self.exclusion_kappa_l <= 0:
            raise ValueError("exclusion width must be positive")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def sweep_digest(s: Sweep) -> str:
    h = hashlib.sha256()
    for a in (s.freq, s.current, s.amplitude):
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    if s.phase is not None:
        h.update(np.ascontiguousarray(s.phase, dtype="<f8").tobytes())
    h.update(json.dumps({k: v for k, v in s.meta.items() if k != "tags"}, sort_keys=True, default=str).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# serialisation helpers (all spectroscopic values as /2pi Hz)
# --------------------------------------------------------------------------

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def cavity_record(cav: CavityParams) -> dict:
    return {"f_r_hz": cav.omega_r / TWO_PI, "kappa_c_hz": cav.kappa_c / TWO_PI,
            "kappa_i_hz": cav.kappa_i / TWO_PI, "kappa_l_hz": cav.kappa_l / TWO_PI,
            "q_c": cav.q_c, "q_i": cav.q_i, "q_l": cav.q_l,
            "units": "frequencies /2pi in Hz, linewidths HWHM",
            # exact internal values (rad/s) so that artifacts chain bit-identically
            "angular": [cav.omega_r, cav.kappa_c, cav.kappa_i]}


def cavity_from_record(r: dict) -> CavityParams:
    if "angular" in r:
        return CavityParams(*r["angular"])
    return CavityParams(omega_r=TWO_PI * r["f_r_hz"], kappa_c=TWO_PI * r["kappa_c_hz"],
                        kappa_i=TWO_PI * r["kappa_i_hz"])


def dispersion_record(cal: DispersionCal) -> dict:
    return {"f_r_bare_hz": cal.omega_r_bare / TWO_PI, "f_m_zero_hz": cal.omega_m_zero / TWO_PI,
            "slope_hz_per_a": cal.slope / TWO_PI, "g_hz": cal.g / TWO_PI,
            "degeneracy_current_a": cal.degeneracy_current(), "units": "frequencies /2pi in Hz",
            "angular": [cal.omega_r_bare, cal.omega_m_zero, cal.slope, cal.g]}


def dispersion_from_record(r: dict) -> DispersionCal:
    if "angular" in r:
        return DispersionCal(*r["angular"])
    return DispersionCal(omega_r_bare=TWO_PI * r["f_r_bare_hz"], omega_m_zero=TWO_PI * r["f_m_zero_hz"],
                         slope=TWO_PI * r["slope_hz_per_a"], g=TWO_PI * r["g_hz"])


def tls_record(p: TLSParams) -> dict:
    return {"kappa_0_hz": p.kappa_0 / TWO_PI, "p_c_dbm": p.p_c_dbm, "kappa_off_hz": p.kappa_off / TWO_PI,
            "f_ref_hz": p.omega_ref / TWO_PI, "units": "linewidths /2pi in Hz, HWHM"}


def table_records(table: LinewidthTable) -> list:
    rows = []
    for row in table.rows():
        row = dict(row)
        kappa, sigma = row.pop("kappa_m"), row.pop("sigma")
        row["kappa_m_hz"], row["sigma_hz"] = kappa / TWO_PI, sigma / TWO_PI
        row["angular"] = [kappa, sigma]  # rad/s, exact
        rows.append(row)
    return rows


def table_from_records(rows) -> LinewidthTable:
    table = LinewidthTable()
    for r in rows:
        r = dict(r)
        kappa, sigma = TWO_PI * r.pop("kappa_m_hz"), r.pop("sigma_hz")
        sigma = math.nan if sigma is None else TWO_PI * sigma
        if "angular" in r:
            kappa, sigma = r.pop("angular")
            sigma = math.nan if sigma is None else sigma
        r["kappa_m"], r["sigma"] = kappa, sigma
        if r.get("magnon_share") is None:
            r["magnon_share"] = math.nan
        table.add(**r)
    return table


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def lm_options(cfg: PipelineConfig) -> dict:
    return dict(cfg.lm)


def cavity_stage(cfg: PipelineConfig, resonator: Sweep | None, magnon: MagnonParams | None = None):
    if cfg.cavity is not None:
        c = cfg.cavity
        cav = CavityParams.from_quality_factors(TWO_PI * c["f_r_hz"], c["q_i"], c["q_c"])
        return cav, None
    if resonator is None:
        raise ValueError("either a resonator sweep or a cavity config is required")
    j = int(np.argmin(np.abs(resonator.current)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cav, result = fit_resonator(resonator.freq, resonator.complex_column(j), coupling=cfg.coupling,
                                    background=cfg.resonator_background, magnon=magnon, **lm_options(cfg))
    for w in caught:
        log.warning("resonator: %s", w.message)
    return cav, result


def pick_reference(sweeps, name: str | None) -> int:
    if name is not None:
        for k, s in enumerate(sweeps):
            if s.name == name:
                return k
        raise ValueError(f"reference sweep {name!r} not among inputs")
    keys = [(s.meta["temperature_K"], s.meta.get("power_dbm", math.inf), s.name) for s in sweeps]
    return min(range(len(sweeps)), key=lambda k: keys[k])


@dataclass
class Calibration:
    cal: DispersionCal
    result: FitResult
    tracking: object
    normalized: object
    history: list


def calibrate_dispersion(ref: Sweep, cav: CavityParams, cfg: PipelineConfig) -> Calibration:
    """Dispersion from one sweep, alternating normalisation and branch fits.

    The raw branch formula seeds the loop; afterwards every pass normalises
    with the current calibration, re-tracks and refits, with the lineshape
    correction using the degeneracy-cut linewidth of that pass.
    """
    lm = lm_options(cfg)
    first = auto_normalize(ref, cav.kappa_l, cfg.exclusion_kappa_l, cfg.depth_threshold_sigma, cfg.smooth_points)
    tracking = track_minima(first, kappa_l=cav.kappa_l, threshold_sigma=cfg.depth_threshold_sigma,
                            smooth_points=cfg.smooth_points)
    current, fp, fm = tracking.arrays()
    cal, result = fit_dispersion(current, TWO_PI * fp, TWO_PI * fm, **lm)
    history = [dispersion_record(cal)]
    norm = None
    for _ in range(cfg.calibration_iterations):
        norm = normalize_sweep(ref, cal, cav, cfg.exclusion_kappa_l, cfg.refine_iterations,
                               cfg.free_g_at_degeneracy, **lm)
        tracking = track_minima(norm.sweep, kappa_l=cav.kappa_l, threshold_sigma=cfg.depth_threshold_sigma,
                                smooth_points=cfg.smooth_points)
        current, fp, fm = tracking.arrays()
        ls = Lineshape(cav.kappa_c, cav.kappa_l, norm.magnon.kappa_m) if cfg.lineshape_refinement else None
        cal, result = fit_dispersion(current, TWO_PI * fp, TWO_PI * fm, lineshape=ls, **lm)
        history.append(dispersion_record(cal))
    return Calibration(cal=cal, result=result, tracking=tracking, normalized=norm, history=history)


@dataclass
class CavityCalibration:
    cav: CavityParams
    fit: FitResult | None
    calibration: Calibration
    raw: tuple | None = None  # (cavity, calibration) before the magnon correction
    magnon: MagnonParams | None = None


def calibrate(cfg: PipelineConfig, ref: Sweep, resonator: Sweep | None) -> CavityCalibration:
    """Cavity fit plus dispersion calibration.

    The zero-current trace still carries the detuned magnon, which pulls
    the fitted cavity frequency and widens its linewidth.  With
    ``cavity_magnon_correction`` the trace is refitted once with that
    magnon term fixed from the first calibration, and the dispersion is
    recalibrated against the corrected cavity.
    """
    cav, fit = cavity_stage(cfg, resonator)
    calib = calibrate_dispersion(ref, cav, cfg)
    if fit is None or not cfg.cavity_magnon_correction:
        return CavityCalibration(cav, fit, calib)
    cal = calib.cal
    kappa_m = calib.normalized.magnon.kappa_m if calib.normalized is not None else cav.kappa_l
    j = int(np.argmin(np.abs(resonator.current)))
    magnon = MagnonParams(omega_m=cal.omega_m(float(resonator.current[j])), kappa_m=kappa_m, g=cal.g)
    fixed_cav, fixed_fit = cavity_stage(cfg, resonator, magnon)
    fixed_fit.fixed = {"omega_m": (magnon.omega_m, ANGULAR), "kappa_m": (magnon.kappa_m, ANGULAR),
                       "g": (magnon.g, ANGULAR)}
    return CavityCalibration(fixed_cav, fixed_fit, calibrate_dispersion(ref, fixed_cav, cfg),
                             raw=(cav, calib), magnon=magnon)


def cavity_report(cc: CavityCalibration) -> dict:
    out = {"params": cavity_record(cc.cav), "fit": cc.fit.to_record() if cc.fit else None,
           "source": "fit" if cc.fit else "config"}
    if cc.raw is not None:
        out["without_magnon_term"] = cavity_record(cc.raw[0])
    return out


def dispersion_report(cc: CavityCalibration, ref_name: str, cfg: PipelineConfig) -> dict:
    calib = cc.calibration
    out = {"params": dispersion_record(calib.cal), "fit": calib.result.to_record(), "reference": ref_name,
           "lineshape_refinement": cfg.lineshape_refinement, "iterations": calib.history}
    if cc.raw is not None:
        out["without_magnon_term"] = dispersion_record(cc.raw[1].cal)
    return out


def cavity_provenance(cc: CavityCalibration, ref_name: str) -> list:
    if cc.fit is None:
        return [{"stage": "cavity", "inputs": ["config"]},
                {"stage": "dispersion", "inputs": ["cavity", f"input:{ref_name}"]}]
    if cc.raw is None:
        return [{"stage": "cavity", "inputs": ["input:resonator"]},
                {"stage": "dispersion", "inputs": ["cavity", f"input:{ref_name}"]}]
    return [{"stage": "cavity/uncorrected", "inputs": ["input:resonator"]},
            {"stage": "dispersion/uncorrected", "inputs": ["cavity/uncorrected", f"input:{ref_name}"]},
            {"stage": "cavity", "inputs": ["input:resonator", "dispersion/uncorrected"]},
            {"stage": "dispersion", "inputs": ["cavity", f"input:{ref_name}"]}]


@dataclass
class SweepOutcome:
    name: str
    digest: str
    ok: bool
    stage: str  # last stage reached
    error: str = ""
    normalized: Sweep | None = None
    tracking: object = None
    linewidths: object = None  # SweepLinewidths
    kink_candidates: list = field(default_factory=list)
    kappa_history: list = field(default_factory=list)


STAGE_ERRORS = (FitError, ValueError, np.linalg.LinAlgError, FloatingPointError)


def prepare_sweep(raw: Sweep, cal: DispersionCal, cav: CavityParams, cfg: PipelineConfig) -> SweepOutcome:
    """Normalise and track one sweep; collect its kink candidates."""
    out = SweepOutcome(name=raw.name, digest=sweep_digest(raw), ok=False, stage="normalize")
    lm = lm_options(cfg)
    try:
        norm = normalize_sweep(raw, cal, cav, cfg.exclusion_kappa_l, cfg.refine_iterations,
                               cfg.free_g_at_degeneracy, **lm)
        out.normalized, out.kappa_history = norm.sweep, [k / TWO_PI for k in norm.kappa_history]
        out.stage = "track"
        out.tracking = track_sweep(norm.sweep, cav, cfg)
        if len(out.tracking) < 0.5 * raw.current.size:
            raise FitError(f"only {len(out.tracking)} of {raw.current.size} columns tracked")
        out.kink_candidates = detect_mode_kinks(out.tracking, cal, threshold_sigma=cfg.kink_threshold_sigma,
                                                min_excess_hz=3 * raw.freq_step)
        out.stage = "linewidths"
        out.ok = True
    except STAGE_ERRORS as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s failed at %s: %s", raw.name, out.stage, out.error)
    return out


def finish_sweep(out: SweepOutcome, cal: DispersionCal, cav: CavityParams, cfg: PipelineConfig,
                 kinks=()) -> SweepOutcome:
    """Cut fits and ratios of a prepared sweep."""
    if not out.ok:
        return out
    try:
        out.linewidths = sweep_linewidths(out.normalized, cal, cav, out.tracking,
                                          free_g_at_degeneracy=cfg.free_g_at_degeneracy,
                                          kinks=kinks, guard_band=cfg.guard_band_a, **lm_options(cfg))
        out.stage = "done"
    except STAGE_ERRORS as exc:
        out.ok = False
        out.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s failed at %s: %s", out.name, out.stage, out.error)
    return out


def track_sweep(norm: Sweep, cav: CavityParams, cfg: PipelineConfig):
    return track_minima(norm, kappa_l=cav.kappa_l, threshold_sigma=cfg.depth_threshold_sigma,
                        smooth_points=cfg.smooth_points)


def shared_kinks(candidates, currents) -> list:
    """Consensus kink currents over all sweeps (see :func:`consensus_kinks`)."""
    steps = [float(np.median(np.abs(np.diff(c)))) for c in currents if len(c) > 1]
    if not steps:
        return []
    return consensus_kinks(candidates, linkage=1.5 * float(np.median(steps)))


def _prepare_star(args):
    return prepare_sweep(*args)


def _finish_star(args):
    return finish_sweep(*args)


def _map(func, jobs, n_workers):
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(func, jobs))
    return [func(j) for j in jobs]


@dataclass
class ReportBundle:
    data: dict
    outcomes: list = field(default_factory=list)
    table: LinewidthTable | None = None
    calibration: Calibration | None = None
    cavity: CavityParams | None = None
    tls: TLSParams | None = None

    @property
    def partial(self) -> bool:
        return bool(self.data.get("partial"))

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1)


def run_pipeline(cfg: PipelineConfig, sweeps=None, resonator: Sweep | None = None) -> ReportBundle:
    """Run every stage; ``sweeps``/``resonator`` override the config paths."""
    if sweeps is None:
        from cavmag.io import load_sweep
        sweeps = [load_sweep(p) for p in cfg.inputs]
        if resonator is None and cfg.resonator is not None:
            resonator = load_sweep(cfg.resonator)
    sweeps = list(sweeps)
    if not sweeps:
        raise ValueError("no input sweeps")
    names = [s.name for s in sweeps]
    if len(set(names)) != len(names):
        raise ValueError("sweep names must be unique")

    provenance = []
    failures = []
    data = {"kind": "report", "version": __version__, "config": _clean(cfg.to_dict()),
            "config_sha256": cfg.sha256(), "seed": cfg.seed,
            "inputs": {s.name: sweep_digest(s) for s in sweeps}}
    if resonator is not None:
        data["inputs"]["resonator"] = sweep_digest(resonator)

    ref = sweeps[pick_reference(sweeps, cfg.reference)]
    cc = calibrate(cfg, ref, resonator)
    cav, calib = cc.cav, cc.calibration
    cal = calib.cal
    data["cavity"] = cavity_report(cc)
    data["dispersion"] = dispersion_report(cc, ref.name, cfg)
    provenance.extend(cavity_provenance(cc, ref.name))

    outcomes = _map(_prepare_star, [(s, cal, cav, cfg) for s in sweeps], cfg.n_workers)
    kinks = shared_kinks([o.kink_candidates for o in outcomes if o.ok],
                         [s.current for s, o in zip(sweeps, outcomes) if o.ok])
    data["kinks_a"] = kinks
    outcomes = _map(_finish_star, [(o, cal, cav, cfg, kinks) for o in outcomes], cfg.n_workers)

    table = LinewidthTable()
    sweep_data = {}
    for s, out in zip(sweeps, outcomes):
        rec = {"status": "ok" if out.ok else "failed", "stage": out.stage, "error": out.error,
               "temperature_K": s.meta["temperature_K"], "power_dbm": s.meta.get("power_dbm"),
               "kink_candidates_a": out.kink_candidates, "kappa_refinement_hz": out.kappa_history}
        if out.normalized is not None:
            rec["normalization"] = {k: out.normalized.meta.get(k) for k in
                                    ("baseline_weighting", "baseline_interpolated_rows",
                                     "baseline_sparse_rows", "baseline_refinements")}
            provenance.append({"stage": f"{s.name}/normalize", "inputs": [f"input:{s.name}", "dispersion", "cavity"]})
        if out.tracking is not None:
            c, fp, fm = out.tracking.arrays()
            rec["tracking"] = {"current_a": c, "f_plus_hz": fp, "f_minus_hz": fm, "gaps_a": out.tracking.gaps,
                               "noise_sigma": out.tracking.noise_sigma}
            provenance.append({"stage": f"{s.name}/track", "inputs": [f"{s.name}/normalize"]})
        if out.ok:
            lw = out.linewidths
            table.extend(lw.table)
            deg = lw.fits[lw.degeneracy_current]
            rec["degeneracy"] = {"current_a": lw.degeneracy_current, "g_hz": lw.g / TWO_PI, "fit": deg.to_record()}
            rec["cuts"] = {f"{c:.9g}": r.to_record() for c, r in sorted(lw.fits.items())}
            rec["cut_failures"] = lw.failures
            ratios = lw.ratios
            rec["ratios"] = {"current_a": ratios.current, "magnon_share": ratios.magnon_share,
                             "photon_share": ratios.photon_share, "gaps_a": ratios.gaps}
            provenance.append({"stage": f"{s.name}/linewidths",
                               "inputs": [f"{s.name}/normalize", f"{s.name}/track", "dispersion", "cavity"]})
            provenance.append({"stage": f"{s.name}/ratios",
                               "inputs": [f"{s.name}/normalize", f"{s.name}/track", "dispersion", "cavity"]})
            failures.extend(lw.failures)
        else:
            failures.append({"sweep": s.name, "stage": out.stage, "reason": out.error})
        sweep_data[s.name] = rec
    data["sweeps"] = sweep_data
    data["linewidths"] = table_records(table)

    tls, tls_fit = None, None
    deg_rows = table.select(degeneracy=True)
    omega_ref = TWO_PI * cfg.omega_ref_hz if cfg.omega_ref_hz is not None else cal.omega_r_bare
    if len(deg_rows) >= 3:
        try:
            sigma = np.array(deg_rows.sigma)
            if not np.all(np.isfinite(sigma) & (sigma > 0)):
                raise FitError("degeneracy-cut uncertainties unavailable")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                tls, tls_fit = fit_tls_surface(deg_rows.temperature, deg_rows.power_dbm, deg_rows.kappa_m,
                                               sigma, omega_ref, **lm_options(cfg))
            for w in caught:
                log.warning("tls: %s", w.message)
            data["tls"] = {"params": tls_record(tls), "fit": tls_fit.to_record(),
                           "samples": [r["sweep"] for r in deg_rows.rows()]}
            provenance.append({"stage": "tls", "inputs": sorted(f"{r['sweep']}/linewidths" for r in deg_rows.rows())})
        except (FitError, ValueError) as exc:
            failures.append({"sweep": None, "stage": "tls", "reason": str(exc)})
            data["tls"] = None
    else:
        failures.append({"sweep": None, "stage": "tls", "reason": "fewer than 3 degeneracy linewidths"})
        data["tls"] = None

    data["failures"] = failures
    data["partial"] = any(not o.ok for o in outcomes) or data["tls"] is None
    data["provenance"] = provenance
    data = _clean(data)
    return ReportBundle(data=data, outcomes=outcomes, table=table, calibration=calib, cavity=cav, tls=tls)
