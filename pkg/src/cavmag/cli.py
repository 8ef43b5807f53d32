"""Command-line interface.

Each subcommand reads sweep files and JSON artifacts given with
``--input`` and writes its products into ``--output``.  Inputs are
recognised by content: sweep files by their magic line (single-column
sweeps are resonator traces), JSON artifacts by their ``kind`` field.

Exit codes: 0 success, 2 parse/config error, 3 fit failure, 4 partial.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from cavmag import __version__
from cavmag.config import Config
from cavmag.constants import TWO_PI
from cavmag.fits import FitError, fit_polariton_cut, fit_tls_surface
from cavmag.io import (
    SweepFileError,
    emit_plot_data,
    is_sweep_file,
    load_config,
    load_json,
    load_report,
    load_sweep,
    save_json,
    save_report,
    save_sweep,
)
from cavmag.pipeline import (
    CavityCalibration,
    calibrate,
    calibrate_dispersion,
    cavity_from_record,
    cavity_record,
    cavity_report,
    cavity_stage,
    dispersion_from_record,
    dispersion_record,
    dispersion_report,
    pick_reference,
    run_pipeline,
    shared_kinks,
    table_from_records,
    track_sweep,
    table_records,
    tls_record,
    _clean,
)
from cavmag.sweep import (
    detect_mode_kinks,
    excitation_ratio_curve,
    normalize_sweep,
    sweep_linewidths,
    track_minima,
)

EXIT_OK, EXIT_PARSE, EXIT_FIT, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("cavmag")


class UsageError(ValueError):
    pass


class Inputs:
    def __init__(self, paths):
        self.sweeps, self.resonators, self.artifacts = [], [], {}
        for p in paths or []:
            p = Path(p)
            if not p.exists():
                raise UsageError(f"input {p} does not exist")
            if is_sweep_file(p):
                s = load_sweep(p)
                (self.resonators if s.current.size == 1 else self.sweeps).append(s)
            else:
                try:
                    data = load_json(p)
                except json.JSONDecodeError as exc:
                    raise UsageError(f"{p}: neither a sweep file nor JSON ({exc})") from None
                kind = data.get("kind") if isinstance(data, dict) else None
                if kind is None:
                    raise UsageError(f"{p}: JSON artifact without a 'kind' field")
                self.artifacts[kind] = data

    def need(self, kind):
        if kind not in self.artifacts:
            raise UsageError(f"a '{kind}' artifact is required in --input")
        return self.artifacts[kind]

    def need_sweeps(self, normalized=None):
        if not self.sweeps:
            raise UsageError("at least one sweep file is required in --input")
        if normalized is True and not all(s.meta.get("normalized") for s in self.sweeps):
            raise UsageError("this stage expects normalised sweeps (run 'normalize' first)")
        return self.sweeps

    def cavity(self):
        return cavity_from_record(self.need("cavity")["params"])

    def dispersion(self):
        return dispersion_from_record(self.need("dispersion")["params"])


def _outdir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _artifact(kind, cfg, **body):
    return _clean({"kind": kind, "version": __version__, "seed": cfg.seed,
                   "config_sha256": cfg.pipeline.sha256(), **body})


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args, cfg):
    out = _outdir(args)
    campaign = cfg.simulate.campaign()
    paths = [save_sweep(campaign.resonator, out / "resonator_I0.sweep")]
    for s in campaign.sweeps:
        paths.append(save_sweep(s, out / f"{s.name}.sweep"))
    t = campaign.truth
    truth = {"cavity": cavity_record(t.cav), "dispersion": dispersion_record(t.cal),
             "noise_sigma": t.noise_sigma, "noise_model": t.noise_model,
             "boundary_detuning_hz": campaign.boundary_detuning / TWO_PI,
             "kappa_m_hz": {s.name: s.meta["tags"]["kappa_m_true_hz"] for s in campaign.sweeps}}
    if not isinstance(t.kappa_m, float):
        truth["tls"] = tls_record(t.kappa_m)
    save_json(_artifact("truth", cfg, truth=truth, simulate=cfg.simulate.__dict__), out / "truth.json")
    print(f"wrote {len(paths)} sweeps to {out}")
    return EXIT_OK


def cmd_fit_resonator(args, cfg):
    inp = Inputs(args.input)
    if not inp.resonators:
        raise UsageError("a single-column resonator sweep is required in --input")
    cav, result = cavity_stage(cfg.pipeline, inp.resonators[0])
    save_json(_artifact("cavity", cfg, params=cavity_record(cav), fit=result.to_record()),
              _outdir(args) / "cavity.json")
    print(f"Q_l={cav.q_l:.1f} Q_c={cav.q_c:.1f} Q_i={cav.q_i:.1f} f_r={cav.omega_r / TWO_PI:.6e} Hz")
    return EXIT_OK


def cmd_fit_crossing(args, cfg):
    inp = Inputs(args.input)
    sweeps = inp.need_sweeps()
    ref = sweeps[pick_reference(sweeps, cfg.pipeline.reference)]
    out = _outdir(args)
    if inp.resonators:
        # same path as the pipeline, including the magnon-corrected cavity
        cc = calibrate(cfg.pipeline, ref, inp.resonators[0])
        save_json(_artifact("cavity", cfg, **cavity_report(cc)), out / "cavity.json")
    else:
        cav = inp.cavity()
        cc = CavityCalibration(cav, None, calibrate_dispersion(ref, cav, cfg.pipeline))
    calib = cc.calibration
    save_json(_artifact("dispersion", cfg, **dispersion_report(cc, ref.name, cfg.pipeline)), out / "dispersion.json")
    print(f"g/2pi={calib.cal.g / TWO_PI:.6e} Hz  I0={calib.cal.degeneracy_current():.5f} A")
    return EXIT_OK


def cmd_normalize(args, cfg):
    inp = Inputs(args.input)
    cav, cal = inp.cavity(), inp.dispersion()
    out = _outdir(args)
    pc = cfg.pipeline
    summary, failed = {}, 0
    for s in inp.need_sweeps(normalized=False):
        try:
            norm = normalize_sweep(s, cal, cav, pc.exclusion_kappa_l, pc.refine_iterations,
                                   pc.free_g_at_degeneracy, **pc.lm)
        except (FitError, ValueError) as exc:
            log.error("%s: %s", s.name, exc)
            summary[s.name] = {"status": "failed", "error": str(exc)}
            failed += 1
            continue
        save_sweep(norm.sweep, out / f"{s.name}.norm.sweep")
        summary[s.name] = {"status": "ok", "kappa_refinement_hz": [k / TWO_PI for k in norm.kappa_history]}
    save_json(_artifact("normalization", cfg, sweeps=summary), out / "normalization.json")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_track(args, cfg):
    inp = Inputs(args.input)
    kappa_l = inp.cavity().kappa_l if "cavity" in inp.artifacts else None
    # same call as the pipeline when the cavity artifact is given
    pc = cfg.pipeline
    tracks = {}
    for s in inp.need_sweeps(normalized=True):
        tr = track_minima(s, kappa_l=kappa_l, threshold_sigma=pc.depth_threshold_sigma, smooth_points=pc.smooth_points)
        c, fp, fm = tr.arrays()
        tracks[s.name] = {"current_a": c, "f_plus_hz": fp, "f_minus_hz": fm, "gaps_a": tr.gaps,
                          "noise_sigma": tr.noise_sigma}
    save_json(_artifact("tracks", cfg, sweeps=tracks), _outdir(args) / "tracks.json")
    return EXIT_OK


def cmd_fit_cut(args, cfg):
    inp = Inputs(args.input)
    cav, cal = inp.cavity(), inp.dispersion()
    pc = cfg.pipeline
    rows, fits, failed = [], {}, 0
    sweeps = inp.need_sweeps(normalized=True)
    if args.current is not None:
        for s in sweeps:
            j = int(np.argmin(np.abs(s.current - args.current)))
            mag, res = fit_polariton_cut(s.freq, s.amplitude[:, j], cav.with_frequency(cal.omega_r_bare), cal.g,
                                         cal.omega_m(s.current[j]), free_g=args.free_g, **pc.lm)
            fits[s.name] = {f"{s.current[j]:.9g}": res.to_record()}
        save_json(_artifact("cut", cfg, fits=fits), _outdir(args) / "cut.json")
        return EXIT_OK
    tracks = [track_sweep(s, cav, pc) for s in sweeps]
    candidates = [detect_mode_kinks(tr, cal, threshold_sigma=pc.kink_threshold_sigma, min_excess_hz=3 * s.freq_step)
                  for s, tr in zip(sweeps, tracks)]
    kinks = shared_kinks(candidates, [s.current for s in sweeps])
    for s, tr in zip(sweeps, tracks):
        lw = sweep_linewidths(s, cal, cav, tr, free_g_at_degeneracy=pc.free_g_at_degeneracy,
                              kinks=kinks, guard_band=pc.guard_band_a, **pc.lm)
        rows += table_records(lw.table)
        fits[s.name] = {f"{c:.9g}": r.to_record() for c, r in sorted(lw.fits.items())}
        failed += len(lw.failures)
    save_json(_artifact("linewidths", cfg, rows=rows, fits=fits, kinks_a=kinks), _outdir(args) / "linewidths.json")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_ratios(args, cfg):
    inp = Inputs(args.input)
    cav, cal = inp.cavity(), inp.dispersion()
    pc = cfg.pipeline
    out = {}
    for s in inp.need_sweeps(normalized=True):
        tr = track_sweep(s, cav, pc)
        r = excitation_ratio_curve(s, cal, cav, tr)
        out[s.name] = {"current_a": r.current, "magnon_share": r.magnon_share, "photon_share": r.photon_share,
                       "gaps_a": r.gaps}
    save_json(_artifact("ratios", cfg, sweeps=out), _outdir(args) / "ratios.json")
    return EXIT_OK


def cmd_fit_tls(args, cfg):
    inp = Inputs(args.input)
    table = table_from_records(inp.need("linewidths")["rows"]).select(degeneracy=True)
    if "dispersion" in inp.artifacts and cfg.pipeline.omega_ref_hz is None:
        omega_ref = inp.dispersion().omega_r_bare
    elif cfg.pipeline.omega_ref_hz is not None:
        omega_ref = TWO_PI * cfg.pipeline.omega_ref_hz
    else:
        raise UsageError("fit-tls needs a dispersion artifact or pipeline.omega_ref_hz")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tls, res = fit_tls_surface(table.temperature, table.power_dbm, table.kappa_m, np.array(table.sigma),
                                   omega_ref, **cfg.pipeline.lm)
    for w in caught:
        log.warning("%s", w.message)
    save_json(_artifact("tls", cfg, params=tls_record(tls), fit=res.to_record(),
                        samples=list(table.sweep)), _outdir(args) / "tls.json")
    print(f"kappa_0/2pi={tls.kappa_0 / TWO_PI:.4e} Hz  P_c={tls.p_c_dbm:.2f} dBm  "
          f"kappa_off/2pi={tls.kappa_off / TWO_PI:.4e} Hz")
    return EXIT_OK


def cmd_pipeline(args, cfg):
    inp = Inputs(args.input)
    pc = cfg.pipeline
    sweeps = inp.sweeps or None
    resonator = inp.resonators[0] if inp.resonators else None
    if sweeps is None and not pc.inputs:
        raise UsageError("no sweeps given (use --input or pipeline.inputs)")
    bundle = run_pipeline(pc, sweeps=sweeps, resonator=resonator)
    out = _outdir(args)
    save_report(bundle, out / "report.json")
    emit_plot_data(bundle, out / "plots")
    _print_summary(bundle.data)
    return EXIT_PARTIAL if bundle.partial else EXIT_OK


def cmd_report(args, cfg):
    if not args.input:
        raise UsageError("report needs a report.json in --input")
    data = load_report(args.input[0])
    out = _outdir(args)
    emit_plot_data(data, out / "plots")
    (out / "summary.txt").write_text(_summary_text(data))
    _print_summary(data)
    return EXIT_PARTIAL if data.get("partial") else EXIT_OK


def _summary_text(data) -> str:
    lines = [f"cavmag {data['version']}  seed={data['seed']}  config={data['config_sha256'][:12]}"]
    c = data["cavity"]["params"]
    lines.append(f"cavity      f_r/2pi={c['f_r_hz']:.6e} Hz  Q_l={c['q_l']:.1f}  Q_c={c['q_c']:.1f}  Q_i={c['q_i']:.1f}")
    d = data["dispersion"]["params"]
    lines.append(f"dispersion  f_r,bare/2pi={d['f_r_bare_hz']:.6e} Hz  g/2pi={d['g_hz']:.5e} Hz  "
                 f"I0={d['degeneracy_current_a']:.5f} A")
    if data.get("tls"):
        t = data["tls"]["params"]
        e = data["tls"]["fit"]["params"]
        lines.append(f"tls         kappa_0/2pi={t['kappa_0_hz']:.4e}({e['kappa_0']['sigma']:.1e}) Hz  "
                     f"P_c={t['p_c_dbm']:.2f}({e['p_c_dbm']['sigma']:.2f}) dBm  "
                     f"kappa_off/2pi={t['kappa_off_hz']:.4e}({e['kappa_off']['sigma']:.1e}) Hz  [HWHM]")
    n_ok = sum(r["status"] == "ok" for r in data["sweeps"].values())
    lines.append(f"sweeps      {n_ok}/{len(data['sweeps'])} ok, {len(data['linewidths'])} cuts"
                 + ("  PARTIAL" if data.get("partial") else ""))
    for f in data.get("failures", []):
        lines.append(f"  failure: {f}")
    return "\n".join(lines) + "\n"


def _print_summary(data):
    sys.stdout.write(_summary_text(data))


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic campaign from the simulate config"),
    "fit-resonator": (cmd_fit_resonator, "fit the zero-current resonator trace"),
    "fit-crossing": (cmd_fit_crossing, "calibrate the avoided-crossing dispersion (pass the resonator sweep "
                                       "to also write the magnon-corrected cavity)"),
    "normalize": (cmd_normalize, "divide sweeps by their current-independent baseline"),
    "track": (cmd_track, "track the polariton minima of normalised sweeps"),
    "fit-cut": (cmd_fit_cut, "fit the magnon linewidth of every (or one) current cut"),
    "ratios": (cmd_ratios, "magnon share of the stored excitation per current"),
    "fit-tls": (cmd_fit_tls, "fit the TLS law to the degeneracy-cut linewidths"),
    "pipeline": (cmd_pipeline, "run every stage and write the report bundle"),
    "report": (cmd_report, "re-emit summary and plot tables from a report bundle"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--input", nargs="+", default=[], help="sweep files and JSON artifacts")
    common.add_argument("--output", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="cavmag", description="cavity-magnon spectroscopy analysis")
    parser.add_argument("--version", action="version", version=f"cavmag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "fit-cut":
            p.add_argument("--current", type=float, default=None, help="fit only the cut nearest this current (A)")
            p.add_argument("--free-g", action="store_true", help="free g in the single-cut fit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = Config.from_dict(raw, seed=args.seed)
        func = COMMANDS[args.command][0]
        return func(args, cfg)
    except (SweepFileError, UsageError) as exc:
        code = getattr(exc, "code", "usage")
        print(f"error [{code}]: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
