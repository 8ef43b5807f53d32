"""Simulate the measured-system campaign for several seeds and analyse each.

Writes ``<out>/seed<k>/report.json`` plus plot tables and prints how well
every run recovers the truth.  With several seeds the last block gives the
spread, which is the right yardstick for single-run tolerances.

    python3 scripts/run_campaign.py --seeds 0 1 2 3 --out runs
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from cavmag import presets
from cavmag.constants import TWO_PI
from cavmag.io import emit_plot_data, save_report
from cavmag.physics import watts_to_dbm
from cavmag.pipeline import PipelineConfig, run_pipeline
from cavmag.synth import paper_campaign


def score(campaign, bundle):
    truth = {s.name: s.meta["tags"]["kappa_m_true_hz"] for s in campaign.sweeps}
    deg = np.array([r["kappa_m"] / TWO_PI / truth[r["sweep"]] - 1 for r in bundle.table.rows() if r["degeneracy"]])
    every = np.array([r["kappa_m"] / TWO_PI / truth[r["sweep"]] - 1 for r in bundle.table.rows()])
    out = {"g_err": bundle.calibration.cal.g / campaign.truth.cal.g - 1,
           "deg_worst": float(np.max(np.abs(deg))), "deg_outside": int(np.sum(np.abs(deg) > 0.05)),
           "deg_rms": float(np.sqrt(np.mean(deg**2))), "all_within": float(np.mean(np.abs(every) <= 0.05))}
    t = bundle.tls
    if t is not None:
        out.update(dk0=(t.kappa_0 / TWO_PI - presets.KAPPA_0) / 1e6, dpc=watts_to_dbm(t.p_c) - presets.P_C_DBM,
                   dkoff=(t.kappa_off / TWO_PI - presets.KAPPA_OFF) / 1e6)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--snr-db", type=float, default=30.0)
    ap.add_argument("--noise-model", choices=("complex", "amplitude"), default="complex")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    rows = []
    for seed in args.seeds:
        t0 = time.time()
        campaign = paper_campaign(seed=seed, snr_db=args.snr_db, noise_model=args.noise_model)
        bundle = run_pipeline(PipelineConfig(seed=seed, n_workers=args.workers),
                              sweeps=campaign.sweeps, resonator=campaign.resonator)
        out = Path(args.out) / f"seed{seed}"
        save_report(bundle, out / "report.json")
        emit_plot_data(bundle, out / "plots")
        s = score(campaign, bundle)
        rows.append(s)
        print(f"seed {seed:3d}  g {s['g_err'] * 100:+.2f}%  deg-cut rms {s['deg_rms'] * 100:.2f}% "
              f"worst {s['deg_worst'] * 100:.2f}% (>5%: {s['deg_outside']})  all cuts within 5%: "
              f"{s['all_within'] * 100:.1f}%  dk0 {s.get('dk0', np.nan):+.3f} MHz  dPc {s.get('dpc', np.nan):+.2f} dB  "
              f"dkoff {s.get('dkoff', np.nan):+.3f} MHz  partial={bundle.partial}  {time.time() - t0:.1f}s")

    if len(rows) > 1:
        keys = ("g_err", "deg_rms", "deg_worst", "dk0", "dpc", "dkoff")
        print("\nacross seeds (mean +- std):")
        for k in keys:
            v = np.array([r.get(k, np.nan) for r in rows])
            print(f"  {k:10s} {np.nanmean(v):+.4g} +- {np.nanstd(v):.3g}")
        clean = sum(r["deg_outside"] == 0 for r in rows)
        print(f"  runs with every degeneracy cut within 5%: {clean}/{len(rows)}")


if __name__ == "__main__":
    main()
