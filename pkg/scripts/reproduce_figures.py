"""Figures for one synthetic campaign: crossing map, linewidths, TLS law, a cut.

Runs the pipeline on the seeded campaign, writes the plot tables and draws
PNGs with matplotlib.

    python3 scripts/reproduce_figures.py --seed 0 --out figures
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from cavmag.constants import TWO_PI  # noqa: E402
from cavmag.io import emit_plot_data, save_report  # noqa: E402
from cavmag.physics import s11_amplitude, tls_linewidth_dbm  # noqa: E402
from cavmag.pipeline import PipelineConfig, run_pipeline  # noqa: E402
from cavmag.synth import paper_campaign  # noqa: E402


def crossing_map(ax, out, cal):
    s = out.normalized
    extent = [s.current[0], s.current[-1], s.freq[0] / 1e9, s.freq[-1] / 1e9]
    im = ax.imshow(s.amplitude, origin="lower", aspect="auto", extent=extent, cmap="viridis", vmin=0, vmax=1.1)
    c, fp, fm = out.tracking.arrays()
    ax.plot(c, fp / 1e9, "w.", ms=3)
    ax.plot(c, fm / 1e9, "w.", ms=3)
    fine = np.linspace(s.current[0], s.current[-1], 300)
    up, low = cal.branches(fine)
    ax.plot(fine, up / TWO_PI / 1e9, "r-", lw=0.8)
    ax.plot(fine, low / TWO_PI / 1e9, "r-", lw=0.8)
    ax.plot(fine, cal.omega_m(fine) / TWO_PI / 1e9, "r--", lw=0.6)
    ax.axhline(cal.omega_r_bare / TWO_PI / 1e9, color="r", ls="--", lw=0.6)
    ax.set_xlabel("current (A)")
    ax.set_ylabel("frequency (GHz)")
    ax.set_title(s.name)
    plt.colorbar(im, ax=ax, label="|S11| (normalised)")


def linewidth_panel(ax, out, truth_hz):
    lw = out.linewidths
    t = lw.table
    cur = np.array(t.current)
    k = np.array(t.kappa_m) / TWO_PI / 1e6
    e = np.array(t.sigma) / TWO_PI / 1e6
    ax.errorbar(cur, k, e, fmt="o", ms=3, label="per-cut fit")
    ax.axhline(truth_hz / 1e6, color="k", ls=":", label="truth")
    ax.set_xlabel("current (A)")
    ax.set_ylabel("kappa_m / 2pi (MHz, HWHM)")
    twin = ax.twinx()
    r = lw.ratios
    twin.plot(r.current, r.magnon_share, "g-", label="magnon share")
    twin.set_ylim(0, 1)
    twin.set_ylabel("magnon share", color="g")
    ax.legend(loc="upper left", fontsize=8)


def tls_panel(ax, bundle, campaign):
    rows = list(bundle.table.select(degeneracy=True).rows())
    p = np.linspace(-145, -60, 200)
    tls = bundle.tls
    for T, colour in zip(sorted({r["temperature"] for r in rows}), ("C0", "C3", "C2", "C1")):
        sel = [r for r in rows if r["temperature"] == T]
        ax.errorbar([r["power_dbm"] for r in sel], [r["kappa_m"] / TWO_PI / 1e6 for r in sel],
                    [r["sigma"] / TWO_PI / 1e6 for r in sel], fmt="o", color=colour, ms=4, label=f"{T * 1e3:.0f} mK")
        if tls is not None:
            model = tls_linewidth_dbm(T, p, tls.kappa_0, tls.p_c_dbm, tls.kappa_off, tls.omega_ref)
            ax.plot(p, model / TWO_PI / 1e6, "-", color=colour, lw=1)
        truth = campaign.truth.kappa_m
        ax.plot(p, tls_linewidth_dbm(T, p, truth.kappa_0, truth.p_c_dbm, truth.kappa_off, truth.omega_ref)
                / TWO_PI / 1e6, ":", color=colour, lw=1)
    ax.set_xlabel("input power (dBm)")
    ax.set_ylabel("kappa_m / 2pi (MHz, HWHM)")
    ax.set_title("fit (solid), truth (dotted)")
    ax.legend(fontsize=8)


def cut_curve(freq, cav, fit):
    def get(name, default):
        if name in fit.names:
            return fit.value(name)
        return fit.fixed[name][0] if name in fit.fixed else default
    amp = s11_amplitude(TWO_PI * freq, cav.omega_r, cav.kappa_c, cav.kappa_l, get("omega_m", np.nan),
                        get("kappa_m", np.nan), get("g", np.nan))
    return get("scale", 1.0) * amp + get("offset", 0.0)


def cut_panel(ax, out, cav):
    lw = out.linewidths
    j = int(np.argmin(np.abs(out.normalized.current - lw.degeneracy_current)))
    s = out.normalized
    fit = lw.fits[lw.degeneracy_current]
    ax.plot(s.freq / 1e9, s.amplitude[:, j], ".", ms=2, label="normalised data")
    ax.plot(s.freq / 1e9, cut_curve(s.freq, cav, fit), "r-", lw=1,
            label=f"fit kappa_m/2pi = {fit.value('kappa_m') / TWO_PI / 1e6:.3f} MHz")
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("|S11|")
    ax.set_title(f"degeneracy cut, I = {lw.degeneracy_current:.4f} A")
    ax.legend(fontsize=8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr-db", type=float, default=30.0)
    ap.add_argument("--out", default="figures")
    args = ap.parse_args()
    out = Path(args.out)

    campaign = paper_campaign(seed=args.seed, snr_db=args.snr_db)
    bundle = run_pipeline(PipelineConfig(seed=args.seed), sweeps=campaign.sweeps, resonator=campaign.resonator)
    save_report(bundle, out / "report.json")
    emit_plot_data(bundle, out / "tables")
    cal, cav = bundle.calibration.cal, bundle.cavity
    ok = [o for o in bundle.outcomes if o.ok]
    ref = next(o for o in ok if o.name == bundle.data["dispersion"]["reference"])
    truth_hz = {s.name: s.meta["tags"]["kappa_m_true_hz"] for s in campaign.sweeps}

    fig, ax = plt.subplots(figsize=(6, 4.5))
    crossing_map(ax, ref, cal)
    fig.tight_layout()
    fig.savefig(out / "crossing_map.png", dpi=150)

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    linewidth_panel(axes[0], ref, truth_hz[ref.name])
    cut_panel(axes[1], ref, cav)
    fig.tight_layout()
    fig.savefig(out / "linewidths_and_cut.png", dpi=150)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    tls_panel(ax, bundle, campaign)
    fig.tight_layout()
    fig.savefig(out / "tls_vs_power.png", dpi=150)
    print(f"wrote figures and tables to {out}")


if __name__ == "__main__":
    main()
