import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import argrelmax

from cavmag.constants import TWO_PI
from cavmag.fits import dressed_minima
from cavmag.physics import CavityParams, hopfield_fractions
from cavmag.sweep import (
    LinewidthTable,
    Sweep,
    auto_normalize,
    consensus_kinks,
    detect_mode_kinks,
    excitation_ratio_curve,
    fit_degeneracy_cut,
    gradient_squared_map,
    normalize_baseline,
    normalize_sweep,
    sweep_linewidths,
    track_minima,
)
from cavmag.synth import Background, ExtraMode, TruthSpec, generate_sweep, make_campaign, paper_campaign

META = {"name": "s", "temperature_K": 0.055, "power_dbm": -140.0}


def flat_sweep(value=0.5, shape=(50, 7)):
    return Sweep(freq=np.linspace(5e9, 5.1e9, shape[0]), current=np.linspace(0, 1, shape[1]),
                 amplitude=np.full(shape, value), meta=dict(META))


@pytest.fixture(scope="module")
def clean(cal):
    """Noiseless unit-background sweep at paper damping."""
    return paper_campaign(snr_db=None, background=Background(), powers_dbm=[-140.0], temperatures=(0.055,)).sweeps[0]


@pytest.fixture(scope="module")
def noisy():
    return paper_campaign(seed=1, powers_dbm=[-140.0, -65.0], temperatures=(0.055,))


def cav_at(cav, cal):
    return cav.with_frequency(cal.omega_r_bare)


# ---------------------------------------------------------------- Sweep type

@pytest.mark.parametrize("change", [
    dict(amplitude=-np.ones((5, 3))),
    dict(amplitude=np.ones((4, 3))),
    dict(freq=np.array([1.0, 3.0, 2.0, 4.0, 5.0])),
    dict(current=np.array([0.0, 1.0, 0.5])),
    dict(meta={"temperature_K": 0.0}),
    dict(amplitude=np.full((5, 3), np.nan)),
])
def test_sweep_invariants(change):
    args = dict(freq=np.arange(1.0, 6.0), current=np.array([0.0, 0.5, 1.0]), amplitude=np.ones((5, 3)),
                meta={"temperature_K": 0.1})
    args.update(change)
    with pytest.raises(ValueError):
        Sweep(**args)


def test_decreasing_current_allowed():
    s = Sweep(freq=np.arange(1.0, 4.0), current=np.array([1.0, 0.5, 0.0]), amplitude=np.ones((3, 3)),
              meta={"temperature_K": 0.1})
    assert s.current[0] == 1.0


# ---------------------------------------------------------------- baseline

def test_flat_background_normalises_to_one():
    out = normalize_baseline(flat_sweep())
    assert np.all(out.amplitude == 1.0)
    assert out.meta["normalized"]


@given(c=st.floats(1e-3, 1e3))
def test_normalisation_scale_invariance(noisy, c):
    s = noisy.sweeps[0]
    a = normalize_baseline(s)
    b = normalize_baseline(s.with_amplitude(c * s.amplitude))
    np.testing.assert_allclose(a.amplitude, b.amplitude, rtol=1e-12)


def test_normalisation_idempotent(noisy, cav, cal):
    s = noisy.sweeps[0]
    once = normalize_sweep(s, cal, cav)
    twice = normalize_sweep(once.sweep, cal, cav)
    sigma = noisy.truth.noise_sigma / float(np.mean(noisy.truth.background(s.freq)))
    assert np.max(np.abs(twice.sweep.amplitude - once.sweep.amplitude)) < sigma


def test_normalisation_recovers_factorization(noisy, cav, cal):
    s = noisy.sweeps[0]
    norm = normalize_sweep(s, cal, cav).sweep
    truth = s.amplitude / noisy.truth.background(s.freq)[:, None]
    sigma = noisy.truth.noise_sigma / float(np.mean(noisy.truth.background(s.freq)))
    ratio = norm.amplitude / truth
    # the baseline is a common row factor, so the ratio is flat in current
    # and within noise of one
    assert np.max(np.abs(np.median(ratio, axis=1) - 1)) < sigma
    off = np.abs(s.freq - cal.omega_r_bare / TWO_PI) > 30e6
    assert abs(np.mean(norm.amplitude[off]) - 1) < sigma
    # relative dip depth is preserved
    j = len(s.current) // 2
    assert norm.amplitude[:, j].min() == pytest.approx(truth[:, j].min(), abs=3 * sigma)


def test_fully_excluded_rows_interpolated():
    s = flat_sweep(shape=(50, 7))
    exclude = np.zeros((50, 7), dtype=bool)
    exclude[20:23, :] = True
    out = normalize_baseline(s, exclude)
    assert out.meta["baseline_interpolated_rows"] == [20, 21, 22]
    assert np.allclose(out.amplitude, 1.0)
    exclude[:, 1:] = True
    out = normalize_baseline(s, exclude)
    assert len(out.meta["baseline_sparse_rows"]) == 50


def test_normalisation_refinement_converges(noisy, cav, cal):
    hist = normalize_sweep(noisy.sweeps[0], cal, cav, refine_iterations=4).kappa_history
    assert abs(hist[-1] - hist[-2]) < 1e-3 * hist[-1]


# ---------------------------------------------------------------- tracking

def test_tracking_low_damping_matches_branches(cal):
    cav = CavityParams.from_quality_factors(cal.omega_r_bare, 2e5, 1e5)
    f = cal.omega_r_bare / TWO_PI + np.linspace(-30e6, 30e6, 6001)
    current = cal.degeneracy_current() + np.linspace(-0.1, 0.1, 21)
    s = generate_sweep(TruthSpec(cav, cal, cav.kappa_l), f, current, {"temperature_K": 0.05})
    tr = track_minima(s, kappa_l=cav.kappa_l)
    assert len(tr) == 21 and not tr.gaps
    i, fp, fm = tr.arrays()
    up, low = cal.branches(i)
    assert np.max(np.abs(fp - up / TWO_PI)) <= 0.5 * s.freq_step
    assert np.max(np.abs(fm - low / TWO_PI)) <= 0.5 * s.freq_step
    t = tr.at(current[10])
    assert abs((t.omega_plus - t.omega_minus) - 2 * cal.g / TWO_PI) <= s.freq_step


def test_tracking_paper_damping_matches_dressed_minima(clean, cav, cal):
    c = cav_at(cav, cal)
    km = TWO_PI * clean.meta["tags"]["kappa_m_true_hz"]
    tr = track_minima(clean, kappa_l=c.kappa_l)
    assert len(tr) == clean.current.size
    i, fp, fm = tr.arrays()
    wm = cal.omega_m(i)
    for got, sign in ((fp, 1), (fm, -1)):
        want = dressed_minima(cal.omega_r_bare, wm, cal.g, c.kappa_c, c.kappa_l, km, sign) / TWO_PI
        assert np.max(np.abs(got - want)) <= 0.5 * clean.freq_step
    assert np.all(fp >= fm)
    assert np.all((fp <= clean.freq[-1]) & (fm >= clean.freq[0]))


def test_tracking_current_reversal(clean, cav):
    flipped = Sweep(freq=clean.freq, current=clean.current[::-1], amplitude=clean.amplitude[:, ::-1],
                    meta=clean.meta)
    a = track_minima(clean, kappa_l=cav.kappa_l)
    b = track_minima(flipped, kappa_l=cav.kappa_l)
    assert a.traces == b.traces


def test_tracking_frequency_reversal_resort(clean, cav):
    rev_f, rev_a = clean.freq[::-1], clean.amplitude[::-1]
    order = np.argsort(rev_f)
    resorted = Sweep(freq=rev_f[order], current=clean.current, amplitude=rev_a[order], meta=clean.meta)
    assert track_minima(resorted, kappa_l=cav.kappa_l).traces == track_minima(clean, kappa_l=cav.kappa_l).traces


def test_tracking_merged_dip_reported_twice():
    f = np.linspace(-10, 10, 401)
    col = 1 - 0.8 / (1 + f**2)
    s = Sweep(freq=f + 100, current=np.array([0.0, 1.0]), amplitude=np.column_stack([col, col]),
              meta={"temperature_K": 0.1})
    tr = track_minima(s, kappa_l=TWO_PI * 1.0)
    assert len(tr) == 2
    t = tr.traces[0]
    assert t.omega_plus == t.omega_minus == pytest.approx(100.0, abs=1e-9)


def test_tracking_gap_when_no_dip():
    f = np.linspace(0, 100, 201)
    dip = 1 - 0.5 / (1 + (f - 40) ** 2) - 0.5 / (1 + (f - 60) ** 2)
    amp = np.column_stack([dip, dip, np.ones_like(f)])
    s = Sweep(freq=f + 1, current=np.array([0.0, 1.0, 2.0]), amplitude=amp, meta={"temperature_K": 0.1})
    tr = track_minima(s, kappa_l=TWO_PI * 1.0)
    assert tr.gaps == [2.0]
    assert len(tr) == 2


def test_tracking_30db(cav, cal):
    c = cav_at(cav, cal)
    sq, n = 0.0, 0
    for seed in (1, 2, 3):
        camp = paper_campaign(seed=seed, powers_dbm=[-140.0, -65.0], temperatures=(0.055, 0.2))
        for s in camp.sweeps:
            norm = normalize_sweep(s, cal, cav).sweep
            tr = track_minima(norm, kappa_l=c.kappa_l)
            assert len(tr) >= 0.95 * s.current.size
            km = TWO_PI * s.meta["tags"]["kappa_m_true_hz"]
            i, fp, fm = tr.arrays()
            wm = cal.omega_m(i)
            err = np.concatenate([
                fp - dressed_minima(cal.omega_r_bare, wm, cal.g, c.kappa_c, c.kappa_l, km, 1) / TWO_PI,
                fm - dressed_minima(cal.omega_r_bare, wm, cal.g, c.kappa_c, c.kappa_l, km, -1) / TWO_PI])
            sq += float(np.sum(err**2))
            n += err.size
    assert math.sqrt(sq / n) < camp.sweeps[0].freq_step


# ---------------------------------------------------------------- gradient map

def test_gradient_constant_zero():
    assert np.all(gradient_squared_map(flat_sweep()) == 0)


def test_gradient_ramp():
    delta = 0.003
    amp = np.tile(0.2 + delta * np.arange(40)[:, None], (1, 6))
    s = Sweep(freq=np.arange(40.0) + 1, current=np.arange(6.0), amplitude=amp, meta={"temperature_K": 0.1})
    g2 = gradient_squared_map(s)
    assert g2.shape == amp.shape
    np.testing.assert_allclose(g2[1:-1, 1:-1], delta**2, rtol=1e-9)


def test_gradient_shows_weak_mode_kink(cav, cal):
    mode = ExtraMode(offset=TWO_PI * -15e6, g=TWO_PI * 1.5e6, kappa=TWO_PI * 1e6)
    kw = dict(snr_db=None, powers_dbm=[-140.0], temperatures=(0.055,), background=Background())
    plain = paper_campaign(**kw).sweeps[0]
    with_mode = paper_campaign(extra_modes=(mode,), **kw).sweeps[0]
    g2 = gradient_squared_map(with_mode)
    extra = np.abs(g2 - gradient_squared_map(plain))
    # the weak mode only shows where it meets the lower branch
    grid = np.linspace(plain.current[0], plain.current[-1], 20001)
    _, low = cal.branches(grid)
    k = np.argmin(np.abs(cal.omega_m(grid) + mode.offset - low))
    i_kink, f_kink = grid[k], low[k] / TWO_PI
    step_i = abs(plain.current[1] - plain.current[0])
    near = (np.abs(plain.current - i_kink) <= 4 * step_i)[None, :] & (np.abs(plain.freq - f_kink) <= 6e6)[:, None]
    # the change concentrates around the kink far beyond its area share
    assert extra[near].sum() / extra.sum() > 10 * near.mean()
    # and the squared gradient has a ridge maximum there along frequency
    c = int(np.argmin(np.abs(plain.current - i_kink)))
    rows = np.nonzero(np.abs(plain.freq - f_kink) <= 6e6)[0]
    r = rows[np.argmax(extra[rows, c])]
    peaks = argrelmax(g2[:, c])[0]
    assert np.min(np.abs(plain.freq[peaks] - plain.freq[r])) <= 1e6


# ---------------------------------------------------------------- kinks

def test_kink_consensus_finds_weak_mode(cav, cal):
    mode = ExtraMode(offset=TWO_PI * -15e6, g=TWO_PI * 1.5e6, kappa=TWO_PI * 1e6)
    c = cav_at(cav, cal)
    cands = {}
    for label, modes in (("mode", (mode,)), ("none", ())):
        camp = paper_campaign(seed=2, extra_modes=modes, powers_dbm=[-140.0, -110.0, -90.0, -65.0],
                              temperatures=(0.055, 0.2))
        found = []
        for s in camp.sweeps:
            norm = auto_normalize(s, c.kappa_l)
            found.append(detect_mode_kinks(track_minima(norm, kappa_l=c.kappa_l), cal))
        step = float(np.median(np.abs(np.diff(camp.current))))
        cands[label] = consensus_kinks(found, 1.5 * step)
    # the weak mode meets the lower branch where omega_m + offset = omega_-
    grid = np.linspace(camp.current[0], camp.current[-1], 20001)
    _, low = cal.branches(grid)
    expected = grid[np.argmin(np.abs(cal.omega_m(grid) + mode.offset - low))]
    assert len(cands["mode"]) >= 1
    assert min(abs(k - expected) for k in cands["mode"]) < 2 * step
    assert cands["none"] == []


def test_consensus_rules():
    assert consensus_kinks([[1.0], [1.05], [3.0], []], linkage=0.1) == [1.025]
    assert consensus_kinks([[1.0], [], [], []], linkage=0.1) == []
    assert consensus_kinks([], linkage=0.1) == []


# ---------------------------------------------------------------- ratios

@pytest.fixture(scope="module")
def ratio_curve(clean, cav, cal):
    return excitation_ratio_curve(clean, cal, cav)


def test_ratio_half_at_degeneracy(ratio_curve, cal):
    j = int(np.argmin(np.abs(ratio_curve.current - cal.degeneracy_current())))
    assert ratio_curve.magnon_share[j] == pytest.approx(0.5, abs=0.02)


def test_ratio_sums_to_one(ratio_curve):
    v = ratio_curve.valid
    assert v.all()
    np.testing.assert_allclose(ratio_curve.magnon_share[v] + ratio_curve.photon_share[v], 1.0, rtol=0, atol=1e-15)
    assert np.all((ratio_curve.magnon_share >= 0) & (ratio_curve.magnon_share <= 1))


def test_ratio_symmetric(ratio_curve):
    share = ratio_curve.magnon_share
    np.testing.assert_allclose(share, share[::-1], atol=0.01)


def test_ratio_boundary(ratio_curve):
    share = ratio_curve.magnon_share
    assert share[0] == pytest.approx(0.2, abs=0.03)
    assert share[-1] == pytest.approx(0.2, abs=0.03)
    mid = len(share) // 2
    assert share[mid] == share.max() or share[mid] == pytest.approx(share.max(), abs=1e-3)


def test_ratio_hopfield_weights_consistent(ratio_curve, cal):
    # the share is a convex mix of the two branch magnon fractions
    for j, i in enumerate(ratio_curve.current):
        h = hopfield_fractions(cal.omega_r_bare, cal.omega_m(i), cal.g)
        lo, hi = sorted((h.upper_magnon, h.lower_magnon))
        assert lo - 1e-12 <= ratio_curve.magnon_share[j] <= hi + 1e-12


def test_ratio_gap_for_untracked(clean, cav, cal):
    tr = track_minima(clean, kappa_l=cav.kappa_l)
    tr.traces = tr.traces[1:]
    curve = excitation_ratio_curve(clean, cal, cav, tracking=tr)
    assert not curve.valid[0] and curve.gaps == [float(clean.current[0])]


# ---------------------------------------------------------------- linewidths

def test_degeneracy_row_equals_direct_fit(noisy, cav, cal):
    norm = normalize_sweep(noisy.sweeps[0], cal, cav).sweep
    out = sweep_linewidths(norm, cal, cav)
    j, mag, res = fit_degeneracy_cut(norm, cal, cav)
    row = next(r for r in out.table.rows() if r["degeneracy"])
    assert row["kappa_m"] == mag.kappa_m
    assert row["sigma"] == res.error("kappa_m")
    assert np.array_equal(out.fits[float(norm.current[j])].params, res.params)
    assert out.g == mag.g


def test_linewidth_rows(noisy, cav, cal):
    norm = normalize_sweep(noisy.sweeps[1], cal, cav).sweep
    out = sweep_linewidths(norm, cal, cav, kinks=[norm.current[3]], guard_band=1e-9)
    rows = list(out.table.rows())
    assert len(rows) + len(out.failures) == norm.current.size
    assert sum(r["degeneracy"] for r in rows) == 1
    assert sum(r["g_free"] for r in rows) == 1
    assert [r["current"] for r in rows if r["flagged"]] == [float(norm.current[3])]
    truth = TWO_PI * norm.meta["tags"]["kappa_m_true_hz"]
    kap = np.array([r["kappa_m"] for r in rows])
    assert np.median(np.abs(kap / truth - 1)) < 0.05
    assert all(r["power_dbm"] == -65.0 and r["temperature"] == 0.055 for r in rows)


def test_linewidth_table_invariants():
    t = LinewidthTable()
    row = dict(sweep="a", current=1.0, temperature=0.1, power_dbm=-90.0, kappa_m=1.0, sigma=0.1,
               magnon_share=0.5, degeneracy=True, g_free=True, flagged=False)
    t.add(**row)
    with pytest.raises(ValueError):
        t.add(**{**row, "kappa_m": 0.0})
    with pytest.raises(ValueError):
        t.add(**{**row, "magnon_share": 1.5})
    t.add(**{**row, "magnon_share": math.nan, "sweep": "b"})
    assert len(t.select(sweep="b")) == 1

