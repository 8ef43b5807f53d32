import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from cavmag import cli
from cavmag.config import Config
from cavmag.constants import TWO_PI
from cavmag.io import (
    LengthMismatchError,
    MalformedHeaderError,
    UnknownVersionError,
    UnsortedAxisError,
    emit_plot_data,
    load_report,
    load_sweep,
    save_report,
    save_sweep,
)
from cavmag.pipeline import PipelineConfig, run_pipeline
from cavmag.sweep import Sweep

SIM = {"powers_dbm": {"start": -140, "stop": -65, "num": 3}, "temperatures": [0.055, 0.2],
       "n_current": 21, "n_freq": 601}


@pytest.fixture(scope="module")
def small():
    return Config.from_dict({"seed": 3, "simulate": SIM}).simulate.campaign()


@pytest.fixture(scope="module")
def bundle(small):
    return run_pipeline(PipelineConfig(seed=3), sweeps=small.sweeps, resonator=small.resonator)


# ---------------------------------------------------------------- sweep files

def test_sweep_roundtrip(tmp_path, small):
    s = small.sweeps[0]
    path = save_sweep(s, tmp_path / "a.sweep")
    back = load_sweep(path)
    np.testing.assert_allclose(back.amplitude, s.amplitude, rtol=1e-12)
    np.testing.assert_allclose(back.freq, s.freq, rtol=1e-12)
    np.testing.assert_allclose(back.current, s.current, rtol=1e-12)
    np.testing.assert_allclose(back.phase, s.phase, rtol=1e-12)
    for key in ("temperature_K", "power_dbm", "attenuation_db", "name"):
        assert back.meta[key] == s.meta[key]
    assert back.meta["tags"]["kappa_m_true_hz"] == s.meta["tags"]["kappa_m_true_hz"]


def test_sweep_without_phase(tmp_path):
    s = Sweep(freq=[1.0, 2.0, 3.0], current=[0.1, 0.2], amplitude=np.ones((3, 2)),
              meta={"temperature_K": 0.1, "power_dbm": -90.0})
    back = load_sweep(save_sweep(s, tmp_path / "b.sweep"))
    assert back.phase is None
    assert np.array_equal(back.amplitude, s.amplitude)


def _text(tmp_path, small):
    return save_sweep(small.sweeps[0], tmp_path / "c.sweep").read_text().splitlines()


def _write(tmp_path, lines):
    p = tmp_path / "broken.sweep"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_length_mismatch(tmp_path, small):
    lines = _text(tmp_path, small)
    start = lines.index("@amplitude")
    del lines[start + 3]
    with pytest.raises(LengthMismatchError) as info:
        load_sweep(_write(tmp_path, lines))
    assert info.value.code == "length-mismatch"


def test_unknown_version(tmp_path, small):
    lines = [("# version: 99" if ln.startswith("# version:") else ln) for ln in _text(tmp_path, small)]
    with pytest.raises(UnknownVersionError):
        load_sweep(_write(tmp_path, lines))


def test_malformed_header(tmp_path, small):
    lines = [ln for ln in _text(tmp_path, small) if not ln.startswith("# freq_unit")]
    with pytest.raises(MalformedHeaderError):
        load_sweep(_write(tmp_path, lines))


def test_unsorted_axis(tmp_path, small):
    lines = _text(tmp_path, small)
    k = lines.index("@freq") + 1
    lines[k], lines[k + 1] = lines[k + 1], lines[k]
    with pytest.raises(UnsortedAxisError):
        load_sweep(_write(tmp_path, lines))


def test_error_codes_distinct():
    codes = {e.code for e in (MalformedHeaderError, LengthMismatchError, UnsortedAxisError, UnknownVersionError)}
    assert len(codes) == 4


def test_unit_conversion(tmp_path, small):
    lines = _text(tmp_path, small)
    out, section = [], None
    for ln in lines:
        if ln.startswith("# freq_unit"):
            ln = "# freq_unit: MHz"
        if ln.startswith("@"):
            section = ln
        elif section == "@freq" and ln and not ln.startswith("#"):
            ln = repr(float(ln) / 1e6)
        out.append(ln)
    back = load_sweep(_write(tmp_path, out))
    np.testing.assert_allclose(back.freq, small.sweeps[0].freq, rtol=1e-12)


def test_generated_sweeps_load(tmp_path, small):
    for s in small.sweeps[:2]:
        back = load_sweep(save_sweep(s, tmp_path / f"{s.name}.sweep"))
        assert back.amplitude.min() >= 0 and back.meta["temperature_K"] > 0


# ---------------------------------------------------------------- pipeline

def test_pipeline_recovers_truth(bundle, small):
    t = small.truth
    assert not bundle.partial
    assert bundle.calibration.cal.g == pytest.approx(t.cal.g, rel=0.01)
    for row in bundle.table.rows():
        if row["degeneracy"]:
            truth = [s for s in small.sweeps if s.name == row["sweep"]][0].meta["tags"]["kappa_m_true_hz"]
            assert row["kappa_m"] / TWO_PI == pytest.approx(truth, rel=0.1)


def test_report_roundtrip(tmp_path, bundle):
    path = save_report(bundle, tmp_path / "report.json")
    data = load_report(path)
    assert data == json.loads(bundle.to_json())
    assert data["cavity"]["params"]["f_r_hz"] == pytest.approx(bundle.cavity.omega_r / TWO_PI, rel=1e-15)


def test_report_units_and_provenance(bundle):
    d = json.loads(bundle.to_json())
    fit = d["dispersion"]["fit"]["params"]
    assert fit["g"]["unit"] == "Hz (/2pi)"
    assert all("unit" in v for v in fit.values())
    stages = [p["stage"] for p in d["provenance"]]
    assert len(stages) == len(set(stages))
    seen = set()
    for p in d["provenance"]:
        # every stage only consumes earlier stages or raw inputs
        assert {i for i in p["inputs"] if not i.startswith("input:")} <= seen
        seen.add(p["stage"])
    assert "tls" in seen and "cavity" in seen
    assert d["config_sha256"] == PipelineConfig(seed=3).sha256()


def test_pipeline_deterministic(small, bundle):
    again = run_pipeline(PipelineConfig(seed=3), sweeps=small.sweeps, resonator=small.resonator)
    assert again.to_json() == bundle.to_json()


def test_pipeline_parallel_matches_serial(small, bundle):
    par = run_pipeline(PipelineConfig(seed=3, n_workers=2), sweeps=small.sweeps, resonator=small.resonator)
    a, b = json.loads(par.to_json()), json.loads(bundle.to_json())
    a["config"].pop("n_workers"), b["config"].pop("n_workers")
    a.pop("config_sha256"), b.pop("config_sha256")
    assert a == b


@pytest.fixture(scope="module")
def partial_bundle(small):
    bad = small.sweeps[1]
    rng = np.random.default_rng(0)
    corrupted = bad.with_amplitude(rng.uniform(0.0, 1.0, bad.amplitude.shape))
    sweeps = [corrupted if s is bad else s for s in small.sweeps]
    return run_pipeline(PipelineConfig(seed=3), sweeps=sweeps, resonator=small.resonator), bad.name


def test_corrupted_sweep_isolated(partial_bundle, small):
    b, bad = partial_bundle
    d = json.loads(b.to_json())
    assert d["partial"]
    assert d["sweeps"][bad]["status"] == "failed" and d["sweeps"][bad]["error"]
    ok = [n for n, r in d["sweeps"].items() if r["status"] == "ok"]
    assert len(ok) == len(small.sweeps) - 1
    assert bad not in {r["sweep"] for r in d["linewidths"]}
    assert d["tls"] is not None
    assert any(f.get("sweep") == bad for f in d["failures"])


def test_partial_plot_tables_omit_failed(tmp_path, partial_bundle):
    b, bad = partial_bundle
    files = emit_plot_data(b, tmp_path)
    names = {Path(f).name for f in files}
    assert {"traces.tsv", "linewidths.tsv", "tls_vs_power.tsv", "tls_vs_temperature.tsv"} <= names
    assert f"cut_{bad}.tsv" not in names
    for f in files:
        assert bad not in Path(f).read_text()


def test_plot_power_table_drop(tmp_path, bundle):
    emit_plot_data(bundle, tmp_path)
    lines = (tmp_path / "tls_vs_power.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    rows = [dict(zip(header, ln.split("\t"))) for ln in lines[1:]]
    model = {}
    for r in rows:
        model.setdefault(float(r["temperature_k"]), []).append((float(r["power_dbm"]), float(r["model_hz"])))
    assert len(model) == 2
    for curve in model.values():
        curve.sort()
        p, k = np.array(curve).T
        assert k[0] > k[-1]
        assert np.all(np.diff(k) <= 0)


def test_config_strict():
    with pytest.raises(ValueError):
        Config.from_dict({"pipeline": {"no_such_key": 1}})
    with pytest.raises(ValueError):
        Config.from_dict({"extra": {}})
    c = Config.from_dict({"seed": 4}, seed=9)
    assert c.seed == c.simulate.seed == c.pipeline.seed == 9


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 3, "simulate": SIM}))
    sim, art, norm, run = root / "sim", root / "art", root / "norm", root / "run"

    def call(*argv):
        return cli.main([*argv, "--config", str(cfg)])

    codes = {}
    codes["simulate"] = call("simulate", "--output", str(sim))
    sweeps = sorted(str(p) for p in sim.glob("T*.sweep"))
    res = str(sim / "resonator_I0.sweep")
    codes["fit-resonator"] = call("fit-resonator", "--input", res, "--output", str(art))
    # with the resonator trace, fit-crossing rewrites cavity.json with the magnon-corrected cavity
    codes["fit-crossing"] = call("fit-crossing", "--input", *sweeps, res, "--output", str(art))
    codes["normalize"] = call("normalize", "--input", *sweeps, str(art / "cavity.json"),
                              str(art / "dispersion.json"), "--output", str(norm))
    normed = sorted(str(p) for p in norm.glob("*.norm.sweep"))
    codes["track"] = call("track", "--input", *normed, str(art / "cavity.json"), "--output", str(art))
    codes["fit-cut"] = call("fit-cut", "--input", *normed, str(art / "cavity.json"), str(art / "dispersion.json"),
                            "--output", str(art))
    codes["ratios"] = call("ratios", "--input", *normed, str(art / "cavity.json"), str(art / "dispersion.json"),
                           "--output", str(art))
    codes["fit-tls"] = call("fit-tls", "--input", str(art / "linewidths.json"), str(art / "dispersion.json"),
                            "--output", str(art))
    codes["pipeline"] = call("pipeline", "--input", res, *sweeps, "--output", str(run))
    codes["report"] = call("report", "--input", str(run / "report.json"), "--output", str(root / "rep"))
    return root, codes, cfg


def test_cli_exit_codes(cli_run):
    _, codes, _ = cli_run
    assert codes == {k: 0 for k in codes}


def test_cli_composition_equals_pipeline(cli_run):
    root, _, _ = cli_run
    art = root / "art"
    report = load_report(root / "run" / "report.json")
    cav = json.loads((art / "cavity.json").read_text())
    disp = json.loads((art / "dispersion.json").read_text())
    lw = json.loads((art / "linewidths.json").read_text())
    tls = json.loads((art / "tls.json").read_text())
    assert cav["params"] == report["cavity"]["params"]
    assert cav["fit"] == report["cavity"]["fit"]
    assert disp["params"] == report["dispersion"]["params"]
    assert lw["rows"] == report["linewidths"]
    assert lw["kinks_a"] == report["kinks_a"]
    assert tls["params"] == report["tls"]["params"]
    assert tls["fit"] == report["tls"]["fit"]


def test_cli_simulate_matches_library(cli_run, small):
    root, _, _ = cli_run
    s = load_sweep(root / "sim" / f"{small.sweeps[0].name}.sweep")
    np.testing.assert_allclose(s.amplitude, small.sweeps[0].amplitude, rtol=1e-12)


def test_cli_deterministic(cli_run, tmp_path):
    root, _, cfg = cli_run
    sweeps = sorted(str(p) for p in (root / "sim").glob("*.sweep"))
    assert cli.main(["pipeline", "--config", str(cfg), "--input", *sweeps, "--output", str(tmp_path)]) == 0
    assert (tmp_path / "report.json").read_bytes() == (root / "run" / "report.json").read_bytes()


def test_cli_report_outputs(cli_run):
    root, _, _ = cli_run
    assert "dispersion" in (root / "rep" / "summary.txt").read_text()
    assert (root / "rep" / "plots" / "linewidths.tsv").exists()


def test_cli_parse_errors(tmp_path, cli_run):
    root, _, cfg = cli_run
    assert cli.main(["track", "--input", str(tmp_path / "missing.sweep")]) == cli.EXIT_PARSE
    bad = tmp_path / "bad.sweep"
    bad.write_text("# cavmag-sweep\n# version: 7\n")
    assert cli.main(["track", "--input", str(bad)]) == cli.EXIT_PARSE
    bad_cfg = tmp_path / "bad.yaml"
    bad_cfg.write_text("pipeline: {nonsense: 1}\n")
    assert cli.main(["simulate", "--config", str(bad_cfg), "--output", str(tmp_path)]) == cli.EXIT_PARSE
    assert cli.main(["no-such-command"]) == cli.EXIT_PARSE


def test_cli_fit_failure_code(tmp_path):
    flat = Sweep(freq=np.linspace(5e9, 5.1e9, 301), current=[0.0], amplitude=np.ones((301, 1)),
                 meta={"temperature_K": 0.05, "power_dbm": -100.0})
    path = save_sweep(flat, tmp_path / "flat.sweep")
    assert cli.main(["fit-resonator", "--input", str(path), "--output", str(tmp_path)]) == cli.EXIT_FIT


def test_cli_partial_code(tmp_path, small):
    bad = small.sweeps[1]
    rng = np.random.default_rng(0)
    paths = [str(save_sweep(small.resonator, tmp_path / "res.sweep"))]
    for s in small.sweeps:
        if s is bad:
            s = s.with_amplitude(rng.uniform(0.0, 1.0, s.amplitude.shape))
        paths.append(str(save_sweep(s, tmp_path / f"{s.name}.sweep")))
    code = cli.main(["pipeline", "--seed", "3", "--input", *paths, "--output", str(tmp_path / "out")])
    assert code == cli.EXIT_PARTIAL
    assert len({cli.EXIT_OK, cli.EXIT_PARSE, cli.EXIT_FIT, cli.EXIT_PARTIAL}) == 4
