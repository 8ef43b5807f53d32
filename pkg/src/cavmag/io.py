"""Text file formats: sweep files, JSON artifacts, plot tables and configs.

Sweep file layout::

    # cavmag-sweep
    # version: 1
    # name: T55mK_P-140.0dBm
    # temperature_K: 0.055
    # power_dbm: -140.0
    # attenuation_db: -75.0
    # n_freq: 1001
    # n_current: 41
    # freq_unit: Hz
    # current_unit: A
    # amplitude_unit: linear
    # phase_unit: rad
    # tags: {...json...}
    # extra: {...json...}
    @freq
    <n_freq lines>
    @current
    <n_current lines>
    @amplitude
    <n_freq lines of n_current values>
    @phase            (optional)
    <n_freq lines of n_current values>

Floats are written with 17 significant digits, so save/load is exact.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from cavmag.sweep import Sweep

FORMAT_MAGIC = "cavmag-sweep"
SUPPORTED_VERSIONS = (1,)

FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
CURRENT_UNITS = {"A": 1.0, "mA": 1e-3}
PHASE_UNITS = {"rad": 1.0, "deg": math.pi / 180}
REQUIRED = ("version", "temperature_K", "n_freq", "n_current", "freq_unit", "current_unit", "amplitude_unit")


class SweepFileError(ValueError):
    code = "sweep-file"


class MalformedHeaderError(SweepFileError):
    code = "malformed-header"


class LengthMismatchError(SweepFileError):
    code = "length-mismatch"


class UnsortedAxisError(SweepFileError):
    code = "unsorted-axes"


class UnknownVersionError(SweepFileError):
    code = "unknown-version"


def _fmt(a) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(a))


def save_sweep(s: Sweep, path) -> Path:
    path = Path(path)
    meta = dict(s.meta)
    tags = meta.pop("tags", {})
    header = {
        "version": 1,
        "name": meta.pop("name", path.stem),
        "temperature_K": meta.pop("temperature_K"),
        "power_dbm": meta.pop("power_dbm", None),
        "attenuation_db": meta.pop("attenuation_db", None),
        "n_freq": s.freq.size,
        "n_current": s.current.size,
        "freq_unit": "Hz",
        "current_unit": "A",
        "amplitude_unit": "linear",
    }
    if s.phase is not None:
        header["phase_unit"] = "rad"
    lines = [f"# {FORMAT_MAGIC}"]
    for key, value in header.items():
        if value is None:
            continue
        lines.append(f"# {key}: {value!r}" if isinstance(value, float) else f"# {key}: {value}")
    lines.append(f"# tags: {json.dumps(tags, sort_keys=True)}")
    lines.append(f"# extra: {json.dumps(meta, sort_keys=True)}")
    lines.append("@freq")
    lines.extend(f"{v:.17g}" for v in s.freq)
    lines.append("@current")
    lines.extend(f"{v:.17g}" for v in s.current)
    lines.append("@amplitude")
    lines.extend(_fmt(row) for row in s.amplitude)
    if s.phase is not None:
        lines.append("@phase")
        lines.extend(_fmt(row) for row in s.phase)
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_header(lines):
    header = {}
    if not lines or lines[0].strip() != f"# {FORMAT_MAGIC}":
        raise MalformedHeaderError("missing sweep-file magic line")
    for line in lines[1:]:
        body = line[1:].strip()
        if ":" not in body:
            raise MalformedHeaderError(f"header line without key: {line!r}")
        key, value = body.split(":", 1)
        header[key.strip()] = value.strip()
    missing = [k for k in REQUIRED if k not in header]
    if missing:
        raise MalformedHeaderError(f"missing header fields: {missing}")
    try:
        version = int(header["version"])
    except ValueError:
        raise MalformedHeaderError(f"bad version field {header['version']!r}") from None
    if version not in SUPPORTED_VERSIONS:
        raise UnknownVersionError(f"unsupported sweep-file version {version}")
    return header


def load_sweep(path) -> Sweep:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n_header = 0
    while n_header < len(lines) and lines[n_header].startswith("#"):
        n_header += 1
    header = _parse_header(lines[:n_header])

    sections, current = {}, None
    for line in lines[n_header:]:
        if line.startswith("@"):
            current = line[1:].strip()
            if current in sections:
                raise MalformedHeaderError(f"duplicate section @{current}")
            sections[current] = []
        elif current is None:
            raise MalformedHeaderError("data before the first section marker")
        else:
            sections[current].append(line)
    for name in ("freq", "current", "amplitude"):
        if name not in sections:
            raise MalformedHeaderError(f"missing @{name} section")

    try:
        n_freq, n_cur = int(header["n_freq"]), int(header["n_current"])
        temperature = float(header["temperature_K"])
        f_scale = FREQ_UNITS[header["freq_unit"]]
        i_scale = CURRENT_UNITS[header["current_unit"]]
    except (KeyError, ValueError) as exc:
        raise MalformedHeaderError(f"bad header value: {exc}") from None
    amp_unit = header["amplitude_unit"]
    if amp_unit not in ("linear", "dB"):
        raise MalformedHeaderError(f"unknown amplitude unit {amp_unit!r}")

    def vector(name, n):
        try:
            v = np.array([float(x) for x in sections[name]])
        except ValueError as exc:
            raise MalformedHeaderError(f"non-numeric entry in @{name}: {exc}") from None
        if v.size != n:
            raise LengthMismatchError(f"@{name} has {v.size} entries, header declares {n}")
        return v

    def matrix(name):
        rows = sections[name]
        if len(rows) != n_freq:
            raise LengthMismatchError(f"@{name} has {len(rows)} rows, header declares {n_freq}")
        try:
            m = [[float(x) for x in row.split()] for row in rows]
        except ValueError as exc:
            raise MalformedHeaderError(f"non-numeric entry in @{name}: {exc}") from None
        if any(len(r) != n_cur for r in m):
            raise LengthMismatchError(f"@{name} rows must have {n_cur} columns")
        return np.array(m, dtype=float).reshape(n_freq, n_cur)

    freq = vector("freq", n_freq) * f_scale
    current = vector("current", n_cur) * i_scale
    if np.any(np.diff(freq) <= 0):
        raise UnsortedAxisError("frequency axis is not strictly increasing")
    d = np.diff(current)
    if current.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise UnsortedAxisError("current axis is not strictly monotone")
    amplitude = matrix("amplitude")
    if amp_unit == "dB":
        amplitude = 10 ** (amplitude / 20)
    phase = None
    if "phase" in sections:
        phase = matrix("phase") * PHASE_UNITS.get(header.get("phase_unit", "rad"), 1.0)

    try:
        tags = json.loads(header.get("tags", "{}"))
        extra = json.loads(header.get("extra", "{}"))
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"bad JSON in header: {exc}") from None
    meta = dict(extra)
    meta.update(name=header.get("name", Path(path).stem), temperature_K=temperature, tags=tags)
    for key in ("power_dbm", "attenuation_db"):
        if key in header:
            meta[key] = float(header[key])
    try:
        return Sweep(freq=freq, current=current, amplitude=amplitude, phase=phase, meta=meta)
    except ValueError as exc:
        raise SweepFileError(str(exc)) from None


def is_sweep_file(path) -> bool:
    with open(path) as fh:
        return fh.readline().strip() == f"# {FORMAT_MAGIC}"


# --------------------------------------------------------------------------
# JSON artifacts
# --------------------------------------------------------------------------

def save_json(obj: dict, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_report(bundle, path) -> Path:
    data = bundle.data if hasattr(bundle, "data") else bundle
    return save_json(data, path)


def load_report(path) -> dict:
    data = load_json(path)
    if data.get("kind") != "report":
        raise ValueError(f"{path} is not a report bundle")
    return data


def load_config(path) -> dict:
    """YAML or JSON config (chosen by extension; YAML is a JSON superset)."""
    import yaml

    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping")
    return data


# --------------------------------------------------------------------------
# plot tables
# --------------------------------------------------------------------------

def _write_table(path: Path, columns, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join("nan" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v))
                               for v in row) + "\n")


def emit_plot_data(bundle, outdir, sweeps=None) -> list:
    """Tab-separated tables behind the standard figures.

    ``traces.tsv`` (I, f+, f-), ``linewidths.tsv`` (I, kappa_m, sigma,
    share), ``tls_vs_power.tsv``/``tls_vs_temperature.tsv`` (data plus
    model) and, when the normalised sweeps are available (``bundle`` from
    :func:`run_pipeline`), ``cut_<sweep>.tsv`` at the degeneracy current
    with the fitted model.  Failed sweeps are left out.
    """
    from cavmag.constants import TWO_PI
    from cavmag.physics import tls_linewidth_dbm

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise OSError(f"cannot write to {outdir}")
    data = bundle.data if hasattr(bundle, "data") else bundle
    written = []

    rows = []
    for name, rec in sorted(data["sweeps"].items()):
        if rec["status"] != "ok" or "tracking" not in rec:
            continue
        tr = rec["tracking"]
        rows += [(name, c, fp, fm) for c, fp, fm in zip(tr["current_a"], tr["f_plus_hz"], tr["f_minus_hz"])]
    path = outdir / "traces.tsv"
    _write_table(path, ("sweep", "current_a", "f_plus_hz", "f_minus_hz"), rows)
    written.append(path)

    ok = {n for n, r in data["sweeps"].items() if r["status"] == "ok"}
    rows = [(r["sweep"], r["current"], r["temperature"], r["power_dbm"], r["kappa_m_hz"], r["sigma_hz"],
             r["magnon_share"], int(r["degeneracy"]), int(r["flagged"]))
            for r in data["linewidths"] if r["sweep"] in ok]
    path = outdir / "linewidths.tsv"
    _write_table(path, ("sweep", "current_a", "temperature_k", "power_dbm", "kappa_m_hz", "sigma_hz",
                        "magnon_share", "degeneracy", "flagged"), rows)
    written.append(path)

    tls = data.get("tls")
    if tls:
        p = tls["params"]
        deg = [r for r in data["linewidths"] if r["degeneracy"] and r["sweep"] in ok]

        def model(T, P):
            return tls_linewidth_dbm(T, P, p["kappa_0_hz"], p["p_c_dbm"], p["kappa_off_hz"], TWO_PI * p["f_ref_hz"])

        rows = sorted((r["temperature"], r["power_dbm"], r["kappa_m_hz"], r["sigma_hz"],
                       float(model(r["temperature"], r["power_dbm"]))) for r in deg)
        path = outdir / "tls_vs_power.tsv"
        _write_table(path, ("temperature_k", "power_dbm", "kappa_m_hz", "sigma_hz", "model_hz"), rows)
        written.append(path)
        temps = np.geomspace(0.02, 1.0, 60)
        powers = sorted({r["power_dbm"] for r in deg})
        rows = [(float(T), P, float(model(T, P))) for P in powers[:1] + powers[-1:] for T in temps]
        path = outdir / "tls_vs_temperature.tsv"
        _write_table(path, ("temperature_k", "power_dbm", "model_hz"), rows)
        written.append(path)

    if sweeps is None and hasattr(bundle, "outcomes"):
        sweeps = {o.name: o for o in bundle.outcomes if o.ok}
    if sweeps and hasattr(bundle, "calibration"):
        from cavmag.fits import polariton_model

        cav = bundle.cavity.with_frequency(bundle.calibration.cal.omega_r_bare)
        for name, out in sorted(sweeps.items()):
            lw = out.linewidths
            res = lw.fits[lw.degeneracy_current]
            j = int(np.argmin(np.abs(out.normalized.current - lw.degeneracy_current)))
            full = res.as_dict()
            fixed = {k: v[0] for k, v in res.fixed.items()}
            p = [full.get(k, fixed.get(k)) for k in ("omega_m", "kappa_m", "g", "scale", "offset")]
            fit = polariton_model(cav, [0, 1, 2, 3, 4])(np.array(p, dtype=float), out.normalized.omega)
            rows = list(zip(out.normalized.freq, out.normalized.amplitude[:, j], fit))
            path = outdir / f"cut_{name}.tsv"
            _write_table(path, ("f_probe_hz", "abs_s11", "fit"), rows)
            written.append(path)
    return written
