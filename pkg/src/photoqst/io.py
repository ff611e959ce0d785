"""Text file formats.

Every file starts with a single ``# {json}`` header line followed by CSV
data written with 17 significant digits, which round-trips IEEE doubles
exactly.  Density matrices carry two blocks (``# real`` / ``# imag``).
Writes go to a temporary file in the target directory and are renamed
into place.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .extraction import PHASE_CONVENTION, SubdiagonalTrace
from .forward import ProbePair, Spectrogram
from .qstate import DensityMatrix, EnergyGrid

FMT = "%.17g"


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _block(a):
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(a), fmt=FMT, delimiter=",")
    return buf.getvalue()


def _header_line(meta):
    return "# " + json.dumps(meta, sort_keys=True, default=_json_default) + "\n"


def _split(path):
    """Return (header dict, {block name: list of data lines})."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# {"):
        raise DataValidationError(f"{path}: missing JSON header line")
    header = json.loads(lines[0][2:])
    blocks, name = {}, "data"
    for line in lines[1:]:
        if line.startswith("# "):
            name = line[2:].strip()
            blocks[name] = []
        elif line.strip():
            blocks.setdefault(name, []).append(line)
    return header, blocks


def _parse(lines):
    return np.array([[float(x) for x in row.split(",")] for row in lines])


# --- density matrices -----------------------------------------------------

def write_density_matrix(path, rho, **metadata):
    meta = {"format": "photoqst.density_matrix/1", "grid": rho.grid.to_dict()}
    meta["metadata"] = {**{k: v for k, v in rho.metadata.items() if _jsonable(v)}, **metadata}
    text = _header_line(meta) + "# real\n" + _block(rho.elements.real) + "# imag\n" + _block(rho.elements.imag)
    atomic_write(path, text)


def read_density_matrix(path, validate=True, psd=True):
    header, blocks = _split(path)
    grid = EnergyGrid(**header["grid"])
    el = _parse(blocks["real"]) + 1j * _parse(blocks["imag"])
    rho = DensityMatrix(grid, el, header.get("metadata", {}))
    return rho.validate(psd=psd) if validate else rho


def _jsonable(v):
    try:
        json.dumps(v, default=_json_default)
        return True
    except TypeError:
        return False


def write_mask(path, mask):
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(mask, dtype=int), fmt="%d", delimiter=",")
    atomic_write(path, buf.getvalue())


def read_mask(path):
    return np.loadtxt(path, delimiter=",", dtype=int, ndmin=2).astype(bool)


# --- spectrograms ---------------------------------------------------------

def write_spectrogram(path, spec):
    meta = {
        "format": "photoqst.spectrogram/1",
        "probe": spec.probe.to_dict(),
        "beat_energy": spec.probe.beat_energy,
        "final_energies": spec.final_energies.to_dict(),
        "delays": [float(x) for x in spec.delays],
        "seed": spec.rng_seed,
        "noise_scale": spec.noise_scale,
        "rows": "delays",
        "columns": "final_energies",
    }
    atomic_write(path, _header_line(meta) + "# counts\n" + _block(spec.counts))


def read_spectrogram(path):
    header, blocks = _split(path)
    return Spectrogram(
        ProbePair(**header["probe"]),
        np.array(header["delays"]),
        EnergyGrid(**header["final_energies"]),
        _parse(blocks["counts"]),
        header.get("seed"),
        header.get("noise_scale", 0.0),
    )


# --- subdiagonal traces ---------------------------------------------------

TRACE_COLUMNS = ["epsilon_f", "A", "phi", "sigma_A", "sigma_phi", "dc", "sigma_dc", "phase_defined", "zero_signal"]


def write_trace(path, trace):
    meta = {
        "format": "photoqst.trace/1",
        "beat_energy": trace.beat_energy,
        "convention": trace.metadata.get("convention", PHASE_CONVENTION),
        "probe": trace.probe.to_dict(),
        "final_energies": trace.final_energies.to_dict(),
        "populations_only": bool(trace.populations_only),
    }
    buf = io.StringIO()
    buf.write(_header_line(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    e = trace.final_energies.points
    for i in range(len(e)):
        w.writerow([
            FMT % e[i], FMT % trace.amplitude[i], FMT % trace.phase[i], FMT % trace.amplitude_sigma[i],
            FMT % trace.phase_sigma[i], FMT % trace.dc[i], FMT % trace.dc_sigma[i],
            int(trace.phase_defined[i]), int(trace.zero_signal[i]),
        ])
    atomic_write(path, buf.getvalue())


def read_trace(path):
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    cols = {name: [r[i] for r in rows[1:]] for i, name in enumerate(rows[0])}
    f = lambda k: np.array([float(x) for x in cols[k]])  # noqa: E731
    return SubdiagonalTrace(
        ProbePair(**header["probe"]),
        EnergyGrid(**header["final_energies"]),
        f("A"), f("phi"), f("sigma_A"), f("sigma_phi"), f("dc"), f("sigma_dc"),
        populations_only=header["populations_only"],
        phase_defined=f("phase_defined").astype(bool),
        zero_signal=f("zero_signal").astype(bool),
        metadata={"convention": header["convention"]},
    )


# --- reconstruction results -----------------------------------------------

WALL_CLOCK_KEYS = ("seconds",)


def write_result(directory, result, extra=None, write_samples=True):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_density_matrix(d / "map.dm.csv", result.map_estimate)
    rows = ["index,purity,concurrence"]
    for i, (p, c) in enumerate(zip(result.purity_samples, result.concurrence_samples)):
        rows.append(f"{i},{FMT % p},{FMT % c}")
    atomic_write(d / "sample_metrics.csv", "\n".join(rows) + "\n")
    if write_samples:
        for i, s in enumerate(result.samples):
            write_density_matrix(d / "samples" / f"sample_{i:04d}.dm.csv", s)
    # wall-clock timings stay in memory so reruns are byte-identical
    diagnostics = {k: v for k, v in result.diagnostics.items() if k not in WALL_CLOCK_KEYS}
    summary = {"metrics": result.metrics(), "diagnostics": diagnostics}
    if extra:
        summary.update(extra)
    write_json(d / "metrics.json", summary)
    return summary


def read_sample_metrics(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1], data[:, 2]
