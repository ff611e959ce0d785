"""Library-level stages of a scenario run and the file layout the CLI uses.

Each ``run_*`` function takes in-memory objects and returns in-memory
objects; each ``cmd_*`` function reads and writes files and emits a
manifest.  ``run_pipeline`` chains the in-memory stages and is what the
file-based chain must reproduce.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as pio
from .errors import ConfigurationError, DataValidationError
from .estimation import MeasurementSet, hmc_sample, map_estimate
from .extraction import assemble_raw_dm, find_populations, fit_oscillation
from .forward import BeatGeometry, ResponseFunction, model_density_matrix, simulate_spectrogram
from .qstate import (
    DensityMatrix,
    EnergyGrid,
    concurrence,
    fidelity_amplitude,
    frobenius_distance,
    min_eigenvalue,
    purity,
)

SPECTROGRAM_DIR = "spectrograms"
TRACE_DIR = "traces"
RESULT_DIR = "reconstruction"
COMPARE_DIR = "compare"

# argument list recorded in manifests; the CLI sets it, library callers may
INVOCATION = None


def _beat_tag(beat_energy):
    return f"beat_{beat_energy * 1e3:07.3f}meV"


# --------------------------------------------------------------------------
# in-memory stages
# --------------------------------------------------------------------------

def truth_state(cfg):
    return model_density_matrix(cfg.target(), cfg.xuv(), cfg.grid())


def run_simulate(cfg, truth=None):
    """One spectrogram per probe pair, each with its own derived seed."""
    truth = truth_state(cfg) if truth is None else truth
    delays = cfg.delays()
    response = cfg.response()
    return [
        simulate_spectrogram(truth, probe, delays, response, cfg.noise_scale, seed)
        for probe, seed in zip(cfg.probes(), cfg.spectrogram_seeds())
    ]


def run_extract(spectrograms):
    return [fit_oscillation(s) for s in spectrograms]


def grid_from_traces(traces):
    """State grid implied by the zero-beat trace (its final grid shifted down by one probe photon)."""
    pt = find_populations(traces)
    fe = pt.final_energies
    return EnergyGrid(fe.epsilon_min - pt.probe.omega1_energy, fe.delta_epsilon, fe.n_points)


def run_assemble(traces, interpolation="nearest"):
    return assemble_raw_dm(traces, grid_from_traces(traces), interpolation=interpolation)


def measurement_set(traces, cfg, correct_response=None):
    est = cfg.estimator
    if correct_response is None:
        correct_response = bool(est["correct_response"])
    response = cfg.response() if correct_response else ResponseFunction()
    return MeasurementSet(
        traces, grid_from_traces(traces), response,
        float(est["sigma_floor"]), float(est["window_threshold"]),
    )


def run_reconstruct(traces, cfg, correct_response=None):
    est = cfg.estimator
    data = measurement_set(traces, cfg, correct_response)
    m = map_estimate(
        data, max_iters=int(est["map_max_iters"]), tol=float(est["map_tol"]), prior_scale=float(est["prior_scale"]),
    )
    result = hmc_sample(
        data,
        n_samples=int(est["n_samples"]),
        n_leapfrog=int(est["n_leapfrog"]),
        seed=int(cfg.seeds["sample"]),
        n_warmup=int(est["n_warmup"]),
        thin=int(est["thin"]),
        keep_every=int(est["keep_every"]),
        target_accept=float(est["target_accept"]),
        prior_scale=float(est["prior_scale"]),
        map_result=m,
    )
    result.diagnostics["response"] = data.response.to_dict()
    return result


@dataclass(eq=False)
class PipelineRun:
    truth: DensityMatrix
    spectrograms: list
    traces: list
    assembly: object
    result: object


def run_pipeline(cfg, correct_response=None):
    """simulate -> extract -> assemble -> reconstruct, entirely in memory."""
    truth = truth_state(cfg)
    specs = run_simulate(cfg, truth)
    traces = run_extract(specs)
    assembly = run_assemble(traces)
    result = run_reconstruct(traces, cfg, correct_response)
    return PipelineRun(truth, specs, traces, assembly, result)


def state_metrics(a, b=None):
    out = {
        "n": a.n,
        "purity": purity(a),
        "concurrence": concurrence(a),
        "trace": a.trace().real,
        "min_eigenvalue": min_eigenvalue(a),
    }
    if b is not None:
        a, b = common_grid(a, b)
        out["fidelity"] = fidelity_amplitude(a, b)
        out["frobenius_distance"] = frobenius_distance(a, b)
    return out


def common_grid(a, b):
    """Zero-pad whichever matrix lives on the smaller commensurate grid."""
    if a.grid == b.grid:
        return a, b
    if a.n <= b.n:
        return a.embed(b.grid), b
    return a, b.embed(a.grid)


def compare_tables(result, truth):
    """|rho| element table and summed subdiagonal modulus per offset, for plotting."""
    a, b = common_grid(result, truth)
    grid = a.grid
    e = grid.points
    ii, jj = np.meshgrid(np.arange(grid.n_points), np.arange(grid.n_points), indexing="ij")
    rows = np.column_stack([
        ii.ravel(), jj.ravel(), e[ii.ravel()], e[jj.ravel()],
        np.abs(a.elements).ravel(), np.abs(b.elements).ravel(),
    ])
    curve = []
    for k in range(grid.n_points):
        geo = BeatGeometry.of(k * grid.delta_epsilon, grid)
        curve.append([k, k * grid.delta_epsilon * 1e3,
                      np.sum(np.abs(geo.coherence(a.elements))), np.sum(np.abs(geo.coherence(b.elements)))])
    return rows, np.array(curve)


# --------------------------------------------------------------------------
# file-based commands
# --------------------------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, verb, cfg, inputs=(), outputs=(), extra=None):
    """Record everything needed to regenerate this command's outputs."""
    from . import __version__

    manifest = {
        "command": verb,
        "package_version": __version__,
        "argv": list(sys.argv[1:] if INVOCATION is None else INVOCATION),
        "config": cfg.raw,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(out) / f"manifest_{verb}.json"
    pio.write_json(path, manifest)
    return path


def _collect(paths, default_dir, pattern):
    if paths:
        files = []
        for p in map(Path, paths):
            files.extend(sorted(p.glob(pattern)) if p.is_dir() else [p])
    else:
        files = sorted(Path(default_dir).glob(pattern))
    if not files:
        raise DataValidationError(f"no input files matching {pattern!r} (looked in {default_dir})")
    for f in files:
        if not f.is_file():
            raise DataValidationError(f"{f}: no such file")
    return files


def cmd_simulate(cfg, out):
    out = Path(out)
    truth = truth_state(cfg)
    specs = run_simulate(cfg, truth)
    written = [out / "truth.dm.csv"]
    pio.write_density_matrix(written[0], truth, target=cfg.raw["target"])
    for s in specs:
        path = out / SPECTROGRAM_DIR / f"{_beat_tag(s.probe.beat_energy)}.spec.csv"
        pio.write_spectrogram(path, s)
        written.append(path)
    write_manifest(out, "simulate", cfg, outputs=written,
                   extra={"spectrogram_seeds": cfg.spectrogram_seeds()})
    return written


def cmd_extract(cfg, out, inputs=()):
    out = Path(out)
    files = _collect(inputs, out / SPECTROGRAM_DIR, "*.spec.csv")
    written = []
    for f in files:
        trace = fit_oscillation(pio.read_spectrogram(f))
        path = out / TRACE_DIR / f"{_beat_tag(trace.beat_energy)}.trace.csv"
        pio.write_trace(path, trace)
        written.append(path)
    write_manifest(out, "extract", cfg, inputs=files, outputs=written)
    return written


def _read_traces(out, inputs):
    files = _collect(inputs, Path(out) / TRACE_DIR, "*.trace.csv")
    traces = [pio.read_trace(f) for f in files]
    if not any(t.populations_only for t in traces):
        raise ConfigurationError(
            "a zero-beat (hbar dw = 0) trace is required for the populations; none among "
            + ", ".join(str(f) for f in files)
        )
    return files, traces


def cmd_assemble(cfg, out, inputs=(), interpolation="nearest"):
    out = Path(out)
    files, traces = _read_traces(out, inputs)
    asm = run_assemble(traces, interpolation)
    written = [out / "raw.dm.csv", out / "raw.coverage.csv", out / "assembly.json"]
    pio.write_density_matrix(written[0], asm.matrix)
    pio.write_mask(written[1], asm.coverage)
    pio.write_json(written[2], {
        "purity": purity(asm.matrix),
        "trace": asm.matrix.trace().real,
        "offsets": [{"beat_meV": b * 1e3, "offset": k, "residual_bins": r} for b, (k, r) in sorted(asm.offsets.items())],
        "covered_fraction": float(asm.coverage.mean()),
    })
    write_manifest(out, "assemble", cfg, inputs=files, outputs=written, extra={"interpolation": interpolation})
    return written


def cmd_reconstruct(cfg, out, inputs=(), correct_response=None):
    out = Path(out)
    files, traces = _read_traces(out, inputs)
    result = run_reconstruct(traces, cfg, correct_response)
    d = out / RESULT_DIR
    summary = pio.write_result(d, result, extra={"seeds": cfg.seeds})
    written = [d / "map.dm.csv", d / "sample_metrics.csv", d / "metrics.json"]
    write_manifest(out, "reconstruct", cfg, inputs=files, outputs=written)
    return summary


def _load_state(path):
    p = Path(path)
    if p.is_dir():
        p = p / "map.dm.csv"
    if not p.is_file():
        raise DataValidationError(f"{path}: no density-matrix file found")
    return p, pio.read_density_matrix(p, psd=False)


def cmd_metrics(matrix_a, matrix_b=None, out=None, cfg=None):
    pa, a = _load_state(matrix_a)
    b, inputs = None, [pa]
    if matrix_b is not None:
        pb, b = _load_state(matrix_b)
        inputs.append(pb)
    report = state_metrics(a, b)
    if out is not None:
        pio.write_json(Path(out) / "metrics.json", report)
        if cfg is not None:
            write_manifest(out, "metrics", cfg, inputs=inputs, outputs=[Path(out) / "metrics.json"])
    return report


def cmd_compare(result_path, truth_path, out, cfg=None):
    out = Path(out)
    pa, a = _load_state(result_path)
    pb, b = _load_state(truth_path)
    report = state_metrics(a, b)
    report["truth_purity"] = purity(b)
    rows, curve = compare_tables(a, b)
    d = out / COMPARE_DIR
    written = [d / "report.json", d / "abs_elements.csv", d / "amplitude_vs_beat.csv"]
    pio.write_json(written[0], report)
    pio.atomic_write(written[1], _csv(["i", "j", "epsilon_i", "epsilon_j", "abs_result", "abs_truth"], rows, int_cols=2))
    pio.atomic_write(written[2], _csv(["offset", "beat_meV", "sum_abs_result", "sum_abs_truth"], curve, int_cols=1))
    if cfg is not None:
        write_manifest(out, "compare", cfg, inputs=[pa, pb], outputs=written)
    return report


def _csv(header, rows, int_cols=0):
    lines = [",".join(header)]
    for r in rows:
        cells = [str(int(x)) for x in r[:int_cols]] + [pio.FMT % x for x in r[int_cols:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_pipeline(cfg, out, correct_response=None):
    out = Path(out)
    cmd_simulate(cfg, out)
    cmd_extract(cfg, out)
    cmd_assemble(cfg, out)
    summary = cmd_reconstruct(cfg, out, correct_response=correct_response)
    report = cmd_compare(out / RESULT_DIR, out / "truth.dm.csv", out, cfg)
    summary = dict(summary)
    summary["comparison"] = report
    pio.write_json(out / "pipeline.json", json.loads(json.dumps(summary, default=pio._json_default)))
    write_manifest(out, "pipeline", cfg, outputs=[out / "pipeline.json"])
    return summary
