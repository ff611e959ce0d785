"""Beat amplitude/phase extraction and raw density-matrix assembly.

Each spectrogram bin is fitted by ordinary least squares to

    S(tau) = a + b cos(dw tau) + c sin(dw tau) = a + A cos(dw tau + phi),

so A = hypot(b, c) and phi = atan2(-c, b).  The fitted amplitudes are then
dropped onto the matching subdiagonal of an empty matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TOL
from .errors import ConfigurationError, IllConditionedDesignError, PlacementError, StructuralError
from .forward import BeatGeometry, ProbePair
from .qstate import DensityMatrix, EnergyGrid

PHASE_CONVENTION = "S=a+A*cos(dw*tau+phi);phi=atan2(-c,b)"


@dataclass(frozen=True, eq=False)
class SubdiagonalTrace:
    """Fitted beat parameters for one probe pair, per final energy.

    For the zero-beat (populations) trace ``amplitude`` and ``phase`` are
    absent and stored as zeros with ``populations_only`` set.
    """

    probe: ProbePair
    final_energies: EnergyGrid
    amplitude: np.ndarray
    phase: np.ndarray
    amplitude_sigma: np.ndarray
    phase_sigma: np.ndarray
    dc: np.ndarray
    dc_sigma: np.ndarray
    populations_only: bool = False
    phase_defined: np.ndarray = None
    zero_signal: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.final_energies.n_points
        for name in ("amplitude", "phase", "amplitude_sigma", "phase_sigma", "dc", "dc_sigma"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (n,):
                raise StructuralError(f"{name} has shape {a.shape}, expected ({n},)")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.amplitude < 0):
            raise StructuralError("amplitudes must be nonnegative")
        if np.any(self.amplitude_sigma < 0) or np.any(self.phase_sigma < 0) or np.any(self.dc_sigma < 0):
            raise StructuralError("uncertainties must be nonnegative")
        if self.phase_defined is None:
            object.__setattr__(self, "phase_defined", _phase_defined(self.amplitude, self.amplitude_sigma, self.dc))
        if self.zero_signal is None:
            object.__setattr__(self, "zero_signal", self.dc <= 0)
        if self.populations_only:
            object.__setattr__(self, "phase_defined", np.zeros(n, dtype=bool))

    @property
    def beat_energy(self):
        return self.probe.beat_energy

    def scaled(self, factor):
        """Same trace with every signal-like quantity multiplied by ``factor``."""
        return SubdiagonalTrace(
            self.probe, self.final_energies,
            self.amplitude * factor, self.phase, self.amplitude_sigma * factor, self.phase_sigma,
            self.dc * factor, self.dc_sigma * factor, self.populations_only,
            self.phase_defined, self.zero_signal, dict(self.metadata),
        )


def _phase_defined(amplitude, amplitude_sigma, dc):
    tiny = amplitude <= 1e-12 * np.maximum(np.abs(dc), 1e-300)
    return (amplitude >= 3 * amplitude_sigma) & ~tiny


def fit_oscillation(spec):
    """Per-bin least-squares fit of the beat at the probe's difference frequency."""
    tau = spec.delays
    y = spec.counts
    n_tau = len(tau)
    dw = spec.probe.beat_frequency
    populations_only = spec.probe.beat_energy == 0
    if populations_only:
        X = np.ones((n_tau, 1))
    else:
        if n_tau < 6:
            raise IllConditionedDesignError(f"need at least 6 delays, got {n_tau}")
        period = 2 * np.pi / abs(dw)
        if tau[-1] - tau[0] < period * (1 - 1e-9):
            raise IllConditionedDesignError(
                f"delay span {tau[-1] - tau[0]:.1f} fs is shorter than one beat period ({period:.1f} fs)"
            )
        X = np.column_stack([np.ones(n_tau), np.cos(dw * tau), np.sin(dw * tau)])
    p = X.shape[1]
    if n_tau <= p:
        raise IllConditionedDesignError("not enough delays for the fit")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        raise IllConditionedDesignError("design matrix is rank deficient")
    resid = y - X @ coef
    s2 = np.sum(resid ** 2, axis=0) / (n_tau - p)
    xtx_inv = np.linalg.inv(X.T @ X)
    dc = coef[0]
    dc_sigma = np.sqrt(s2 * xtx_inv[0, 0])
    n_e = y.shape[1]
    if populations_only:
        amp = phase = amp_sigma = phase_sigma = np.zeros(n_e)
    else:
        b, c = coef[1], coef[2]
        vb, vc, cbc = s2 * xtx_inv[1, 1], s2 * xtx_inv[2, 2], s2 * xtx_inv[1, 2]
        amp = np.hypot(b, c)
        phase = np.arctan2(-c, b)
        safe = np.where(amp > 0, amp, 1.0)
        amp_sigma = np.sqrt(np.maximum(b * b * vb + c * c * vc + 2 * b * c * cbc, 0.0)) / safe
        phase_sigma = np.sqrt(np.maximum(c * c * vb + b * b * vc - 2 * b * c * cbc, 0.0)) / safe ** 2
        amp_sigma = np.where(amp > 0, amp_sigma, np.sqrt(0.5 * (vb + vc)))
        phase_sigma = np.where(amp > 0, phase_sigma, np.pi)
    zero = np.all(y == 0, axis=0)
    return SubdiagonalTrace(
        spec.probe, spec.final_energies, amp, phase, amp_sigma, phase_sigma, dc, dc_sigma,
        populations_only=populations_only, zero_signal=zero,
        metadata={"convention": PHASE_CONVENTION, "n_delays": n_tau},
    )


def map_energies(epsilon_f, probe):
    """Intermediate energies (e1, e2) that both feed final energy ``epsilon_f``."""
    epsilon_f = np.asarray(epsilon_f, dtype=float)
    return epsilon_f - probe.omega1_energy, epsilon_f - probe.omega2_energy


@dataclass(frozen=True, eq=False)
class Assembly:
    matrix: DensityMatrix
    coverage: np.ndarray
    offsets: dict  # beat energy (eV) -> (subdiagonal offset, rounding residual in bins)


def trace_start_index(trace, grid):
    """Grid index of e1 for the first final-energy bin of ``trace``."""
    e1, _ = map_energies(trace.final_energies.epsilon_min, trace.probe)
    x = float(grid.index_of(e1))
    i0 = int(round(x))
    if abs(x - i0) > 1e-6 or abs(trace.final_energies.delta_epsilon - grid.delta_epsilon) > 1e-12:
        raise StructuralError("trace final energies are not aligned with the state grid")
    return i0


def population_profile(trace, grid):
    """Zero-beat DC term mapped to grid populations (not normalized)."""
    w1, w2 = trace.probe.weights
    i0 = trace_start_index(trace, grid)
    p = np.zeros(grid.n_points)
    m = trace.final_energies.n_points
    if i0 < 0 or i0 + m > grid.n_points:
        raise StructuralError("populations trace extends beyond the state grid")
    p[i0:i0 + m] = np.clip(trace.dc, 0.0, None) / (w1 + w2) ** 2
    return p


def find_populations(traces):
    zero = [t for t in traces if t.beat_energy == 0]
    if not zero:
        raise ConfigurationError("a zero-beat (hbar dw = 0) trace is required for the populations")
    return zero[0]


def assemble_raw_dm(traces, grid, interpolation="nearest", max_residual=0.5):
    """Insert every fitted beat amplitude into its subdiagonal of an empty matrix.

    Amplitudes are converted to coherences by dividing by the trace's own DC
    term and re-multiplying with the DC predicted from the zero-beat
    populations. ``interpolation="linear"`` spreads a fractional offset
    over the two neighbouring subdiagonals instead of rounding.
    """
    if interpolation not in ("nearest", "linear"):
        raise ConfigurationError(f"unknown interpolation {interpolation!r}")
    n = grid.n_points
    pop = population_profile(find_populations(traces), grid)
    acc = np.zeros((n, n), dtype=complex)
    wsum = np.zeros((n, n))
    acc[np.diag_indices(n)] = pop
    wsum[np.diag_indices(n)] = 1.0
    offsets = {0.0: (0, 0.0)}
    for tr in traces:
        if tr.populations_only:
            continue
        s = tr.beat_energy / grid.delta_epsilon
        k = int(round(s))
        residual = abs(s - k)
        if residual > max_residual:
            raise PlacementError(f"beat {tr.beat_energy * 1e3:.2f} meV is {residual:.2f} bins off a subdiagonal")
        offsets[float(tr.beat_energy)] = (k, float(s - k))
        geo = BeatGeometry.of(tr.beat_energy, grid)
        w1, w2 = tr.probe.weights
        i0 = trace_start_index(tr, grid)
        m = tr.final_energies.n_points
        i = i0 + np.arange(m)
        ok = (i >= 0) & (i + geo.offset + (1 if geo.frac > 0 else 0) < n) & (tr.dc > 0)
        pop_hi = (1 - geo.frac) * pop[np.clip(i + geo.offset, 0, n - 1)]
        if geo.frac > 0:
            pop_hi = pop_hi + geo.frac * pop[np.clip(i + geo.offset + 1, 0, n - 1)]
        anchor = w1 ** 2 * pop[np.clip(i, 0, n - 1)] + w2 ** 2 * pop_hi
        visibility = np.where(tr.dc > 0, tr.amplitude / np.where(tr.dc > 0, tr.dc, 1.0), 0.0)
        value = visibility * anchor / (2 * w1 * w2) * np.exp(1j * tr.phase)
        if interpolation == "nearest" or geo.frac == 0:
            placements = [(k, 1.0)]
        else:
            placements = [(geo.offset, 1.0 - geo.frac), (geo.offset + 1, geo.frac)]
        for kk, w in placements:
            sel = ok & (i + kk < n)
            if kk == 0 or not np.any(sel):
                continue
            acc[i[sel], i[sel] + kk] += w * value[sel]
            wsum[i[sel], i[sel] + kk] += w
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    filled = upper & (wsum > 0)
    el = np.zeros((n, n), dtype=complex)
    el[filled] = acc[filled] / wsum[filled]
    el = el + el.conj().T
    el[np.diag_indices(n)] = pop
    coverage = filled | filled.T | np.eye(n, dtype=bool)
    tr_sum = el.trace().real
    if tr_sum <= 0:
        raise ConfigurationError("populations trace carries no signal")
    el = el / tr_sum
    rho = DensityMatrix(grid, el, {"raw": True, "interpolation": interpolation}).validate(psd=False)
    return Assembly(rho, coverage, offsets)
