"""Discretized continuum states and the metrics used to characterize them.

A :class:`DensityMatrix` lives on a uniform :class:`EnergyGrid` and is
normalized so that the plain sum of its diagonal is one (the grid spacing
is folded into the normalization).  A continuous density rho(e1, e2) can be
recovered by dividing the elements by ``grid.delta_epsilon``; none of the
metrics below need it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TOL
from .errors import DegenerateInputError, NumericalError, StructuralError, ValidationError


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform kinetic-energy axis in eV."""

    epsilon_min: float
    delta_epsilon: float
    n_points: int

    def __post_init__(self):
        if not self.delta_epsilon > 0:
            raise ValidationError(f"delta_epsilon must be positive, got {self.delta_epsilon}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValidationError(f"n_points must be an integer >= 2, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "epsilon_min", float(self.epsilon_min))
        object.__setattr__(self, "delta_epsilon", float(self.delta_epsilon))

    @classmethod
    def spanning(cls, lo, hi, delta_epsilon):
        """Smallest grid starting at ``lo`` whose last point reaches ``hi``."""
        n = int(np.ceil((hi - lo) / delta_epsilon - 1e-9)) + 1
        return cls(lo, delta_epsilon, max(n, 2))

    def point(self, i):
        return self.epsilon_min + i * self.delta_epsilon

    @property
    def points(self):
        return self.epsilon_min + np.arange(self.n_points) * self.delta_epsilon

    @property
    def epsilon_max(self):
        return self.point(self.n_points - 1)

    def index_of(self, energy):
        """Fractional index of ``energy`` on the grid."""
        return (np.asarray(energy) - self.epsilon_min) / self.delta_epsilon

    def sub(self, start, stop):
        """Grid made of points ``start .. stop-1``."""
        if not 0 <= start < stop <= self.n_points:
            raise StructuralError(f"invalid sub-grid [{start}, {stop}) of {self.n_points} points")
        return EnergyGrid(self.point(start), self.delta_epsilon, stop - start)

    def shifted(self, offset):
        return EnergyGrid(self.epsilon_min + offset, self.delta_epsilon, self.n_points)

    def to_dict(self):
        return {
            "epsilon_min": self.epsilon_min,
            "delta_epsilon": self.delta_epsilon,
            "n_points": self.n_points,
        }


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Wavepacket:
    """Normalized channel amplitude on an energy grid."""

    grid: EnergyGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes, complex)
        if amps.shape != (self.grid.n_points,):
            raise StructuralError(f"amplitudes shape {amps.shape} does not match grid of {self.grid.n_points}")
        norm = np.sum(np.abs(amps) ** 2)
        if abs(norm - 1.0) > TOL.norm:
            raise ValidationError(f"wavepacket norm is {norm!r}, expected 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, grid, amplitudes):
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.sqrt(np.sum(np.abs(amps) ** 2))
        if norm == 0:
            raise DegenerateInputError("cannot normalize an all-zero wavepacket")
        return cls(grid, amps / norm)

    def overlap(self, other):
        """Inner product <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def projector(self):
        a = self.amplitudes
        return DensityMatrix(self.grid, np.outer(a, a.conj()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Complex matrix rho[i, j] = <e_i|rho|e_j> on ``grid``.

    Construction only checks shapes. Call :meth:`validate` to enforce the
    Hermitian / unit-trace / positivity invariants; every producing
    operation in the package does so before returning.
    """

    grid: EnergyGrid
    elements: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        el = _frozen(self.elements, complex)
        n = self.grid.n_points
        if el.shape != (n, n):
            raise StructuralError(f"elements shape {el.shape} does not match grid of {n} points")
        object.__setattr__(self, "elements", el)

    @property
    def n(self):
        return self.grid.n_points

    def trace(self):
        return complex(np.trace(self.elements))

    def hermiticity_error(self):
        el = self.elements
        scale = np.max(np.abs(el))
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(el - el.conj().T)) / scale)

    def validate(self, psd=True):
        """Raise :class:`ValidationError` unless the invariants hold; returns self."""
        herm = self.hermiticity_error()
        if herm > TOL.hermitian:
            raise ValidationError(f"matrix not Hermitian: relative asymmetry {herm:.3e}")
        tr = self.trace()
        if abs(tr - 1.0) > TOL.trace:
            raise ValidationError(f"trace is {tr!r}, expected 1")
        if psd:
            lam = min_eigenvalue(self)
            if lam < -TOL.psd:
                raise ValidationError(f"matrix not positive semidefinite: min eigenvalue {lam:.3e}")
        return self

    def with_elements(self, elements, **metadata):
        md = dict(self.metadata)
        md.update(metadata)
        return DensityMatrix(self.grid, elements, md)

    def embed(self, grid):
        """Zero-pad onto a larger grid with the same spacing."""
        offset = grid.index_of(self.grid.epsilon_min)
        start = int(round(float(offset)))
        if abs(offset - start) > 1e-6 or abs(grid.delta_epsilon - self.grid.delta_epsilon) > 1e-12:
            raise StructuralError("grids are not commensurate")
        if start < 0 or start + self.n > grid.n_points:
            raise StructuralError("target grid does not contain this matrix")
        out = np.zeros((grid.n_points, grid.n_points), dtype=complex)
        out[start:start + self.n, start:start + self.n] = self.elements
        return DensityMatrix(grid, out, dict(self.metadata))

    def restrict(self, start, stop):
        return DensityMatrix(self.grid.sub(start, stop), self.elements[start:stop, start:stop], dict(self.metadata))

    @classmethod
    def maximally_mixed(cls, grid):
        return cls(grid, np.eye(grid.n_points) / grid.n_points)

    @classmethod
    def mixture(cls, weights, states):
        """Incoherent sum of wavepacket projectors (or density matrices)."""
        grid = states[0].grid
        out = np.zeros((grid.n_points, grid.n_points), dtype=complex)
        for w, s in zip(weights, states):
            if s.grid != grid:
                raise StructuralError("mixture components live on different grids")
            el = s.projector().elements if isinstance(s, Wavepacket) else s.elements
            out += w * el
        return cls(grid, out)


def _as_array(rho):
    if isinstance(rho, DensityMatrix):
        return rho.elements
    a = np.asarray(rho)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {a.shape}")
    return a


def _eigh(a):
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        finite = bool(np.all(np.isfinite(a)))
        raise NumericalError(
            f"Hermitian eigendecomposition failed (n={a.shape[0]}, finite={finite}, "
            f"max|a|={np.max(np.abs(a)) if finite else 'nan'}): {exc}"
        ) from exc
    return w, v


def purity(rho):
    """tr(rho^2) evaluated as the sum of squared moduli, clamped to [0, 1]."""
    a = _as_array(rho)
    return float(np.clip(np.sum(np.abs(a) ** 2), 0.0, 1.0))


def concurrence(rho):
    """Ion-photoelectron concurrence sqrt(2 (1 - tr rho^2)) for a two-level partner."""
    return float(np.sqrt(max(0.0, 2.0 * (1.0 - purity(rho)))))


def concurrence_from_purity(gamma):
    gamma = np.asarray(gamma, dtype=float)
    return np.sqrt(np.maximum(0.0, 2.0 * (1.0 - gamma)))


def hermitize(rho):
    a = _as_array(rho)
    h = 0.5 * (a + a.conj().T)
    if isinstance(rho, DensityMatrix):
        return rho.with_elements(h)
    return h


def min_eigenvalue(rho):
    a = _as_array(rho)
    h = 0.5 * (a + a.conj().T)
    return float(_eigh(h)[0][0])


def project_psd(rho):
    """Nearest unit-trace PSD matrix by eigenvalue clipping.

    Input must be Hermitian to within the package tolerance; it is
    symmetrized before the eigendecomposition.
    """
    a = _as_array(rho)
    scale = np.max(np.abs(a))
    if scale > 0 and np.max(np.abs(a - a.conj().T)) > TOL.hermitian * scale * 1e4:
        raise ValidationError("project_psd needs a Hermitian input")
    w, v = _eigh(0.5 * (a + a.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise DegenerateInputError("no positive spectral weight left after clipping")
    out = (v * (w / w.sum())) @ v.conj().T
    out = 0.5 * (out + out.conj().T)
    if isinstance(rho, DensityMatrix):
        return rho.with_elements(out).validate()
    return out


def sqrtm_psd(a):
    """Principal square root of a Hermitian PSD matrix; negative eigenvalues are clipped."""
    w, v = _eigh(0.5 * (a + a.conj().T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def amplitude_matrix(rho):
    """Elementwise modulus |rho|, renormalized and clipped to a density matrix."""
    r = np.abs(_as_array(rho))
    tr = np.trace(r)
    if tr <= 0:
        raise DegenerateInputError("modulus matrix has zero trace")
    return project_psd(r / tr)


def uhlmann_fidelity(a, b):
    """tr sqrt(sqrt(b) a sqrt(b)) for PSD matrices ``a`` and ``b`` (root fidelity)."""
    sb = sqrtm_psd(b)
    m = sb @ a @ sb
    w, _ = _eigh(0.5 * (m + m.conj().T))
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def fidelity_amplitude(rho_a, rho_b):
    """Fidelity between the elementwise amplitude matrices |rho_a| and |rho_b|."""
    if isinstance(rho_a, DensityMatrix) and isinstance(rho_b, DensityMatrix) and rho_a.grid != rho_b.grid:
        raise StructuralError("fidelity needs both matrices on the same grid")
    a, b = _as_array(rho_a), _as_array(rho_b)
    if a.shape != b.shape:
        raise StructuralError(f"shape mismatch {a.shape} vs {b.shape}")
    f = uhlmann_fidelity(amplitude_matrix(a), amplitude_matrix(b))
    return float(np.clip(f, 0.0, 1.0))


def frobenius_distance(rho_a, rho_b):
    return float(np.linalg.norm(_as_array(rho_a) - _as_array(rho_b)))
