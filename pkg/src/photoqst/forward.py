"""Model photoelectron states and synthetic two-color pump-probe spectrograms.

The probe has two phase-locked components w1 exp(-i w1 t) and w2 exp(-i w2 t).
An intermediate pair (e1, e2) feeds the same final energy ef = e1 + hbar w1
= e2 + hbar w2, and the final-state yield beats with the delay tau as

    S(ef, tau) = w1^2 rho(e1, e1) + w2^2 rho(e2, e2)
                 + 2 w1 w2 |rho(e1, e2)| cos(dw tau + arg rho(e1, e2)).

Off-grid energies are handled by linear interpolation of the discretized
state: <e| is replaced by (1 - f)<e_j| + f<e_{j+1}|, so rho(e1, e2) =
u(e1)^T rho u(e2) stays positive semidefinite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .config import HBAR_EV_FS, TOL
from .errors import ConfigurationError, EmptyOverlapError, StructuralError, ValidationError
from .qstate import DensityMatrix, EnergyGrid, Wavepacket

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

DEFAULT_OMEGA1 = 1.55  # eV
DEFAULT_BEATS_MEV = (0.0, 41.0, 61.0, 80.0, 98.0, 117.0, 134.0)
ARGON_SO_SPLITTING = 0.177  # eV


@dataclass(frozen=True)
class XuvPulse:
    """Ionizing pulse.

    ``intensity_fwhm`` is the FWHM of the photoelectron intensity |psi|^2 in
    each channel; ``gdd`` (fs^2) sets the quadratic spectral phase
    (gdd/2) ((e - e_c)/hbar)^2.
    """

    central_photon_energy: float = 30.0
    intensity_fwhm: float = 0.144
    gdd: float = 0.0

    def __post_init__(self):
        if not self.intensity_fwhm > 0:
            raise ConfigurationError("xuv.intensity_fwhm must be positive")

    @property
    def sigma(self):
        """Standard deviation of the photoelectron intensity profile (eV)."""
        return self.intensity_fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True)
class ProbePair:
    omega1_energy: float = DEFAULT_OMEGA1
    omega2_energy: float = DEFAULT_OMEGA1
    relative_amplitude: float = 1.0  # w2 / w1

    def __post_init__(self):
        if not self.omega1_energy > 0:
            raise ConfigurationError("probe.omega1_energy must be positive")
        if self.omega2_energy > self.omega1_energy + 1e-15:
            raise ConfigurationError("probe.omega2_energy must not exceed omega1_energy")
        if not self.relative_amplitude > 0:
            raise ConfigurationError("probe.relative_amplitude must be positive")

    @classmethod
    def from_beat(cls, beat_energy, omega1_energy=DEFAULT_OMEGA1, relative_amplitude=1.0):
        return cls(omega1_energy, omega1_energy - beat_energy, relative_amplitude)

    @property
    def beat_energy(self):
        """hbar * delta_omega in eV."""
        return self.omega1_energy - self.omega2_energy

    @property
    def beat_frequency(self):
        """delta_omega in rad/fs."""
        return self.beat_energy / HBAR_EV_FS

    @property
    def weights(self):
        return 1.0, float(self.relative_amplitude)

    def to_dict(self):
        return {
            "omega1_energy": self.omega1_energy,
            "omega2_energy": self.omega2_energy,
            "relative_amplitude": self.relative_amplitude,
        }


@dataclass(frozen=True)
class Helium:
    ip: float = 24.59

    def __post_init__(self):
        if not self.ip > 0:
            raise ConfigurationError("target.ip must be positive")

    def channels(self):
        """(label, weight, binding energy) for each ionic channel."""
        return [("1s", 1.0, self.ip)]


@dataclass(frozen=True)
class Argon:
    """Spin-orbit split ion; ion states are traced out with weights 2/3 and 1/3."""

    ip_3half: float = 15.76
    so_splitting: float = ARGON_SO_SPLITTING

    weight_3half = 2.0 / 3.0
    weight_1half = 1.0 / 3.0

    def __post_init__(self):
        if not self.ip_3half > 0:
            raise ConfigurationError("target.ip_3half must be positive")
        if not self.so_splitting > 0:
            raise ConfigurationError("target.so_splitting must be positive")

    def channels(self):
        return [
            ("2P3/2", self.weight_3half, self.ip_3half),
            ("2P1/2", self.weight_1half, self.ip_3half + self.so_splitting),
        ]


TargetModel = Union[Helium, Argon]


def argon_sigma_for_purity(target_purity, so_splitting=ARGON_SO_SPLITTING):
    """Intensity std (eV) giving the two-channel mixture the requested purity.

    Solves 5/9 + (4/9) exp(-so^2 / (4 sigma^2)) = target_purity.
    """
    x = (target_purity - 5.0 / 9.0) * 9.0 / 4.0
    if not 0 < x < 1:
        raise ConfigurationError("argon purity must lie strictly between 5/9 and 1")
    return so_splitting / (2.0 * np.sqrt(-np.log(x)))


@dataclass(frozen=True, eq=False)
class ResponseFunction:
    """Spectrometer energy-resolution kernel.

    Either Gaussian with ``fwhm`` (eV; zero means ideal resolution) or a
    tabulated, odd-length ``kernel`` sampled at the grid spacing and centred
    on its middle element.
    """

    fwhm: Optional[float] = 0.0
    kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kernel is not None:
            k = np.array(self.kernel, dtype=float)
            if k.ndim != 1 or len(k) % 2 != 1:
                raise ConfigurationError("tabulated kernel must be 1-D with odd length")
            if np.any(k < 0) or k.sum() <= 0:
                raise ConfigurationError("tabulated kernel must be nonnegative with positive sum")
            k = k / k.sum()
            k.setflags(write=False)
            object.__setattr__(self, "kernel", k)
            object.__setattr__(self, "fwhm", None)
        elif self.fwhm is None or self.fwhm < 0:
            raise ConfigurationError("response fwhm must be >= 0")

    @classmethod
    def gaussian(cls, fwhm):
        return cls(fwhm=float(fwhm))

    @classmethod
    def tabulated(cls, kernel):
        return cls(fwhm=None, kernel=kernel)

    @property
    def kind(self):
        return "tabulated" if self.kernel is not None else "gaussian"

    def samples(self, delta_epsilon):
        """Unit-sum kernel samples at multiples of ``delta_epsilon``."""
        if self.kernel is not None:
            return np.array(self.kernel)
        sigma = self.fwhm / FWHM_PER_SIGMA / delta_epsilon
        if sigma < 0.05:
            return np.ones(1)  # neighbours would weigh below exp(-200)
        half = int(np.ceil(8.0 * sigma))
        m = np.arange(-half, half + 1)
        k = np.exp(-0.5 * (m / sigma) ** 2)
        return k / k.sum()

    def matrix(self, n, delta_epsilon):
        """Dense n x n blurring operator with kernel renormalization at the edges."""
        k = self.samples(delta_epsilon)
        width = np.count_nonzero(k >= 0.5 * k.max())
        if width > n:
            raise ConfigurationError(f"response kernel (FWHM {width} bins) is wider than the {n}-bin grid")
        half = len(k) // 2
        if half > n - 1:
            k = k[half - (n - 1): half + n]
            half = n - 1
        idx = np.arange(n)
        off = idx[:, None] - idx[None, :]
        R = np.where(np.abs(off) <= half, k[np.clip(off + half, 0, len(k) - 1)], 0.0)
        return R / R.sum(axis=1, keepdims=True)

    def to_dict(self):
        if self.kernel is not None:
            return {"kind": "tabulated", "kernel": [float(x) for x in self.kernel]}
        return {"kind": "gaussian", "fwhm": self.fwhm}


def apply_response(profile, response, delta_epsilon):
    """Blur ``profile`` (real or complex, on a uniform grid) along energy."""
    profile = np.asarray(profile)
    R = response.matrix(profile.shape[0], delta_epsilon)
    return R @ profile


def channel_wavepacket(grid, center, xuv):
    """Gaussian amplitude whose |psi|^2 has FWHM ``xuv.intensity_fwhm``."""
    e = grid.points
    sigma = xuv.sigma
    envelope = np.exp(-((e - center) ** 2) / (4.0 * sigma ** 2))
    phase = 0.5 * xuv.gdd * ((e - center) / HBAR_EV_FS) ** 2
    return Wavepacket.normalized(grid, envelope * np.exp(1j * phase))


def channel_centers(target, xuv):
    return [(label, w, xuv.central_photon_energy - ip) for label, w, ip in target.channels()]


def model_density_matrix(target, xuv, grid):
    """Reduced photoelectron density matrix of ``target`` ionized by ``xuv``."""
    sigma = xuv.sigma
    packets, weights = [], []
    for label, w, center in channel_centers(target, xuv):
        if center <= 0:
            raise ConfigurationError(f"channel {label}: photon energy below threshold")
        if grid.epsilon_min > center - 3 * sigma + 1e-12 or grid.epsilon_max < center + 3 * sigma - 1e-12:
            raise ConfigurationError(
                f"channel {label}: grid [{grid.epsilon_min:.4f}, {grid.epsilon_max:.4f}] eV does not "
                f"cover {center:.4f} +/- 3 sigma ({sigma:.4f} eV)"
            )
        packets.append(channel_wavepacket(grid, center, xuv))
        weights.append(w)
    rho = DensityMatrix.mixture(weights, packets)
    rho = rho.with_elements(0.5 * (rho.elements + rho.elements.conj().T) / np.trace(rho.elements).real)
    return rho.validate()


def model_grid(target, xuv, delta_epsilon, n_sigma=4.0):
    """Grid covering every channel by ``n_sigma`` intensity standard deviations."""
    centers = [c for _, _, c in channel_centers(target, xuv)]
    lo = min(centers) - n_sigma * xuv.sigma
    hi = max(centers) + n_sigma * xuv.sigma
    return EnergyGrid.spanning(lo, hi, delta_epsilon)


@dataclass(frozen=True)
class BeatGeometry:
    """Where the second intermediate energy e2 = e1 + hbar dw lands on the grid."""

    offset: int  # whole bins
    frac: float  # remaining fraction of a bin, in [0, 1)
    n_final: int  # number of e1 grid points with e2 inside the grid

    @classmethod
    def of(cls, beat_energy, grid):
        s = beat_energy / grid.delta_epsilon
        k = int(np.floor(s + TOL.offset_snap))
        f = s - k
        if f < TOL.offset_snap:
            f = 0.0
        n = grid.n_points
        n_final = n - k - (1 if f > 0 else 0)
        if n_final <= 0:
            raise EmptyOverlapError(
                f"beat energy {beat_energy * 1e3:.1f} meV exceeds the grid span; no e2 inside the grid"
            )
        return cls(k, f, n_final)

    def coherence(self, rho):
        """rho(e1_i, e2_i) for i < n_final."""
        m, k, f = self.n_final, self.offset, self.frac
        i = np.arange(m)
        out = (1.0 - f) * rho[i, i + k]
        if f > 0:
            out = out + f * rho[i, i + k + 1]
        return out

    def upper_population(self, rho):
        """rho(e2_i, e2_i) under the interpolated-ket rule."""
        m, k, f = self.n_final, self.offset, self.frac
        j = np.arange(m) + k
        out = (1.0 - f) ** 2 * rho[j, j].real
        if f > 0:
            out = out + 2 * f * (1 - f) * rho[j, j + 1].real + f ** 2 * rho[j + 1, j + 1].real
        return out


@dataclass(frozen=True, eq=False)
class Spectrogram:
    probe: ProbePair
    delays: np.ndarray
    final_energies: EnergyGrid
    counts: np.ndarray
    rng_seed: Optional[int] = None
    noise_scale: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        delays = np.array(self.delays, dtype=float)
        counts = np.array(self.counts, dtype=float)
        if counts.shape != (len(delays), self.final_energies.n_points):
            raise StructuralError(
                f"counts shape {counts.shape} != ({len(delays)}, {self.final_energies.n_points})"
            )
        if np.any(np.diff(delays) <= 0):
            raise ValidationError("delays must be strictly increasing")
        if np.any(counts < 0):
            raise ValidationError("counts must be nonnegative")
        delays.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "counts", counts)


def default_delays(stop=250.0, step=5.0):
    return np.arange(0.0, stop + step / 2, step)


def ideal_signal(rho, probe, delays):
    """Noise-free, unblurred yield on the final-energy grid (delays x energies)."""
    el = rho.elements
    geo = BeatGeometry.of(probe.beat_energy, rho.grid)
    w1, w2 = probe.weights
    i = np.arange(geo.n_final)
    dc = w1 ** 2 * el[i, i].real + w2 ** 2 * geo.upper_population(el)
    coh = geo.coherence(el)
    phase = np.exp(1j * probe.beat_frequency * np.asarray(delays, dtype=float))
    return dc[None, :] + 2 * w1 * w2 * np.real(coh[None, :] * phase[:, None]), geo


def simulate_spectrogram(rho, probe, delays, response, noise_scale=0.0, seed=None, coupling=None):
    """Synthesize the delay-resolved final-energy spectrum for one probe pair.

    ``coupling`` optionally multiplies the continuum-continuum transition
    amplitude per intermediate grid energy (flat when omitted).
    """
    if noise_scale < 0:
        raise ConfigurationError("noise_scale must be >= 0")
    if coupling is not None:
        d = np.asarray(coupling, dtype=float)
        if d.shape != (rho.n,):
            raise StructuralError("coupling table must match the state grid")
        rho = rho.with_elements(d[:, None] * rho.elements * d[None, :])
    signal, geo = ideal_signal(rho, probe, delays)
    grid = rho.grid
    R = response.matrix(geo.n_final, grid.delta_epsilon)
    counts = signal @ R.T
    if noise_scale > 0:
        rng = np.random.default_rng(seed)
        counts = counts * (1.0 + noise_scale * rng.standard_normal(counts.shape))
    counts = np.clip(counts, 0.0, None)
    final = EnergyGrid(grid.epsilon_min + probe.omega1_energy, grid.delta_epsilon, geo.n_final)
    return Spectrogram(probe, np.asarray(delays, dtype=float), final, counts, seed, float(noise_scale))
