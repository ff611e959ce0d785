import functools

import numpy as np
import pytest

from photoqst.estimation import MeasurementSet
from photoqst.extraction import fit_oscillation
from photoqst.forward import (
    DEFAULT_BEATS_MEV,
    FWHM_PER_SIGMA,
    Argon,
    Helium,
    ProbePair,
    ResponseFunction,
    XuvPulse,
    argon_sigma_for_purity,
    default_delays,
    model_density_matrix,
    model_grid,
    simulate_spectrogram,
)

XUV = XuvPulse(intensity_fwhm=argon_sigma_for_purity(0.61) * FWHM_PER_SIGMA)


@functools.lru_cache(maxsize=None)
def scenario(target="helium", fwhm=0.0, noise=0.0, seed=0, de=0.0195, beats=DEFAULT_BEATS_MEV, gdd=0.0):
    """(grid, truth, traces) for a synthetic run; cached across tests."""
    tgt = Helium() if target == "helium" else Argon()
    xuv = XuvPulse(XUV.central_photon_energy, XUV.intensity_fwhm, gdd)
    grid = model_grid(tgt, xuv, de)
    rho = model_density_matrix(tgt, xuv, grid)
    seeds = np.random.SeedSequence(seed).spawn(len(beats))
    response = ResponseFunction.gaussian(fwhm)
    traces = tuple(
        fit_oscillation(simulate_spectrogram(rho, ProbePair.from_beat(b * 1e-3), default_delays(), response, noise, s))
        for b, s in zip(beats, seeds)
    )
    return grid, rho, traces


def measurement(target="helium", fwhm=0.0, noise=0.0, seed=0, correct=True, **kw):
    grid, rho, traces = scenario(target, fwhm, noise, seed, **kw)
    return rho, MeasurementSet(traces, grid, ResponseFunction.gaussian(fwhm if correct else 0.0))


def random_density(n, rank=None, rng=None):
    rng = np.random.default_rng(rng)
    rank = n if rank is None else rank
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
