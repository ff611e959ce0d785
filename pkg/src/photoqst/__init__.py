"""Photoelectron density-matrix tomography from bichromatic-probe spectrograms."""

from .errors import NumericalFailure, PhotoQSTError, ValidationError
from .estimation import MeasurementSet, hmc_sample, map_estimate
from .extraction import assemble_raw_dm, fit_oscillation
from .forward import Argon, Helium, ProbePair, ResponseFunction, XuvPulse, simulate_spectrogram
from .qstate import DensityMatrix, EnergyGrid, concurrence, fidelity_amplitude, purity

__version__ = "0.1.0"

__all__ = [
    "Argon",
    "DensityMatrix",
    "EnergyGrid",
    "Helium",
    "MeasurementSet",
    "NumericalFailure",
    "PhotoQSTError",
    "ProbePair",
    "ResponseFunction",
    "ValidationError",
    "XuvPulse",
    "assemble_raw_dm",
    "concurrence",
    "fidelity_amplitude",
    "fit_oscillation",
    "hmc_sample",
    "map_estimate",
    "purity",
    "simulate_spectrogram",
]
