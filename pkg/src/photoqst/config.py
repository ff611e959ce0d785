"""Numerical tolerances and physical constants shared by every module."""
from dataclasses import dataclass

HBAR_EV_FS = 0.6582119569  # eV fs


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12  # relative to max |element|
    trace: float = 1e-10
    psd: float = 1e-8
    norm: float = 1e-10
    purity_slack: float = 1e-9
    eig_residual: float = 1e-9
    offset_snap: float = 1e-9  # fractional subdiagonal offsets below this are integer


TOL = Tolerances()
