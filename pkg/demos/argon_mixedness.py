"""
Argon: spin-orbit mixedness and its interval
=============================================

The two ionic channels leave the photoelectron entangled with the ion, so
the reduced state is mixed.  This script compares the analytic purity, the
reconstructed one and the concurrence implied per posterior sample.
"""

import numpy as np

from photoqst.scenarios import ScenarioConfig
from photoqst.estimation import concurrence_ci, purity_ci
from photoqst.forward import Argon, XuvPulse, argon_sigma_for_purity, model_density_matrix, model_grid
from photoqst.pipeline import run_pipeline
from photoqst.qstate import concurrence_from_purity, purity

# the XUV bandwidth is chosen so the two channels overlap to purity 0.61
sigma = argon_sigma_for_purity(0.61)
print(f"photoelectron energy spread {sigma * 1e3:.1f} meV (intensity std)")

run = run_pipeline(ScenarioConfig.load("argon"))
print(f"true purity {purity(run.truth):.4f}, concurrence {concurrence_from_purity(purity(run.truth)):.3f}")

p = run.result.purity_samples
mean, lo, hi = purity_ci(p)
print(f"posterior purity     {mean:.4f}  [{lo:.4f}, {hi:.4f}]")
mean, lo, hi = concurrence_ci(p)
print(f"posterior concurrence {mean:.4f}  [{lo:.4f}, {hi:.4f}]")

# a wider splitting separates the channels: purity falls to 1/3^2 + (2/3)^2 = 5/9
for split in (0.177, 0.4, 1.0, 1.5):
    tgt, xuv = Argon(so_splitting=split), XuvPulse(intensity_fwhm=ScenarioConfig.load("argon").xuv().intensity_fwhm)
    rho = model_density_matrix(tgt, xuv, model_grid(tgt, xuv, 0.005))
    print(f"splitting {split:5.3f} eV -> purity {purity(rho):.4f}")
print(f"orthogonal limit {5 / 9:.4f}")
