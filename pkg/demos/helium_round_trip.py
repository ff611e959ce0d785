"""
Helium: simulate, extract, assemble, reconstruct
=================================================

Walks through the library stages on the bundled helium scenario and prints
what each stage produces.  Runs in about ten seconds.
"""

import numpy as np

from photoqst.scenarios import ScenarioConfig
from photoqst.estimation import hmc_sample, map_estimate
from photoqst.pipeline import measurement_set, run_assemble, run_extract, run_simulate, truth_state
from photoqst.qstate import fidelity_amplitude, purity

cfg = ScenarioConfig.load("helium")
truth = truth_state(cfg)
print(f"true state: {truth.n} bins of {truth.grid.delta_epsilon * 1e3:.1f} meV, purity {purity(truth):.4f}")

# one spectrogram per beat energy, each 51 delays x final-energy bins
spectrograms = run_simulate(cfg, truth)
for s in spectrograms:
    print(f"  beat {s.probe.beat_energy * 1e3:5.1f} meV  counts {s.counts.shape}")

# lock-in fit of every final-energy bin gives one subdiagonal trace per beat
traces = run_extract(spectrograms)
peak = [float(np.max(t.amplitude)) for t in traces[1:]]
print("peak beat amplitude per beat:", np.round(peak, 4))

# the raw matrix is blurred by the 80 meV spectrometer and not positive
raw = run_assemble(traces).matrix
print(f"raw assembly purity {purity(raw):.3f}, smallest eigenvalue {np.linalg.eigvalsh(raw.elements)[0]:.2e}")

# the estimator puts the response into its forward model
data = measurement_set(traces, cfg)
m = map_estimate(data)
print(f"MAP: purity {purity(m.estimate):.4f}, converged {m.converged} after {m.iterations} iterations")

res = hmc_sample(data, n_samples=400, n_warmup=300, n_leapfrog=15, seed=1, map_result=m)
lo, hi = res.purity_ci95
print(f"posterior purity {res.purity_mean:.4f}  (95 % interval {lo:.4f} .. {hi:.4f})")
print(f"acceptance {res.diagnostics['acceptance_rate']:.2f}, step {res.diagnostics['step_size']:.2e}")

sub = truth.restrict(*data.window)
sub = sub.with_elements(sub.elements / sub.trace().real)
print(f"fidelity of MAP to truth {fidelity_amplitude(m.estimate, sub):.4f}")
