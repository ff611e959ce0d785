"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from photoqst.estimation import (
    concurrence_ci,
    grad_log_posterior,
    hamiltonian_error,
    hmc_sample,
    log_posterior,
    log_posterior_and_grad,
)
from photoqst.extraction import fit_oscillation
from photoqst.forward import Argon, XuvPulse, model_density_matrix, model_grid
from photoqst.pipeline import measurement_set, run_extract, run_pipeline, run_reconstruct, run_simulate, truth_state
from photoqst.qstate import (
    DensityMatrix,
    EnergyGrid,
    concurrence,
    fidelity_amplitude,
    project_psd,
    purity,
)
from photoqst.scenarios import ScenarioConfig

from conftest import random_density
from test_estimation import small_data
from test_extraction import sinusoid


@pytest.fixture
def report(capsys):
    def emit(number, title, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
        with capsys.disabled():
            print(f"\ncriterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
        assert ok, detail

    return emit


def fidelity_to(truth, est):
    a = est if est.grid == truth.grid else est.embed(truth.grid)
    return fidelity_amplitude(a, truth)


@pytest.fixture(scope="module")
def helium_default():
    return run_pipeline(ScenarioConfig.load("helium"))


@pytest.fixture(scope="module")
def argon_default():
    return run_pipeline(ScenarioConfig.load("argon"))


def test_criterion_1_helium_round_trip(report):
    cfg = ScenarioConfig.load("helium", overrides={"noise": {"scale": 0.0}, "response": {"fwhm": 0.0}})
    start = time.perf_counter()
    run = run_pipeline(cfg)
    seconds = time.perf_counter() - start
    res = run.result
    fid_map = fidelity_to(run.truth, res.map_estimate)
    fid_post = np.mean([fidelity_to(run.truth, s) for s in res.samples])
    report(1, "noiseless helium, zero-width response", [
        (f"{len(cfg.beats_mev)} beats", len(cfg.beats_mev) == 7),
        (f"posterior mean purity {res.purity_mean:.4f} >= 0.99", res.purity_mean >= 0.99),
        (f"MAP purity {purity(res.map_estimate):.4f} >= 0.99", purity(res.map_estimate) >= 0.99),
        (f"MAP fidelity {fid_map:.5f} >= 0.999", fid_map >= 0.999),
        (f"mean sample fidelity {fid_post:.5f} >= 0.999", fid_post >= 0.999),
        (f"n = {res.map_estimate.n} <= 96", res.map_estimate.n <= 96),
        (f"runtime {seconds:.1f} s <= 120 s", seconds <= 120),
    ])


def test_criterion_2_response_correction(report, helium_default):
    cfg = ScenarioConfig.load("helium")
    naive = run_reconstruct(helium_default.traces, cfg, correct_response=False)
    raw = purity(helium_default.assembly.matrix)
    aware = helium_default.result.purity_mean
    report(2, "helium, 80 meV response, noise 0.02", [
        (f"raw assembly purity {raw:.3f} < 0.97", raw < 0.97),
        (f"uncorrected reconstruction purity {naive.purity_mean:.3f} < 0.97", naive.purity_mean < 0.97),
        (f"response-aware purity {aware:.4f} >= 0.97", aware >= 0.97),
        (f"|purity - 1.00| = {abs(aware - 1):.4f} <= 0.03", abs(aware - 1) <= 0.03),
    ])


def test_criterion_3_argon_mixedness(report, argon_default):
    res = argon_default.result
    truth_p = purity(argon_default.truth)
    c_mean, _, _ = concurrence_ci(res.purity_samples)
    # 1.5 eV splitting is ~25 sigma_E: the two channels no longer overlap
    far, xuv = Argon(so_splitting=1.5), XuvPulse(intensity_fwhm=0.144)
    orth = purity(model_density_matrix(far, xuv, model_grid(far, xuv, 0.005)))
    report(3, "argon mixedness", [
        (f"truth purity {truth_p:.4f} = 0.61", abs(truth_p - 0.61) < 1e-3),
        (f"posterior purity {res.purity_mean:.4f} = 0.61 +/- 0.03", abs(res.purity_mean - 0.61) <= 0.03),
        (f"concurrence {c_mean:.4f} = 0.88 +/- 0.03", abs(c_mean - 0.88) <= 0.03),
        (f"orthogonal-limit purity {orth:.5f} = 5/9 +/- 0.005", abs(orth - 5 / 9) <= 0.005),
    ])


def test_criterion_4_gradient(report):
    worst = 0.0
    for seed in range(100):
        _, data = small_data(seed)
        theta = np.random.default_rng(seed + 1000).standard_normal(64)
        g = grad_log_posterior(theta, data)
        # central differences at the standard step eps^(1/3) * max(1, |theta_i|)
        steps = np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(theta))
        fd = np.array([
            (log_posterior(theta + h * e, data) - log_posterior(theta - h * e, data)) / (2 * h)
            for h, e in zip(steps, np.eye(64))
        ])
        worst = max(worst, float(np.max(np.abs(fd - g) / np.abs(g))))
    report(4, "gradient vs central differences, 100 draws, n = 8", [
        (f"n = {data.n}", data.n == 8),
        (f"worst component relative error {worst:.2e} < 1e-5", worst < 1e-5),
    ])


def test_criterion_5_sampler_health(report, helium_default, argon_default):
    acc = {name: run.result.diagnostics["acceptance_rate"] for name, run in
           (("helium", helium_default), ("argon", argon_default))}
    cfg = ScenarioConfig.load("argon")
    data = measurement_set(argon_default.traces, cfg)
    theta = argon_default.result.map_result.theta
    eps = argon_default.result.diagnostics["step_size"]

    def vg(t):
        return log_posterior_and_grad(t, data)

    lp, g = vg(theta)
    rng = np.random.default_rng(0)
    momenta = [rng.standard_normal(theta.size) for _ in range(100)]
    med = [np.median([abs(hamiltonian_error(theta, lp, g, p, eps / 2**k, 15 * 2**k, vg)) for p in momenta])
           for k in range(3)]
    ratios = [a / b for a, b in zip(med, med[1:])]
    _, small = small_data(5)
    kw = dict(n_samples=100, n_warmup=100, n_leapfrog=10)
    a, b = hmc_sample(small, seed=21, **kw), hmc_sample(small, seed=21, **kw)
    report(5, "sampler health", [
        *((f"{k} acceptance {v:.3f} in [0.6, 0.9]", 0.6 <= v <= 0.9) for k, v in acc.items()),
        (f"halving step quarters median |dH|: ratios {ratios[0]:.2f}, {ratios[1]:.2f} in [3, 5]",
         all(3 <= r <= 5 for r in ratios)),
        ("seeded chains bit-identical", np.array_equal(a.theta_samples, b.theta_samples)),
    ])


def test_criterion_6_fit_exactness(report):
    rng = np.random.default_rng(6)
    worst = 0.0
    for beat in (41, 61, 80, 98, 117, 134):
        amp, phase = rng.uniform(0.05, 2), rng.uniform(-3, 3)
        tr = fit_oscillation(sinusoid(amp, phase, 2.5, beat * 1e-3))
        worst = max(worst, abs(tr.amplitude[0] - amp), abs(np.angle(np.exp(1j * (tr.phase[0] - phase)))),
                    abs(tr.dc[0] - 2.5))
    amps, sig = [], []
    for seed in range(500):
        tr = fit_oscillation(sinusoid(noise=0.02, seed=seed))
        amps.append(tr.amplitude[0])
        sig.append(tr.amplitude_sigma[0])
    ratio = np.std(amps, ddof=1) / np.mean(sig)
    report(6, "oscillation fit", [
        (f"noiseless worst error {worst:.1e} < 1e-9", worst < 1e-9),
        (f"Monte Carlo spread / reported sigma = {ratio:.3f} within 20 %", abs(ratio - 1) <= 0.2),
    ])


def test_criterion_7_metric_identities(report):
    two_path = self_fid = idem = 0.0
    for seed in range(50):
        n = 2 + seed % 11
        rho = random_density(n, 1 + seed % n, seed)
        two_path = max(two_path, abs(purity(rho) - np.trace(rho @ rho).real))
        self_fid = max(self_fid, abs(fidelity_amplitude(rho, rho) - 1))
        r = np.random.default_rng(seed)
        q, _ = np.linalg.qr(r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)))
        lam = r.uniform(-1, 1, n)
        lam[0] = abs(lam[0]) + 0.1
        once = project_psd((q * lam) @ q.conj().T)
        idem = max(idem, np.max(np.abs(project_psd(once) - once)))
    pure = DensityMatrix(EnergyGrid(0, 1, 3), np.diag([1.0, 0.0, 0.0]))
    report(7, "metric identities", [
        (f"purity two-path {two_path:.1e} <= 1e-10", two_path <= 1e-10),
        (f"self-fidelity |F - 1| {self_fid:.1e} <= 1e-8", self_fid <= 1e-8),
        (f"C(gamma = 1) = {concurrence(pure)}", concurrence(pure) == 0.0),
        (f"project_psd idempotence {idem:.1e} <= 1e-10", idem <= 1e-10),
    ])


@pytest.mark.slow
def test_criterion_8_coverage(report):
    base = ScenarioConfig.load("argon")
    truth = purity(truth_state(base))
    start = time.perf_counter()
    hits = 0
    for i in range(100):
        cfg = ScenarioConfig.load("argon", overrides={"seeds": {"simulate": 1000 + i, "sample": i}})
        res = run_reconstruct(run_extract(run_simulate(cfg)), cfg)
        lo, hi = res.purity_ci95
        hits += int(lo <= truth <= hi)
    minutes = (time.perf_counter() - start) / 60
    report(8, "argon purity coverage", [
        (f"{hits}/100 intervals contain truth {truth:.4f} (>= 90)", hits >= 90),
        (f"batch runtime {minutes:.1f} min <= 30", minutes <= 30),
    ])
