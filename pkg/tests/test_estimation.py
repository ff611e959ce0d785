import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoqst.errors import (
    ConfigurationError,
    DataValidationError,
    InsufficientSamplesError,
    StructuralError,
)
from photoqst.estimation import (
    CholeskyParam,
    MeasurementSet,
    concurrence_ci,
    forward_predict,
    grad_log_posterior,
    hamiltonian_error,
    hmc_sample,
    log_likelihood,
    log_posterior,
    log_posterior_and_grad,
    lower_to_theta,
    map_estimate,
    map_radius,
    purity_ci,
    rho_from_theta,
    semidefinite_cholesky,
    theta_to_lower,
)
from photoqst.extraction import fit_oscillation
from photoqst.forward import DEFAULT_BEATS_MEV, ProbePair, ResponseFunction, default_delays, simulate_spectrogram
from photoqst.qstate import DensityMatrix, EnergyGrid, concurrence_from_purity, fidelity_amplitude, purity

from conftest import measurement, random_density, scenario

SMALL_GRID = EnergyGrid(5.0, 0.0195, 8)


def small_data(seed, noise=0.02, beats=(0, 41, 61, 80), fwhm=None):
    """Random 8-bin state and its traces; every bin is inside the window."""
    r = np.random.default_rng(seed)
    rho = DensityMatrix(SMALL_GRID, random_density(8, None, r))
    fwhm = r.choice([0.0, 0.02, 0.04]) if fwhm is None else fwhm
    resp = ResponseFunction.gaussian(fwhm)
    traces = tuple(
        fit_oscillation(simulate_spectrogram(rho, ProbePair.from_beat(b * 1e-3), default_delays(), resp, noise,
                                             int(r.integers(1 << 30))))
        for b in beats
    )
    return rho, MeasurementSet(traces, SMALL_GRID, resp, window_threshold=0.0)


def window_truth(rho, data):
    sub = rho.restrict(*data.window)
    return sub.with_elements(sub.elements / sub.trace().real)


def truth_theta(rho, data):
    return CholeskyParam.from_density(window_truth(rho, data), map_radius(data.n)).values


def central_difference(f, theta, steps):
    return np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for h, e in zip(steps, np.eye(theta.size))])


class TestParameterization:
    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 9), seed=st.integers(0, 2**32 - 1))
    def test_every_theta_is_a_density_matrix(self, n, seed):
        theta = np.random.default_rng(seed).standard_normal(n * n)
        CholeskyParam(n, theta).reconstruct().validate()

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 10), rank=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
    def test_cholesky_round_trip(self, n, rank, seed):
        a = random_density(n, min(n, rank), seed)
        L = semidefinite_cholesky(a)
        assert np.array_equal(L, np.tril(L))
        assert np.max(np.abs(L @ L.conj().T - a)) < 1e-13

    def test_scale_free(self, rng):
        theta = rng.standard_normal(16)
        assert np.allclose(rho_from_theta(theta, 4), rho_from_theta(3.7 * theta, 4), atol=1e-15)

    def test_canonical_keeps_state(self, rng):
        p = CholeskyParam(5, rng.standard_normal(25))
        c = p.canonical()
        assert np.all(np.real(np.diag(c.lower())) >= 0)
        assert np.allclose(p.reconstruct().elements, c.reconstruct().elements, atol=1e-15)

    def test_length_checked(self):
        with pytest.raises(StructuralError):
            CholeskyParam(3, np.zeros(8))


class TestMeasurementSet:
    def test_non_finite_rejected(self):
        grid, _, traces = scenario("helium")
        bad = traces[1]
        amp = np.array(bad.amplitude)
        amp[0] = np.nan
        broken = dataclasses.replace(bad, amplitude=amp)
        with pytest.raises(DataValidationError):
            MeasurementSet((traces[0], broken), grid)

    def test_window(self):
        _, data = measurement("helium")
        w0, w1 = data.window
        assert data.n == w1 - w0 and 0 < data.n <= data.grid.n_points


class TestLogPosterior:
    @pytest.mark.parametrize("target, fwhm", [("helium", 0.0), ("helium", 0.08), ("argon", 0.0), ("argon", 0.08)])
    def test_likelihood_zero_at_truth(self, target, fwhm):
        rho, data = measurement(target, fwhm)
        assert abs(log_likelihood(truth_theta(rho, data), data)) < 1e-9

    def test_finite_everywhere(self, rng):
        _, data = small_data(0)
        for scale in (1e-8, 1.0, 1e6):
            assert np.isfinite(log_posterior(scale * rng.standard_normal(64), data))

    def test_curvature_quadratic(self):
        # oracle: polynomial fit over a delta sweep around the noiseless optimum
        rho, data = measurement("helium")
        theta = truth_theta(rho, data)
        j = int(np.argmax(np.abs(theta)))
        deltas = np.linspace(-1e-3, 1e-3, 21)
        lp = [log_likelihood(theta + d * np.eye(theta.size)[j], data) for d in deltas]
        c4, c3, c2, c1, c0 = np.polyfit(deltas, lp, 4)
        assert c2 < 0
        quad = abs(c2) * deltas.max() ** 2
        assert abs(c1) * deltas.max() < 1e-3 * quad
        assert abs(c3) * deltas.max() ** 3 < 1e-2 * quad

    def test_structural_error(self):
        _, data = small_data(0)
        with pytest.raises(StructuralError):
            log_posterior(np.zeros(10), data)


class TestGradient:
    def test_finite_differences_random_draws(self):
        worst = 0.0
        for seed in range(100):
            _, data = small_data(seed)
            theta = np.random.default_rng(seed + 1000).standard_normal(64)
            g = grad_log_posterior(theta, data)
            steps = np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(theta))
            fd = central_difference(lambda t: log_posterior(t, data), theta, steps)
            worst = max(worst, np.max(np.abs(fd - g) / np.abs(g)))
        assert worst < 1e-5

    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_prior_only(self, scale, rng):
        theta = rng.standard_normal(64)
        assert np.array_equal(grad_log_posterior(theta, None, scale), -theta / scale**2)
        assert log_posterior(theta, None, scale) == -0.5 * (theta @ theta) / scale**2

    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_prior_gradient_when_data_are_explained(self, scale, rng):
        # noiseless populations generated by rho(theta) itself leave only the prior
        theta = rng.standard_normal(64)
        rho = DensityMatrix(SMALL_GRID, rho_from_theta(theta, 8))
        trace = fit_oscillation(simulate_spectrogram(rho, ProbePair.from_beat(0.0), default_delays(), ResponseFunction()))
        data = MeasurementSet((trace,), SMALL_GRID, window_threshold=0.0)
        g = grad_log_posterior(theta, data, scale)
        # residual left by the 1e-4 uncertainty floor acting on round-off in the fit
        assert np.max(np.abs(g + theta / scale**2)) < 1e-7

    @pytest.mark.parametrize("target, fwhm", [("helium", 0.0), ("helium", 0.08), ("argon", 0.0), ("argon", 0.08)])
    def test_stationary_at_noiseless_optimum(self, target, fwhm):
        from photoqst.estimation import _map_objective

        rho, data = measurement(target, fwhm)
        assert np.linalg.norm(_map_objective(truth_theta(rho, data), data, 1.0)[1]) < 1e-6

    def test_populations_only_phase_invariance(self, rng):
        # rotating off-diagonal Cholesky phases keeps diag(rho), so populations alone cannot see it
        _, data = small_data(2, beats=(0,))
        for _ in range(20):
            T = theta_to_lower(rng.standard_normal(64), 8)
            rot = np.tril(np.exp(1j * rng.uniform(0, 2 * np.pi, (8, 8))), -1) + np.eye(8)
            a, b = lower_to_theta(T), lower_to_theta(T * rot)
            assert log_likelihood(a, data) == pytest.approx(log_likelihood(b, data), rel=1e-12, abs=1e-9)


class TestForwardPredict:
    def test_identity_kernel_reads_subdiagonals(self):
        # beats at exact multiples of the grid spacing
        beats = (0.0, 19.5, 39.0, 58.5)
        rho, data = small_data(3, noise=0.0, beats=beats, fwhm=0.0)
        for p, tr in zip(forward_predict(rho, data), data.traces):
            k = int(round(tr.beat_energy / SMALL_GRID.delta_epsilon))
            w1, w2 = tr.probe.weights
            sub = np.diagonal(rho.elements, offset=k)[: tr.final_energies.n_points]
            if k:
                assert np.allclose(p.amplitude, 2 * w1 * w2 * np.abs(sub), atol=1e-14)
            assert np.allclose(p.amplitude, tr.amplitude, atol=1e-9)
            assert np.allclose(p.dc, tr.dc, atol=1e-9)

    def test_diagonal_state_has_no_beats(self):
        rho, data = small_data(4, noise=0.0)
        diag = rho.with_elements(np.diag(np.diag(rho.elements)))
        for p in forward_predict(diag, data):
            assert np.all(p.amplitude == 0)

    def test_chi_square_at_truth(self):
        rho, data = measurement("helium", 0.08, 0.02, 4)
        chi2, count = 0.0, 0
        for p, tr in zip(forward_predict(rho, data), data.traces):
            ok = tr.dc > 0.05 * tr.dc.max()
            if tr.populations_only:
                r = (p.dc - tr.dc)[ok] / tr.dc_sigma[ok]
            else:
                r = (p.amplitude - tr.amplitude)[ok] / tr.amplitude_sigma[ok]
            chi2 += r @ r
            count += ok.sum()
        assert 0.8 < chi2 / count < 1.25


class TestMapEstimate:
    def test_noiseless_helium(self):
        rho, data = measurement("helium")
        m = map_estimate(data)
        assert fidelity_amplitude(m.estimate, window_truth(rho, data)) >= 0.999

    def test_diagonal_only_data(self):
        grid, rho, _ = scenario("helium")
        diag = rho.with_elements(np.diag(np.diag(rho.elements)))
        traces = tuple(
            fit_oscillation(simulate_spectrogram(diag, ProbePair.from_beat(b * 1e-3), default_delays(), ResponseFunction()))
            for b in DEFAULT_BEATS_MEV
        )
        el = map_estimate(MeasurementSet(traces, grid)).estimate.elements
        assert np.linalg.norm(el - np.diag(np.diag(el))) < 1e-3 * np.trace(el).real

    @pytest.mark.parametrize("target", ["helium", "argon"])
    def test_truth_init_is_fixed_point(self, target):
        rho, data = measurement(target)
        m = map_estimate(data, init=rho)
        assert m.converged and m.iterations <= 2

    def test_non_convergence_is_flagged(self):
        _, data = measurement("helium", 0.08, 0.02, 1)
        m = map_estimate(data, max_iters=2)
        assert not m.converged and m.grad_norm >= 1.0
        m.estimate.validate()

    def test_deterministic(self):
        _, data = measurement("argon", 0.08, 0.02, 1)
        a, b = map_estimate(data, max_iters=50), map_estimate(data, max_iters=50)
        assert np.array_equal(a.theta, b.theta)

    def test_calibration_scale_invariance(self, rng):
        _, data = measurement("helium", 0.08, 0.02, 5)
        scaled = MeasurementSet(tuple(t.scaled(37.5) for t in data.traces), data.grid, data.response)
        for _ in range(3):
            theta = rng.standard_normal(data.n**2)
            assert log_posterior(theta, scaled) == pytest.approx(log_posterior(theta, data), rel=1e-12)
        a, b = map_estimate(data), map_estimate(scaled)
        assert a.converged and b.converged
        assert np.max(np.abs(a.estimate.elements - b.estimate.elements)) < 1e-3

    def test_bad_settings(self):
        _, data = small_data(0)
        with pytest.raises(ConfigurationError):
            map_estimate(data, tol=0.0)

    @pytest.mark.parametrize("fwhm", [0.0195, 0.039])
    def test_deconvolution(self, fwhm):
        rho, data = measurement("helium", fwhm, 0.02, 2)
        assert fidelity_amplitude(map_estimate(data).estimate, window_truth(rho, data)) >= 0.99


@pytest.fixture(scope="module")
def argon_chain():
    rho, data = measurement("argon", 0.08, 0.02, 1)
    return data, hmc_sample(data, n_samples=300, n_warmup=300, n_leapfrog=15, seed=3, keep_every=30)


class TestHmc:
    def test_zero_leapfrog_rejected(self):
        _, data = small_data(0)
        with pytest.raises(ConfigurationError):
            hmc_sample(data, n_leapfrog=0)

    def test_bad_step_rejected(self):
        _, data = small_data(0)
        with pytest.raises(ConfigurationError):
            hmc_sample(data, step_size=-1.0)

    def test_acceptance_band(self, argon_chain):
        _, res = argon_chain
        assert 0.6 <= res.diagnostics["acceptance_rate"] <= 0.9
        assert res.diagnostics["divergences"] == 0

    def test_samples_are_valid_states(self, argon_chain):
        _, res = argon_chain
        assert len(res.samples) == 10
        for s in res.samples:
            s.validate()
        res.map_estimate.validate()

    def test_energy_error_quarters(self, argon_chain):
        # oracle: step-size sweep at fixed trajectory length
        data, res = argon_chain
        theta = res.map_result.theta
        eps = res.diagnostics["step_size"]

        def vg(t):
            return log_posterior_and_grad(t, data)

        lp, g = vg(theta)
        r = np.random.default_rng(0)
        momenta = [r.standard_normal(theta.size) for _ in range(100)]
        med = [
            np.median([abs(hamiltonian_error(theta, lp, g, p, eps / 2**k, 15 * 2**k, vg)) for p in momenta])
            for k in range(3)
        ]
        for a, b in zip(med, med[1:]):
            assert 3.0 <= a / b <= 5.0

    def test_seeded_reproducibility(self):
        _, data = small_data(5)
        kw = dict(n_samples=50, n_warmup=50, n_leapfrog=5)
        a, b = hmc_sample(data, seed=11, **kw), hmc_sample(data, seed=11, **kw)
        c = hmc_sample(data, seed=12, **kw)
        assert np.array_equal(a.theta_samples, b.theta_samples)
        assert not np.array_equal(a.theta_samples, c.theta_samples)

    def test_credible_interval_contains_mean(self, argon_chain):
        _, res = argon_chain
        lo, hi = res.purity_ci95
        assert lo <= res.purity_mean <= hi
        assert res.concurrence_ci95[0] <= res.concurrence_mean <= res.concurrence_ci95[1]


class TestIntervals:
    def test_identical_samples(self):
        rho = DensityMatrix(SMALL_GRID, random_density(8, 2, 0))
        mean, lo, hi = purity_ci([rho] * 120)
        assert lo == mean == hi
        mean, lo, hi = concurrence_ci([rho] * 120)
        assert lo == mean == hi

    def test_too_few(self):
        with pytest.raises(InsufficientSamplesError):
            purity_ci(np.full(99, 0.5))
        with pytest.raises(InsufficientSamplesError):
            concurrence_ci(np.full(99, 0.5))

    def test_concurrence_per_sample(self, rng):
        gamma = rng.uniform(0.5, 1.0, 500)
        mean, lo, hi = concurrence_ci(gamma)
        c = concurrence_from_purity(gamma)
        assert mean == pytest.approx(np.mean(c), rel=1e-15)
        assert (lo, hi) == pytest.approx(tuple(np.percentile(c, [2.5, 97.5])), rel=1e-15)
        # endpoints are not the transformed purity endpoints unless the map is linear
        assert mean != pytest.approx(float(concurrence_from_purity(np.mean(gamma))), rel=1e-6)

    def test_density_matrices_and_purities_agree(self, rng):
        states = [DensityMatrix(SMALL_GRID, random_density(8, 3, s)) for s in range(100)]
        assert purity_ci(states) == purity_ci(np.array([purity(s) for s in states]))
