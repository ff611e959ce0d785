"""Bayesian density-matrix reconstruction from subdiagonal traces.

The state is parameterized as rho = T T^dagger / tr(T T^dagger) with T lower
triangular, so every point in parameter space is a valid density matrix.
The parameter vector ``theta`` (n^2 reals) is laid out as

    [diag(T) (n) | Re strictly-lower(T) (n(n-1)/2) | Im strictly-lower(T)]

and carries an isotropic Gaussian prior.  Data enter through three
scale-free observables:

* visibility  A / dc      of every beat trace (per final-energy bin),
* beat phase  phi         where the beat is resolved,
* populations dc / sum dc of the zero-beat trace.

Predictions include the spectrometer response, so blurred data are
deconvolved by the fit itself.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import minimize

from .errors import (
    ConfigurationError,
    DataValidationError,
    InsufficientSamplesError,
    StructuralError,
    TuningError,
)
from .extraction import find_populations, population_profile, trace_start_index
from .forward import BeatGeometry, ResponseFunction
from .qstate import DensityMatrix, EnergyGrid, concurrence_from_purity, purity

DIVERGENCE_THRESHOLD = 1e3


# --------------------------------------------------------------------------
# parameterization
# --------------------------------------------------------------------------

def _lower_indices(n):
    return np.tril_indices(n, -1)


def theta_to_lower(theta, n):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n * n,):
        raise StructuralError(f"theta has length {theta.size}, expected {n * n}")
    m = n * (n - 1) // 2
    T = np.zeros((n, n), dtype=complex)
    T[np.diag_indices(n)] = theta[:n]
    rows, cols = _lower_indices(n)
    T[rows, cols] = theta[n:n + m] + 1j * theta[n + m:]
    return T


def lower_to_theta(T):
    n = T.shape[0]
    rows, cols = _lower_indices(n)
    low = T[rows, cols]
    return np.concatenate([np.real(np.diag(T)), low.real, low.imag])


def rho_from_theta(theta, n):
    T = theta_to_lower(theta, n)
    M = T @ T.conj().T
    t = float(np.dot(theta, theta))
    return M / t if t > 0 else M


def semidefinite_cholesky(a, rtol=1e-12):
    """Lower-triangular L with L L^dagger = a for Hermitian PSD ``a``.

    Eigenvalues below ``rtol * max`` are dropped and the remaining factor
    V sqrt(w) is brought to lower-triangular form by an LQ decomposition,
    so rank-deficient (e.g. pure) states round-trip to machine precision.
    """
    a = 0.5 * (a + a.conj().T)
    n = a.shape[0]
    w, v = np.linalg.eigh(a)
    keep = w > rtol * max(w[-1], 0.0)
    B = v[:, keep] * np.sqrt(w[keep])
    L = np.zeros((n, n), dtype=complex)
    if B.shape[1]:
        r = scipy.linalg.qr(B.conj().T, mode="r")[0]
        L[:, :r.shape[0]] = r.conj().T
    return L


@dataclass(frozen=True, eq=False)
class CholeskyParam:
    """Positivity-preserving coordinates of an n x n density matrix."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.n * self.n,):
            raise StructuralError(f"expected {self.n * self.n} parameters, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_density(cls, rho, radius=None):
        a = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho)
        theta = lower_to_theta(semidefinite_cholesky(a))
        if radius is not None:
            theta = theta * radius / np.linalg.norm(theta)
        return cls(a.shape[0], theta)

    def lower(self):
        return theta_to_lower(self.values, self.n)

    def canonical(self):
        """Flip column signs so the diagonal of T is nonnegative (rho unchanged)."""
        T = self.lower()
        s = np.where(np.real(np.diag(T)) < 0, -1.0, 1.0)
        return CholeskyParam(self.n, lower_to_theta(T * s[None, :]))

    def reconstruct(self, grid=None):
        if grid is None:
            grid = EnergyGrid(0.0, 1.0, self.n)
        return DensityMatrix(grid, _hermitian(rho_from_theta(self.values, self.n))).validate()


def _hermitian(a):
    return 0.5 * (a + a.conj().T)


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Traces plus everything needed to predict them from a state.

    ``grid`` is the intermediate-energy grid the traces refer to.  The
    estimator only parameterizes the window of bins whose zero-beat
    population exceeds ``window_threshold`` of the maximum.  ``sigma_floor``
    adds ``sigma_floor * max(dc)`` in quadrature to every amplitude and DC
    uncertainty (noiseless fits otherwise report zero).
    """

    traces: tuple
    grid: EnergyGrid
    response: ResponseFunction = field(default_factory=ResponseFunction)
    sigma_floor: float = 1e-4
    window_threshold: float = 1e-3

    def __post_init__(self):
        traces = tuple(self.traces)
        object.__setattr__(self, "traces", traces)
        pop_trace = find_populations(traces)
        for tr in traces:
            trace_start_index(tr, self.grid)
            for name in ("amplitude", "phase", "amplitude_sigma", "phase_sigma", "dc", "dc_sigma"):
                if not np.all(np.isfinite(getattr(tr, name))):
                    raise DataValidationError(f"non-finite {name} in trace at {tr.beat_energy * 1e3:.1f} meV")
        if not self.sigma_floor >= 0:
            raise ConfigurationError("sigma_floor must be >= 0")
        pop = population_profile(pop_trace, self.grid)
        if pop.max() <= 0:
            raise DataValidationError("zero-beat trace carries no signal")
        above = np.nonzero(pop > self.window_threshold * pop.max())[0]
        object.__setattr__(self, "_window", (int(above[0]), int(above[-1]) + 1))
        object.__setattr__(self, "_ops", None)

    @property
    def window(self):
        return self._window

    @property
    def window_grid(self):
        return self.grid.sub(*self._window)

    @property
    def n(self):
        return self._window[1] - self._window[0]

    @property
    def beat_traces(self):
        return [t for t in self.traces if not t.populations_only]

    def with_response(self, response):
        return MeasurementSet(self.traces, self.grid, response, self.sigma_floor, self.window_threshold)

    def operators(self):
        if self._ops is None:
            object.__setattr__(self, "_ops", _LikelihoodOperators.build(self))
        return self._ops


def _noise_floor(trace, sigma_floor):
    return sigma_floor * np.max(np.abs(trace.dc))


@dataclass(eq=False)
class _LikelihoodOperators:
    """Sparse linear maps from vec(rho_window) to the predicted observables."""

    n: int
    C: sp.csr_matrix  # complex beat coherence (blurred), one row per data bin
    CH: sp.csr_matrix
    D: sp.csr_matrix  # real DC term (blurred)
    DT: sp.csr_matrix
    P: sp.csr_matrix  # zero-beat populations (blurred, before normalization)
    PT: sp.csr_matrix
    vis: np.ndarray
    vis_sigma: np.ndarray
    phase: np.ndarray
    phase_weight: np.ndarray  # w_phi / sigma_phi^2
    pop: np.ndarray
    pop_sigma: np.ndarray

    @classmethod
    def build(cls, data):
        w0, w1 = data.window
        nw = w1 - w0
        grid = data.grid

        def vec(a, b):
            return (a - w0) * nw + (b - w0)

        def inside(*idx):
            return all(w0 <= i < w1 for i in idx)

        C_blocks, D_blocks = [], []
        vis, vis_sigma, phase, phase_w = [], [], [], []
        for tr in data.beat_traces:
            geo = BeatGeometry.of(tr.beat_energy, grid)
            w1p, w2p = tr.probe.weights
            i0 = trace_start_index(tr, grid)
            m = tr.final_energies.n_points
            R = data.response.matrix(m, grid.delta_epsilon)
            k, f = geo.offset, geo.frac
            coh_r, coh_c, coh_v = [], [], []
            dc_r, dc_c, dc_v = [], [], []
            for b in range(m):
                i = i0 + b
                j = i + k
                if inside(i, j):
                    coh_r.append(b), coh_c.append(vec(i, j)), coh_v.append(1.0 - f)
                if f > 0 and inside(i, j + 1):
                    coh_r.append(b), coh_c.append(vec(i, j + 1)), coh_v.append(f)
                if inside(i):
                    dc_r.append(b), dc_c.append(vec(i, i)), dc_v.append(w1p ** 2)
                if inside(j):
                    dc_r.append(b), dc_c.append(vec(j, j)), dc_v.append(w2p ** 2 * (1 - f) ** 2)
                if f > 0 and inside(j, j + 1):
                    for a, c in ((j, j + 1), (j + 1, j)):
                        dc_r.append(b), dc_c.append(vec(a, c)), dc_v.append(w2p ** 2 * f * (1 - f))
                    dc_r.append(b), dc_c.append(vec(j + 1, j + 1)), dc_v.append(w2p ** 2 * f ** 2)
            S_coh = sp.csr_matrix((coh_v, (coh_r, coh_c)), shape=(m, nw * nw), dtype=complex)
            S_dc = sp.csr_matrix((dc_v, (dc_r, dc_c)), shape=(m, nw * nw))
            b_all = np.arange(m)
            i_all = i0 + b_all
            top = i_all + k + (1 if f > 0 else 0)
            use = (i_all >= w0) & (top < w1) & (tr.dc > 0) & ~tr.zero_signal
            rows = b_all[use]
            Rs = sp.csr_matrix(R[rows])
            C_blocks.append((2 * w1p * w2p) * (Rs @ S_coh))
            D_blocks.append(Rs @ S_dc)
            dc = tr.dc[rows]
            floor = _noise_floor(tr, data.sigma_floor)
            sa = np.hypot(tr.amplitude_sigma[rows], floor)
            sd = np.hypot(tr.dc_sigma[rows], floor)
            v = tr.amplitude[rows] / dc
            vis.append(v)
            vis_sigma.append(np.sqrt((sa / dc) ** 2 + (v * sd / dc) ** 2))
            amp = tr.amplitude[rows]
            sphi = np.hypot(tr.phase_sigma[rows], floor / np.maximum(amp, 1e-300))
            down = np.minimum(1.0, amp / (3.0 * sa)) ** 2
            phase.append(tr.phase[rows])
            phase_w.append(down / sphi ** 2)
        pt = find_populations(data.traces)
        i0 = trace_start_index(pt, grid)
        m = pt.final_energies.n_points
        R = data.response.matrix(m, grid.delta_epsilon)
        r_, c_ = [], []
        for b in range(m):
            if inside(i0 + b):
                r_.append(b), c_.append(vec(i0 + b, i0 + b))
        S_pop = sp.csr_matrix((np.ones(len(r_)), (r_, c_)), shape=(m, nw * nw))
        # data and model populations are both normalized over the window bins only
        rows = np.array(r_, dtype=int)
        P = sp.csr_matrix(R[rows]) @ S_pop
        dc0 = pt.dc[rows]
        total = np.sum(dc0)
        pop_sigma = np.hypot(pt.dc_sigma[rows], _noise_floor(pt, data.sigma_floor)) / total

        def stack(blocks, dtype):
            if blocks:
                return sp.vstack(blocks, format="csr").astype(dtype)
            return sp.csr_matrix((0, nw * nw), dtype=dtype)

        def cat(parts):
            return np.concatenate(parts) if parts else np.zeros(0)

        C = stack(C_blocks, complex)
        D = stack(D_blocks, float)
        ops = cls(
            nw, C, C.conj().T.tocsr(), D, D.T.tocsr(), P.tocsr(), P.T.tocsr(),
            cat(vis), cat(vis_sigma), cat(phase), cat(phase_w), dc0 / total, pop_sigma,
        )
        if not all(np.all(np.isfinite(a)) for a in (ops.vis, ops.vis_sigma, ops.phase, ops.phase_weight, ops.pop, ops.pop_sigma)):
            raise DataValidationError("non-finite values after calibration")
        if np.any(ops.vis_sigma <= 0) or np.any(ops.pop_sigma <= 0):
            raise DataValidationError("zero uncertainties; use a positive sigma_floor for noiseless data")
        return ops

    def loglik_and_grad_rho(self, rho):
        """Log-likelihood and G with d loglik = Re sum conj(G) d rho."""
        x = rho.reshape(-1)
        c = self.C @ x
        d = (self.D @ x).real + 1e-300
        r = np.sqrt(c.real ** 2 + c.imag ** 2 + 1e-300)
        q = r / d
        res = (q - self.vis) / self.vis_sigma
        z = np.exp(1j * self.phase)
        u = (z.conj() * c).real  # |c| cos(phi - arg c)
        h = u / r
        y = (self.P @ x).real
        s = y.sum()
        if s <= 0:
            s = 1e-300
        phat = y / s
        pres = (phat - self.pop) / self.pop_sigma
        ll = -0.5 * np.dot(res, res) - np.dot(self.phase_weight, 1.0 - h) - 0.5 * np.dot(pres, pres)

        g_q = -res / self.vis_sigma
        g_c = g_q * c / (r * d) + self.phase_weight * (z / r - u * c / r ** 3)
        g_d = -g_q * q / d
        g_phat = -pres / self.pop_sigma
        g_y = (g_phat - np.dot(g_phat, phat)) / s
        G = self.CH @ g_c + self.DT @ g_d + self.PT @ g_y
        return ll, G.reshape(self.n, self.n)


# --------------------------------------------------------------------------
# forward prediction (dense reference path)
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictedTrace:
    beat_energy: float
    amplitude: np.ndarray
    phase: np.ndarray
    dc: np.ndarray

    @property
    def visibility(self):
        return np.divide(self.amplitude, self.dc, out=np.zeros_like(self.amplitude), where=self.dc > 0)


def forward_predict(rho, data, response=None):
    """Predicted (A, phi, dc) for every trace of ``data`` on its full final grid.

    ``rho`` may live on the measurement grid or on any commensurate
    sub-grid (it is zero-padded).  Units follow a unit-trace state and unit
    probe amplitude w1, so only ratios such as A/dc are comparable with data.
    """
    if rho.grid != data.grid:
        rho = rho.embed(data.grid)
    response = data.response if response is None else response
    el = rho.elements
    n = data.grid.n_points
    out = []
    for tr in data.traces:
        geo = BeatGeometry.of(tr.beat_energy, data.grid)
        i0 = trace_start_index(tr, data.grid)
        m = tr.final_energies.n_points
        if i0 < 0 or i0 + m > n or geo.n_final < i0 + m:
            raise ConfigurationError(f"trace at {tr.beat_energy * 1e3:.1f} meV reaches outside the state matrix")
        w1, w2 = tr.probe.weights
        sel = slice(i0, i0 + m)
        i = np.arange(n)[sel]
        dc = w1 ** 2 * el[i, i].real + w2 ** 2 * geo.upper_population(el)[sel]
        coh = 2 * w1 * w2 * geo.coherence(el)[sel]
        if tr.populations_only:
            # at zero beat the interference term is constant and lands in the DC
            dc = dc + coh.real
            coh = np.zeros(m, dtype=complex)
        R = response.matrix(m, data.grid.delta_epsilon)
        c = R @ coh
        out.append(PredictedTrace(tr.beat_energy, np.abs(c), np.angle(c), R @ dc))
    return out


# --------------------------------------------------------------------------
# posterior
# --------------------------------------------------------------------------

def _check_theta(theta, data):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.n ** 2,):
        raise StructuralError(f"theta has length {theta.size}; the data window needs {data.n ** 2}")
    return theta


def log_likelihood(theta, data):
    theta = _check_theta(theta, data)
    return data.operators().loglik_and_grad_rho(rho_from_theta(theta, data.n))[0]


def log_posterior_and_grad(theta, data, prior_scale=1.0):
    """Log posterior and its gradient; ``data=None`` evaluates the prior alone."""
    if data is None:
        theta = np.asarray(theta, dtype=float)
        return -0.5 * float(theta @ theta) / prior_scale ** 2, -theta / prior_scale ** 2
    theta = _check_theta(theta, data)
    n = data.n
    T = theta_to_lower(theta, n)
    t = float(np.dot(theta, theta))
    if t <= 0:
        t = 1e-300
    rho = (T @ T.conj().T) / t
    ll, G = data.operators().loglik_and_grad_rho(rho)
    Gh = 0.5 * (G + G.conj().T)
    X = (Gh @ T) * (2.0 / t)
    radial = 2.0 * np.real(np.sum(Gh.conj() * rho)) / t  # Re tr(Gh rho) dt/t per unit theta
    grad = lower_to_theta(X)
    # lower_to_theta keeps only real parts on the diagonal, which is what d/d theta_diag needs
    grad = grad - radial * theta
    lp = ll - 0.5 * t / prior_scale ** 2
    grad = grad - theta / prior_scale ** 2
    return lp, grad


def log_posterior(theta, data, prior_scale=1.0):
    """Gaussian log-likelihood of the calibrated observables plus N(0, prior_scale^2) prior."""
    return log_posterior_and_grad(theta, data, prior_scale)[0]


def grad_log_posterior(theta, data, prior_scale=1.0):
    return log_posterior_and_grad(theta, data, prior_scale)[1]


# --------------------------------------------------------------------------
# MAP
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MapResult:
    estimate: DensityMatrix
    theta: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    log_posterior: float
    message: str = ""


def map_radius(n, prior_scale=1.0):
    """Mode of the prior's radial density: scale * sqrt(n^2 - 1)."""
    return prior_scale * np.sqrt(n * n - 1.0)


def _map_objective(theta, data, prior_scale):
    # rho ignores |theta|; the radial Jacobian makes the mode well defined
    lp, g = log_posterior_and_grad(theta, data, prior_scale)
    t2 = float(np.dot(theta, theta))
    dof = theta.size - 1
    lp = lp + 0.5 * dof * np.log(t2)
    g = g + dof * theta / t2
    return -lp, -g


def initial_theta(data, init=None, prior_scale=1.0):
    """Starting point on the prior's modal sphere.

    ``init`` may be a DensityMatrix (on the window or measurement grid),
    a parameter vector, or None (PSD projection of the raw assembly).
    """
    n = data.n
    radius = map_radius(n, prior_scale)
    if init is None:
        from .extraction import assemble_raw_dm
        from .qstate import project_psd

        raw = assemble_raw_dm(data.traces, data.grid).matrix
        w0, w1 = data.window
        a = raw.elements[w0:w1, w0:w1]
        a = project_psd(a / np.trace(a).real)
        mixed = 0.98 * a + 0.02 * np.eye(n) / n
        return CholeskyParam.from_density(mixed, radius).values
    if isinstance(init, DensityMatrix):
        if init.n != n:
            w0, w1 = data.window
            if init.grid == data.grid:
                init = init.restrict(w0, w1)
                init = init.with_elements(init.elements / init.trace().real)
            else:
                raise StructuralError("initial state does not match the estimation window")
        return CholeskyParam.from_density(init, radius).values
    if isinstance(init, CholeskyParam):
        init = init.values
    theta = _check_theta(init, data)
    return theta * radius / np.linalg.norm(theta)


def map_estimate(data, init=None, max_iters=3000, tol=1.0, prior_scale=1.0):
    """Posterior mode of rho by L-BFGS.

    Converged means the gradient norm of the objective fell below ``tol``
    (nats per unit of theta) within ``max_iters`` iterations; otherwise the
    best point found is returned with ``converged=False``.  Noiseless data
    carries huge weights through the uncertainty floor, so its gradients
    rarely meet an absolute tolerance even when the estimate is excellent.
    """
    if not tol > 0 or int(max_iters) < 1:
        raise ConfigurationError("tol must be > 0 and max_iters >= 1")
    theta0 = initial_theta(data, init, prior_scale)
    f0, g0 = _map_objective(theta0, data, prior_scale)
    if np.linalg.norm(g0) < tol:
        theta, nit, msg = theta0, 0, "initial point satisfies tolerance"
    else:
        stop = _GradStop(data, prior_scale, tol)
        res = minimize(
            stop.objective, theta0, jac=True, method="L-BFGS-B",
            options={"maxiter": int(max_iters), "gtol": 0.0, "ftol": 0.0, "maxcor": 30},
            callback=stop,
        )
        theta, nit, msg = res.x, int(res.nit), str(res.message)
    f, g = _map_objective(theta, data, prior_scale)
    gnorm = float(np.linalg.norm(g))
    est = CholeskyParam(data.n, theta).reconstruct(data.window_grid)
    return MapResult(est, theta, bool(gnorm < tol), nit, gnorm, -float(f), msg)


class _GradStop:
    """Objective wrapper remembering the last gradient so the callback can stop on it."""

    def __init__(self, data, prior_scale, tol):
        self.data, self.prior_scale, self.tol = data, prior_scale, tol
        self.x = self.g = None

    def objective(self, theta):
        f, g = _map_objective(theta, self.data, self.prior_scale)
        self.x, self.g = theta.copy(), g
        return f, g

    def __call__(self, intermediate_result):
        x = intermediate_result.x
        g = self.g if self.x is not None and np.array_equal(x, self.x) else self.objective(x)[1]
        if np.linalg.norm(g) < self.tol:
            raise StopIteration


# --------------------------------------------------------------------------
# HMC
# --------------------------------------------------------------------------

def leapfrog(theta, momentum, grad, step_size, n_steps, value_and_grad):
    """Velocity-Verlet integration; returns (theta, momentum, logp, grad)."""
    theta = theta.copy()
    p = momentum + 0.5 * step_size * grad
    for i in range(n_steps):
        theta = theta + step_size * p
        logp, grad = value_and_grad(theta)
        if i < n_steps - 1:
            p = p + step_size * grad
    p = p + 0.5 * step_size * grad
    return theta, p, logp, grad


def hamiltonian_error(theta, logp, grad, momentum, step_size, n_steps, value_and_grad):
    """Energy change H(end) - H(start) of one trajectory."""
    _, p1, logp1, _ = leapfrog(theta, momentum, grad, step_size, n_steps, value_and_grad)
    return (-logp1 + 0.5 * p1 @ p1) - (-logp + 0.5 * momentum @ momentum)


class _DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014)."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * step_size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0
        self.log_eps = np.log(step_size)

    def update(self, accept_prob):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        eta = m ** -self.kappa
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def final(self):
        return float(np.exp(self.log_eps_bar))


@dataclass(eq=False)
class ReconstructionResult:
    map_estimate: DensityMatrix
    samples: list
    purity_samples: np.ndarray
    purity_mean: float
    purity_ci95: tuple
    concurrence_mean: float
    concurrence_ci95: tuple
    diagnostics: dict
    theta_samples: Optional[np.ndarray] = None
    map_result: Optional[MapResult] = None

    @property
    def concurrence_samples(self):
        return concurrence_from_purity(self.purity_samples)

    def metrics(self):
        return {
            "purity_map": purity(self.map_estimate),
            "purity_mean": self.purity_mean,
            "purity_ci95": list(self.purity_ci95),
            "concurrence_mean": self.concurrence_mean,
            "concurrence_ci95": list(self.concurrence_ci95),
            "interval": "posterior credible interval (2.5-97.5 percentiles)",
        }


def _initial_step(theta, logp, grad, value_and_grad, rng):
    eps = 0.1
    p = rng.standard_normal(theta.size)
    dh = hamiltonian_error(theta, logp, grad, p, eps, 1, value_and_grad)
    direction = 1.0 if (np.isfinite(dh) and -dh > np.log(0.5)) else -1.0
    for _ in range(60):
        eps = eps * 2.0 ** direction
        dh = hamiltonian_error(theta, logp, grad, p, eps, 1, value_and_grad)
        ok = np.isfinite(dh) and -dh > np.log(0.5)
        if (direction > 0 and not ok) or (direction < 0 and ok):
            break
    return eps


def hmc_sample(
    data,
    init=None,
    n_samples=1000,
    step_size=None,
    n_leapfrog=20,
    seed=0,
    n_warmup=500,
    thin=1,
    keep_every=10,
    target_accept=0.75,
    prior_scale=1.0,
    jitter=0.1,
    map_result=None,
    min_acceptance=0.2,
):
    """Hamiltonian Monte Carlo over the Cholesky parameters.

    Identity mass matrix; the step size is tuned by dual averaging during
    ``n_warmup`` iterations (unless ``n_warmup`` is 0 and ``step_size``
    is given) and then jittered by +/- ``jitter`` per trajectory.
    Purity is recorded for every retained draw; every ``keep_every``-th
    draw is also stored as a DensityMatrix.
    """
    if int(n_leapfrog) < 1:
        raise ConfigurationError("n_leapfrog must be at least 1")
    if step_size is not None and not step_size > 0:
        raise ConfigurationError("step_size must be positive")
    if n_samples < 1 or thin < 1 or keep_every < 1 or n_warmup < 0:
        raise ConfigurationError("n_samples, thin and keep_every must be >= 1; n_warmup >= 0")
    if n_warmup == 0 and step_size is None:
        raise ConfigurationError("without warmup an explicit step_size is required")
    rng = np.random.default_rng(seed)
    n = data.n
    start = time.perf_counter()
    if map_result is None:
        map_result = map_estimate(data, init=init, prior_scale=prior_scale)
    theta = map_result.theta.copy()

    def vg(th):
        return log_posterior_and_grad(th, data, prior_scale)

    logp, grad = vg(theta)
    eps = step_size if step_size is not None else _initial_step(theta, logp, grad, vg, rng)
    adapt = _DualAveraging(eps, target_accept) if n_warmup > 0 else None

    total = n_warmup + n_samples * thin
    accept_probs, accepted, divergences, energy_errors = [], 0, 0, []
    kept_theta, purities = [], []
    for it in range(total):
        p0 = rng.standard_normal(theta.size)
        e = eps * (1.0 + jitter * (2.0 * rng.random() - 1.0)) if jitter else eps
        th1, p1, logp1, grad1 = leapfrog(theta, p0, grad, e, int(n_leapfrog), vg)
        dh = (-logp1 + 0.5 * p1 @ p1) - (-logp + 0.5 * p0 @ p0)
        divergent = not np.isfinite(dh) or abs(dh) > DIVERGENCE_THRESHOLD
        a = 0.0 if divergent else float(min(1.0, np.exp(-dh)))
        if rng.random() < a:
            theta, logp, grad = th1, logp1, grad1
            took = True
        else:
            took = False
        if it < n_warmup:
            eps = adapt.update(a)
            if it == n_warmup - 1:
                eps = adapt.final
            continue
        divergences += int(divergent)
        accept_probs.append(a)
        accepted += int(took)
        energy_errors.append(dh if np.isfinite(dh) else np.inf)
        if (it - n_warmup) % thin == thin - 1:
            kept_theta.append(theta.copy())
            purities.append(purity(rho_from_theta(theta, n)))
    acceptance = float(np.mean(accept_probs))
    diagnostics = {
        "acceptance_rate": acceptance,
        "accepted_fraction": accepted / len(accept_probs),
        "step_size": float(eps),
        "n_leapfrog": int(n_leapfrog),
        "n_warmup": int(n_warmup),
        "n_samples": len(purities),
        "thin": int(thin),
        "chain_length": int(total),
        "divergences": int(divergences),
        "seed": seed,
        "dimension": int(theta.size),
        "window": list(data.window),
        "map_converged": map_result.converged,
        "map_iterations": map_result.iterations,
        "median_abs_energy_error": float(np.median(np.abs(energy_errors))),
        "seconds": time.perf_counter() - start,
    }
    if acceptance < min_acceptance:
        raise TuningError(f"post-warmup acceptance {acceptance:.3f} below {min_acceptance}", diagnostics)
    purities = np.array(purities)
    grid = data.window_grid
    stored = [
        DensityMatrix(grid, _hermitian(rho_from_theta(th, n))).validate()
        for th in kept_theta[keep_every - 1::keep_every]
    ]
    pm, plo, phi = _percentile_summary(purities)
    cm, clo, chi = _percentile_summary(concurrence_from_purity(purities))
    return ReconstructionResult(
        map_result.estimate, stored, purities, pm, (plo, phi), cm, (clo, chi), diagnostics,
        np.array(kept_theta), map_result,
    )


# --------------------------------------------------------------------------
# interval summaries
# --------------------------------------------------------------------------

MIN_CI_SAMPLES = 100


def _percentile_summary(values):
    values = np.asarray(values, dtype=float)
    lo, hi = np.percentile(values, [2.5, 97.5])
    # round-off can put the mean of identical values a hair outside their range
    mean = float(np.clip(np.mean(values), values.min(), values.max()))
    return mean, float(min(lo, mean)), float(max(hi, mean))


def _metric_values(samples, fn):
    if isinstance(samples, np.ndarray) and samples.ndim == 1:
        return samples
    return np.array([fn(s) for s in samples])


def purity_ci(samples):
    """Mean and 95 % equal-tailed interval of purity over posterior samples."""
    vals = _metric_values(samples, purity)
    if len(vals) < MIN_CI_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_CI_SAMPLES} samples, got {len(vals)}")
    return _percentile_summary(vals)


def concurrence_ci(samples):
    """Same as :func:`purity_ci` for concurrence, evaluated per sample."""
    if isinstance(samples, np.ndarray) and samples.ndim == 1:
        vals = concurrence_from_purity(samples)
    else:
        vals = concurrence_from_purity(_metric_values(samples, purity))
    if len(vals) < MIN_CI_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_CI_SAMPLES} samples, got {len(vals)}")
    return _percentile_summary(vals)
