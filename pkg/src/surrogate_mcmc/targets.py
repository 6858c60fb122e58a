"""Benchmark posteriors with counted log-likelihood evaluations.

Five named targets (``t1`` .. ``t5``) plus a standard-normal helper used by
the correctness tests. Each instance owns an evaluation counter that is the
source of truth for evaluation-cost metrics: every exact log-likelihood call
counts one unit, and a combined value-plus-gradient call also counts one.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .kernelgp import KernelHyper, _se_matrix, _vector

GRADIENT = "gradient"
_LOG_2PI = math.log(2.0 * math.pi)


class CapabilityError(RuntimeError):
    """Target does not support the requested operation."""


class DomainError(ValueError):
    """Requested quantity is undefined at this parameter value."""


class OdeSolverError(RuntimeError):
    """State became non-finite during integration."""


def _expit(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _norm_logpdf(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + math.log(var) + _LOG_2PI)


class TargetInstance:
    """One benchmark posterior: priors, counted likelihood, starting point."""

    def __init__(self, *, name, dim, true_params, data, capabilities,
                 log_prior_fn, log_lik_fn, initial_point_fn, proposal_scales,
                 grad_log_prior_fn=None, grad_log_lik_fn=None, mala_step=None):
        self.name = name
        self.dim = dim
        self.true_params = np.asarray(true_params, dtype=float)
        self.data = data
        self.capabilities = frozenset(capabilities)
        self.proposal_scales = np.asarray(proposal_scales, dtype=float)
        self.mala_step = mala_step
        self._log_prior_fn = log_prior_fn
        self._grad_log_prior_fn = grad_log_prior_fn
        self._log_lik_fn = log_lik_fn
        self._grad_log_lik_fn = grad_log_lik_fn
        self._initial_point_fn = initial_point_fn
        self._count = 0
        self._lock = threading.Lock()

    # -- priors (cheap, uncounted)

    def log_prior(self, theta) -> float:
        return float(self._log_prior_fn(_vector(theta, self.dim)))

    def grad_log_prior(self, theta) -> np.ndarray:
        if self._grad_log_prior_fn is None:
            raise CapabilityError(f"target {self.name} has no prior gradient")
        return np.asarray(self._grad_log_prior_fn(_vector(theta, self.dim)), dtype=float)

    # -- counted exact evaluations

    @property
    def eval_count(self) -> int:
        return self._count

    def _tick(self) -> None:
        with self._lock:
            self._count += 1

    def log_likelihood(self, theta) -> float:
        """Exact log-likelihood; -inf outside the domain. Counts one unit."""
        theta = _vector(theta, self.dim)
        self._tick()
        return float(self._log_lik_fn(theta))

    def log_likelihood_and_grad(self, theta):
        """Exact value and gradient in a single counted unit.

        Returns ``(value, None)`` when the value is -inf; the gradient is
        undefined there.
        """
        if GRADIENT not in self.capabilities:
            raise CapabilityError(f"target {self.name} provides no gradients")
        theta = _vector(theta, self.dim)
        self._tick()
        value = float(self._log_lik_fn(theta))
        if value == -math.inf:
            return value, None
        return value, np.asarray(self._grad_log_lik_fn(theta), dtype=float)

    def grad_log_likelihood(self, theta) -> np.ndarray:
        """Gradient alone, uncounted; raises in the -inf region."""
        if GRADIENT not in self.capabilities:
            raise CapabilityError(f"target {self.name} provides no gradients")
        theta = _vector(theta, self.dim)
        if float(self._log_lik_fn(theta)) == -math.inf:
            raise DomainError("gradient undefined where the log-likelihood is -inf")
        return np.asarray(self._grad_log_lik_fn(theta), dtype=float)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self._initial_point_fn(rng), dtype=float)

    @property
    def has_gradient(self) -> bool:
        return GRADIENT in self.capabilities


# ---------------------------------------------------------------------------
# t1: twisted-Gaussian "banana" density over (theta_1, theta_2)

def _build_t1(seed: int, scale) -> TargetInstance:
    a, b = 0.2, 2.0

    def log_lik(theta):
        u = theta[1] / a + b * theta[0] ** 2 - 100.0 * b
        return -theta[0] ** 2 / 200.0 - 0.5 * u * u

    def grad_log_lik(theta):
        u = theta[1] / a + b * theta[0] ** 2 - 100.0 * b
        return np.array([-theta[0] / 100.0 - 2.0 * b * theta[0] * u, -u / a])

    return TargetInstance(
        name="t1", dim=2, true_params=(a, b), data=None,
        capabilities={GRADIENT},
        log_prior_fn=lambda theta: 0.0,
        grad_log_prior_fn=lambda theta: np.zeros(2),
        log_lik_fn=log_lik, grad_log_lik_fn=grad_log_lik,
        initial_point_fn=lambda rng: rng.uniform(-2.0, 2.0, size=2),
        proposal_scales=(0.1, 0.1), mala_step=0.8)


# ---------------------------------------------------------------------------
# t2: saturation-curve regression y = a x / (x + b) + noise, theta = (a, b, sigma)

_T2_X = np.array([28.0, 55.0, 83.0, 110.0, 138.0, 225.0, 375.0])


@dataclass(frozen=True)
class RegressionData:
    x: np.ndarray
    y: np.ndarray


def _build_t2(seed: int, scale) -> TargetInstance:
    rng = np.random.default_rng(seed)
    true = np.array([0.14, 50.0, 0.1])
    y = true[0] * _T2_X / (_T2_X + true[1]) + true[2] * rng.standard_normal(_T2_X.shape[0])
    data = RegressionData(x=_T2_X.copy(), y=y)

    def log_prior(theta):
        a, b, sigma = theta
        if sigma <= 0:
            return -math.inf
        ls = math.log(sigma)
        return (_norm_logpdf(a, 3.0, 1.0) + _norm_logpdf(b, 30.0, 225.0)
                + _norm_logpdf(ls, -2.0, 1.0) - ls)

    def grad_log_prior(theta):
        a, b, sigma = theta
        ls = math.log(sigma)
        return np.array([-(a - 3.0), -(b - 30.0) / 225.0, -((ls + 2.0) + 1.0) / sigma])

    def log_lik(theta):
        a, b, sigma = theta
        if sigma <= 0:
            return -math.inf
        mean = a * data.x / (data.x + b)
        return float(np.sum(_norm_logpdf(data.y, mean, sigma**2)))

    def grad_log_lik(theta):
        a, b, sigma = theta
        mean = a * data.x / (data.x + b)
        resid = data.y - mean
        d_a = resid / sigma**2 * (data.x / (data.x + b))
        d_b = resid / sigma**2 * (-a * data.x / (data.x + b) ** 2)
        d_s = -1.0 / sigma + resid**2 / sigma**3
        return np.array([d_a.sum(), d_b.sum(), d_s.sum()])

    def initial_point(rng):
        return np.array([0.15, 30.0, 0.1]) + rng.standard_normal(3) * np.array([0.02, 3.0, 0.01])

    return TargetInstance(
        name="t2", dim=3, true_params=true, data=data,
        capabilities={GRADIENT},
        log_prior_fn=log_prior, grad_log_prior_fn=grad_log_prior,
        log_lik_fn=log_lik, grad_log_lik_fn=grad_log_lik,
        initial_point_fn=initial_point,
        proposal_scales=(0.07, 20.0, 0.04), mala_step=0.5)


# ---------------------------------------------------------------------------
# t3: marginal hyperposterior of a latent-Gaussian binary classifier

@dataclass(frozen=True)
class ClassifierData:
    x: np.ndarray
    y: np.ndarray


def _laplace_mode(kmat: np.ndarray, y: np.ndarray, tol: float = 1e-8,
                  max_iter: int = 50):
    """Newton iteration to the posterior mode of the latent field.

    Returns ``(f, a, converged)`` with ``a = K^-1 f`` computed without
    factorising K itself.
    """
    n = y.shape[0]
    f = np.zeros(n)
    a = np.zeros(n)
    eye = np.eye(n)
    for _ in range(max_iter):
        pi = _expit(f)
        w = pi * (1.0 - pi)
        sw = np.sqrt(w)
        bmat = eye + sw[:, None] * kmat * sw[None, :]
        try:
            chol = np.linalg.cholesky(bmat)
        except np.linalg.LinAlgError:
            return f, a, False
        b = w * f + (y - pi)
        kb = kmat @ b
        inner = np.linalg.solve(chol.T, np.linalg.solve(chol, sw * kb))
        a = b - sw * inner
        f_new = kmat @ a
        if not np.all(np.isfinite(f_new)):
            return f, a, False
        step = float(np.max(np.abs(f_new - f)))
        f = f_new
        if step < tol:
            return f, a, True
    return f, a, False


def laplace_marginal_ll(data: ClassifierData, hyper_theta) -> float:
    """Laplace-approximate log marginal likelihood of the classifier.

    ``hyper_theta`` is (log lengthscale_1, log lengthscale_2, log signal_variance).
    Newton divergence is surfaced as -inf.
    """
    hyper_theta = _vector(hyper_theta, 3)
    ls = np.exp(hyper_theta[:2])
    sv = math.exp(hyper_theta[2])
    hyper = KernelHyper(lengthscales=ls, signal_variance=sv)
    kmat = _se_matrix(data.x, data.x, hyper)
    f, a, converged = _laplace_mode(kmat, data.y)
    if not converged:
        return -math.inf
    pi_terms = data.y * f - np.logaddexp(0.0, f)
    w = _expit(f) * (1.0 - _expit(f))
    sw = np.sqrt(w)
    bmat = np.eye(data.y.shape[0]) + sw[:, None] * kmat * sw[None, :]
    try:
        chol = np.linalg.cholesky(bmat)
    except np.linalg.LinAlgError:
        return -math.inf
    return float(-0.5 * (a @ f) + pi_terms.sum() - np.sum(np.log(np.diag(chol))))


def _build_t3(seed: int, scale) -> TargetInstance:
    n = 200 if scale is None else int(scale)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    true_ls = rng.uniform(0.1, 1.0, size=2)
    true_sv = 5.0
    hyper = KernelHyper(lengthscales=true_ls, signal_variance=true_sv)
    kmat = _se_matrix(x, x, hyper) + 1e-10 * true_sv * np.eye(n)
    latent = np.linalg.cholesky(kmat) @ rng.standard_normal(n)
    y = (rng.uniform(size=n) < _expit(latent)).astype(float)
    data = ClassifierData(x=x, y=y)
    prior_var = 10.0

    def log_prior(theta):
        return float(np.sum(_norm_logpdf(theta, 0.0, prior_var)))

    def log_lik(theta):
        # sampled coordinates are (log l1, log l2, log sigma)
        return laplace_marginal_ll(data, np.array([theta[0], theta[1], 2.0 * theta[2]]))

    true_params = np.array([math.log(true_ls[0]), math.log(true_ls[1]),
                            0.5 * math.log(true_sv)])

    def initial_point(rng):
        return rng.standard_normal(3) * 0.3

    return TargetInstance(
        name="t3", dim=3, true_params=true_params, data=data,
        capabilities=set(),
        log_prior_fn=log_prior, log_lik_fn=log_lik,
        initial_point_fn=initial_point,
        proposal_scales=(0.45, 0.45, 0.45))


# ---------------------------------------------------------------------------
# t4: SIR compartment model with lognormal observation noise

@dataclass(frozen=True)
class SirConfig:
    s0: float = 0.99
    i0: float = 0.01
    times: tuple = tuple(float(t) for t in range(1, 21))
    true_beta: float = 0.4
    true_gamma: float = 0.1
    true_sigma_s: float = 0.1
    true_sigma_i: float = 0.1
    beta_prior_mean: float = 0.4
    beta_prior_sd: float = 0.5
    gamma_prior_mean: float = 0.1
    gamma_prior_sd: float = 0.2
    log_sigma_prior_mean: float = math.log(0.1)
    log_sigma_prior_sd: float = 0.5
    max_step: float = 0.02


@dataclass(frozen=True)
class SirData:
    config: SirConfig
    obs_s: np.ndarray
    obs_i: np.ndarray


def sir_solve(beta: float, gamma: float, s0: float, i0: float, times,
              max_step: float = 0.02):
    """Classical fourth-order Runge-Kutta on the SIR system, fixed step.

    Each interval between requested times is subdivided evenly so the grid
    lands exactly on them; ``max_step`` bounds the step length. The three
    stage derivatives share their bilinear terms, so S + I + R is conserved
    to accumulated roundoff.
    """
    beta = float(beta)
    gamma = float(gamma)
    if beta < 0 or gamma < 0:
        raise DomainError("beta and gamma must be non-negative")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and non-empty")
    if times[0] <= 0:
        raise ValueError("times must be positive; integration starts at 0")
    s, i, r = float(s0), float(i0), 0.0
    out_s = np.empty(times.shape[0])
    out_i = np.empty(times.shape[0])
    out_r = np.empty(times.shape[0])
    t_prev = 0.0
    for idx, t in enumerate(times):
        span = t - t_prev
        nsteps = max(1, int(math.ceil(span / max_step - 1e-12)))
        dt = span / nsteps
        for _ in range(nsteps):
            a1 = beta * s * i
            b1 = gamma * i
            s1, i1, r1 = -a1, a1 - b1, b1
            sm = s + 0.5 * dt * s1
            im = i + 0.5 * dt * i1
            a2 = beta * sm * im
            b2 = gamma * im
            s2, i2, r2 = -a2, a2 - b2, b2
            sm = s + 0.5 * dt * s2
            im = i + 0.5 * dt * i2
            a3 = beta * sm * im
            b3 = gamma * im
            s3, i3, r3 = -a3, a3 - b3, b3
            sm = s + dt * s3
            im = i + dt * i3
            a4 = beta * sm * im
            b4 = gamma * im
            s4, i4, r4 = -a4, a4 - b4, b4
            s += dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
            i += dt / 6.0 * (i1 + 2.0 * i2 + 2.0 * i3 + i4)
            r += dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
        if not (math.isfinite(s) and math.isfinite(i) and math.isfinite(r)):
            raise OdeSolverError(f"non-finite state at t={t:g}")
        out_s[idx] = s
        out_i[idx] = i
        out_r[idx] = r
        t_prev = t
    return out_s, out_i, out_r


def _build_t4(seed: int, scale) -> TargetInstance:
    cfg = SirConfig()
    rng = np.random.default_rng(seed)
    times = np.asarray(cfg.times)
    s_true, i_true, _ = sir_solve(cfg.true_beta, cfg.true_gamma, cfg.s0, cfg.i0,
                                  times, cfg.max_step)
    obs_s = s_true * np.exp(cfg.true_sigma_s * rng.standard_normal(times.shape[0]))
    obs_i = i_true * np.exp(cfg.true_sigma_i * rng.standard_normal(times.shape[0]))
    data = SirData(config=cfg, obs_s=obs_s, obs_i=obs_i)
    log_obs_s = np.log(obs_s)
    log_obs_i = np.log(obs_i)

    def log_prior(theta):
        beta, gamma, ls1, ls2 = theta
        return float(_norm_logpdf(beta, cfg.beta_prior_mean, cfg.beta_prior_sd**2)
                     + _norm_logpdf(gamma, cfg.gamma_prior_mean, cfg.gamma_prior_sd**2)
                     + _norm_logpdf(ls1, cfg.log_sigma_prior_mean, cfg.log_sigma_prior_sd**2)
                     + _norm_logpdf(ls2, cfg.log_sigma_prior_mean, cfg.log_sigma_prior_sd**2))

    def log_lik(theta):
        beta, gamma, ls1, ls2 = theta
        if beta < 0 or gamma < 0:
            return -math.inf
        try:
            s, i, _ = sir_solve(beta, gamma, cfg.s0, cfg.i0, times, cfg.max_step)
        except OdeSolverError:
            return -math.inf
        if np.any(s <= 0) or np.any(i <= 0):
            return -math.inf
        var_s = math.exp(2.0 * ls1)
        var_i = math.exp(2.0 * ls2)
        ll_s = np.sum(_norm_logpdf(log_obs_s, np.log(s), var_s)) - log_obs_s.sum()
        ll_i = np.sum(_norm_logpdf(log_obs_i, np.log(i), var_i)) - log_obs_i.sum()
        return float(ll_s + ll_i)

    true_params = np.array([cfg.true_beta, cfg.true_gamma,
                            math.log(cfg.true_sigma_s), math.log(cfg.true_sigma_i)])

    def initial_point(rng):
        base = np.array([cfg.true_beta, cfg.true_gamma,
                         cfg.log_sigma_prior_mean, cfg.log_sigma_prior_mean])
        return base + rng.standard_normal(4) * np.array([0.05, 0.02, 0.2, 0.2])

    return TargetInstance(
        name="t4", dim=4, true_params=true_params, data=data,
        capabilities=set(),
        log_prior_fn=log_prior, log_lik_fn=log_lik,
        initial_point_fn=initial_point,
        proposal_scales=(0.02, 0.008, 0.15, 0.15))


# ---------------------------------------------------------------------------
# t5: Bayesian logistic regression, intercept plus four standard-normal covariates

@dataclass(frozen=True)
class LogisticData:
    x: np.ndarray
    y: np.ndarray


def _build_t5(seed: int, scale) -> TargetInstance:
    n = 200 if scale is None else int(scale)
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.standard_normal((n, 4))])
    true_beta = rng.standard_normal(5)
    y = (rng.uniform(size=n) < _expit(x @ true_beta)).astype(float)
    data = LogisticData(x=x, y=y)
    prior_var = 100.0

    def log_prior(theta):
        return float(np.sum(_norm_logpdf(theta, 0.0, prior_var)))

    def grad_log_prior(theta):
        return -theta / prior_var

    def log_lik(theta):
        s = data.x @ theta
        return float(np.sum(data.y * s - np.logaddexp(0.0, s)))

    def grad_log_lik(theta):
        s = data.x @ theta
        return data.x.T @ (data.y - _expit(s))

    def initial_point(rng):
        return rng.standard_normal(5) * 0.1

    return TargetInstance(
        name="t5", dim=5, true_params=true_beta, data=data,
        capabilities={GRADIENT},
        log_prior_fn=log_prior, grad_log_prior_fn=grad_log_prior,
        log_lik_fn=log_lik, grad_log_lik_fn=grad_log_lik,
        initial_point_fn=initial_point,
        proposal_scales=(0.16, 0.16, 0.16, 0.16, 0.16), mala_step=1.9)


# ---------------------------------------------------------------------------

def standard_normal_target(dim: int = 1) -> TargetInstance:
    """Unit-Gaussian log-likelihood with a flat prior; used by chain tests."""

    def log_lik(theta):
        return float(-0.5 * (theta @ theta) - 0.5 * dim * _LOG_2PI)

    return TargetInstance(
        name=f"gauss{dim}d", dim=dim, true_params=np.zeros(dim), data=None,
        capabilities={GRADIENT},
        log_prior_fn=lambda theta: 0.0,
        grad_log_prior_fn=lambda theta: np.zeros(dim),
        log_lik_fn=log_lik, grad_log_lik_fn=lambda theta: -theta,
        initial_point_fn=lambda rng: np.zeros(dim),
        proposal_scales=np.full(dim, 2.4 / math.sqrt(dim)), mala_step=1.4)


_BUILDERS = {"t1": _build_t1, "t2": _build_t2, "t3": _build_t3,
             "t4": _build_t4, "t5": _build_t5}


def make_target(name: str, seed: int, scale=None) -> TargetInstance:
    """Construct a named benchmark target with seeded synthetic data."""
    key = str(name).lower()
    if key not in _BUILDERS:
        raise ValueError(f"unknown target {name!r}; expected one of {sorted(_BUILDERS)}")
    return _BUILDERS[key](int(seed), scale)
