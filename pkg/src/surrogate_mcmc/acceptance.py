"""Acceptance-ratio computations for two-stage surrogate MCMC.

Stage 1 screens a proposal with the surrogate marginalised out of the
acceptance ratio: for a Gaussian predictive value the marginal likelihood
factor is lognormal, contributing exp(mean + variance/2). Stage 2 corrects
with the exact log-likelihood so the composed kernel targets the exact
posterior. All ratios are formed in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernelgp import SurrogatePrediction, _vector


class StageOrderError(RuntimeError):
    """Stage-2 correction requested for a proposal stage 1 did not accept."""


@dataclass(frozen=True)
class StateSnapshot:
    """Exact quantities cached for the current chain state."""

    theta: np.ndarray
    exact_ll: float
    log_prior: float
    exact_grad_ll: np.ndarray | None = None

    def __post_init__(self):
        theta = _vector(self.theta)
        object.__setattr__(self, "theta", theta)
        if not math.isfinite(self.exact_ll):
            raise ValueError("exact_ll must be finite")
        if not math.isfinite(self.log_prior):
            raise ValueError("log_prior must be finite")
        if self.exact_grad_ll is not None:
            g = _vector(self.exact_grad_ll, theta.shape[0])
            if not np.all(np.isfinite(g)):
                raise ValueError("exact_grad_ll must be finite")
            object.__setattr__(self, "exact_grad_ll", g)


@dataclass(frozen=True)
class Stage1Decision:
    """Stage-1 log acceptance with the prediction cached for stage 2."""

    log_alpha1_forward: float
    log_ratio_r: float
    accepted: bool
    prediction: SurrogatePrediction | None


@dataclass(frozen=True)
class MalaProposalParams:
    """Langevin proposal: step size ``delta`` and SPD preconditioner ``precond``.

    The proposal is N(theta + 0.5 * delta * precond @ drift, delta * precond).
    """

    delta: float
    precond: np.ndarray
    precond_sqrt: np.ndarray

    def __post_init__(self):
        if not math.isfinite(self.delta) or self.delta <= 0:
            raise ValueError("delta must be finite and positive")
        lam = np.atleast_2d(np.asarray(self.precond, dtype=float))
        sq = np.atleast_2d(np.asarray(self.precond_sqrt, dtype=float))
        if lam.shape[0] != lam.shape[1] or sq.shape != lam.shape:
            raise ValueError("preconditioner blocks must be square and consistent")
        if not np.allclose(sq @ sq.T, lam, atol=1e-10 * max(1.0, float(np.abs(lam).max()))):
            raise ValueError("precond_sqrt @ precond_sqrt.T must reproduce precond")
        object.__setattr__(self, "precond", lam)
        object.__setattr__(self, "precond_sqrt", sq)

    @classmethod
    def from_matrix(cls, delta: float, precond) -> "MalaProposalParams":
        lam = np.atleast_2d(np.asarray(precond, dtype=float))
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ValueError("precond must be a square matrix")
        if not np.allclose(lam, lam.T, atol=1e-12 * max(1.0, float(np.abs(lam).max()))):
            raise ValueError("precond must be symmetric")
        evals, evecs = np.linalg.eigh(lam)
        if evals.min() <= 0:
            raise ValueError("precond must be positive definite")
        sqrt = (evecs * np.sqrt(evals)) @ evecs.T
        return cls(delta=float(delta), precond=lam, precond_sqrt=sqrt)

    @classmethod
    def diagonal(cls, delta: float, diag) -> "MalaProposalParams":
        diag = _vector(diag)
        if np.any(diag <= 0):
            raise ValueError("diagonal preconditioner entries must be positive")
        return cls(delta=float(delta), precond=np.diag(diag),
                   precond_sqrt=np.diag(np.sqrt(diag)))

    @property
    def dim(self) -> int:
        return self.precond.shape[0]


def _require_finite(name: str, *values) -> None:
    for v in values:
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite value in {name}: {v!r}")


def lognormal_mean_log(mean: float, variance: float) -> float:
    """log E[exp(X)] for X ~ Normal(mean, variance), i.e. mean + variance / 2."""
    _require_finite("lognormal_mean_log", mean, variance)
    if variance < 0:
        raise ValueError("variance must be non-negative")
    return float(mean) + 0.5 * float(variance)


def proposal_log_density(residual, params: MalaProposalParams) -> float:
    """Log density of N(0, delta * precond) at ``residual``."""
    r = _vector(residual, params.dim)
    w = solve_triangular(np.linalg.cholesky(params.precond), r, lower=True,
                         check_finite=False)
    quad = float(w @ w) / params.delta
    logdet = (params.dim * math.log(params.delta)
              + 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(params.precond))))))
    return -0.5 * (quad + logdet + params.dim * math.log(2.0 * math.pi))


def mala_drift(theta, grad_ll, grad_log_prior, params: MalaProposalParams) -> np.ndarray:
    """theta + 0.5 * delta * precond @ (grad_ll + grad_log_prior)."""
    theta = _vector(theta, params.dim)
    g = _vector(grad_ll, params.dim) + _vector(grad_log_prior, params.dim)
    return theta + 0.5 * params.delta * (params.precond @ g)


# ---------------------------------------------------------------------------
# random-walk stages

def stage1_log_alpha_mh(current: StateSnapshot, proposal_theta, pred: SurrogatePrediction,
                        proposal_log_prior: float, log_q_ratio: float = 0.0) -> Stage1Decision:
    """Stage-1 log acceptance for a random-walk proposal.

    The surrogate value enters through its lognormal mean, exp(mean + var/2);
    the denominator uses the exact cached quantities of the current state.
    ``log_q_ratio`` is log q(current|proposal) - log q(proposal|current).
    """
    _require_finite("stage1_log_alpha_mh", pred.mean, pred.variance,
                    proposal_log_prior, log_q_ratio)
    log_ratio_r = (lognormal_mean_log(pred.mean, pred.variance)
                   + float(proposal_log_prior) + float(log_q_ratio)
                   - current.exact_ll - current.log_prior)
    return Stage1Decision(log_alpha1_forward=min(0.0, log_ratio_r),
                          log_ratio_r=log_ratio_r, accepted=False, prediction=pred)


def stage2_log_alpha_mh(current: StateSnapshot, proposal_exact_ll: float,
                        stage1: Stage1Decision, proposal_log_prior: float,
                        log_q_ratio: float = 0.0) -> float:
    """Stage-2 log acceptance given the exact log-likelihood at the proposal.

    Evaluated both as the full second-stage ratio (with the reverse stage-1
    acceptance computed from the same cached surrogate quantities) and in the
    simplified form min(0, exact - mean - var/2); the two must agree.
    """
    if not stage1.accepted:
        raise StageOrderError("stage 2 requires a stage-1 accepted proposal")
    _require_finite("stage2_log_alpha_mh", proposal_log_prior, log_q_ratio)
    proposal_exact_ll = float(proposal_exact_ll)
    if math.isnan(proposal_exact_ll) or proposal_exact_ll == math.inf:
        raise ValueError("proposal_exact_ll must not be NaN or +inf")
    pred = stage1.prediction
    surrogate_log = lognormal_mean_log(pred.mean, pred.variance)
    simplified = min(0.0, proposal_exact_ll - surrogate_log)

    # full form: exact-likelihood ratio times reverse/forward stage-1 ratio
    log_alpha1_reverse = min(0.0, -stage1.log_ratio_r)
    direct = min(0.0, (proposal_exact_ll + proposal_log_prior + log_q_ratio
                       + log_alpha1_reverse)
                 - (current.exact_ll + current.log_prior
                    + stage1.log_alpha1_forward))
    if math.isfinite(direct) or math.isfinite(simplified):
        scale = max(1.0, abs(simplified) if math.isfinite(simplified) else 1.0)
        assert abs(direct - simplified) <= 1e-9 * scale, \
            f"stage-2 forms disagree: {direct} vs {simplified}"
    return simplified


# ---------------------------------------------------------------------------
# Langevin stages

def gaussian_quadratic_expectation(m, cov, w: float, u, smat) -> float:
    """log E[exp(w + u'g - 0.5 g'S g)] for g ~ N(m, K), in closed form.

    Equals w + u'm - 0.5 m'S m + 0.5 (u - S m)'((I + K S)^-1 K)(u - S m)
    - 0.5 log det(I + K S); valid for K positive semi-definite and S PSD.
    """
    m = _vector(m)
    n = m.shape[0]
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    u = _vector(u, n)
    smat = np.atleast_2d(np.asarray(smat, dtype=float))
    if cov.shape != (n, n) or smat.shape != (n, n):
        raise ValueError("covariance and quadratic blocks must be n x n")
    _require_finite("gaussian_quadratic_expectation", m, cov, w, u, smat)
    eye = np.eye(n)
    ks = eye + cov @ smat
    sign, logdet = np.linalg.slogdet(ks)
    if sign <= 0:
        raise ValueError("I + K S must have positive determinant")
    v = u - smat @ m
    middle = np.linalg.solve(ks, cov)
    return (float(w) + float(u @ m) - 0.5 * float(m @ smat @ m)
            + 0.5 * float(v @ middle @ v) - 0.5 * logdet)


def mala_marginal_log_factor(mu: float, grad_mu, joint_cov, c,
                             params: MalaProposalParams) -> float:
    """log E[exp(f) q(theta'| theta* + 0.5 delta precond (g + prior drift))]
    minus log q at the prior-drift-only mean, for (f, g) jointly Gaussian.

    ``c`` is theta' - theta* - 0.5 * delta * precond @ grad_log_prior(theta*).
    Assembled from the Gaussian quadratic-exponential closed form with
    u = [1, c/2] and S = blockdiag(0, delta/4 * precond).
    """
    c = _vector(c, params.dim)
    d = params.dim
    m = np.concatenate([[float(mu)], _vector(grad_mu, d)])
    u = np.concatenate([[1.0], 0.5 * c])
    smat = np.zeros((1 + d, 1 + d))
    smat[1:, 1:] = 0.25 * params.delta * params.precond
    return gaussian_quadratic_expectation(m, joint_cov, 0.0, u, smat)


def mala_marginal_log_factor_alt(mu: float, grad_mu, joint_cov, c,
                                 params: MalaProposalParams) -> float:
    """Alternative specialised closed form for the same marginal factor.

    Retained for comparison only: it disagrees with the Monte-Carlo oracle
    (see tests), so the samplers never call it.
    """
    c = _vector(c, params.dim)
    grad_mu = _vector(grad_mu, params.dim)
    cov = np.atleast_2d(np.asarray(joint_cov, dtype=float))
    lam = params.precond
    delta = params.delta
    v_tail = 0.5 * delta * np.linalg.solve(lam, c - 0.25 * delta * (lam @ grad_mu))
    v = np.concatenate([[1.0], v_tail])
    stacked = np.concatenate([[float(mu)], lam @ grad_mu])
    return (float(v @ stacked) + 0.5 * float(v @ cov @ v)
            + 0.125 * delta**2 * float(grad_mu @ lam @ grad_mu))


def stage1_log_alpha_mala(current: StateSnapshot, proposal_theta,
                          joint_pred: SurrogatePrediction, prior_grads,
                          proposal_log_prior: float,
                          params: MalaProposalParams) -> Stage1Decision:
    """Stage-1 log acceptance for a Langevin proposal with the joint surrogate
    (value and gradient) marginalised out of the numerator.

    The denominator is deterministic: the current state's exact value and
    gradient define both its likelihood factor and the forward proposal
    density. ``prior_grads`` is (grad_log_prior(current), grad_log_prior(proposal)).
    """
    if current.exact_grad_ll is None:
        raise ValueError("current state must carry an exact gradient")
    if joint_pred.grad_mean is None or joint_pred.joint_cov is None:
        raise ValueError("stage 1 for Langevin proposals needs a joint prediction")
    theta_star = _vector(proposal_theta, params.dim)
    grad_prior_current, grad_prior_star = prior_grads
    grad_prior_current = _vector(grad_prior_current, params.dim)
    grad_prior_star = _vector(grad_prior_star, params.dim)
    _require_finite("stage1_log_alpha_mala", joint_pred.mean, joint_pred.grad_mean,
                    joint_pred.joint_cov, proposal_log_prior,
                    grad_prior_current, grad_prior_star)

    c = current.theta - theta_star - 0.5 * params.delta * (params.precond @ grad_prior_star)
    log_num = (float(proposal_log_prior)
               + mala_marginal_log_factor(joint_pred.mean, joint_pred.grad_mean,
                                          joint_pred.joint_cov, c, params)
               + proposal_log_density(c, params))

    forward_mean = mala_drift(current.theta, current.exact_grad_ll,
                              grad_prior_current, params)
    log_den = (current.exact_ll + current.log_prior
               + proposal_log_density(theta_star - forward_mean, params))
    log_ratio_r = log_num - log_den
    return Stage1Decision(log_alpha1_forward=min(0.0, log_ratio_r),
                          log_ratio_r=log_ratio_r, accepted=False,
                          prediction=joint_pred)


def stage2_log_alpha_mala(current: StateSnapshot, proposal_theta,
                          proposal_exact_ll: float, proposal_exact_grad_ll,
                          stage1: Stage1Decision, prior_grads,
                          proposal_log_prior: float,
                          params: MalaProposalParams) -> float:
    """Stage-2 log acceptance for a Langevin proposal.

    Uses exact values and gradients at both endpoints; the reverse stage-1
    acceptance is evaluated under the same pre-update surrogate, where the
    current state's quantities are exact with zero variance.
    """
    if not stage1.accepted:
        raise StageOrderError("stage 2 requires a stage-1 accepted proposal")
    proposal_exact_ll = float(proposal_exact_ll)
    if math.isnan(proposal_exact_ll) or proposal_exact_ll == math.inf:
        raise ValueError("proposal_exact_ll must not be NaN or +inf")
    if proposal_exact_ll == -math.inf:
        return -math.inf
    theta_star = _vector(proposal_theta, params.dim)
    grad_star = _vector(proposal_exact_grad_ll, params.dim)
    grad_prior_current, grad_prior_star = prior_grads
    _require_finite("stage2_log_alpha_mala", proposal_log_prior, grad_star,
                    grad_prior_current, grad_prior_star)

    forward_mean = mala_drift(current.theta, current.exact_grad_ll,
                              grad_prior_current, params)
    reverse_mean = mala_drift(theta_star, grad_star, grad_prior_star, params)
    log_q_forward = proposal_log_density(theta_star - forward_mean, params)
    log_q_reverse = proposal_log_density(current.theta - reverse_mean, params)
    exact_log_ratio = ((proposal_exact_ll + proposal_log_prior + log_q_reverse)
                       - (current.exact_ll + current.log_prior + log_q_forward))
    log_alpha1_reverse = min(0.0, -exact_log_ratio)
    return min(0.0, exact_log_ratio + log_alpha1_reverse - stage1.log_alpha1_forward)
