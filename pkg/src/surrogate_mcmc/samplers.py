"""Chain drivers: plain and Langevin Metropolis-Hastings, each with a
two-stage variant that screens proposals through the surrogate before
spending an exact evaluation.

Bookkeeping rules the two-stage drivers maintain:
  * the surrogate's constant prior mean is refreshed to the exact
    log-likelihood of the current state every time the state changes;
  * exact quantities for the current state are always served from the
    evaluation ledger, never re-predicted;
  * every stage-1 acceptance triggers exactly one exact evaluation, and the
    result is appended to the ledger (finite values only);
  * kernel hyperparameters are re-optimised every ``hyper_update_every``
    ledger growths during burn-in and frozen afterwards.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import kernelgp
from .acceptance import (MalaProposalParams, StateSnapshot, mala_drift,
                         proposal_log_density, stage1_log_alpha_mala,
                         stage1_log_alpha_mh, stage2_log_alpha_mala,
                         stage2_log_alpha_mh)
from .kernelgp import Evaluation, EvaluationLedger, KernelHyper, _vector
from .targets import TargetInstance

_INIT_REDRAW_LIMIT = 20


class InitializationError(RuntimeError):
    """Chain could not be started from the supplied point."""


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by all drivers; Langevin runs also need ``mala``."""

    proposal_scales: np.ndarray
    n_iters: int = 2500
    n_burnin: int = 500
    mala: MalaProposalParams | None = None
    gp_init_count: int = 3
    hyper_update_every: int = 25
    hyper_opt_budget: int = 50
    ledger_cap: int | None = None
    init_hyper: KernelHyper | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "proposal_scales",
                           _vector(self.proposal_scales))
        if np.any(self.proposal_scales <= 0) or not np.all(np.isfinite(self.proposal_scales)):
            raise ValueError("proposal_scales must be finite and positive")
        if self.n_iters <= 0:
            raise ValueError("n_iters must be positive")
        if not 0 <= self.n_burnin < self.n_iters:
            raise ValueError("need 0 <= n_burnin < n_iters")
        if self.gp_init_count < 1:
            raise ValueError("gp_init_count must be at least 1")
        if self.hyper_update_every < 1:
            raise ValueError("hyper_update_every must be at least 1")
        if self.hyper_opt_budget < 0:
            raise ValueError("hyper_opt_budget must be non-negative")
        if self.ledger_cap is not None and self.ledger_cap < self.gp_init_count:
            raise ValueError("ledger_cap below gp_init_count")

    @property
    def dim(self) -> int:
        return self.proposal_scales.shape[0]


@dataclass
class ChainTrace:
    """Per-iteration record of one chain plus run-level summary fields.

    ``thetas[k]`` is the state after iteration ``k``. For two-stage runs
    ``stage2_log_alpha`` is NaN on iterations stage 1 rejected; baselines
    mirror their single exact decision into both stages.
    """

    thetas: np.ndarray
    stage1_log_alpha: np.ndarray
    stage1_accepted: np.ndarray
    stage2_log_alpha: np.ndarray
    stage2_accepted: np.ndarray
    full_eval: np.ndarray
    n_burnin: int
    two_stage: bool
    algo: str
    seed: int
    gp_init_evals: int
    ledger_size: int
    wall_clock_seconds: float

    @property
    def n_iters(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def n_full_evals(self) -> int:
        """Exact evaluations attributable to the run: per-iteration ones plus
        the surrogate's initial design (baselines: one per iteration)."""
        return int(self.full_eval.sum()) + self.gp_init_evals

    def post_burnin(self) -> np.ndarray:
        return self.thetas[self.n_burnin:]


class _TraceBuilder:
    def __init__(self, n_iters: int, dim: int):
        self.thetas = np.empty((n_iters, dim))
        self.s1_log_alpha = np.empty(n_iters)
        self.s1_accepted = np.zeros(n_iters, dtype=bool)
        self.s2_log_alpha = np.full(n_iters, np.nan)
        self.s2_accepted = np.zeros(n_iters, dtype=bool)
        self.full_eval = np.zeros(n_iters, dtype=bool)

    def record(self, k, theta, s1a, s1acc, s2a, s2acc, evaluated):
        self.thetas[k] = theta
        self.s1_log_alpha[k] = s1a
        self.s1_accepted[k] = s1acc
        self.s2_log_alpha[k] = s2a
        self.s2_accepted[k] = s2acc
        self.full_eval[k] = evaluated

    def finish(self, config: SamplerConfig, algo: str, two_stage: bool,
               gp_init_evals: int, ledger_size: int, started: float) -> ChainTrace:
        return ChainTrace(thetas=self.thetas, stage1_log_alpha=self.s1_log_alpha,
                          stage1_accepted=self.s1_accepted,
                          stage2_log_alpha=self.s2_log_alpha,
                          stage2_accepted=self.s2_accepted, full_eval=self.full_eval,
                          n_burnin=config.n_burnin, two_stage=two_stage, algo=algo,
                          seed=config.seed, gp_init_evals=gp_init_evals,
                          ledger_size=ledger_size,
                          wall_clock_seconds=time.perf_counter() - started)


def _mk_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))


def _accept(rng: np.random.Generator, log_alpha: float) -> bool:
    u = rng.uniform()
    if u == 0.0:
        return log_alpha > -math.inf
    return math.log(u) < log_alpha


def _start_state(target: TargetInstance, theta0, *, with_grad: bool) -> StateSnapshot:
    theta0 = _vector(theta0, target.dim)
    log_prior = target.log_prior(theta0)
    if not math.isfinite(log_prior):
        raise InitializationError("starting point has zero prior density")
    if with_grad:
        ll, grad = target.log_likelihood_and_grad(theta0)
    else:
        ll, grad = target.log_likelihood(theta0), None
    if not math.isfinite(ll):
        raise InitializationError("non-finite log-likelihood at the starting point")
    return StateSnapshot(theta=theta0, exact_ll=ll, log_prior=log_prior,
                         exact_grad_ll=grad)


# ---------------------------------------------------------------------------
# baselines

def run_mh(target: TargetInstance, config: SamplerConfig, theta0) -> ChainTrace:
    """Random-walk Metropolis-Hastings with one exact evaluation per iteration."""
    _check_dims(target, config)
    rng = _mk_rng(config.seed)
    state = _start_state(target, theta0, with_grad=False)
    tr = _TraceBuilder(config.n_iters, target.dim)
    started = time.perf_counter()
    for k in range(config.n_iters):
        proposal = state.theta + config.proposal_scales * rng.standard_normal(target.dim)
        log_prior = target.log_prior(proposal)
        ll = target.log_likelihood(proposal)
        log_alpha = min(0.0, (ll + log_prior) - (state.exact_ll + state.log_prior))
        accepted = _accept(rng, log_alpha)
        if accepted:
            state = StateSnapshot(theta=proposal, exact_ll=ll, log_prior=log_prior)
        tr.record(k, state.theta, log_alpha, accepted, log_alpha, accepted, True)
    return tr.finish(config, "mh", False, 0, 0, started)


def run_mala(target: TargetInstance, config: SamplerConfig, theta0) -> ChainTrace:
    """Langevin proposals with the exact-gradient drift and exact correction."""
    _check_dims(target, config)
    params = _require_mala(target, config)
    rng = _mk_rng(config.seed)
    state = _start_state(target, theta0, with_grad=True)
    tr = _TraceBuilder(config.n_iters, target.dim)
    started = time.perf_counter()
    sqrt_delta = math.sqrt(params.delta)
    for k in range(config.n_iters):
        grad_prior = target.grad_log_prior(state.theta)
        forward_mean = mala_drift(state.theta, state.exact_grad_ll, grad_prior, params)
        noise = params.precond_sqrt @ rng.standard_normal(target.dim)
        proposal = forward_mean + sqrt_delta * noise
        log_prior = target.log_prior(proposal)
        ll, grad = target.log_likelihood_and_grad(proposal)
        if not math.isfinite(log_prior) or ll == -math.inf:
            log_alpha = -math.inf
            accepted = False
        else:
            reverse_mean = mala_drift(proposal, grad, target.grad_log_prior(proposal),
                                      params)
            log_alpha = min(0.0, (ll + log_prior
                                  + proposal_log_density(state.theta - reverse_mean, params))
                            - (state.exact_ll + state.log_prior
                               + proposal_log_density(proposal - forward_mean, params)))
            accepted = _accept(rng, log_alpha)
        if accepted:
            state = StateSnapshot(theta=proposal, exact_ll=ll, log_prior=log_prior,
                                  exact_grad_ll=grad)
        tr.record(k, state.theta, log_alpha, accepted, log_alpha, accepted, True)
    return tr.finish(config, "mala", False, 0, 0, started)


# ---------------------------------------------------------------------------
# surrogate initialisation

def init_ledger(target: TargetInstance, theta0, config: SamplerConfig,
                gradient_mode: bool = False,
                rng: np.random.Generator | None = None):
    """Exact evaluations at ``theta0`` plus ``gp_init_count - 1`` perturbed
    points drawn from the proposal centred there.

    Draws that repeat an existing point are retried once; draws landing on a
    non-finite log-likelihood are redrawn a bounded number of times. Returns
    ``(ledger, n_evals)`` where ``n_evals`` counts every exact evaluation
    spent, including discarded ones.
    """
    if rng is None:
        rng = _mk_rng(config.seed)
    theta0 = _vector(theta0, target.dim)
    state = _start_state(target, theta0, with_grad=gradient_mode)
    ledger = EvaluationLedger()
    ledger.append(Evaluation(theta=theta0, log_lik=state.exact_ll,
                             grad=state.exact_grad_ll))
    n_evals = 1
    if config.mala is not None and gradient_mode:
        scale_noise = lambda z: math.sqrt(config.mala.delta) * (config.mala.precond_sqrt @ z)
    else:
        scale_noise = lambda z: config.proposal_scales * z
    for _ in range(config.gp_init_count - 1):
        entry = None
        duplicate_retries = 0
        for _attempt in range(_INIT_REDRAW_LIMIT):
            point = theta0 + scale_noise(rng.standard_normal(target.dim))
            if ledger.position(point) is not None:
                duplicate_retries += 1
                if duplicate_retries > 1:
                    raise InitializationError("repeated duplicate initial design point")
                continue
            if gradient_mode:
                ll, grad = target.log_likelihood_and_grad(point)
            else:
                ll, grad = target.log_likelihood(point), None
            n_evals += 1
            if math.isfinite(ll):
                entry = Evaluation(theta=point, log_lik=ll, grad=grad)
                break
        if entry is None:
            raise InitializationError("could not find finite initial design points")
        ledger.append(entry)
    return ledger, n_evals


def _default_init_hyper(config: SamplerConfig, ledger: EvaluationLedger) -> KernelHyper:
    values = ledger.values()
    signal = max(float(np.var(values)), 1.0)
    return KernelHyper(lengthscales=2.0 * config.proposal_scales,
                       signal_variance=signal)


def _check_dims(target: TargetInstance, config: SamplerConfig) -> None:
    if config.dim != target.dim:
        raise ValueError(f"proposal_scales dimension {config.dim} does not match "
                         f"target dimension {target.dim}")


def _require_mala(target: TargetInstance, config: SamplerConfig) -> MalaProposalParams:
    if config.mala is None:
        raise ValueError("config.mala is required for Langevin drivers")
    if config.mala.dim != target.dim:
        raise ValueError("mala preconditioner dimension does not match target")
    if not target.has_gradient:
        from .targets import CapabilityError
        raise CapabilityError(f"target {target.name} provides no gradients; "
                              "Langevin drivers need them")
    return config.mala


# ---------------------------------------------------------------------------
# two-stage drivers

def run_gp_mh(target: TargetInstance, config: SamplerConfig, theta0) -> ChainTrace:
    """Random-walk driver with the surrogate screening stage."""
    _check_dims(target, config)
    rng = _mk_rng(config.seed)
    ledger, init_evals = init_ledger(target, theta0, config, rng=rng)
    state = StateSnapshot(theta=ledger[0].theta, exact_ll=ledger[0].log_lik,
                          log_prior=target.log_prior(ledger[0].theta))
    hyper = config.init_hyper or _default_init_hyper(config, ledger)
    gp = kernelgp.fit(ledger, hyper, prior_mean=state.exact_ll)
    tr = _TraceBuilder(config.n_iters, target.dim)
    started = time.perf_counter()
    appends_since_opt = 0
    for k in range(config.n_iters):
        gp = gp.with_prior_mean(state.exact_ll)
        proposal = state.theta + config.proposal_scales * rng.standard_normal(target.dim)
        log_prior = target.log_prior(proposal)
        if not math.isfinite(log_prior):
            tr.record(k, state.theta, -math.inf, False, np.nan, False, False)
            continue
        pred = kernelgp.predict(gp, proposal)
        decision = stage1_log_alpha_mh(state, proposal, pred, log_prior)
        if not _accept(rng, decision.log_alpha1_forward):
            tr.record(k, state.theta, decision.log_alpha1_forward, False,
                      np.nan, False, False)
            continue
        decision = replace(decision, accepted=True)
        ll = target.log_likelihood(proposal)
        grew = _maybe_append(ledger, gp, config, proposal, ll, None)
        if grew is not None:
            gp = grew
            appends_since_opt += 1
        log_alpha2 = stage2_log_alpha_mh(state, ll, decision, log_prior)
        accepted2 = _accept(rng, log_alpha2)
        if accepted2:
            state = StateSnapshot(theta=proposal, exact_ll=ll, log_prior=log_prior)
        tr.record(k, state.theta, decision.log_alpha1_forward, True,
                  log_alpha2, accepted2, True)
        if k < config.n_burnin and appends_since_opt >= config.hyper_update_every:
            hyper = kernelgp.optimize_hypers(ledger, gp.hyper, state.exact_ll,
                                             config.hyper_opt_budget)
            gp = kernelgp.fit(ledger, hyper, prior_mean=state.exact_ll)
            appends_since_opt = 0
    return tr.finish(config, "gp-mh", True, init_evals, len(ledger), started)


def run_gp_mala(target: TargetInstance, config: SamplerConfig, theta0) -> ChainTrace:
    """Langevin driver screened through the joint value-gradient surrogate.

    Proposals drift with the exact gradient of the current state (cached in
    the ledger); the screening stage marginalises the surrogate's joint value
    and gradient uncertainty at the proposal.
    """
    _check_dims(target, config)
    params = _require_mala(target, config)
    rng = _mk_rng(config.seed)
    ledger, init_evals = init_ledger(target, theta0, config, gradient_mode=True, rng=rng)
    state = StateSnapshot(theta=ledger[0].theta, exact_ll=ledger[0].log_lik,
                          log_prior=target.log_prior(ledger[0].theta),
                          exact_grad_ll=ledger[0].grad)
    hyper = config.init_hyper or _default_init_hyper(config, ledger)
    gp = kernelgp.fit(ledger, hyper, prior_mean=state.exact_ll, gradient_mode=True)
    tr = _TraceBuilder(config.n_iters, target.dim)
    started = time.perf_counter()
    appends_since_opt = 0
    sqrt_delta = math.sqrt(params.delta)
    for k in range(config.n_iters):
        gp = gp.with_prior_mean(state.exact_ll)
        grad_prior = target.grad_log_prior(state.theta)
        forward_mean = mala_drift(state.theta, state.exact_grad_ll, grad_prior, params)
        proposal = forward_mean + sqrt_delta * (params.precond_sqrt
                                                @ rng.standard_normal(target.dim))
        log_prior = target.log_prior(proposal)
        if not math.isfinite(log_prior):
            tr.record(k, state.theta, -math.inf, False, np.nan, False, False)
            continue
        grad_prior_star = target.grad_log_prior(proposal)
        joint = kernelgp.predict_joint(gp, proposal)
        decision = stage1_log_alpha_mala(state, proposal, joint,
                                         (grad_prior, grad_prior_star),
                                         log_prior, params)
        if not _accept(rng, decision.log_alpha1_forward):
            tr.record(k, state.theta, decision.log_alpha1_forward, False,
                      np.nan, False, False)
            continue
        decision = replace(decision, accepted=True)
        ll, grad = target.log_likelihood_and_grad(proposal)
        grew = _maybe_append(ledger, gp, config, proposal, ll, grad)
        if grew is not None:
            gp = grew
            appends_since_opt += 1
        if ll == -math.inf:
            log_alpha2 = -math.inf
        else:
            log_alpha2 = stage2_log_alpha_mala(state, proposal, ll, grad, decision,
                                               (grad_prior, grad_prior_star),
                                               log_prior, params)
        accepted2 = _accept(rng, log_alpha2)
        if accepted2:
            state = StateSnapshot(theta=proposal, exact_ll=ll, log_prior=log_prior,
                                  exact_grad_ll=grad)
        tr.record(k, state.theta, decision.log_alpha1_forward, True,
                  log_alpha2, accepted2, True)
        if k < config.n_burnin and appends_since_opt >= config.hyper_update_every:
            hyper = kernelgp.optimize_hypers(ledger, gp.hyper, state.exact_ll,
                                             config.hyper_opt_budget,
                                             gradient_mode=True)
            gp = kernelgp.fit(ledger, hyper, prior_mean=state.exact_ll,
                              gradient_mode=True)
            appends_since_opt = 0
    return tr.finish(config, "gp-mala", True, init_evals, len(ledger), started)


def _maybe_append(ledger: EvaluationLedger, gp, config: SamplerConfig,
                  theta, ll: float, grad):
    """Grow ledger and surrogate with a finite evaluation, respecting the cap."""
    if not math.isfinite(ll):
        return None
    if config.ledger_cap is not None and len(ledger) >= config.ledger_cap:
        return None
    if ledger.position(theta) is not None:
        return None
    ev = Evaluation(theta=theta, log_lik=ll, grad=grad)
    ledger.append(ev)
    return kernelgp.append(gp, ev)
