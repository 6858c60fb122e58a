"""Noise-free Gaussian process regression over expensive log-likelihoods.

Squared-exponential kernel with per-dimension lengthscales, optional joint
modelling of the function together with its gradient, exact interpolation of
stored evaluations, incremental Cholesky extension on append, and a
deterministic simplex search for kernel hyperparameters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

DEFAULT_JITTER_FACTOR = 1e-10
MAX_JITTER_FACTOR = 1e-6
_JITTER_DECADES = 3


class IllConditionedKernelError(RuntimeError):
    """Kernel matrix could not be factorised, even after jitter escalation."""


class DuplicatePointError(ValueError):
    """Input location already present where a distinct one is required."""


class GradientModeError(RuntimeError):
    """Operation requires the other of scalar / joint-gradient mode."""


def _vector(x, dim: int | None = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d point, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def _key(theta: np.ndarray) -> bytes:
    return np.ascontiguousarray(theta, dtype=float).tobytes()


@dataclass(frozen=True, eq=False)
class KernelHyper:
    """Squared-exponential kernel hyperparameters.

    ``jitter`` is the nugget added to the factorised matrix diagonal; it
    defaults to ``DEFAULT_JITTER_FACTOR * signal_variance`` and must stay
    below ``MAX_JITTER_FACTOR * signal_variance`` so interpolation holds.
    """

    lengthscales: np.ndarray
    signal_variance: float
    jitter: float | None = None

    def __post_init__(self):
        ls = _vector(self.lengthscales)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be finite and positive")
        if not math.isfinite(self.signal_variance) or self.signal_variance <= 0:
            raise ValueError("signal_variance must be finite and positive")
        jitter = self.jitter
        if jitter is None:
            jitter = DEFAULT_JITTER_FACTOR * self.signal_variance
        jitter = float(jitter)
        object.__setattr__(self, "jitter", jitter)
        if jitter <= 0 or jitter > MAX_JITTER_FACTOR * self.signal_variance:
            raise ValueError(
                "jitter must lie in (0, %g * signal_variance]" % MAX_JITTER_FACTOR
            )

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class Evaluation:
    """One exact log-likelihood evaluation, optionally with its gradient."""

    theta: np.ndarray
    log_lik: float
    grad: np.ndarray | None = None

    def __post_init__(self):
        theta = _vector(self.theta)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "log_lik", float(self.log_lik))
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if not math.isfinite(self.log_lik):
            raise ValueError("log_lik must be finite")
        if self.grad is not None:
            grad = _vector(self.grad, theta.shape[0])
            if not np.all(np.isfinite(grad)):
                raise ValueError("gradient must be finite")
            object.__setattr__(self, "grad", grad)


class EvaluationLedger:
    """Append-only store of exact evaluations with O(1) duplicate lookup."""

    def __init__(self, entries=()):
        self._entries: list[Evaluation] = []
        self._index: dict[bytes, int] = {}
        for ev in entries:
            self.append(ev)

    def append(self, ev: Evaluation) -> None:
        key = _key(ev.theta)
        if key in self._index:
            raise DuplicatePointError("theta already recorded in ledger")
        if self._entries and ev.theta.shape[0] != self.dim:
            raise ValueError("dimension mismatch with existing entries")
        self._index[key] = len(self._entries)
        self._entries.append(ev)

    def position(self, theta) -> int | None:
        return self._index.get(_key(_vector(theta)))

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, i: int) -> Evaluation:
        return self._entries[i]

    def __iter__(self):
        return iter(self._entries)

    @property
    def dim(self) -> int:
        if not self._entries:
            raise ValueError("empty ledger has no dimension")
        return self._entries[0].theta.shape[0]

    def thetas(self) -> np.ndarray:
        return np.array([ev.theta for ev in self._entries])

    def values(self) -> np.ndarray:
        return np.array([ev.log_lik for ev in self._entries])

    def grads(self) -> np.ndarray:
        if any(ev.grad is None for ev in self._entries):
            raise GradientModeError("ledger entries lack gradients")
        return np.array([ev.grad for ev in self._entries])


@dataclass(frozen=True)
class SurrogatePrediction:
    """Predictive mean/variance at one point; gradient blocks in joint mode."""

    mean: float
    variance: float
    grad_mean: np.ndarray | None = None
    joint_cov: np.ndarray | None = None


# ---------------------------------------------------------------------------
# kernel functions

def se_kernel(x, y, hyper: KernelHyper) -> float:
    """sigma^2 * exp(-0.5 * sum_j (x_j - y_j)^2 / l_j^2)."""
    x = _vector(x, hyper.dim)
    y = _vector(y, hyper.dim)
    z = (x - y) / hyper.lengthscales
    return hyper.signal_variance * math.exp(-0.5 * float(z @ z))


def se_kernel_derivative_blocks(x, y, hyper: KernelHyper):
    """Kernel value with its first/second cross derivative blocks.

    Returns ``(k, dk_dy, d2k_dxdy)`` where ``dk_dy[j] = k (x_j-y_j)/l_j^2``
    and ``d2k_dxdy[i, j] = k (delta_ij/l_i^2 - (x_i-y_i)(x_j-y_j)/(l_i^2 l_j^2))``.
    """
    x = _vector(x, hyper.dim)
    y = _vector(y, hyper.dim)
    k = se_kernel(x, y, hyper)
    inv2 = 1.0 / hyper.lengthscales**2
    u = (x - y) * inv2
    dk_dy = k * u
    d2 = k * (np.diag(inv2) - np.outer(u, u))
    return k, dk_dy, d2


def _se_matrix(xa: np.ndarray, xb: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    diff = (xa[:, None, :] - xb[None, :, :]) / hyper.lengthscales
    return hyper.signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))


def _joint_block_matrix(xa: np.ndarray, xb: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """Covariance of stacked [f, grad f] observation blocks, one per point."""
    n, d = xa.shape
    m = xb.shape[0]
    inv2 = 1.0 / hyper.lengthscales**2
    diff = xa[:, None, :] - xb[None, :, :]
    k0 = hyper.signal_variance * np.exp(-0.5 * np.einsum("ijk,k,ijk->ij", diff, inv2, diff))
    dk = k0[:, :, None] * diff * inv2  # d k / d y
    u = diff * inv2
    d2 = k0[:, :, None, None] * (np.diag(inv2)[None, None] - u[:, :, :, None] * u[:, :, None, :])
    blocks = np.empty((n, 1 + d, m, 1 + d))
    blocks[:, 0, :, 0] = k0
    blocks[:, 0, :, 1:] = dk
    blocks[:, 1:, :, 0] = -np.transpose(dk, (0, 2, 1))
    blocks[:, 1:, :, 1:] = np.transpose(d2, (0, 2, 1, 3))
    return blocks.reshape(n * (1 + d), m * (1 + d))


def _query_prior_block(hyper: KernelHyper) -> np.ndarray:
    d = hyper.dim
    block = np.zeros((1 + d, 1 + d))
    block[0, 0] = hyper.signal_variance
    block[1:, 1:] = np.diag(hyper.signal_variance / hyper.lengthscales**2)
    return block


def _stable_cholesky(kmat: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    n = kmat.shape[0]
    level = jitter
    for _ in range(_JITTER_DECADES + 1):
        try:
            return np.linalg.cholesky(kmat + level * np.eye(n)), level
        except np.linalg.LinAlgError:
            level *= 10.0
    raise IllConditionedKernelError(
        f"cholesky failed for {n}x{n} kernel matrix after jitter escalation to {level / 10.0:g}"
    )


# ---------------------------------------------------------------------------
# surrogate model

@dataclass(frozen=True, eq=False)
class GPSurrogate:
    """Immutable trained surrogate; ``append`` and recentring return new values."""

    hyper: KernelHyper
    x_train: np.ndarray
    y_train: np.ndarray
    grad_train: np.ndarray | None
    prior_mean: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter_used: float
    gradient_mode: bool
    train_index: dict

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    def position(self, theta) -> int | None:
        return self.train_index.get(_key(_vector(theta, self.dim)))

    def with_prior_mean(self, prior_mean: float) -> "GPSurrogate":
        """Recentre on a new constant prior mean; rank-0 update of alpha only."""
        prior_mean = float(prior_mean)
        if not math.isfinite(prior_mean):
            raise ValueError("prior_mean must be finite")
        if prior_mean == self.prior_mean:
            return self
        targets = _centered_targets(self.y_train, self.grad_train, prior_mean, self.gradient_mode)
        alpha = cho_solve((self.chol, True), targets, check_finite=False)
        return replace(self, prior_mean=prior_mean, alpha=alpha)


def _centered_targets(y: np.ndarray, grads: np.ndarray | None, prior_mean: float,
                      gradient_mode: bool) -> np.ndarray:
    if not gradient_mode:
        return y - prior_mean
    # gradient observations are centred by the (zero) gradient of the constant mean
    return np.concatenate([(y - prior_mean)[:, None], grads], axis=1).ravel()


def fit(ledger: EvaluationLedger, hyper: KernelHyper, prior_mean: float,
        gradient_mode: bool = False) -> GPSurrogate:
    """Train on every ledger entry; exact interpolation up to the jitter."""
    if len(ledger) == 0:
        raise ValueError("cannot fit on an empty ledger")
    x = ledger.thetas()
    if x.shape[1] != hyper.dim:
        raise ValueError("hyper dimension does not match ledger")
    y = ledger.values()
    grads = ledger.grads() if gradient_mode else None
    prior_mean = float(prior_mean)
    if not math.isfinite(prior_mean):
        raise ValueError("prior_mean must be finite")
    if gradient_mode:
        kmat = _joint_block_matrix(x, x, hyper)
    else:
        kmat = _se_matrix(x, x, hyper)
    chol, jitter_used = _stable_cholesky(kmat, hyper.jitter)
    targets = _centered_targets(y, grads, prior_mean, gradient_mode)
    alpha = cho_solve((chol, True), targets, check_finite=False)
    index = {_key(x[i]): i for i in range(x.shape[0])}
    return GPSurrogate(hyper=hyper, x_train=x, y_train=y, grad_train=grads,
                       prior_mean=prior_mean, chol=chol, alpha=alpha,
                       jitter_used=jitter_used, gradient_mode=gradient_mode,
                       train_index=index)


def append(gp: GPSurrogate, ev: Evaluation) -> GPSurrogate:
    """Extend with one evaluation via a rank-(block) Cholesky update.

    Matches a full refit at the same jitter to tight numerical tolerance.
    """
    theta = _vector(ev.theta, gp.dim)
    if gp.position(theta) is not None:
        raise DuplicatePointError("theta already in training set")
    if gp.gradient_mode and ev.grad is None:
        raise GradientModeError("joint-gradient surrogate requires gradients on append")
    width = 1 + gp.dim if gp.gradient_mode else 1
    if gp.gradient_mode:
        cross = _joint_block_matrix(gp.x_train, theta[None, :], gp.hyper)
        corner = _joint_block_matrix(theta[None, :], theta[None, :], gp.hyper)
    else:
        cross = _se_matrix(gp.x_train, theta[None, :], gp.hyper)
        corner = np.array([[gp.hyper.signal_variance]])
    corner = corner + gp.jitter_used * np.eye(width)
    w = solve_triangular(gp.chol, cross, lower=True, check_finite=False)
    schur = corner - w.T @ w
    try:
        corner_chol = np.linalg.cholesky(0.5 * (schur + schur.T))
    except np.linalg.LinAlgError:
        raise IllConditionedKernelError("appended point makes the kernel matrix singular")
    n_old = gp.chol.shape[0]
    chol = np.zeros((n_old + width, n_old + width))
    chol[:n_old, :n_old] = gp.chol
    chol[n_old:, :n_old] = w.T
    chol[n_old:, n_old:] = corner_chol

    x_train = np.vstack([gp.x_train, theta[None, :]])
    y_train = np.append(gp.y_train, ev.log_lik)
    grad_train = None
    if gp.gradient_mode:
        grad_train = np.vstack([gp.grad_train, ev.grad[None, :]])
    targets = _centered_targets(y_train, grad_train, gp.prior_mean, gp.gradient_mode)
    alpha = cho_solve((chol, True), targets, check_finite=False)
    index = dict(gp.train_index)
    index[_key(theta)] = gp.n_train
    return GPSurrogate(hyper=gp.hyper, x_train=x_train, y_train=y_train,
                       grad_train=grad_train, prior_mean=gp.prior_mean, chol=chol,
                       alpha=alpha, jitter_used=gp.jitter_used,
                       gradient_mode=gp.gradient_mode, train_index=index)


def predict(gp: GPSurrogate, theta) -> SurrogatePrediction:
    """Predictive mean and variance of the function value at ``theta``.

    A point already in the training set is served exactly with zero variance.
    """
    theta = _vector(theta, gp.dim)
    pos = gp.position(theta)
    if pos is not None:
        return SurrogatePrediction(mean=float(gp.y_train[pos]), variance=0.0)
    if gp.gradient_mode:
        cross = _joint_block_matrix(gp.x_train, theta[None, :], gp.hyper)[:, 0]
    else:
        cross = _se_matrix(gp.x_train, theta[None, :], gp.hyper)[:, 0]
    mean = gp.prior_mean + float(cross @ gp.alpha)
    w = solve_triangular(gp.chol, cross, lower=True, check_finite=False)
    variance = max(gp.hyper.signal_variance - float(w @ w), 0.0)
    return SurrogatePrediction(mean=mean, variance=variance)


def predict_joint(gp: GPSurrogate, theta) -> SurrogatePrediction:
    """Joint prediction of value and gradient with full (1+d) x (1+d) covariance."""
    if not gp.gradient_mode:
        raise GradientModeError("predict_joint requires a joint-gradient surrogate")
    theta = _vector(theta, gp.dim)
    d = gp.dim
    pos = gp.position(theta)
    if pos is not None:
        return SurrogatePrediction(mean=float(gp.y_train[pos]), variance=0.0,
                                   grad_mean=gp.grad_train[pos].copy(),
                                   joint_cov=np.zeros((1 + d, 1 + d)))
    cross = _joint_block_matrix(gp.x_train, theta[None, :], gp.hyper)
    joint_mean = cross.T @ gp.alpha
    joint_mean[0] += gp.prior_mean
    w = solve_triangular(gp.chol, cross, lower=True, check_finite=False)
    cov = _query_prior_block(gp.hyper) - w.T @ w
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < 0.0:
        cov = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
        cov = 0.5 * (cov + cov.T)
    return SurrogatePrediction(mean=float(joint_mean[0]), variance=float(max(cov[0, 0], 0.0)),
                               grad_mean=joint_mean[1:].copy(), joint_cov=cov)


def log_marginal_likelihood(ledger: EvaluationLedger, hyper: KernelHyper,
                            prior_mean: float, gradient_mode: bool = False) -> float:
    """-0.5 (y-m)' K^-1 (y-m) - 0.5 log det K - (t/2) log 2 pi at the jittered K."""
    gp = fit(ledger, hyper, prior_mean, gradient_mode=gradient_mode)
    targets = _centered_targets(gp.y_train, gp.grad_train, gp.prior_mean, gp.gradient_mode)
    n = targets.shape[0]
    quad = float(targets @ gp.alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(gp.chol))))
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)


def optimize_hypers(ledger: EvaluationLedger, init: KernelHyper, prior_mean: float,
                    budget: int, gradient_mode: bool = False) -> KernelHyper:
    """Deterministic simplex search over log lengthscales and log signal variance.

    Never returns hypers worse than ``init`` under the marginal likelihood;
    with ``budget == 0`` the initial value is returned unchanged.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if budget == 0:
        return init
    jitter_ratio = init.jitter / init.signal_variance
    d = init.dim

    def unpack(z: np.ndarray) -> KernelHyper:
        sv = math.exp(z[d])
        return KernelHyper(lengthscales=np.exp(z[:d]), signal_variance=sv,
                           jitter=jitter_ratio * sv)

    def nll(z: np.ndarray) -> float:
        if np.any(np.abs(z) > 30.0):
            return np.inf
        try:
            return -log_marginal_likelihood(ledger, unpack(z), prior_mean,
                                            gradient_mode=gradient_mode)
        except IllConditionedKernelError:
            return np.inf

    z0 = np.log(np.concatenate([init.lengthscales, [init.signal_variance]]))
    f0 = nll(z0)
    if not np.isfinite(f0):
        warnings.warn("hyperparameter search could not evaluate the initial point",
                      RuntimeWarning, stacklevel=2)
        return init
    res = minimize(nll, z0, method="Nelder-Mead",
                   options={"maxfev": int(budget), "xatol": 1e-3, "fatol": 1e-3,
                            "disp": False})
    if not np.isfinite(res.fun) or res.fun > f0:
        return init
    return unpack(res.x)
