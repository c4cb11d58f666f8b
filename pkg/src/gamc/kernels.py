"""Proposal kernels and their Metropolis-Hastings machinery.

Langevin-type proposals (plain, position-metric, and position-metric with
curvature drift) plus the two-component adaptive-Metropolis mixture with an
incrementally maintained Cholesky factor of the empirical covariance.
Acceptance ratios are computed in log space throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from numpy.typing import NDArray

from .linalg import (
    DimensionMismatch,
    DowndateBreaksPositivity,
    NotPositiveDefinite,
    PosDefFactor,
    chol_solve,
    cholesky,
    invert_spd,
    rank_one_update,
    softabs_metric,
)

__all__ = [
    "NonFiniteGradient",
    "MetricFailure",
    "LangevinKernelSpec",
    "GaussianProposal",
    "AMConfig",
    "AMState",
    "mala_proposal",
    "smmala_proposal",
    "mmala_proposal",
    "mmala_gamma",
    "gaussian_logpdf",
    "gaussian_sample",
    "am_init",
    "am_update",
    "am_proposal_logpdf",
    "am_proposal_sample",
    "mh_accept_log_ratio",
    "sa_tuning_update",
    "TARGET_RATES",
]

LOG_2PI = math.log(2.0 * math.pi)

# acceptance-rate targets driving the burn-in controllers
TARGET_RATES = {"mala": 0.574, "smmala": 0.70, "mmala": 0.70, "am": 0.234}


class NonFiniteGradient(ValueError):
    """Proposal construction requires a finite gradient."""


class MetricFailure(RuntimeError):
    """Position metric is not positive definite and regularization is off."""


@dataclass(frozen=True)
class LangevinKernelSpec:
    """Configuration of a Langevin proposal family.

    ``precond`` applies to the plain variant only; its inverse and the
    covariance factor are computed once here and reused for every step.
    """

    variant: str
    epsilon: float = 1.0
    precond: NDArray | None = None
    softabs_alpha: float = 1000.0
    softabs_enabled: bool = True
    _precond_inv: NDArray | None = field(default=None, init=False, repr=False, compare=False)
    _precond_inv_lower: NDArray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("mala", "smmala", "mmala"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if not self.softabs_alpha > 0.0:
            raise ValueError("softabs_alpha must be positive")
        if self.precond is not None:
            m = np.asarray(self.precond, dtype=float)
            inv = invert_spd(m)  # rejects non-PD preconditioners
            object.__setattr__(self, "precond", m)
            object.__setattr__(self, "_precond_inv", inv)
            object.__setattr__(self, "_precond_inv_lower", cholesky(inv))


@dataclass(frozen=True)
class GaussianProposal:
    mean: NDArray
    cov_factor: PosDefFactor


def _require_finite_gradient(grad) -> NDArray:
    if grad is None or not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient missing or non-finite")
    return np.asarray(grad, dtype=float)


def mala_proposal(bundle, theta: NDArray, spec: LangevinKernelSpec) -> GaussianProposal:
    """Drift (eps^2/2) M^{-1} grad with the constant preconditioner M."""
    grad = _require_finite_gradient(bundle.gradient)
    theta = np.asarray(theta, dtype=float)
    half_eps2 = 0.5 * spec.epsilon * spec.epsilon
    if spec._precond_inv is None:
        mean = theta + half_eps2 * grad
        lower = np.eye(len(theta))
    else:
        mean = theta + half_eps2 * (spec._precond_inv @ grad)
        lower = spec._precond_inv_lower
    return GaussianProposal(mean, PosDefFactor(lower).scaled(spec.epsilon))


def _position_metric(hessian, spec: LangevinKernelSpec) -> NDArray:
    if hessian is None:
        raise MetricFailure("proposal needs a Hessian")
    if spec.softabs_enabled:
        return softabs_metric(-hessian, spec.softabs_alpha)
    return -np.asarray(hessian, dtype=float)


def _metric_proposal_parts(bundle, theta, spec):
    grad = _require_finite_gradient(bundle.gradient)
    # The factorizations depend only on (hessian, alpha), not on epsilon, so
    # they are memoized on the bundle: an accepted proposal's bundle becomes
    # the next step's current bundle and its metric rides along for free.
    key = (spec.softabs_alpha, spec.softabs_enabled)
    cached = getattr(bundle, "_metric_cache", None)
    if cached is not None and cached[0] == key:
        metric_lower, metric_inv, inv_lower = cached[1]
    else:
        metric = _position_metric(bundle.hessian, spec)
        try:
            metric_lower = cholesky(metric)
        except NotPositiveDefinite as err:
            raise MetricFailure(str(err)) from None
        metric_inv = invert_spd(metric)
        inv_lower = cholesky(metric_inv)
        bundle._metric_cache = (key, (metric_lower, metric_inv, inv_lower))
    mean = theta + 0.5 * spec.epsilon * spec.epsilon * chol_solve(metric_lower, grad)
    cov_factor = PosDefFactor(inv_lower).scaled(spec.epsilon)
    return mean, cov_factor, metric_inv


def smmala_proposal(bundle, theta: NDArray, spec: LangevinKernelSpec) -> GaussianProposal:
    """Position-dependent metric, drift solved against its Cholesky factor."""
    theta = np.asarray(theta, dtype=float)
    mean, cov_factor, _ = _metric_proposal_parts(bundle, theta, spec)
    return GaussianProposal(mean, cov_factor)


def mmala_gamma(metric_inv: NDArray, metric_derivs: NDArray) -> NDArray:
    """Curvature drift gamma_i = -1/2 sum_{j,h,l} Minv_ih dM_hl/dx_j Minv_lj."""
    return -0.5 * np.einsum("ih,jhl,lj->i", metric_inv, metric_derivs, metric_inv)


def mmala_proposal(bundle, theta: NDArray, spec: LangevinKernelSpec) -> GaussianProposal:
    """Metric proposal plus the eps^2 gamma(theta) curvature term."""
    theta = np.asarray(theta, dtype=float)
    if bundle.metric_derivs is None:
        raise ValueError("bundle lacks metric derivatives")
    mean, cov_factor, metric_inv = _metric_proposal_parts(bundle, theta, spec)
    gamma = mmala_gamma(metric_inv, bundle.metric_derivs)
    return GaussianProposal(mean + spec.epsilon * spec.epsilon * gamma, cov_factor)


def gaussian_logpdf(prop: GaussianProposal, x: NDArray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != prop.mean.shape:
        raise DimensionMismatch(f"point shape {x.shape} vs mean {prop.mean.shape}")
    w = prop.cov_factor.whiten(x - prop.mean)
    return -0.5 * (len(x) * LOG_2PI + prop.cov_factor.log_det() + float(w @ w))


def gaussian_sample(prop: GaussianProposal, rng: np.random.Generator) -> NDArray:
    z = rng.standard_normal(len(prop.mean))
    return prop.mean + prop.cov_factor.matvec(z)


# -- adaptive-Metropolis mixture ------------------------------------------


@dataclass(frozen=True)
class AMConfig:
    beta: float
    lam: float = 0.01
    gamma_fixed: float = 0.001
    force_refactorization: bool = False

    def __post_init__(self):
        if not self.beta > 0.0 or not self.gamma_fixed > 0.0:
            raise ValueError("beta and gamma_fixed must be positive")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]")


@dataclass
class AMState:
    """Running mean/covariance of the absorbed history plus mixture knobs.

    ``cov_factor`` caches the lower Cholesky factor of ``cov`` (not scaled by
    beta); ``None`` while the covariance is singular, in which case proposals
    fall back to the fixed gamma_fixed*I component.
    """

    count: int
    mean: NDArray
    cov: NDArray
    beta: float
    lam: float
    gamma_fixed: float
    force_refactorization: bool = False
    cov_factor: NDArray | None = None


def _try_factor(cov: NDArray) -> NDArray | None:
    try:
        return cholesky(cov)
    except NotPositiveDefinite:
        return None


def am_init(theta0: NDArray, seed_cov: NDArray, cfg: AMConfig) -> AMState:
    theta0 = np.array(theta0, dtype=float)
    seed = np.array(seed_cov, dtype=float)
    if seed.shape != (len(theta0), len(theta0)):
        raise DimensionMismatch(f"seed covariance shape {seed.shape}")
    if np.max(np.abs(seed - seed.T)) > 1e-10 * (1.0 + np.max(np.abs(seed))):
        raise ValueError("seed covariance must be symmetric")
    return AMState(
        count=1,
        mean=theta0,
        cov=seed,
        beta=cfg.beta,
        lam=cfg.lam,
        gamma_fixed=cfg.gamma_fixed,
        force_refactorization=cfg.force_refactorization,
        cov_factor=_try_factor(seed),
    )


def am_update(state: AMState, theta_new: NDArray) -> AMState:
    """Absorb one more history point via the O(n^2) recursions.

    The Cholesky factor follows along through two rank-one updates and one
    downdate; a failed downdate falls back to refactorization.
    """
    theta = np.asarray(theta_new, dtype=float)
    if theta.shape != state.mean.shape:
        raise DimensionMismatch(f"point shape {theta.shape} vs state {state.mean.shape}")
    c = state.count
    new_mean = (c * state.mean + theta) / (c + 1)
    new_cov = (
        (c - 1) * state.cov
        + np.outer(theta, theta)
        + c * np.outer(state.mean, state.mean)
        - (c + 1) * np.outer(new_mean, new_mean)
    ) / c
    if state.force_refactorization or state.cov_factor is None or c == 1:
        factor = _try_factor(new_cov)
    else:
        try:
            factor = math.sqrt((c - 1) / c) * state.cov_factor
            factor = rank_one_update(factor, theta / math.sqrt(c), sign=1)
            factor = rank_one_update(factor, state.mean.copy(), sign=1)
            factor = rank_one_update(factor, math.sqrt((c + 1) / c) * new_mean, sign=-1)
        except DowndateBreaksPositivity:
            factor = _try_factor(new_cov)
    return AMState(
        count=c + 1,
        mean=new_mean,
        cov=new_cov,
        beta=state.beta,
        lam=state.lam,
        gamma_fixed=state.gamma_fixed,
        force_refactorization=state.force_refactorization,
        cov_factor=factor,
    )


def _fixed_component_logpdf(state: AMState, diff: NDArray) -> float:
    n = len(diff)
    g = state.gamma_fixed
    return -0.5 * (n * LOG_2PI + n * math.log(g) + float(diff @ diff) / g)


def am_proposal_logpdf(state: AMState, current: NDArray, x: NDArray) -> float:
    """Log of the two-component mixture density centered at ``current``.

    While the adaptive component is unusable its term is -inf, so the result
    degenerates to log(lam) + fixed-component logpdf; the constant log(lam)
    cancels between the forward and reverse directions of an MH ratio.
    """
    current = np.asarray(current, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape != current.shape or current.shape != state.mean.shape:
        raise DimensionMismatch("mixture density dimension mismatch")
    diff = x - current
    log_fixed = _fixed_component_logpdf(state, diff)
    if state.lam >= 1.0:
        return log_fixed
    if state.cov_factor is None:
        return math.log(state.lam) + log_fixed
    fac = PosDefFactor(state.cov_factor).scaled(math.sqrt(state.beta))
    w = fac.whiten(diff)
    log_adapt = -0.5 * (len(diff) * LOG_2PI + fac.log_det() + float(w @ w))
    return float(
        np.logaddexp(math.log1p(-state.lam) + log_adapt, math.log(state.lam) + log_fixed)
    )


def am_proposal_sample(state: AMState, current: NDArray, rng: np.random.Generator) -> NDArray:
    """Draw from the mixture; the normal vector is consumed on both branches
    so the stream stays aligned regardless of which component fires."""
    current = np.asarray(current, dtype=float)
    u = rng.random()
    z = rng.standard_normal(len(current))
    if u < 1.0 - state.lam and state.cov_factor is not None:
        return current + math.sqrt(state.beta) * (state.cov_factor @ z)
    return current + math.sqrt(state.gamma_fixed) * z


def mh_accept_log_ratio(
    logp_cur: float, logp_prop: float, logq_fwd: float, logq_rev: float
) -> float:
    """min(0, [logp_prop + logq_rev] - [logp_cur + logq_fwd]); -inf rejects."""
    if math.isinf(logp_prop) and logp_prop < 0.0:
        return -math.inf
    return min(0.0, (logp_prop + logq_rev) - (logp_cur + logq_fwd))


def sa_tuning_update(log_value: float, accepted: bool, count: int, target_rate: float) -> float:
    """One stochastic-approximation step with gain count^-0.6.

    ``count`` is the 1-based number of updates this controller has seen.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    indicator = 1.0 if accepted else 0.0
    return log_value + count ** (-0.6) * (indicator - target_rate)
