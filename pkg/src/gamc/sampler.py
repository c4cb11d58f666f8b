"""Chain drivers: the geometry-switching sampler and its pure baselines.

A chain owns three independent RNG streams spawned from one seed — initial
state, environment (kernel-switch draws), and proposals.  Because the switch
consumes only the environment stream, a degenerate schedule (constant 1 or 0)
reproduces the corresponding pure sampler's trace bit for bit: both paths run
the identical step helpers against the identical proposal stream.
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field, replace
import math
import time

import numpy as np
from numpy.typing import NDArray

from .autodiff import DerivativeBundle
from .kernels import (
    AMConfig,
    AMState,
    LangevinKernelSpec,
    MetricFailure,
    TARGET_RATES,
    am_init,
    am_proposal_logpdf,
    am_proposal_sample,
    am_update,
    gaussian_logpdf,
    gaussian_sample,
    mala_proposal,
    mh_accept_log_ratio,
    mmala_proposal,
    sa_tuning_update,
    smmala_proposal,
)
from .linalg import invert_spd, softabs_metric

__all__ = [
    "ConfigError",
    "TargetError",
    "Schedule",
    "schedule_prob",
    "schedule_weight",
    "validate_schedule",
    "expected_complexity",
    "EnvironmentState",
    "ChainRecord",
    "SamplerConfig",
    "GAMCSpecs",
    "StepOutcome",
    "gamc_step",
    "run_chain",
]

SAMPLER_NAMES = ("mala", "smmala", "mmala", "am", "gamc")

_PROPOSERS = {"mala": mala_proposal, "smmala": smmala_proposal, "mmala": mmala_proposal}
_ORDERS = {"mala": 1, "smmala": 2, "mmala": 3}


class ConfigError(ValueError):
    """Invalid sampler or run configuration."""


class TargetError(RuntimeError):
    """Target rejected the run, e.g. non-finite density at the initial state."""


# -- schedules ------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Probability s_k of taking a geometric step at iteration k.

    Families: "exponential" (s_k = e^{-r k}), "constant" (s_k = value), and
    "table" (explicit per-iteration values).
    """

    family: str = "exponential"
    r: float = 1e-4
    value: float = 0.0
    values: tuple | None = None

    def __post_init__(self):
        if self.family not in ("exponential", "constant", "table"):
            raise ConfigError(f"unknown schedule family {self.family!r}")
        if self.family == "table" and not self.values:
            raise ConfigError("table schedule needs values")
        if self.family == "constant" and not 0.0 <= self.value <= 1.0:
            raise ConfigError("constant schedule value must lie in [0, 1]")


def schedule_prob(s: Schedule, k: int) -> float:
    if k < 0:
        raise ConfigError("iteration index must be non-negative")
    if s.family == "exponential":
        return math.exp(-s.r * k)
    if s.family == "constant":
        return s.value
    if k >= len(s.values):
        raise ConfigError(f"table schedule exhausted at k={k}")
    return float(s.values[k])


def schedule_weight(s: Schedule, m: int) -> float:
    """(1/m) sum_{k<m} s_k; closed form for the exponential family."""
    if m < 1:
        raise ConfigError("chain length must be positive")
    if s.family == "exponential":
        if s.r == 0.0:
            return 1.0
        return -math.expm1(-s.r * m) / (m * -math.expm1(-s.r))
    if s.family == "constant":
        return s.value
    return float(sum(s.values[:m])) / m


def validate_schedule(s: Schedule, m: int, tail_threshold: float = 1.0) -> str:
    """Advisory convergence check: the switch probabilities should be summable."""
    if s.family == "exponential":
        return "ok" if s.r > 0.0 else "warning: non-decaying exponential schedule"
    if s.family == "constant":
        if s.value > 0.0:
            return "warning: constant positive schedule has divergent sum"
        return "ok"
    tail = float(sum(s.values[m // 2 : m]))
    if tail < tail_threshold:
        return "ok"
    return f"warning: schedule tail sum {tail:.3g} over horizon exceeds {tail_threshold:.3g}"


def expected_complexity(c_g: float, c_a: float, s: Schedule, m: int) -> float:
    """Per-step cost w*c_g + (1-w)*c_a with w the mean switch probability."""
    if c_g < 0.0 or c_a < 0.0:
        raise ConfigError("costs must be non-negative")
    w = schedule_weight(s, m)
    return w * c_g + (1.0 - w) * c_a


# -- chain state ----------------------------------------------------------


@dataclass
class EnvironmentState:
    """Iteration counter and the index of the most recent geometric step.

    ``tau`` stays 0 until the first geometric step occurs.
    """

    k: int = 0
    tau: int = 0
    b_history: list | None = None


@dataclass
class ChainRecord:
    sampler: str
    states: NDArray
    log_densities: NDArray
    accepted: NDArray
    geometric_step: NDArray
    wall_time: float
    n_target_evals: int
    n_gradient_evals: int
    n_hessian_evals: int
    burn_in: int
    tuned: dict


@dataclass(frozen=True)
class SamplerConfig:
    name: str
    epsilon0: float = 1.0
    beta0: float | None = None  # default 2.38^2/dim
    lam: float = 0.01
    gamma_fixed: float = 0.001
    softabs_alpha: float = 1000.0
    precond: NDArray | None = None
    schedule: Schedule = field(default_factory=Schedule)
    geometric_variant: str = "smmala"
    tune: bool = True
    force_refactorization: bool = False

    def __post_init__(self):
        if self.name not in SAMPLER_NAMES:
            raise ConfigError(f"unknown sampler {self.name!r}")
        if self.geometric_variant not in _PROPOSERS:
            raise ConfigError(f"unknown geometric variant {self.geometric_variant!r}")
        if not self.epsilon0 > 0.0:
            raise ConfigError("epsilon0 must be positive")
        if self.beta0 is not None and not self.beta0 > 0.0:
            raise ConfigError("beta0 must be positive")


GAMCSpecs = namedtuple("GAMCSpecs", ["langevin", "am_cfg", "schedule"])
RngStreams = namedtuple("RngStreams", ["env", "proposal"])
StepOutcome = namedtuple("StepOutcome", ["accepted", "geometric"])


class _Counters:
    __slots__ = ("target", "gradient", "hessian")

    def __init__(self):
        self.target = 0
        self.gradient = 0
        self.hessian = 0


def _bundle_order(b: DerivativeBundle) -> int:
    if b.metric_derivs is not None:
        return 3
    if b.hessian is not None:
        return 2
    if b.gradient is not None:
        return 1
    return 0


def _eval_bundle(target, x, order, counters: _Counters) -> DerivativeBundle:
    b = target.bundle(x, order)
    counters.target += 1
    if b.gradient is not None:
        counters.gradient += 1
    if b.hessian is not None:
        counters.hessian += 1
    if b.metric_derivs is not None:
        # central differences of the Hessian: 2n extra full passes
        extra = 2 * len(x)
        counters.target += extra
        counters.gradient += extra
        counters.hessian += extra
    return b


def _langevin_step(theta, cur_bundle, spec, target, rng, counters):
    """One MH step with a Langevin proposal; returns (theta, bundle, accepted).

    The proposal stream is consumed identically (n normals, one uniform) on
    every path, including auto-rejections, so rejection reasons never shift
    later draws.
    """
    order = _ORDERS[spec.variant]
    proposer = _PROPOSERS[spec.variant]
    try:
        fwd = proposer(cur_bundle, theta, spec)
    except MetricFailure:
        rng.standard_normal(len(theta))
        rng.random()
        return theta, cur_bundle, False
    y = gaussian_sample(fwd, rng)
    accept_u = rng.random()
    y_bundle = _eval_bundle(target, y, order, counters)
    if y_bundle.value == -math.inf:
        return theta, cur_bundle, False
    try:
        rev = proposer(y_bundle, y, spec)
    except MetricFailure:
        return theta, cur_bundle, False
    log_ratio = mh_accept_log_ratio(
        cur_bundle.value, y_bundle.value, gaussian_logpdf(fwd, y), gaussian_logpdf(rev, theta)
    )
    if accept_u < math.exp(log_ratio):
        return y, y_bundle, True
    return theta, cur_bundle, False


def _am_step(theta, cur_bundle, am_state, target, rng, counters):
    """One MH step with the adaptive mixture (state frozen during the step)."""
    y = am_proposal_sample(am_state, theta, rng)
    accept_u = rng.random()
    y_bundle = _eval_bundle(target, y, 0, counters)
    if y_bundle.value == -math.inf:
        return theta, cur_bundle, False
    log_ratio = mh_accept_log_ratio(
        cur_bundle.value,
        y_bundle.value,
        am_proposal_logpdf(am_state, theta, y),
        am_proposal_logpdf(am_state, y, theta),
    )
    if accept_u < math.exp(log_ratio):
        return y, y_bundle, True
    return theta, cur_bundle, False


def _metric_seed_cov(bundle, alpha: float) -> NDArray:
    # reuse the factorization memoized by the proposal machinery when the
    # langevin step just touched this bundle with softabs on (same key layout
    # as kernels._metric_proposal_parts)
    cached = getattr(bundle, "_metric_cache", None)
    if cached is not None and cached[0] == (alpha, True):
        return cached[1][1]
    return invert_spd(softabs_metric(-bundle.hessian, alpha))


def gamc_step(state, am_state, env, target, specs: GAMCSpecs, rng: RngStreams, counters=None):
    """One switching step: Bernoulli environment draw, then the chosen kernel.

    ``state`` is a (theta, bundle) pair.  A geometric step — accepted or not —
    re-seeds the adaptive state from the position-metric inverse at the
    realized next state and advances tau; an adaptive step absorbs the
    realized state into the running history.
    """
    if counters is None:
        counters = _Counters()
    theta, cur_bundle = state
    geometric = rng.env.random() < schedule_prob(specs.schedule, env.k)
    if geometric:
        order = _ORDERS[specs.langevin.variant]
        if _bundle_order(cur_bundle) < order:
            cur_bundle = _eval_bundle(target, theta, order, counters)
        theta, cur_bundle, accepted = _langevin_step(
            theta, cur_bundle, specs.langevin, target, rng.proposal, counters
        )
        cfg = replace(specs.am_cfg, beta=am_state.beta)
        am_state = am_init(theta, _metric_seed_cov(cur_bundle, specs.langevin.softabs_alpha), cfg)
        env = EnvironmentState(k=env.k + 1, tau=env.k, b_history=env.b_history)
    else:
        theta, cur_bundle, accepted = _am_step(
            theta, cur_bundle, am_state, target, rng.proposal, counters
        )
        am_state = am_update(am_state, theta)
        env = EnvironmentState(k=env.k + 1, tau=env.tau, b_history=env.b_history)
    if env.b_history is not None:
        env.b_history.append(geometric)
    return (theta, cur_bundle), am_state, env, StepOutcome(accepted, geometric)


def run_chain(sampler_cfg: SamplerConfig, target, m: int, burn_in: int, seed: int) -> ChainRecord:
    """Drive one chain for burn_in + m steps; tuning mutates hyperparameters
    during burn-in only.  Deterministic given the seed (except wall_time)."""
    if m < 1 or burn_in < 0:
        raise ConfigError("need m >= 1 and burn_in >= 0")
    cfg = sampler_cfg
    init_seq, env_seq, prop_seq = np.random.SeedSequence(seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    env_rng = np.random.default_rng(env_seq)
    prop_rng = np.random.default_rng(prop_seq)

    theta = np.asarray(target.sample_initial_state(init_rng), dtype=float)
    n = target.dim
    counters = _Counters()

    variant = cfg.name if cfg.name in _PROPOSERS else cfg.geometric_variant
    lspec = LangevinKernelSpec(
        variant,
        epsilon=cfg.epsilon0,
        precond=cfg.precond,
        softabs_alpha=cfg.softabs_alpha,
    )
    beta = cfg.beta0 if cfg.beta0 is not None else 2.38**2 / n
    am_cfg = AMConfig(
        beta=beta,
        lam=cfg.lam,
        gamma_fixed=cfg.gamma_fixed,
        force_refactorization=cfg.force_refactorization,
    )

    initial_order = _ORDERS[cfg.name] if cfg.name in _PROPOSERS else 0
    cur_bundle = _eval_bundle(target, theta, initial_order, counters)
    if not math.isfinite(cur_bundle.value):
        raise TargetError("initial state has non-finite log-density")

    am_state = None
    env = EnvironmentState()
    if cfg.name in ("am", "gamc"):
        am_state = am_init(theta, cfg.gamma_fixed * np.eye(n), am_cfg)

    total = burn_in + m
    states = np.empty((total, n))
    logps = np.empty(total)
    accepted = np.zeros(total, dtype=bool)
    geometric = np.zeros(total, dtype=bool)
    rngs = RngStreams(env_rng, prop_rng)
    langevin_rate = TARGET_RATES[variant]
    n_langevin = 0
    n_adaptive = 0

    start = time.monotonic()
    for k in range(total):
        # availability of the adaptive component in the state that is about to
        # propose; the beta controller only gets feedback from steps whose
        # acceptance actually depended on beta (stabilizer-only proposals are
        # uninformative and would bias the adaptation)
        adaptive_ready = am_state is not None and am_state.cov_factor is not None
        if cfg.name == "gamc":
            specs = GAMCSpecs(lspec, am_cfg, cfg.schedule)  # lspec may have been retuned
            (theta, cur_bundle), am_state, env, outcome = gamc_step(
                (theta, cur_bundle), am_state, env, target, specs, rngs, counters
            )
            acc, geo = outcome
        elif cfg.name == "am":
            theta, cur_bundle, acc = _am_step(
                theta, cur_bundle, am_state, target, prop_rng, counters
            )
            am_state = am_update(am_state, theta)
            geo = False
        else:
            theta, cur_bundle, acc = _langevin_step(
                theta, cur_bundle, lspec, target, prop_rng, counters
            )
            geo = True
        states[k] = theta
        logps[k] = cur_bundle.value
        accepted[k] = acc
        geometric[k] = geo

        if cfg.tune and k < burn_in:
            if geo:
                n_langevin += 1
                new_log_eps = sa_tuning_update(
                    math.log(lspec.epsilon), acc, n_langevin, langevin_rate
                )
                lspec = replace(lspec, epsilon=math.exp(new_log_eps))
            elif adaptive_ready:
                n_adaptive += 1
                new_log_beta = sa_tuning_update(
                    math.log(am_state.beta), acc, n_adaptive, TARGET_RATES["am"]
                )
                am_state.beta = math.exp(new_log_beta)
    wall = time.monotonic() - start

    tuned = {}
    if cfg.name != "am":
        tuned["epsilon"] = lspec.epsilon
    if am_state is not None:
        tuned["beta"] = am_state.beta
    return ChainRecord(
        sampler=cfg.name,
        states=states,
        log_densities=logps,
        accepted=accepted,
        geometric_step=geometric,
        wall_time=wall,
        n_target_evals=counters.target,
        n_gradient_evals=counters.gradient,
        n_hessian_evals=counters.hessian,
        burn_in=burn_in,
        tuned=tuned,
    )
