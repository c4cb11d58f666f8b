"""Target log-densities behind a common interface.

Provided targets: multivariate Gaussian (tests), Student-t with
geometric-decay correlation, and one/two-planet radial-velocity posteriors
driven by Kepler's equation.  Every target exposes a plain-float
``log_density`` plus a dual-number-compatible ``log_density_generic`` so the
same expression yields exact gradients and Hessians through the autodiff
module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import math

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import toeplitz

from . import autodiff as ad
from .autodiff import DerivativeBundle
from .linalg import DimensionMismatch, cholesky, invert_spd

__all__ = [
    "InvalidParams",
    "NoConvergence",
    "LogTarget",
    "GaussianTarget",
    "StudentTTarget",
    "ar1_correlation",
    "solve_kepler",
    "true_anomaly",
    "RVDataset",
    "RVPriorConfig",
    "rv_dim",
    "rv_model_velocity",
    "rv_log_likelihood",
    "rv_log_prior",
    "modified_jeffreys_logpdf",
    "simulate_rv_dataset",
    "uniform_time_grid",
    "default_one_planet_params",
    "default_two_planet_params",
    "RVTarget",
]

TWO_PI = 2.0 * math.pi


class InvalidParams(ValueError):
    """Parameter vector outside the model's support or malformed."""


class NoConvergence(RuntimeError):
    """Iterative solver failed to reach tolerance (treated as a defect)."""


class LogTarget:
    """Interface shared by all targets.

    ``log_density`` returns -inf outside the support; ``bundle`` packages the
    value with whatever derivatives the requested order needs (0 value, 1
    gradient, 2 Hessian, 3 Hessian plus metric derivatives).
    """

    dim: int

    def log_density(self, x: NDArray) -> float:
        raise NotImplementedError

    def log_density_generic(self, xs):
        """Same function over dual-number coordinates (interior points only)."""
        raise NotImplementedError

    def support_test(self, x: NDArray) -> bool:
        return True

    def sample_initial_state(self, rng: np.random.Generator) -> NDArray:
        raise NotImplementedError

    def bundle(self, x: NDArray, order: int = 0) -> DerivativeBundle:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        if not self.support_test(x):
            return DerivativeBundle(point=x, value=-math.inf)
        if order <= 0:
            return DerivativeBundle(point=x, value=self.log_density(x))
        if order == 1:
            val, grad = ad.value_and_gradient(self.log_density_generic, x)
            return DerivativeBundle(point=x, value=val, gradient=grad)
        val, grad, hess = ad.value_gradient_hessian(self.log_density_generic, x)
        out = DerivativeBundle(point=x, value=val, gradient=grad, hessian=hess)
        if order >= 3:
            out.metric_derivs = ad.metric_derivatives(self.log_density_generic, x)
        return out


def _offset_start(rng: np.random.Generator, n: int) -> NDArray:
    # random direction at distance U(3, 5) from the origin/mode
    z = rng.standard_normal(n)
    u = z / np.linalg.norm(z)
    return rng.uniform(3.0, 5.0) * u


class GaussianTarget(LogTarget):
    """N(mean, cov) up to its normalizing constant (0 at the mode)."""

    def __init__(self, mean: NDArray, cov: NDArray | None = None):
        self.mean = np.asarray(mean, dtype=float)
        self.dim = len(self.mean)
        self.cov = np.eye(self.dim) if cov is None else np.asarray(cov, dtype=float)
        self.precision = invert_spd(self.cov)

    def log_density(self, x: NDArray) -> float:
        d = np.asarray(x, dtype=float) - self.mean
        # same evaluation order as bundle() so values agree bitwise
        return -0.5 * float(d @ (self.precision @ d))

    def log_density_generic(self, xs):
        centered = [xs[i] - self.mean[i] for i in range(self.dim)]
        return -0.5 * ad.quad_form_const(self.precision, centered)

    def bundle(self, x: NDArray, order: int = 0) -> DerivativeBundle:
        # closed-form derivatives; order 3 falls back to the dual-number path
        if order >= 3:
            return super().bundle(x, order)
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        d = x - self.mean
        g = self.precision @ d
        out = DerivativeBundle(point=x, value=-0.5 * float(d @ g))
        if order >= 1:
            out.gradient = -g
        if order >= 2:
            out.hessian = -self.precision.copy()
        return out

    def sample_initial_state(self, rng: np.random.Generator) -> NDArray:
        return self.mean + _offset_start(rng, self.dim)


def ar1_correlation(n: int, xi: float) -> NDArray:
    """Correlation matrix with entries xi^|i-j|."""
    if not 0.0 < xi < 1.0:
        raise InvalidParams(f"xi must lie in (0,1), got {xi}")
    return toeplitz(xi ** np.arange(n))


class StudentTTarget(LogTarget):
    """Student-t with dof nu and scale ((nu-2)/nu) * ar1_correlation(n, xi).

    The scale convention makes the covariance of the distribution equal the
    correlation matrix itself for nu > 2.  Log-density is unnormalized (0 at
    the mode).
    """

    def __init__(self, dim: int, dof: float = 30.0, xi: float = 0.9):
        if dof <= 2.0:
            raise InvalidParams("dof must exceed 2")
        self.dim = dim
        self.dof = float(dof)
        self.xi = float(xi)
        self.scale_factor_cov = ar1_correlation(dim, xi)
        self.scale_matrix = ((dof - 2.0) / dof) * self.scale_factor_cov
        self.scale_factor = cholesky(self.scale_matrix)
        self.scale_inv = invert_spd(self.scale_matrix)

    def log_density(self, x: NDArray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        q = float(x @ (self.scale_inv @ x))
        return -0.5 * (self.dof + self.dim) * math.log1p(q / self.dof)

    def log_density_generic(self, xs):
        q = ad.quad_form_const(self.scale_inv, xs)
        return -0.5 * (self.dof + self.dim) * ad.log1p(q / self.dof)

    def analytic_gradient(self, x: NDArray) -> NDArray:
        """Closed-form gradient, kept as an independent check on autodiff."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        u = self.scale_inv @ x
        q = float(x @ u)
        return -((self.dof + self.dim) / self.dof) * u / (1.0 + q / self.dof)

    def analytic_hessian(self, x: NDArray) -> NDArray:
        """Closed-form Hessian: -a*Sinv/s + (2a/nu) u u^T / s^2 with
        u = Sinv x, s = 1 + q/nu, a = (nu+n)/nu."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        u = self.scale_inv @ x
        q = float(x @ u)
        a = (self.dof + self.dim) / self.dof
        s = 1.0 + q / self.dof
        return (-a / s) * self.scale_inv + (2.0 * a / self.dof) * np.outer(u, u) / (s * s)

    def bundle(self, x: NDArray, order: int = 0) -> DerivativeBundle:
        # closed-form derivatives; order 3 falls back to the dual-number path
        if order >= 3:
            return super().bundle(x, order)
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        u = self.scale_inv @ x
        q = float(x @ u)
        out = DerivativeBundle(
            point=x, value=-0.5 * (self.dof + self.dim) * math.log1p(q / self.dof)
        )
        a = (self.dof + self.dim) / self.dof
        s = 1.0 + q / self.dof
        if order >= 1:
            out.gradient = -a * u / s
        if order >= 2:
            out.hessian = (-a / s) * self.scale_inv + (
                2.0 * a / self.dof
            ) * np.outer(u, u) / (s * s)
        return out

    def sample_initial_state(self, rng: np.random.Generator) -> NDArray:
        return _offset_start(rng, self.dim)


# -- Keplerian dynamics ---------------------------------------------------


def solve_kepler(mean_anomaly, eccentricity: float, tol: float = 1e-13, max_iter: int = 50):
    """Eccentric anomaly E solving M = E - e sin(E), M reduced mod 2*pi.

    Newton iteration with a bisection safeguard on [0, 2*pi]; the residual at
    the returned E is at most ``tol``.  Accepts scalars or arrays of mean
    anomalies.
    """
    e = float(eccentricity)
    if not 0.0 <= e <= 0.999:
        raise InvalidParams(f"eccentricity {e} outside [0, 0.999]")
    m = np.asarray(mean_anomaly, dtype=float)
    scalar = m.ndim == 0
    mr = np.mod(m, TWO_PI)
    ecc = np.atleast_1d(mr + e * np.sin(mr))
    mr = np.atleast_1d(mr)
    lo = np.zeros_like(ecc)
    hi = np.full_like(ecc, TWO_PI)
    resid = ecc - e * np.sin(ecc) - mr
    for _ in range(max_iter):
        if np.all(np.abs(resid) <= tol):
            break
        hi = np.where(resid > 0.0, np.minimum(hi, ecc), hi)
        lo = np.where(resid < 0.0, np.maximum(lo, ecc), lo)
        step = resid / (1.0 - e * np.cos(ecc))
        nxt = ecc - step
        outside = (nxt <= lo) | (nxt >= hi)
        ecc = np.where(outside, 0.5 * (lo + hi), nxt)
        resid = ecc - e * np.sin(ecc) - mr
    if np.any(np.abs(resid) > tol):
        raise NoConvergence(f"Kepler solve residual {np.max(np.abs(resid)):.3e} > {tol:.1e}")
    return float(ecc[0]) if scalar else ecc.reshape(m.shape)


def _solve_kepler_generic(m, e):
    """Dual-aware Kepler solve: float solve, then Newton steps in duals.

    The value-level solution is converged already, so a few dual-arithmetic
    Newton refinements make first and second derivative parts exact.
    """
    mv, ev = ad.value_of(m), ad.value_of(e)
    base = solve_kepler(mv, ev)
    template = m if isinstance(m, (ad.Dual, ad.Dual2)) else e
    if not isinstance(template, (ad.Dual, ad.Dual2)):
        return base
    reduced = m - (mv - math.fmod(mv, TWO_PI))  # constant shift: derivatives flow through
    ecc = base + 0.0 * template  # promote to a constant dual
    for _ in range(3):
        ecc = ecc - (ecc - e * ad.sin(ecc) - reduced) / (1.0 - e * ad.cos(ecc))
    return ecc


def true_anomaly(ecc_anomaly, eccentricity):
    """True anomaly from eccentric anomaly via the half-angle relation."""
    if isinstance(ecc_anomaly, (ad.Dual, ad.Dual2)) or isinstance(
        eccentricity, (ad.Dual, ad.Dual2)
    ):
        half = 0.5 * ecc_anomaly
        return 2.0 * ad.atan2(
            ad.sqrt(1.0 + eccentricity) * ad.sin(half),
            ad.sqrt(1.0 - eccentricity) * ad.cos(half),
        )
    e = float(eccentricity)
    if not 0.0 <= e < 1.0:
        raise InvalidParams(f"eccentricity {e} outside [0, 1)")
    half = 0.5 * np.asarray(ecc_anomaly, dtype=float)
    out = 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(half), np.sqrt(1.0 - e) * np.cos(half))
    return float(out) if np.ndim(ecc_anomaly) == 0 else out


# -- radial-velocity model ------------------------------------------------


@dataclass(frozen=True)
class RVDataset:
    """Observation times (days), velocities (m/s) and noise scales (m/s)."""

    times: NDArray
    velocities: NDArray
    sigmas: NDArray

    def __post_init__(self):
        for name in ("times", "velocities", "sigmas"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.times)
        if n < 1 or len(self.velocities) != n or len(self.sigmas) != n:
            raise InvalidParams("dataset columns must share a positive length")
        if not (
            np.all(np.isfinite(self.times))
            and np.all(np.isfinite(self.velocities))
            and np.all(np.isfinite(self.sigmas))
        ):
            raise InvalidParams("dataset contains non-finite entries")
        if np.any(self.sigmas <= 0.0):
            raise InvalidParams("sigmas must be positive")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "v", "sigma"])
            for t, v, s in zip(self.times, self.velocities, self.sigmas):
                writer.writerow([repr(float(t)), repr(float(v)), repr(float(s))])

    @classmethod
    def read_csv(cls, path) -> "RVDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["t", "v", "sigma"]:
                raise InvalidParams(f"unexpected dataset header {header}")
            rows = [[float(cell) for cell in row] for row in reader if row]
        cols = np.array(rows, dtype=float).T
        return cls(times=cols[0], velocities=cols[1], sigmas=cols[2])


@dataclass(frozen=True)
class RVPriorConfig:
    """Hyperparameters of the radial-velocity priors.

    Amplitudes and periods get modified-Jeffreys priors 1/(x + knee) truncated
    to (0, max]; eccentricities are uniform on [0,1), angles uniform on
    [0, 2*pi), and the systemic term C uniform on [-c_bound, c_bound].
    """

    k_knee: float = 1.0
    k_max: float = 2000.0
    p_knee: float = 1.0
    p_max: float = 1e4
    c_bound: float = 1000.0


def rv_dim(n_planets: int) -> int:
    """Parameter count: C plus (K, P, e, M0, omega) per planet."""
    return 1 + 5 * n_planets


def _planet_slice(j: int) -> slice:
    base = 1 + 5 * j
    return slice(base, base + 5)


def _check_planet(k, p, e) -> None:
    if not 0.0 <= e < 1.0:
        raise InvalidParams(f"eccentricity {e} outside [0, 1)")
    if p <= 0.0:
        raise InvalidParams(f"period {p} must be positive")
    if k < 0.0:
        raise InvalidParams(f"amplitude {k} must be non-negative")


def rv_model_velocity(theta: NDArray, t, c_additive: bool = False):
    """Line-of-sight velocity at times ``t``.

    The per-planet term is K_j (cos(omega_j + T_j(t)) + e_j cos omega_j) with
    T_j the true anomaly at mean anomaly M0_j + 2*pi*t/P_j.  The systemic
    term C multiplies the sum by default; ``c_additive`` switches it to the
    conventional additive offset.
    """
    theta = np.asarray(theta, dtype=float)
    n_planets = (len(theta) - 1) // 5
    if len(theta) != rv_dim(n_planets) or n_planets < 1:
        raise InvalidParams(f"parameter vector length {len(theta)} invalid")
    t = np.asarray(t, dtype=float)
    total = np.zeros_like(t, dtype=float)
    for j in range(n_planets):
        k, p, e, m0, w = theta[_planet_slice(j)]
        _check_planet(k, p, e)
        mean_anom = m0 + TWO_PI * t / p
        anom = true_anomaly(solve_kepler(mean_anom, e), e)
        total = total + k * (np.cos(w + anom) + e * math.cos(w))
    c = theta[0]
    return c + total if c_additive else c * total


def _rv_velocity_generic(xs, t: float, n_planets: int, c_additive: bool):
    """Single-time model value over dual coordinates."""
    total = 0.0
    for j in range(n_planets):
        sl = _planet_slice(j)
        k, p, e, m0, w = xs[sl.start], xs[sl.start + 1], xs[sl.start + 2], xs[sl.start + 3], xs[sl.start + 4]
        mean_anom = m0 + (TWO_PI * t) / p
        ecc_anom = _solve_kepler_generic(mean_anom, e)
        anom = true_anomaly(ecc_anom, e)
        total = total + k * (ad.cos(w + anom) + e * ad.cos(w))
    return xs[0] + total if c_additive else xs[0] * total


def rv_log_likelihood(theta: NDArray, data: RVDataset, c_additive: bool = False) -> float:
    """-1/2 sum of squared standardized residuals."""
    v = rv_model_velocity(theta, data.times, c_additive=c_additive)
    r = (v - data.velocities) / data.sigmas
    return -0.5 * float(r @ r)


def modified_jeffreys_logpdf(x, knee: float, upper: float):
    """log p for p(x) = 1/((x + knee) * log(1 + upper/knee)) on (0, upper].

    Finite at x = 0 (the density is bounded); support enforcement happens in
    the caller.  Accepts duals.
    """
    log_norm = math.log(knee) + math.log(math.log1p(upper / knee))
    return -ad.log1p(x / knee) - log_norm


def _rv_support(theta: NDArray, n_planets: int, prior: RVPriorConfig) -> bool:
    if abs(theta[0]) > prior.c_bound:
        return False
    for j in range(n_planets):
        k, p, e, m0, w = theta[_planet_slice(j)]
        if not (0.0 < k <= prior.k_max and 0.0 < p <= prior.p_max):
            return False
        if not (0.0 <= e < 1.0 and 0.0 <= m0 < TWO_PI and 0.0 <= w < TWO_PI):
            return False
    return True


def rv_log_prior(theta: NDArray, prior: RVPriorConfig = RVPriorConfig()) -> float:
    """Sum of the log prior terms; -inf outside the support."""
    theta = np.asarray(theta, dtype=float)
    n_planets = (len(theta) - 1) // 5
    if len(theta) != rv_dim(n_planets) or n_planets < 1:
        raise InvalidParams(f"parameter vector length {len(theta)} invalid")
    if not _rv_support(theta, n_planets, prior):
        return -math.inf
    out = -math.log(2.0 * prior.c_bound)
    for j in range(n_planets):
        k, p = theta[_planet_slice(j)][:2]
        out += modified_jeffreys_logpdf(k, prior.k_knee, prior.k_max)
        out += modified_jeffreys_logpdf(p, prior.p_knee, prior.p_max)
        out += -2.0 * math.log(TWO_PI)  # M0 and omega uniform terms
    return out


def _rv_log_prior_generic(xs, n_planets: int, prior: RVPriorConfig):
    out = -math.log(2.0 * prior.c_bound) - 2.0 * n_planets * math.log(TWO_PI)
    for j in range(n_planets):
        base = _planet_slice(j).start
        out = out + modified_jeffreys_logpdf(xs[base], prior.k_knee, prior.k_max)
        out = out + modified_jeffreys_logpdf(xs[base + 1], prior.p_knee, prior.p_max)
    return out


def uniform_time_grid(n: int = 50, span_days: float = 730.0) -> NDArray:
    """Deterministic evenly spaced observation epochs over the baseline."""
    return np.linspace(0.0, span_days, n)


def default_one_planet_params() -> NDArray:
    return np.array([1.0, 20.0, 50.0, 0.2, math.pi / 4.0, math.pi / 4.0])


def default_two_planet_params() -> NDArray:
    quarter = math.pi / 4.0
    return np.array(
        [1.0, 30.0, 40.0, 0.2, quarter, quarter, 30.0, 80.8, 0.2, quarter, quarter]
    )


def simulate_rv_dataset(
    true_params: NDArray,
    times: NDArray,
    sigmas: NDArray,
    rng: np.random.Generator,
    c_additive: bool = False,
) -> RVDataset:
    """Model curve plus independent N(0, sigma_i^2) noise."""
    times = np.asarray(times, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    curve = rv_model_velocity(true_params, times, c_additive=c_additive)
    noise = sigmas * rng.standard_normal(len(times))
    return RVDataset(times=times, velocities=curve + noise, sigmas=sigmas)


class RVTarget(LogTarget):
    """Posterior over (C, K_j, P_j, e_j, M0_j, omega_j) given a dataset."""

    def __init__(
        self,
        dataset: RVDataset,
        n_planets: int,
        prior: RVPriorConfig = RVPriorConfig(),
        c_additive: bool = False,
        init_center: NDArray | None = None,
    ):
        if n_planets < 1:
            raise InvalidParams("need at least one planet")
        self.dataset = dataset
        self.n_planets = n_planets
        self.dim = rv_dim(n_planets)
        self.prior = prior
        self.c_additive = c_additive
        self.init_center = None if init_center is None else np.asarray(init_center, dtype=float)
        if self.init_center is not None and self.init_center.shape != (self.dim,):
            raise InvalidParams("init_center length does not match parameter count")

    def support_test(self, x: NDArray) -> bool:
        return _rv_support(np.asarray(x, dtype=float), self.n_planets, self.prior)

    def log_density(self, x: NDArray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"point shape {x.shape}, target dim {self.dim}")
        if not self.support_test(x):
            return -math.inf
        lik = rv_log_likelihood(x, self.dataset, c_additive=self.c_additive)
        return lik + rv_log_prior(x, self.prior)

    def log_density_generic(self, xs):
        data = self.dataset
        out = _rv_log_prior_generic(xs, self.n_planets, self.prior)
        for i in range(len(data.times)):
            v = _rv_velocity_generic(xs, float(data.times[i]), self.n_planets, self.c_additive)
            r = (v - float(data.velocities[i])) / float(data.sigmas[i])
            out = out - 0.5 * r * r
        return out

    def sample_initial_state(self, rng: np.random.Generator) -> NDArray:
        if self.init_center is None:
            raise InvalidParams("no init_center configured for this dataset target")
        for _ in range(1000):
            cand = self.init_center * (1.0 + 0.05 * rng.standard_normal(self.dim))
            if self.support_test(cand):
                return cand
        raise InvalidParams("could not draw a supported initial state")
