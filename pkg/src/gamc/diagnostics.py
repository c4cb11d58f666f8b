"""Chain diagnostics: autocovariance, Geyer ESS, summaries, cost tables.

Effective sample size uses Geyer's initial monotone sequence estimator:
pair consecutive autocovariances, truncate at the first non-positive
pair sum, enforce monotonicity, and assemble the asymptotic variance as

    sigma2 = -gamma_0 + 2 * sum_t Gamma_t,   Gamma_t = gamma_{2t} + gamma_{2t+1}

so that an IID chain reports ESS close to the chain length.  All
estimators are affine-invariant: ess(a*x + b) == ess(x) up to float
rounding (exactly, when `a` is a power of two).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .sampler import ChainRecord

__all__ = [
    "DegenerateChain",
    "autocovariance",
    "ess_geyer",
    "mcse_mean",
    "mcse_variance",
    "EssReport",
    "SamplerSummary",
    "summarize",
    "running_mean",
    "trace_header",
    "trace_rows",
    "acf_table",
    "running_mean_table",
    "complexity_table",
]

# Variance floor relative to gamma_0; keeps ESS finite and <= m when the
# pairing cancels everything (e.g. perfectly antithetic chains).
_SIGMA2_FLOOR = 1e-12


class DegenerateChain(ValueError):
    """Chain has zero variance; ESS and autocorrelations are undefined."""


def autocovariance(x: Sequence[float] | NDArray, max_lag: int | None = None) -> NDArray:
    """Biased (1/m-normalised) autocovariances gamma_0 .. gamma_max_lag.

    The biased normalisation is deliberate: it guarantees the spectral
    estimate stays positive semi-definite, which the Geyer pairing relies
    on.  Computed via FFT on a power-of-two grid of length >= 2m-1 so no
    circular wrap-around contaminates the lags.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected 1-d chain, got shape {x.shape}")
    m = x.shape[0]
    if m < 2:
        raise ValueError("need at least two samples for autocovariance")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    if np.ptp(x) == 0.0:
        raise DegenerateChain("constant chain: zero variance")
    if max_lag is None:
        max_lag = m // 2
    max_lag = min(int(max_lag), m - 1)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")

    centered = x - x.mean()
    nfft = 1 << int(2 * m - 1).bit_length()
    spec = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1] / m
    if acov[0] <= 0.0:
        raise DegenerateChain("zero variance after centering")
    return acov


def _geyer_sigma2(x: NDArray, max_lag: int | None) -> tuple[float, float]:
    # Returns (gamma_0, sigma2_mc).  Shared by ess_geyer and mcse_mean.
    acov = autocovariance(x, max_lag)
    g0 = float(acov[0])
    total = 0.0
    prev = math.inf
    for t in range(acov.shape[0] // 2):
        pair = float(acov[2 * t] + acov[2 * t + 1])
        if pair <= 0.0:
            break
        pair = min(pair, prev)  # initial monotone sequence
        total += pair
        prev = pair
    sigma2 = -g0 + 2.0 * total
    return g0, max(sigma2, _SIGMA2_FLOOR * g0)


def ess_geyer(x: Sequence[float] | NDArray, max_lag: int | None = None) -> float:
    """Effective sample size of a scalar chain, clamped to (0, m]."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] if x.ndim == 1 else 0
    if m < 10:
        raise ValueError("need at least 10 samples for an ESS estimate")
    g0, sigma2 = _geyer_sigma2(x, max_lag)
    return min(m * g0 / sigma2, float(m))


def mcse_mean(x: Sequence[float] | NDArray, max_lag: int | None = None) -> float:
    """Monte-Carlo standard error of the chain mean, sqrt(sigma2 / m)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 10:
        raise ValueError("need at least 10 samples for an MCSE estimate")
    _, sigma2 = _geyer_sigma2(x, max_lag)
    return math.sqrt(sigma2 / x.shape[0])


def mcse_variance(x: Sequence[float] | NDArray, max_lag: int | None = None) -> float:
    """MCSE of the chain variance: the mean-MCSE of the centered squares."""
    x = np.asarray(x, dtype=float)
    return mcse_mean((x - x.mean()) ** 2, max_lag)


@dataclass(frozen=True)
class EssReport:
    """Per-coordinate ESS plus the four scalar reductions used in reports."""

    per_coordinate: NDArray
    minimum: float
    mean: float
    median: float
    maximum: float

    @classmethod
    def from_values(cls, values: Sequence[float] | NDArray) -> "EssReport":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.shape[0] == 0:
            raise ValueError("need a non-empty 1-d ESS vector")
        return cls(
            per_coordinate=v,
            minimum=float(v.min()),
            mean=float(v.mean()),
            median=float(np.median(v)),
            maximum=float(v.max()),
        )


@dataclass(frozen=True)
class SamplerSummary:
    sampler: str
    acceptance_rate: float
    ess: EssReport
    runtime_seconds: float
    efficiency: float  # min ESS per second
    speedup_vs_mala: float | None = None


def _post_burn_in(record: ChainRecord) -> tuple[NDArray, NDArray]:
    states = record.states[record.burn_in :]
    accepted = record.accepted[record.burn_in :]
    if states.shape[0] < 10:
        raise ValueError("fewer than 10 post-burn-in samples")
    return states, accepted


def summarize(
    record: ChainRecord,
    mala_reference: SamplerSummary | None = None,
    max_lag: int | None = None,
) -> SamplerSummary:
    """Acceptance rate, per-coordinate ESS, and min-ESS/second for one chain.

    `speedup_vs_mala` is efficiency divided by the reference efficiency;
    values above 1 mean this sampler out-performs the supplied MALA run.
    """
    states, accepted = _post_burn_in(record)
    ess_values = [ess_geyer(states[:, j], max_lag) for j in range(states.shape[1])]
    report = EssReport.from_values(ess_values)
    runtime = record.wall_time
    if not runtime > 0.0:
        raise ValueError("chain runtime must be positive")
    efficiency = report.minimum / runtime
    speedup = None
    if mala_reference is not None:
        speedup = efficiency / mala_reference.efficiency
    return SamplerSummary(
        sampler=record.sampler,
        acceptance_rate=float(np.mean(accepted)),
        ess=report,
        runtime_seconds=runtime,
        efficiency=efficiency,
        speedup_vs_mala=speedup,
    )


def running_mean(x: Sequence[float] | NDArray) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] == 0:
        raise ValueError("need a non-empty 1-d chain")
    return np.cumsum(x) / np.arange(1, x.shape[0] + 1)


# --- tabular exports used by the experiment harness ---------------------

def trace_header(dim: int) -> list[str]:
    return ["iter", *[f"x{j}" for j in range(dim)], "logp", "accepted", "geometric"]


def trace_rows(record: ChainRecord) -> list[list]:
    """Full chain (burn-in included) as rows matching trace_header."""
    geometric = record.geometric_step
    rows = []
    for i in range(record.states.shape[0]):
        rows.append(
            [
                i,
                *[float(v) for v in record.states[i]],
                float(record.log_densities[i]),
                int(record.accepted[i]),
                int(geometric[i]),
            ]
        )
    return rows


def acf_table(record: ChainRecord, max_lag: int = 100) -> tuple[list[str], list[list]]:
    """Normalised post-burn-in autocorrelations, one column per coordinate."""
    states, _ = _post_burn_in(record)
    m, dim = states.shape
    lag = min(max_lag, m - 1)
    cols = []
    for j in range(dim):
        acov = autocovariance(states[:, j], lag)
        cols.append(acov / acov[0])
    header = ["lag", *[f"x{j}" for j in range(dim)]]
    rows = [[k, *[float(cols[j][k]) for j in range(dim)]] for k in range(lag + 1)]
    return header, rows


def running_mean_table(record: ChainRecord) -> tuple[list[str], list[list]]:
    """Post-burn-in running means, one column per coordinate."""
    states, _ = _post_burn_in(record)
    m, dim = states.shape
    means = np.column_stack([running_mean(states[:, j]) for j in range(dim)])
    header = ["iter", *[f"x{j}" for j in range(dim)]]
    rows = [[i, *[float(v) for v in means[i]]] for i in range(m)]
    return header, rows


# --- asymptotic cost-per-step tables ------------------------------------

_SIMPLE_EXPONENTS = {"mala": 2.0, "smmala": 3.0, "mmala": 3.0}
_AM_MATMUL_EXPONENT = 2.373  # fast matrix-multiplication bound for the covariance work
_EXPENSIVE_EXPONENTS = {"mala": 1.0, "smmala": 2.0, "mmala": 3.0, "am": 0.0}


def complexity_table(n: int, cost_model: str = "simple", f: float = 1.0) -> dict[str, float]:
    """Per-step cost scaling for each sampler at dimension n.

    cost_model "simple": the target and its derivatives cost O(1), so the
    linear algebra dominates (n^2 MALA, n^3 metric samplers, n^2.373 AM).
    cost_model "expensive": one target evaluation costs f >> n^2; costs are
    f times the number of scalar derivative sweeps (n for a gradient, n^2
    for a Hessian, n^3 with metric derivatives, 1 for derivative-free AM).
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if cost_model == "simple":
        table = {name: float(n) ** p for name, p in _SIMPLE_EXPONENTS.items()}
        table["am"] = float(n) ** _AM_MATMUL_EXPONENT
        return table
    if cost_model == "expensive":
        if not f > 0.0:
            raise ValueError("evaluation cost f must be positive")
        return {name: f * float(n) ** p for name, p in _EXPENSIVE_EXPONENTS.items()}
    raise ValueError(f"unknown cost_model {cost_model!r}")
