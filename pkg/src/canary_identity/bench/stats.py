"""Bootstrap confidence intervals, tail percentiles and a-priori sample size."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class BcaInterval:
    mean: float
    lower: float
    upper: float
    resamples: int
    alpha: float


def _bootstrap_means(x: np.ndarray, resamples: int, rng: np.random.Generator, chunk: int = 1000) -> np.ndarray:
    n = x.size
    out = np.empty(resamples)
    for start in range(0, resamples, chunk):
        stop = min(start + chunk, resamples)
        idx = rng.integers(0, n, size=(stop - start, n))
        out[start:stop] = x[idx].mean(axis=1)
    return out


def jackknife_acceleration(x: np.ndarray) -> float:
    n = x.size
    loo = (x.sum() - x) / (n - 1)
    d = loo.mean() - loo
    denom = (d**2).sum()
    if denom == 0.0:
        return 0.0
    return float((d**3).sum() / (6.0 * denom**1.5))


def bca_interval(
    samples: Sequence[float], resamples: int = 10_000, alpha: float = 0.05, rng_seed: int = 0
) -> BcaInterval:
    """Bias-corrected and accelerated bootstrap CI for the mean.

    Bias correction comes from the share of bootstrap means below the sample
    mean; acceleration from the jackknife skewness of the sample. Constant
    samples return the degenerate interval ``[c, c]``.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if np.all(x == x[0]):
        c = float(x[0])  # x.mean() can be off by an ulp
        return BcaInterval(c, c, c, resamples, alpha)
    theta = float(x.mean())

    boots = _bootstrap_means(x, resamples, np.random.default_rng(rng_seed))
    below = np.mean(boots < theta)
    # keep z0 finite when every resample falls on one side
    below = min(max(below, 0.5 / resamples), 1.0 - 0.5 / resamples)
    z0 = norm.ppf(below)
    a = jackknife_acceleration(x)
    z = norm.ppf([alpha / 2.0, 1.0 - alpha / 2.0])
    adjusted = norm.cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)))
    lower, upper = np.quantile(boots, adjusted)
    return BcaInterval(theta, float(lower), float(upper), resamples, alpha)


def tail_percentiles(samples: Sequence[float]) -> Dict[str, float]:
    p50, p95, p99 = np.percentile(np.asarray(samples, dtype=float), [50, 95, 99])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}


def power_sample_size_raw(alpha: float, power: float, sigma: float, delta: float) -> float:
    """``2 (z_alpha + z_beta)^2 sigma^2 / delta^2`` with one-sided ``z_alpha``."""
    if delta == 0:
        raise ValueError("effect size delta must be non-zero")
    if not (0 < alpha < 1 and 0 < power < 1):
        raise ValueError("alpha and power must lie in (0, 1)")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z_alpha = norm.ppf(1.0 - alpha)
    z_beta = norm.ppf(power)
    return 2.0 * (z_alpha + z_beta) ** 2 * sigma**2 / delta**2


def power_sample_size(alpha: float, power: float, sigma: float, delta: float) -> int:
    return max(1, math.ceil(power_sample_size_raw(alpha, power, sigma, delta)))
