"""Convergence diagnostics and the sampling-cost decomposition.

R-hat is the split, rank-normalized between/within variance ratio; the
effective sample size comes from chain-averaged autocorrelations summed
under Geyer's initial monotone sequence rule, on split chains.  The cost
decomposition factors the time per effective sample as

    seconds/n_eff = samples/n_eff * steps/sample * seconds/step,

an accounting identity over the instrumented totals (one gradient
evaluation per leapfrog step).  The n_eff convention is the minimum over
parameters; the per-parameter vector and the mean are also reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from threshtest.sampler import PosteriorDraws

__all__ = ["Diagnostics", "split_rhat", "ess", "diagnose"]


def _split_chains(x: np.ndarray) -> np.ndarray:
    """Halve each chain: (chains, n) -> (2*chains, n//2)."""
    chains, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half :]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    shape = x.shape
    ranks = rankdata(x.reshape(-1), method="average")
    z = ndtri((ranks - 0.375) / (ranks.size + 0.25))
    return z.reshape(shape)


def split_rhat(x: np.ndarray) -> float:
    """Split R-hat of one parameter's draws, shape (chains, iters)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("split_rhat needs draws shaped (chains >= 2, iters)")
    z = _split_chains(_rank_normalize(x))
    m, n = z.shape
    chain_means = z.mean(axis=1)
    w = z.var(axis=1, ddof=1).mean()
    b_over_n = chain_means.var(ddof=1)
    var_plus = w * (n - 1) / n + b_over_n
    if w <= 0:
        return 1.0
    return float(np.sqrt(var_plus / w))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def ess(x: np.ndarray) -> float:
    """Effective sample size of one parameter's draws, shape (chains, iters).

    Chain-averaged autocorrelations, truncated at the first negative
    Geyer pair sum and forced monotone nonincreasing.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("ess needs draws shaped (chains, iters)")
    x = _split_chains(x)
    m, n = x.shape
    if n < 4:
        raise ValueError("too few draws for an autocorrelation estimate")

    chain_vars = x.var(axis=1, ddof=1)
    w = chain_vars.mean()
    if w == 0:
        return float(m * n)
    chain_means = x.mean(axis=1)
    var_plus = w * (n - 1) / n + (chain_means.var(ddof=1) if m > 1 else 0.0)

    acov = np.stack([_autocovariance(x[i]) for i in range(m)])
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus

    # Geyer pairs: sum consecutive (even, odd) lags, truncate at the
    # first negative pair, then enforce monotone decrease.  With
    # tau = 2 * sum(pairs) - 1 the lag-0 double count cancels.
    max_pairs = (n - 2) // 2
    prev = np.inf
    total = 0.0
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        prev = pair
        total += pair
    tau = max(2.0 * total - 1.0, 1.0 / (m * n))
    return float(min(m * n / tau, m * n * math.log10(max(m * n, 10))))


@dataclass
class Diagnostics:
    """Per-parameter convergence statistics plus the cost decomposition."""

    rhat: np.ndarray
    ess: np.ndarray
    n_eff: float  # min over parameters
    ess_mean: float
    max_rhat: float
    total_samples: int
    total_steps: int
    total_seconds: float
    samples_per_neff: float
    steps_per_sample: float
    seconds_per_step: float
    seconds_per_neff: float
    divergence_rate: float
    step_size: np.ndarray = field(default_factory=lambda: np.array([]))

    def to_dict(self) -> dict:
        return {
            "n_eff_min": self.n_eff,
            "n_eff_mean": self.ess_mean,
            "max_rhat": self.max_rhat,
            "total_samples": self.total_samples,
            "total_steps": self.total_steps,
            "total_seconds": self.total_seconds,
            "samples_per_neff": self.samples_per_neff,
            "steps_per_sample": self.steps_per_sample,
            "seconds_per_step": self.seconds_per_step,
            "seconds_per_neff": self.seconds_per_neff,
            "divergence_rate": self.divergence_rate,
            "step_size": self.step_size.tolist(),
        }


def diagnose(pd: PosteriorDraws) -> Diagnostics:
    """Convergence and cost statistics for a sampling run."""
    chains, iters, dim = pd.draws.shape
    if chains < 2:
        raise ValueError("diagnose needs at least 2 chains for split R-hat")
    if iters < 100:
        raise ValueError("diagnose needs at least 100 post-warmup draws per chain")

    rhats = np.array([split_rhat(pd.draws[:, :, j]) for j in range(dim)])
    esses = np.array([ess(pd.draws[:, :, j]) for j in range(dim)])

    n_eff = float(esses.min())
    total_samples = chains * iters
    total_steps = int(pd.n_steps.sum())
    total_seconds = float(pd.chain_seconds.sum())

    samples_per_neff = total_samples / n_eff
    steps_per_sample = total_steps / total_samples
    seconds_per_step = total_seconds / total_steps
    seconds_per_neff = samples_per_neff * steps_per_sample * seconds_per_step
    # Accounting identity: the product telescopes to seconds/n_eff.
    assert abs(seconds_per_neff - total_seconds / n_eff) <= 1e-9 * abs(seconds_per_neff)

    return Diagnostics(
        rhat=rhats,
        ess=esses,
        n_eff=n_eff,
        ess_mean=float(esses.mean()),
        max_rhat=float(rhats.max()),
        total_samples=total_samples,
        total_steps=total_steps,
        total_seconds=total_seconds,
        samples_per_neff=samples_per_neff,
        steps_per_sample=steps_per_sample,
        seconds_per_step=seconds_per_step,
        seconds_per_neff=seconds_per_neff,
        divergence_rate=pd.divergence_rate,
        step_size=pd.step_size,
    )
