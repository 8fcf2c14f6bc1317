"""Frisk-decision threshold model.

Each (race, location) cell carries a discriminant risk distribution
disc(phi_rd, delta_rd) and a latent threshold t_rd.  Observed searches
are Binomial(stops, s_rd) with s_rd = Pr(P > t_rd); observed hits are
Binomial(searches, h_rd) with h_rd = E[P | P > t_rd].  The log posterior
adds the hierarchical priors from :mod:`threshtest.params`, and the
gradient is fully analytic (chained through the normal hazard terms in
:mod:`threshtest.rates`), which is what keeps HMC integration steps
cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from threshtest.params import ModelParams, ParamLayout, PriorConfig, PriorEval
from threshtest.rates import cell_rates, cell_terms

__all__ = ["CellCounts", "DerivedRates", "FriskModel", "ThresholdSummary", "extract_thresholds"]


@dataclass(frozen=True)
class CellCounts:
    """Aggregated counts for one (race, location) cell."""

    race: int
    location: int
    stops: int
    searches: int
    hits: int

    def __post_init__(self):
        if self.race < 0 or self.location < 0:
            raise ValueError("race and location indices must be nonnegative")
        if not (0 <= self.hits <= self.searches <= self.stops):
            raise ValueError(
                f"need 0 <= hits <= searches <= stops, got "
                f"({self.hits}, {self.searches}, {self.stops})"
            )


@dataclass
class DerivedRates:
    """Model-implied search and hit rates for the observed cells."""

    search_rate: np.ndarray
    hit_rate: np.ndarray


class FriskModel:
    """Log posterior target for the frisk-decision threshold test."""

    def __init__(
        self,
        cells: list[CellCounts],
        n_races: int | None = None,
        n_locations: int | None = None,
        priors: PriorConfig | None = None,
    ):
        if not cells and (n_races is None or n_locations is None):
            raise ValueError("empty cell list needs explicit n_races and n_locations")
        races = np.array([c.race for c in cells], dtype=np.intp)
        locs = np.array([c.location for c in cells], dtype=np.intp)
        self.n_races = int(n_races if n_races is not None else races.max() + 1)
        self.n_locations = int(n_locations if n_locations is not None else locs.max() + 1)
        if cells and (races.max() >= self.n_races or locs.max() >= self.n_locations):
            raise ValueError("cell indices exceed the declared cardinalities")
        pair_ids = races * self.n_locations + locs
        if len(np.unique(pair_ids)) != len(pair_ids):
            raise ValueError("duplicate (race, location) cells; aggregate first")

        self.cells = list(cells)
        self.priors = priors if priors is not None else PriorConfig()
        self.layout = ParamLayout(self.n_races, self.n_locations)
        self._prior = PriorEval(self.layout, self.priors)

        # Zero-stop cells contribute nothing to the likelihood; drop them
        # from the hot-path arrays (their thresholds still exist and just
        # follow the prior).
        keep = np.array([c.stops > 0 for c in cells], dtype=bool)
        self._race = races[keep]
        self._loc = locs[keep]
        self._tidx = self.layout.cell_index(self._race, self._loc)
        self._stops = np.array([c.stops for c in cells], dtype=float)[keep]
        self._searches = np.array([c.searches for c in cells], dtype=float)[keep]
        self._hits = np.array([c.hits for c in cells], dtype=float)[keep]
        self._not_searched = self._stops - self._searches
        self._missed = self._searches - self._hits

        def binom_coef(n, k):
            return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)

        self._log_coef = float(
            np.sum(binom_coef(self._stops, self._searches))
            + np.sum(binom_coef(self._searches, self._hits))
        )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def _cell_params(self, theta):
        lay = self.layout
        phi_d = lay.location_effect(theta[lay.phi_d])
        lam_d = lay.location_effect(theta[lay.lam_d])
        a = theta[lay.phi_r][self._race] + phi_d[self._loc]
        lam = theta[lay.lam_r][self._race] + lam_d[self._loc]
        u = theta[lay.logit_t][self._tidx]
        return a, lam, u

    def value_and_grad(self, theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._value_and_grad(np.asarray(theta, dtype=float))

    def _value_and_grad(self, theta):
        lay = self.layout
        a, lam, u = self._cell_params(theta)
        # Each stop is pass / hit / miss; searches = hits + misses, so the
        # two binomials collapse to this trinomial and the log-s chain
        # drops out of the likelihood entirely.
        t = cell_terms(a, lam, u, need_pass=True)
        m, mi, ns = self._hits, self._missed, self._not_searched
        loglik = (
            ns @ t.log_p_pass + m @ t.log_p_hit + mi @ t.log_p_miss + self._log_coef
        )

        grad = np.zeros(lay.dim)
        logp = self._prior(theta, grad)
        dl = ns * t.d_log_p_pass + m * t.d_log_p_hit + mi * t.d_log_p_miss
        grad[lay.phi_r] += np.bincount(self._race, weights=dl[0], minlength=self.n_races)
        grad[lay.lam_r] += np.bincount(self._race, weights=dl[1], minlength=self.n_races)
        grad[lay.phi_d] += np.bincount(self._loc, weights=dl[0], minlength=self.n_locations)[1:]
        grad[lay.lam_d] += np.bincount(self._loc, weights=dl[1], minlength=self.n_locations)[1:]
        grad[lay.logit_t] += np.bincount(
            self._tidx, weights=dl[2], minlength=self.n_races * self.n_locations
        )
        return logp + loglik, grad

    def log_posterior(self, theta) -> float:
        return self.value_and_grad(theta)[0]

    def log_posterior_grad(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def derived_rates(self, theta) -> DerivedRates:
        """Search and hit rates implied by one parameter vector, per observed cell."""
        a, lam, u = self._cell_params(np.asarray(theta, dtype=float))
        r = cell_rates(a, lam, u)
        return DerivedRates(search_rate=r.s, hit_rate=r.h)

    def observed_rates(self) -> DerivedRates:
        """Empirical search and hit rates (hit rate NaN where nothing was searched)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return DerivedRates(
                search_rate=self._stops_safe_div(self._searches, self._stops),
                hit_rate=self._stops_safe_div(self._hits, self._searches),
            )

    @staticmethod
    def _stops_safe_div(num, den):
        out = np.full_like(np.asarray(num, dtype=float), np.nan)
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        return out

    def stop_weights(self) -> np.ndarray:
        """Observed stops per cell, (n_races, n_locations)."""
        weights = np.zeros((self.n_races, self.n_locations))
        for c in self.cells:
            weights[c.race, c.location] = c.stops
        return weights

    def unpack(self, theta) -> ModelParams:
        return ModelParams.unpack(theta, self.layout)


@dataclass
class ThresholdSummary:
    """Posterior threshold summaries in probability space."""

    cell_mean: np.ndarray  # (n_races, n_locations)
    cell_lo: np.ndarray
    cell_hi: np.ndarray
    race_mean: np.ndarray  # stop-weighted race-level averages
    race_lo: np.ndarray
    race_hi: np.ndarray
    stop_weights: np.ndarray  # (n_races, n_locations)


def extract_thresholds(draws, model, *, ci=0.95) -> ThresholdSummary:
    """Posterior mean and credible interval of t_rd, per cell and per race.

    ``draws`` is an array of parameter vectors, shape (n, dim) or
    (chains, iters, dim).  Race-level thresholds average cells with the
    cell's stop counts as weights, computed draw by draw so the interval
    is a genuine posterior interval of the weighted average.
    """
    from scipy.special import expit

    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        draws = draws.reshape(-1, draws.shape[-1])
    if draws.ndim != 2 or draws.shape[0] == 0:
        raise ValueError("draws must be a non-empty (n, dim) or (chains, iters, dim) array")
    lay = model.layout
    if draws.shape[1] != lay.dim:
        raise ValueError(f"draws have dimension {draws.shape[1]}, model expects {lay.dim}")

    alpha = 0.5 * (1.0 - ci)
    r_count, d_count = lay.n_races, lay.n_locations
    t = expit(draws[:, lay.logit_t])  # (n, R*D)

    cell_mean = t.mean(axis=0).reshape(r_count, d_count)
    cell_lo = np.quantile(t, alpha, axis=0).reshape(r_count, d_count)
    cell_hi = np.quantile(t, 1.0 - alpha, axis=0).reshape(r_count, d_count)

    weights = model.stop_weights()
    w = weights.reshape(-1)
    race_stats = np.empty((draws.shape[0], r_count))
    for r in range(r_count):
        idx = np.arange(r * d_count, (r + 1) * d_count)
        wr = w[idx]
        if wr.sum() == 0:
            race_stats[:, r] = t[:, idx].mean(axis=1)
        else:
            race_stats[:, r] = t[:, idx] @ (wr / wr.sum())

    return ThresholdSummary(
        cell_mean=cell_mean,
        cell_lo=cell_lo,
        cell_hi=cell_hi,
        race_mean=race_stats.mean(axis=0),
        race_lo=np.quantile(race_stats, alpha, axis=0),
        race_hi=np.quantile(race_stats, 1.0 - alpha, axis=0),
        stop_weights=weights,
    )
