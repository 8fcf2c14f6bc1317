"""Censored stop-decision threshold model.

Non-stopped individuals are unobserved, so the likelihood works with the
racial composition of stops instead of a stop/no-stop binomial.  With
census base rates c_rd, the probability that a stopped individual in
precinct d is of race r is

    theta_rd = c_rd * Pr(stopped | race r) / sum_r' c_r'd * Pr(stopped | r')

where Pr(stopped | r) is the discriminant tail probability at the cell's
threshold, identical to the frisk model's search rate.  Per precinct the
stop counts are multinomial(theta_d, N_d); hits are binomial in the hit
rate, with every stop treated as an implicit weapon search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from threshtest.params import ModelParams, ParamLayout, PriorConfig, PriorEval
from threshtest.rates import cell_rates, cell_terms

__all__ = ["PrecinctStopData", "StopModel", "CENSUS_FLOOR"]

logger = logging.getLogger(__name__)

CENSUS_FLOOR = 1e-4


@dataclass(frozen=True)
class PrecinctStopData:
    """Per-precinct stop counts, hit counts and census fractions by race."""

    location: int
    stops: np.ndarray
    hits: np.ndarray
    census: np.ndarray

    def __post_init__(self):
        stops = np.asarray(self.stops, dtype=float)
        hits = np.asarray(self.hits, dtype=float)
        census = np.asarray(self.census, dtype=float)
        if not (stops.shape == hits.shape == census.shape):
            raise ValueError("stops, hits and census must share one shape")
        if np.any(stops < 0) or np.any(hits < 0) or np.any(hits > stops):
            raise ValueError("need 0 <= hits <= stops per race")
        if np.any(census < 0):
            raise ValueError("census fractions must be nonnegative")
        if census.sum() <= 0:
            raise ValueError("census vector must not be all zero")
        object.__setattr__(self, "stops", stops)
        object.__setattr__(self, "hits", hits)
        object.__setattr__(self, "census", census / census.sum())

    @property
    def total_stops(self) -> float:
        return float(self.stops.sum())


class StopModel:
    """Log posterior target for the censored stop-decision threshold test."""

    def __init__(self, data: list[PrecinctStopData], priors: PriorConfig | None = None):
        if not data:
            raise ValueError("need at least one precinct")
        data = sorted(data, key=lambda p: p.location)
        locs = [p.location for p in data]
        if locs != list(range(len(data))):
            raise ValueError("precinct locations must be exactly 0..D-1, each once")
        n_races = data[0].stops.size
        if any(p.stops.size != n_races for p in data):
            raise ValueError("all precincts must cover the same races")

        self.data = data
        self.n_races = n_races
        self.n_locations = len(data)
        self.priors = priors if priors is not None else PriorConfig()
        self.layout = ParamLayout(self.n_races, self.n_locations)

        self._stops = np.stack([p.stops for p in data], axis=1)  # (R, D)
        self._hits = np.stack([p.hits for p in data], axis=1)
        self._missed = self._stops - self._hits
        self._totals = self._stops.sum(axis=0)  # N_d

        census = np.stack([p.census for p in data], axis=1)
        floored = census < CENSUS_FLOOR
        if np.any(floored & (self._stops > 0)):
            bad = np.argwhere(floored & (self._stops > 0))
            logger.warning(
                "census share below %g for %d stopped cells (race, precinct): %s; "
                "flooring and renormalizing",
                CENSUS_FLOOR,
                len(bad),
                bad[:5].tolist(),
            )
        census = np.maximum(census, CENSUS_FLOOR)
        census = census / census.sum(axis=0, keepdims=True)
        self._census = census
        self._log_census = np.log(census)
        self._prior = PriorEval(self.layout, self.priors)

        self._log_coef = float(
            np.sum(gammaln(self._totals + 1.0)) - np.sum(gammaln(self._stops + 1.0))
        ) + float(
            np.sum(
                gammaln(self._stops + 1.0)
                - gammaln(self._hits + 1.0)
                - gammaln(self._missed + 1.0)
            )
        )
        # The composition term splits as sum S*(log c) - sum_d N_d * LSE_d
        # plus the hit/miss category terms; the first piece is constant.
        self._log_coef += float(np.sum(self._stops * self._log_census))

    @property
    def dim(self) -> int:
        return self.layout.dim

    def _grid_params(self, theta):
        lay = self.layout
        phi_d = lay.location_effect(theta[lay.phi_d])
        lam_d = lay.location_effect(theta[lay.lam_d])
        a = theta[lay.phi_r][:, None] + phi_d[None, :]
        lam = theta[lay.lam_r][:, None] + lam_d[None, :]
        u = theta[lay.logit_t].reshape(self.n_races, self.n_locations)
        return a, lam, u

    def value_and_grad(self, theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._value_and_grad(np.asarray(theta, dtype=float))

    def _value_and_grad(self, theta):
        lay = self.layout
        shape = (self.n_races, self.n_locations)
        a, lam, u = self._grid_params(theta)
        t = cell_terms(a.ravel(), lam.ravel(), u.ravel(), need_pass=False)
        log_s = t.log_s.reshape(shape)

        # Composition: log theta = log c + log s - LSE over races.  The
        # hit binomial's log h = log p_hit - log s cancels the stop
        # counts' log s (every stop is an implicit search), leaving the
        # per-precinct LSE plus the hit/miss category terms.
        z = self._log_census + log_s
        zmax = z.max(axis=0)
        lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=0))
        theta_rd = np.exp(z - lse)

        loglik = (
            -float(self._totals @ lse)
            + float(np.sum(self._hits * t.log_p_hit.reshape(shape)))
            + float(np.sum(self._missed * t.log_p_miss.reshape(shape)))
            + self._log_coef
        )

        # d loglik / d log_s from the -N*LSE piece is -N_d * theta_rd.
        dmult = (-self._totals[None, :] * theta_rd).ravel()
        m, mi = self._hits.ravel(), self._missed.ravel()

        grad = np.zeros(lay.dim)
        logp = self._prior(theta, grad)
        dl = dmult * t.d_log_s + m * t.d_log_p_hit + mi * t.d_log_p_miss
        da = dl[0].reshape(shape)
        dlam = dl[1].reshape(shape)
        grad[lay.phi_r] += da.sum(axis=1)
        grad[lay.lam_r] += dlam.sum(axis=1)
        grad[lay.phi_d] += da.sum(axis=0)[1:]
        grad[lay.lam_d] += dlam.sum(axis=0)[1:]
        grad[lay.logit_t] += dl[2]
        return logp + loglik, grad

    def log_posterior(self, theta) -> float:
        return self.value_and_grad(theta)[0]

    def log_posterior_grad(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def stop_probability(self, race: int, location: int, theta) -> float:
        """Pr(stopped | race, location): the discriminant tail at the cell threshold."""
        a, lam, u = self._grid_params(np.asarray(theta, dtype=float))
        out = cell_rates(
            np.array([a[race, location]]),
            np.array([lam[race, location]]),
            np.array([u[race, location]]),
        )
        return float(out.s[0])

    def composition(self, location: int, theta, census=None) -> np.ndarray:
        """Race composition theta_d of stops in one precinct; sums to 1."""
        census = self._census[:, location] if census is None else np.asarray(census, float)
        if census.sum() <= 0:
            raise ValueError("census vector must not be all zero")
        a, lam, u = self._grid_params(np.asarray(theta, dtype=float))
        out = cell_rates(a[:, location], lam[:, location], u[:, location])
        z = np.log(census / census.sum()) + out.log_s
        z -= z.max()
        w = np.exp(z)
        return w / w.sum()

    def hit_rates(self, theta) -> np.ndarray:
        """Model-implied hit rates, (R, D)."""
        a, lam, u = self._grid_params(np.asarray(theta, dtype=float))
        r = cell_rates(a.ravel(), lam.ravel(), u.ravel())
        return r.h.reshape(self.n_races, self.n_locations)

    def stop_shares(self, theta) -> np.ndarray:
        """Model-implied stop composition theta_rd, (R, D)."""
        return np.stack(
            [self.composition(d, theta) for d in range(self.n_locations)], axis=1
        )

    def stop_weights(self) -> np.ndarray:
        """Observed stops per cell, (n_races, n_locations)."""
        return self._stops.copy()

    def unpack(self, theta) -> ModelParams:
        return ModelParams.unpack(theta, self.layout)
