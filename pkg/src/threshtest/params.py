"""Parameter layout and priors shared by the frisk and stop models.

Both models sample the same unconstrained vector: race effects phi_r and
lam_r, location effects phi_d and lam_d (first location pinned to zero
for identifiability), per-cell thresholds in logit space, per-race
threshold prior means mu_t, and the log scales of the two hierarchical
location priors.  Per-cell quantities derive as

    phi_rd   = logistic(phi_r + phi_d)
    delta_rd = exp(lam_r + lam_d)
    t_rd     = logistic(logit_t_rd)

Priors follow the weakly-informative-on-race / tight-on-location
prescription; every scale is overridable.  The threshold prior is a
logit-normal density on t_rd, which combined with the Jacobian of the
logit transform is exactly a normal on logit_t_rd, so it is implemented
in that form.  The hierarchical scales are sampled as logs with their
Jacobian terms kept explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from threshtest import _fast

__all__ = ["PriorConfig", "ParamLayout", "ModelParams", "PriorEval", "prior_logp_grad"]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Prior scales for the threshold models."""

    phi_r_scale: float = 2.0
    lam_r_scale: float = 2.0
    mu_t_loc: float = -3.0
    mu_t_scale: float = 2.0
    sigma_t: float = 1.0
    sigma_phi_d_scale: float = 0.25
    sigma_lam_d_scale: float = 0.25

    def __post_init__(self):
        for name in (
            "phi_r_scale",
            "lam_r_scale",
            "mu_t_scale",
            "sigma_t",
            "sigma_phi_d_scale",
            "sigma_lam_d_scale",
        ):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


class ParamLayout:
    """Slices of the flat unconstrained parameter vector.

    Cell thresholds are stored for the full race x location grid in
    row-major order (cell = race * n_locations + location), so layouts
    stay uniform even when some cells carry no data.
    """

    def __init__(self, n_races: int, n_locations: int):
        if n_races < 1 or n_locations < 1:
            raise ValueError("need at least one race and one location")
        self.n_races = n_races
        self.n_locations = n_locations
        r, d = n_races, n_locations
        offset = 0

        def take(count):
            nonlocal offset
            sl = slice(offset, offset + count)
            offset += count
            return sl

        self.phi_r = take(r)
        self.lam_r = take(r)
        self.phi_d = take(d - 1)
        self.lam_d = take(d - 1)
        self.logit_t = take(r * d)
        self.mu_t = take(r)
        self.log_sigma_phi_d = take(1)
        self.log_sigma_lam_d = take(1)
        self.dim = offset

    def cell_index(self, race, location):
        return np.asarray(race) * self.n_locations + np.asarray(location)

    def location_effect(self, block: np.ndarray) -> np.ndarray:
        """Prepend the pinned zero for the reference location."""
        return np.concatenate(([0.0], block))

    def param_names(self) -> list[str]:
        names = []
        names += [f"phi_r[{i}]" for i in range(self.n_races)]
        names += [f"lam_r[{i}]" for i in range(self.n_races)]
        names += [f"phi_d[{i}]" for i in range(1, self.n_locations)]
        names += [f"lam_d[{i}]" for i in range(1, self.n_locations)]
        names += [
            f"logit_t[{r},{d}]"
            for r in range(self.n_races)
            for d in range(self.n_locations)
        ]
        names += [f"mu_t[{i}]" for i in range(self.n_races)]
        names += ["log_sigma_phi_d", "log_sigma_lam_d"]
        return names


@dataclass
class ModelParams:
    """Structured view of one parameter vector.

    Location effect arrays include the pinned reference zero, so they
    have full length n_locations.
    """

    phi_r: np.ndarray
    lam_r: np.ndarray
    phi_d: np.ndarray
    lam_d: np.ndarray
    logit_t: np.ndarray  # (n_races, n_locations)
    mu_t: np.ndarray
    log_sigma_phi_d: float
    log_sigma_lam_d: float = 0.0

    @classmethod
    def unpack(cls, theta: np.ndarray, layout: ParamLayout) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (layout.dim,):
            raise ValueError(f"expected vector of length {layout.dim}, got {theta.shape}")
        return cls(
            phi_r=theta[layout.phi_r].copy(),
            lam_r=theta[layout.lam_r].copy(),
            phi_d=layout.location_effect(theta[layout.phi_d]),
            lam_d=layout.location_effect(theta[layout.lam_d]),
            logit_t=theta[layout.logit_t].reshape(layout.n_races, layout.n_locations).copy(),
            mu_t=theta[layout.mu_t].copy(),
            log_sigma_phi_d=float(theta[layout.log_sigma_phi_d][0]),
            log_sigma_lam_d=float(theta[layout.log_sigma_lam_d][0]),
        )

    def pack(self, layout: ParamLayout) -> np.ndarray:
        theta = np.empty(layout.dim)
        theta[layout.phi_r] = self.phi_r
        theta[layout.lam_r] = self.lam_r
        theta[layout.phi_d] = self.phi_d[1:]
        theta[layout.lam_d] = self.lam_d[1:]
        theta[layout.logit_t] = np.asarray(self.logit_t).ravel()
        theta[layout.mu_t] = self.mu_t
        theta[layout.log_sigma_phi_d] = self.log_sigma_phi_d
        theta[layout.log_sigma_lam_d] = self.log_sigma_lam_d
        return theta

    # -- derived per-cell quantities --------------------------------------

    @property
    def phi_rd(self) -> np.ndarray:
        return special.expit(self.phi_r[:, None] + self.phi_d[None, :])

    @property
    def delta_rd(self) -> np.ndarray:
        return np.exp(self.lam_r[:, None] + self.lam_d[None, :])

    @property
    def t_rd(self) -> np.ndarray:
        return special.expit(self.logit_t)


class PriorEval:
    """Precomputed prior evaluator for the sampler hot path.

    Precomputes index vectors, precisions and normalizing constants once,
    then evaluates the log prior and accumulates its gradient into a
    caller-owned buffer with a handful of vector operations.  Matches
    :func:`prior_logp_grad` (the straightforward reference used in tests)
    to float round-off.
    """

    def __init__(self, layout: ParamLayout, priors: PriorConfig):
        self.layout = layout
        self.priors = priors
        r, d = layout.n_races, layout.n_locations

        # Independent fixed-scale normals: phi_r, lam_r, mu_t.
        idx = np.concatenate(
            [
                np.arange(layout.phi_r.start, layout.phi_r.stop),
                np.arange(layout.lam_r.start, layout.lam_r.stop),
                np.arange(layout.mu_t.start, layout.mu_t.stop),
            ]
        )
        loc = np.concatenate(
            [np.zeros(r), np.zeros(r), np.full(r, priors.mu_t_loc)]
        )
        inv_sd = np.concatenate(
            [
                np.full(r, 1.0 / priors.phi_r_scale),
                np.full(r, 1.0 / priors.lam_r_scale),
                np.full(r, 1.0 / priors.mu_t_scale),
            ]
        )
        self._idx = idx
        self._loc = loc
        self._inv_sd = inv_sd
        self._const_fixed = float(np.sum(np.log(inv_sd))) - idx.size * _LOG_SQRT_2PI

        self._inv_sigma_t = 1.0 / priors.sigma_t
        self._const_t = -r * d * (math.log(priors.sigma_t) + _LOG_SQRT_2PI)

        # Hierarchical blocks: (effects slice, log-scale slice, hyper scale, n, const)
        self._blocks = []
        for block, lsl, hyper in (
            (layout.phi_d, layout.log_sigma_phi_d, priors.sigma_phi_d_scale),
            (layout.lam_d, layout.log_sigma_lam_d, priors.sigma_lam_d_scale),
        ):
            n = block.stop - block.start
            const = (
                -n * _LOG_SQRT_2PI
                + math.log(2.0)
                - math.log(hyper)
                - _LOG_SQRT_2PI
            )
            self._blocks.append((block, lsl, 1.0 / (hyper * hyper), n, const))

        # Packed views for the numba kernel.
        self._block_starts = np.array([b[0].start for b in self._blocks], dtype=np.int64)
        self._block_lens = np.array(
            [b[0].stop - b[0].start for b in self._blocks], dtype=np.int64
        )
        self._log_sigma_idx = np.array([b[1].start for b in self._blocks], dtype=np.int64)
        self._inv_hyper2 = np.array([b[2] for b in self._blocks])

    def __call__(self, theta: np.ndarray, grad: np.ndarray) -> float:
        if _fast.HAVE_NUMBA:
            lay = self.layout
            with np.errstate(over="ignore", invalid="ignore"):
                return _fast.prior_kernel(
                    theta,
                    grad,
                    self._idx,
                    self._loc,
                    self._inv_sd,
                    self._const_fixed,
                    lay.n_races,
                    lay.n_locations,
                    lay.logit_t.start,
                    lay.mu_t.start,
                    self._inv_sigma_t,
                    self._const_t,
                    self._block_starts,
                    self._block_lens,
                    self._log_sigma_idx,
                    self._inv_hyper2,
                )
        return self.call_numpy(theta, grad)

    def call_numpy(self, theta: np.ndarray, grad: np.ndarray) -> float:
        lay = self.layout
        z = (theta[self._idx] - self._loc) * self._inv_sd
        logp = -0.5 * float(z @ z) + self._const_fixed
        grad[self._idx] -= z * self._inv_sd

        u = theta[lay.logit_t].reshape(lay.n_races, lay.n_locations)
        mu = theta[lay.mu_t]
        zt = (u - mu[:, None]) * self._inv_sigma_t
        logp += -0.5 * float(np.sum(zt * zt)) + self._const_t
        zt *= self._inv_sigma_t
        grad[lay.logit_t] -= zt.ravel()
        grad[lay.mu_t] += zt.sum(axis=1)

        for block, lsl, inv_hyper2, n, const in self._blocks:
            effects = theta[block]
            log_sigma = theta[lsl.start]
            sigma = math.exp(log_sigma)
            inv_sigma = 1.0 / sigma
            z = effects * inv_sigma
            zz = float(z @ z)
            logp += -0.5 * zz - n * log_sigma + const
            logp += -0.5 * sigma * sigma * inv_hyper2 + log_sigma
            grad[block] -= z * inv_sigma
            grad[lsl.start] += -n + zz - sigma * sigma * inv_hyper2 + 1.0
        return logp


def _normal_terms(x, scale, loc=0.0):
    z = (np.asarray(x) - loc) / scale
    logp = float(np.sum(-0.5 * z * z - math.log(scale) - _LOG_SQRT_2PI))
    grad = -z / scale
    return logp, grad


def prior_logp_grad(theta: np.ndarray, layout: ParamLayout, priors: PriorConfig):
    """Log prior density (with Jacobians for the log-scale transforms) and its gradient."""
    grad = np.zeros(layout.dim)
    logp = 0.0

    lp, g = _normal_terms(theta[layout.phi_r], priors.phi_r_scale)
    logp += lp
    grad[layout.phi_r] = g

    lp, g = _normal_terms(theta[layout.lam_r], priors.lam_r_scale)
    logp += lp
    grad[layout.lam_r] = g

    lp, g = _normal_terms(theta[layout.mu_t], priors.mu_t_scale, priors.mu_t_loc)
    logp += lp
    grad[layout.mu_t] = g

    # Thresholds: logit_t[r, d] ~ N(mu_t[r], sigma_t).
    u = theta[layout.logit_t].reshape(layout.n_races, layout.n_locations)
    mu = theta[layout.mu_t]
    z = (u - mu[:, None]) / priors.sigma_t
    logp += float(
        np.sum(-0.5 * z * z) - u.size * (math.log(priors.sigma_t) + _LOG_SQRT_2PI)
    )
    grad[layout.logit_t] += (-z / priors.sigma_t).ravel()
    grad[layout.mu_t] += np.sum(z / priors.sigma_t, axis=1)

    # Hierarchical location effects with sampled half-normal scales.
    for block, log_scale_slice, hyper_scale in (
        (layout.phi_d, layout.log_sigma_phi_d, priors.sigma_phi_d_scale),
        (layout.lam_d, layout.log_sigma_lam_d, priors.sigma_lam_d_scale),
    ):
        effects = theta[block]
        log_sigma = float(theta[log_scale_slice][0])
        sigma = math.exp(log_sigma)
        n = effects.size
        z = effects / sigma
        logp += float(np.sum(-0.5 * z * z)) - n * (log_sigma + _LOG_SQRT_2PI)
        grad[block] += -z / sigma
        d_log_sigma = -n + float(np.sum(z * z))
        # half-N(0, hyper_scale) on sigma, plus the log-transform Jacobian.
        logp += (
            -0.5 * (sigma / hyper_scale) ** 2
            + math.log(2.0)
            - math.log(hyper_scale)
            - _LOG_SQRT_2PI
            + log_sigma
        )
        d_log_sigma += -(sigma / hyper_scale) ** 2 + 1.0
        grad[log_scale_slice] += d_log_sigma

    return logp, grad
