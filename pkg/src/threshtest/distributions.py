"""Discriminant distributions on (0, 1).

A discriminant distribution is the law of the posterior class probability
g(X) when a latent binary class Y ~ Bernoulli(phi) emits normal signals
X | Y=0 ~ N(mu0, sigma0) and X | Y=1 ~ N(mu1, sigma1).  In the
homoskedastic case the family collapses to two parameters (phi, delta)
with delta = (mu1 - mu0) / sigma, and the canonical representation fixes
mu0 = 0, sigma = 1 so that

    g(x) = logistic(logit(phi) + delta * x - delta**2 / 2).

Tail probabilities and conditional means then reduce to normal CCDFs,
which is what makes these distributions cheap inside a gradient-based
sampler.  Everything here is pure; mixture terms are combined in log
space and normal tails go through erfc / log_ndtr so the deep tails keep
relative accuracy.

Reference distributions (beta in mean/total-count form, logit-normal)
are included for approximation experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special
from scipy import stats

__all__ = [
    "DiscParams",
    "GeneralDiscParams",
    "Beta",
    "LogitNormal",
    "RefDist",
    "g",
    "g_inv",
    "posterior_probability",
    "canonicalize",
    "ccdf",
    "log_ccdf",
    "conditional_mean",
    "pdf",
    "log_pdf",
    "sample",
    "ref_pdf",
    "ref_cdf",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def _log_norm_pdf(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


def _norm_ccdf(x):
    # 0.5*erfc(x/sqrt(2)) keeps relative accuracy in the upper tail,
    # unlike 1 - ndtr(x).
    return 0.5 * special.erfc(x / _SQRT2)


def _log_norm_ccdf(x):
    return special.log_ndtr(-np.asarray(x, dtype=float))


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _check_unit_open(t):
    arr = np.asarray(t, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError("t must lie strictly inside (0, 1)")
    return arr


def _maybe_scalar(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class DiscParams:
    """Homoskedastic discriminant distribution disc(phi, delta).

    phi is the positive-class fraction (also the distribution mean);
    delta > 0 is the class separation in signal standard deviations.
    """

    phi: float
    delta: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise ValueError(f"phi must be in (0, 1), got {self.phi}")
        if not (self.delta > 0.0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")

    @property
    def mean(self) -> float:
        return self.phi

    # -- logit-space view -------------------------------------------------
    #
    # With U = logit(g(X)) = logit(phi) - delta^2/2 + delta*X, U is a
    # two-component normal mixture with means (c, c + delta^2), common
    # scale delta, and weights (1-phi, phi).  The approximation module
    # integrates in this space to dodge the 1/(t(1-t)) edge singularity.

    @property
    def _logit_offset(self) -> float:
        return special.logit(self.phi) - 0.5 * self.delta * self.delta

    def logpdf_logit(self, u):
        u = np.asarray(u, dtype=float)
        c = self._logit_offset
        d = self.delta
        z0 = (u - c) / d
        z1 = (u - c - d * d) / d
        lw0 = special.log_expit(-special.logit(self.phi))
        lw1 = special.log_expit(special.logit(self.phi))
        out = np.logaddexp(
            lw0 + _log_norm_pdf(z0),
            lw1 + _log_norm_pdf(z1),
        ) - math.log(d)
        return _maybe_scalar(out, u)

    def logit_var(self) -> float:
        # Var(U) for the logit-space mixture: delta^2 + phi(1-phi) delta^4.
        d2 = self.delta * self.delta
        return d2 + self.phi * (1.0 - self.phi) * d2 * d2

    def logit_knots(self, levels) -> np.ndarray:
        """Logit-space points straddling the given mass levels.

        Union of the per-component normal quantiles; consecutive gaps
        bound the mass either component can hide between them.
        """
        z = special.ndtri(np.asarray(levels, dtype=float))
        c = self._logit_offset
        d = self.delta
        return np.union1d(c + d * z, c + d * d + d * z)


@dataclass(frozen=True)
class GeneralDiscParams:
    """Five-parameter discriminant distribution (possibly heteroskedastic).

    Requires mu1 > mu0 so the positive class emits larger signals.
    """

    phi: float
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise ValueError(f"phi must be in (0, 1), got {self.phi}")
        if not (self.sigma0 > 0.0 and self.sigma1 > 0.0):
            raise ValueError("sigma0 and sigma1 must be positive")
        if not (self.mu1 > self.mu0):
            raise ValueError("mu1 must exceed mu0")

    @property
    def is_homoskedastic(self) -> bool:
        return math.isclose(self.sigma0, self.sigma1, rel_tol=1e-12, abs_tol=0.0)


def g(x, p: DiscParams):
    """Signal-to-probability map of the canonical representation.

    g(x) = 1 / (1 + ((1-phi)/phi) * exp(-delta*x + delta^2/2)), evaluated
    as a logistic in log space so large |x| cannot overflow.
    """
    x = _as_float_array(x, "x")
    out = special.expit(special.logit(p.phi) + p.delta * x - 0.5 * p.delta * p.delta)
    return _maybe_scalar(out, x)


def g_inv(t, p: DiscParams):
    """Inverse of ``g``: the signal whose posterior probability is t."""
    t = _check_unit_open(t)
    out = (special.logit(t) - special.logit(p.phi)) / p.delta + 0.5 * p.delta
    return _maybe_scalar(out, t)


def posterior_probability(x, p: GeneralDiscParams):
    """Pr(Y=1 | X=x) for the general five-parameter representation."""
    x = _as_float_array(x, "x")
    z0 = (x - p.mu0) / p.sigma0
    z1 = (x - p.mu1) / p.sigma1
    a = special.logit(p.phi)
    l0 = special.log_expit(-a) + _log_norm_pdf(z0) - math.log(p.sigma0)
    l1 = special.log_expit(a) + _log_norm_pdf(z1) - math.log(p.sigma1)
    out = special.expit(l1 - l0)
    return _maybe_scalar(out, x)


def canonicalize(p: GeneralDiscParams) -> DiscParams:
    """Collapse a homoskedastic representation to (phi, delta).

    delta = (mu1 - mu0) / sigma; the distribution of g(X) is unchanged.
    Heteroskedastic input is rejected: without a common sigma the
    signal-to-probability map is non-monotone and no two-parameter
    representative exists.
    """
    if not p.is_homoskedastic:
        raise ValueError(
            f"canonicalize requires sigma0 == sigma1, got {p.sigma0} and {p.sigma1}"
        )
    return DiscParams(phi=p.phi, delta=(p.mu1 - p.mu0) / p.sigma0)


def ccdf(t, p: DiscParams):
    """Pr(P > t) = (1-phi)*Phi_bar(x) + phi*Phi_bar(x - delta) at x = g_inv(t)."""
    t = _check_unit_open(t)
    x = (special.logit(t) - special.logit(p.phi)) / p.delta + 0.5 * p.delta
    out = (1.0 - p.phi) * _norm_ccdf(x) + p.phi * _norm_ccdf(x - p.delta)
    return _maybe_scalar(out, t)


def log_ccdf(t, p: DiscParams):
    """log Pr(P > t), combined with log-sum-exp for small-phi / deep-tail safety."""
    t = _check_unit_open(t)
    x = (special.logit(t) - special.logit(p.phi)) / p.delta + 0.5 * p.delta
    a = special.logit(p.phi)
    out = np.logaddexp(
        special.log_expit(-a) + _log_norm_ccdf(x),
        special.log_expit(a) + _log_norm_ccdf(x - p.delta),
    )
    return _maybe_scalar(out, t)


def conditional_mean(t, p: DiscParams):
    """E[P | P > t]: mean risk above the threshold.

    Equals phi*Phi_bar(x-delta) / Pr(P > t); evaluated via log-space
    weights so the deep upper tail degrades to 1 instead of 0/0.
    """
    t = _check_unit_open(t)
    x = (special.logit(t) - special.logit(p.phi)) / p.delta + 0.5 * p.delta
    a = special.logit(p.phi)
    l0 = special.log_expit(-a) + _log_norm_ccdf(x)
    l1 = special.log_expit(a) + _log_norm_ccdf(x - p.delta)
    out = np.exp(l1 - np.logaddexp(l0, l1))
    return _maybe_scalar(out, t)


def log_pdf(t, p: DiscParams):
    """Log density of disc(phi, delta) at t.

    Change of variables through g: mixture density at x = g_inv(t)
    divided by delta * t * (1 - t).
    """
    t = _check_unit_open(t)
    x = (special.logit(t) - special.logit(p.phi)) / p.delta + 0.5 * p.delta
    a = special.logit(p.phi)
    mix = np.logaddexp(
        special.log_expit(-a) + _log_norm_pdf(x),
        special.log_expit(a) + _log_norm_pdf(x - p.delta),
    )
    out = mix - math.log(p.delta) - np.log(t) - np.log1p(-t)
    return _maybe_scalar(out, t)


def pdf(t, p: DiscParams):
    """Density of disc(phi, delta) at t; diverges like 1/(t(1-t)) at the edges."""
    return np.exp(log_pdf(t, p)) if np.ndim(t) else float(np.exp(log_pdf(t, p)))


def sample(p: DiscParams, n: int, seed) -> np.ndarray:
    """Draw n values of g(X) by simulating the generative process.

    Y ~ Bernoulli(phi), then X ~ N(delta*Y, 1), then map through g.
    ``seed`` may be an int or a numpy Generator.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = rng.random(n) < p.phi
    x = rng.standard_normal(n)
    x[y] += p.delta
    return g(x, p)


# ---------------------------------------------------------------------------
# Reference distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Beta:
    """Beta distribution in mean / total-count form.

    shape1 = phi * lam, shape2 = (1 - phi) * lam, so the mean is phi and
    lam acts as a concentration.
    """

    phi: float
    lam: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise ValueError(f"phi must be in (0, 1), got {self.phi}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")

    @property
    def shape1(self) -> float:
        return self.phi * self.lam

    @property
    def shape2(self) -> float:
        return (1.0 - self.phi) * self.lam

    @property
    def mean(self) -> float:
        return self.phi

    def logpdf(self, t):
        t = _check_unit_open(t)
        a, b = self.shape1, self.shape2
        out = (a - 1.0) * np.log(t) + (b - 1.0) * np.log1p(-t) - special.betaln(a, b)
        return _maybe_scalar(out, t)

    def pdf(self, t):
        out = np.exp(self.logpdf(t))
        return _maybe_scalar(out, t)

    def cdf(self, t):
        t = _check_unit_open(t)
        out = special.betainc(self.shape1, self.shape2, t)
        return _maybe_scalar(out, t)

    def logit_var(self) -> float:
        # Var(logit T) for T ~ Beta(a, b) is psi'(a) + psi'(b).
        return float(special.polygamma(1, self.shape1) + special.polygamma(1, self.shape2))

    def logpdf_logit(self, u):
        u = np.asarray(u, dtype=float)
        a, b = self.shape1, self.shape2
        # f_U(u) = expit(u)^a * expit(-u)^b / B(a, b); log1p(exp(.)) via logaddexp.
        out = -a * np.logaddexp(0.0, -u) - b * np.logaddexp(0.0, u) - special.betaln(a, b)
        return _maybe_scalar(out, u)

    def logit_knots(self, levels) -> np.ndarray:
        levels = np.asarray(levels, dtype=float)
        a, b = self.shape1, self.shape2
        t = stats.beta.ppf(levels, a, b)
        with np.errstate(divide="ignore"):
            u = special.logit(t)
        # Tiny shapes push quantiles past float range; patch with the
        # power-law tail t^a/(a*B) (and its mirror image for the top).
        lo_bad = ~np.isfinite(u) & (levels < 0.5)
        hi_bad = ~np.isfinite(u) & (levels >= 0.5)
        if np.any(lo_bad):
            u[lo_bad] = (np.log(levels[lo_bad]) + math.log(a) + special.betaln(a, b)) / a
        if np.any(hi_bad):
            q = 1.0 - levels[hi_bad]
            u[hi_bad] = -(np.log(q) + math.log(b) + special.betaln(a, b)) / b
        return np.unique(u)


@dataclass(frozen=True)
class LogitNormal:
    """Distribution of expit(Z) for Z ~ N(mu, sigma)."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")

    @property
    def mean(self) -> float:
        # No closed form; Gauss-Hermite on E[expit(mu + sigma*Z)].
        nodes, weights = np.polynomial.hermite_e.hermegauss(64)
        return float(np.sum(weights * special.expit(self.mu + self.sigma * nodes)) / math.sqrt(2 * math.pi))

    def logpdf(self, t):
        t = _check_unit_open(t)
        z = (special.logit(t) - self.mu) / self.sigma
        out = _log_norm_pdf(z) - math.log(self.sigma) - np.log(t) - np.log1p(-t)
        return _maybe_scalar(out, t)

    def pdf(self, t):
        out = np.exp(self.logpdf(t))
        return _maybe_scalar(out, t)

    def cdf(self, t):
        t = _check_unit_open(t)
        out = special.ndtr((special.logit(t) - self.mu) / self.sigma)
        return _maybe_scalar(out, t)

    def logit_var(self) -> float:
        return self.sigma * self.sigma

    def logpdf_logit(self, u):
        u = np.asarray(u, dtype=float)
        z = (u - self.mu) / self.sigma
        out = _log_norm_pdf(z) - math.log(self.sigma)
        return _maybe_scalar(out, u)

    def logit_knots(self, levels) -> np.ndarray:
        z = special.ndtri(np.asarray(levels, dtype=float))
        return self.mu + self.sigma * z


RefDist = Union[Beta, LogitNormal]


def ref_pdf(t, d: RefDist):
    """Density of a reference distribution at t."""
    return d.pdf(t)


def ref_cdf(t, d: RefDist):
    """CDF of a reference distribution at t."""
    return d.cdf(t)
