"""Per-cell rate terms and analytic gradients.

This is the sampler hot path: one call per gradient evaluation,
vectorized over cells.  For each cell with logit-mean a = phi_r + phi_d,
log-separation lam = lam_r + lam_d (delta = exp(lam)) and unconstrained
threshold u = logit(t), the signal-space threshold is

    x = (u - a) / delta + delta / 2,      y = x - delta.

Each stop then lands in one of three categories, whose log probabilities
are the primitives everything else combines:

    hit      log p1 = log phi     + log PhiBar(y)
    miss     log p0 = log(1-phi)  + log PhiBar(x)
    pass     log(1-s), with s = p0 + p1 the search rate

(search rate log s = LSE(log p0, log p1); hit rate log h = log p1 - log s).
Because hits + misses = searches, both models' likelihoods reduce to
these primitives, so the hot path never forms the conditional rates.
Derivatives chain through normal hazard ratios and stay finite out to
thresholds within float range of 0 or 1.  The x/y pair is stacked into
one (2, n) array so each special function is invoked once, and gradient
triples come back as (3, n) stacks ordered (d/da, d/dlam, d/du) so the
likelihood weighting is three broadcast multiplies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_ndtr

from threshtest import _fast

__all__ = ["CellTerms", "CellRates", "cell_terms", "cell_terms_numpy", "cell_rates"]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class CellTerms:
    """Log category probabilities and (3, n) partial stacks w.r.t. (a, lam, u)."""

    log_p_hit: np.ndarray
    log_p_miss: np.ndarray
    log_s: np.ndarray
    d_log_p_hit: np.ndarray
    d_log_p_miss: np.ndarray
    d_log_s: np.ndarray
    log_p_pass: np.ndarray | None = None
    d_log_p_pass: np.ndarray | None = None


@dataclass
class CellRates:
    """Search/hit rate logs and partials w.r.t. (a, lam, u), arrays over cells."""

    log_s: np.ndarray
    log_1ms: np.ndarray
    log_h: np.ndarray
    log_1mh: np.ndarray
    d_log_s: np.ndarray
    d_log_1ms: np.ndarray
    d_log_h: np.ndarray
    d_log_1mh: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.log_s)

    @property
    def h(self) -> np.ndarray:
        return np.exp(self.log_h)


def cell_terms(a, lam, u, *, need_pass: bool = True) -> CellTerms:
    """Hot-path evaluation; callers hand in float arrays of equal shape.

    ``need_pass=False`` skips the not-searched category (the stop model
    has no explicit non-decision observations).  Extreme inputs (the
    sampler probes them during step-size search) overflow to inf/NaN by
    design; the caller's Hamiltonian treats those as divergent points,
    so the float warnings are suppressed rather than guarded.

    Dispatches to a numba kernel when available; ``cell_terms_numpy`` is
    the reference implementation and stays test-pinned against it.
    """
    if _fast.HAVE_NUMBA:
        n = a.shape[0]
        p1 = np.empty(n)
        p0 = np.empty(n)
        ls = np.empty(n)
        dp1 = np.empty((3, n))
        dp0 = np.empty((3, n))
        dls = np.empty((3, n))
        if need_pass:
            lpass = np.empty(n)
            dlpass = np.empty((3, n))
        else:
            lpass = np.empty(0)
            dlpass = np.empty((3, 0))
        _fast.cell_terms_kernel(
            a, lam, u, need_pass, p1, p0, ls, lpass, dp1, dp0, dls, dlpass
        )
        return CellTerms(
            log_p_hit=p1,
            log_p_miss=p0,
            log_s=ls,
            d_log_p_hit=dp1,
            d_log_p_miss=dp0,
            d_log_s=dls,
            log_p_pass=lpass if need_pass else None,
            d_log_p_pass=dlpass if need_pass else None,
        )
    return cell_terms_numpy(a, lam, u, need_pass=need_pass)


def cell_terms_numpy(a, lam, u, *, need_pass: bool = True) -> CellTerms:
    """Reference numpy implementation of :func:`cell_terms`."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        return _cell_terms(a, lam, u, need_pass)


def _cell_terms(a, lam, u, need_pass: bool) -> CellTerms:
    n = a.shape[0]
    phi = expit(a)
    delta = np.exp(lam)
    inv_delta = 1.0 / delta

    xy = np.empty((2, n))
    xy[0] = (u - a) * inv_delta + 0.5 * delta
    x = xy[0]
    y = np.subtract(x, delta, out=xy[1])

    log_phi = log_expit(a)
    log_1mphi = log_expit(-a)
    lq = log_ndtr(-xy)  # log PhiBar for x (row 0) and y (row 1)
    ln = -0.5 * xy * xy - _LOG_SQRT_2PI
    haz_up = np.exp(ln - lq)  # pdf / PhiBar
    rx, ry = haz_up[0], haz_up[1]

    p0 = log_1mphi + lq[0]
    p1 = log_phi + lq[1]
    log_s = np.logaddexp(p0, p1)
    w0 = np.exp(p0 - log_s)
    w1 = 1.0 - w0

    dx_dlam = delta - x  # dy/dlam = -x
    rx_d = rx * inv_delta
    ry_d = ry * inv_delta

    dp0 = np.empty((3, n))
    dp0[0] = rx_d - phi
    dp0[1] = -rx * dx_dlam
    dp0[2] = -rx_d
    dp1 = np.empty((3, n))
    dp1[0] = (1.0 - phi) + ry_d
    dp1[1] = ry * x
    dp1[2] = -ry_d
    d_log_s = w0 * dp0 + w1 * dp1

    log_p_pass = None
    d_log_p_pass = None
    if need_pass:
        lp = log_ndtr(xy)  # log Phi
        haz_lo = np.exp(ln - lp)  # pdf / Phi
        qx, qy = haz_lo[0], haz_lo[1]
        b0 = log_1mphi + lp[0]
        b1 = log_phi + lp[1]
        log_p_pass = np.logaddexp(b0, b1)
        v0 = np.exp(b0 - log_p_pass)
        v1 = 1.0 - v0
        qx_d = qx * inv_delta
        qy_d = qy * inv_delta
        db0 = np.empty((3, n))
        db0[0] = -phi - qx_d
        db0[1] = qx * dx_dlam
        db0[2] = qx_d
        db1 = np.empty((3, n))
        db1[0] = (1.0 - phi) - qy_d
        db1[1] = -qy * x
        db1[2] = qy_d
        d_log_p_pass = v0 * db0 + v1 * db1

    return CellTerms(
        log_p_hit=p1,
        log_p_miss=p0,
        log_s=log_s,
        d_log_p_hit=dp1,
        d_log_p_miss=dp0,
        d_log_s=d_log_s,
        log_p_pass=log_p_pass,
        d_log_p_pass=d_log_p_pass,
    )


def cell_rates(a, lam, u) -> CellRates:
    """Search/hit rate view of :func:`cell_terms` (tests, summaries, PPC)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a, lam, u = np.broadcast_arrays(a, lam, u)
    t = cell_terms(np.ascontiguousarray(a), lam, u, need_pass=True)
    return CellRates(
        log_s=t.log_s,
        log_1ms=t.log_p_pass,
        log_h=t.log_p_hit - t.log_s,
        log_1mh=t.log_p_miss - t.log_s,
        d_log_s=t.d_log_s,
        d_log_1ms=t.d_log_p_pass,
        d_log_h=t.d_log_p_hit - t.d_log_s,
        d_log_1mh=t.d_log_p_miss - t.d_log_s,
    )
