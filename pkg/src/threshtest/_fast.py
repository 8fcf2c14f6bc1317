"""Numba kernels for the sampler hot path.

The numpy implementations in :mod:`threshtest.rates` and
:mod:`threshtest.params` remain the reference; these kernels compute the
same quantities in tight scalar loops (the arrays are short, so numpy's
per-call overhead dominates otherwise).  Parity between the two paths is
pinned by tests.  If numba is unavailable the package silently runs on
the numpy path.

Overflow semantics match the reference: extreme inputs produce inf/NaN,
which the sampler treats as divergent points.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LN2 = math.log(2.0)


@njit(cache=True)
def _log_ndtr(x: float) -> float:
    """log Phi(x), accurate in both tails."""
    if math.isnan(x):
        return math.nan
    if x > 0.0:
        # erfc(x/sqrt2) is the small survival mass: no cancellation.
        return math.log1p(-0.5 * math.erfc(x / _SQRT2))
    if x > -26.0:
        return math.log(0.5 * math.erfc(-x / _SQRT2))
    # Deep lower tail: asymptotic series for Mills' ratio.
    z = x * x
    s = (
        1.0
        - 1.0 / z
        + 3.0 / (z * z)
        - 15.0 / (z * z * z)
        + 105.0 / (z * z * z * z)
        - 945.0 / (z * z * z * z * z)
        + 10395.0 / (z * z * z * z * z * z)
    )
    return -0.5 * z - _LOG_SQRT_2PI - math.log(-x) + math.log(s)


@njit(cache=True)
def _log_expit(x: float) -> float:
    if math.isnan(x):
        return math.nan
    if x < 0.0:
        return x - math.log1p(math.exp(x))
    return -math.log1p(math.exp(-x))


@njit(cache=True)
def _logaddexp(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a > b:
        return a + math.log1p(math.exp(b - a))
    if b > a:
        return b + math.log1p(math.exp(a - b))
    if a == -math.inf:
        return a
    return a + _LN2


@njit(cache=True)
def cell_terms_kernel(a, lam, u, need_pass, p1, p0, ls, lpass, dp1, dp0, dls, dlpass):
    n = a.shape[0]
    for i in range(n):
        ai = a[i]
        ui = u[i]
        delta = math.exp(lam[i])
        # Float division by zero raises under numba's Python semantics;
        # mirror numpy's inf instead.
        inv_d = 1.0 / delta if delta > 0.0 else math.inf
        x = (ui - ai) * inv_d + 0.5 * delta
        y = x - delta

        lphi = _log_expit(ai)
        l1mphi = lphi - ai  # log sigma(-a) = log sigma(a) - a
        phi = math.exp(lphi)
        lqx = _log_ndtr(-x)
        lqy = _log_ndtr(-y)
        lnx = -0.5 * x * x - _LOG_SQRT_2PI
        lny = -0.5 * y * y - _LOG_SQRT_2PI

        p0i = l1mphi + lqx
        p1i = lphi + lqy
        lsi = _logaddexp(p0i, p1i)
        w0 = math.exp(p0i - lsi)
        w1 = 1.0 - w0

        rx = math.exp(lnx - lqx)
        ry = math.exp(lny - lqy)
        dxdl = delta - x
        rxd = rx * inv_d
        ryd = ry * inv_d

        p0[i] = p0i
        p1[i] = p1i
        ls[i] = lsi
        dp0[0, i] = rxd - phi
        dp0[1, i] = -rx * dxdl
        dp0[2, i] = -rxd
        dp1[0, i] = (1.0 - phi) + ryd
        dp1[1, i] = ry * x
        dp1[2, i] = -ryd
        for k in range(3):
            dls[k, i] = w0 * dp0[k, i] + w1 * dp1[k, i]

        if need_pass:
            lpx = _log_ndtr(x)
            lpy = _log_ndtr(y)
            b0 = l1mphi + lpx
            b1 = lphi + lpy
            lpassi = _logaddexp(b0, b1)
            v0 = math.exp(b0 - lpassi)
            v1 = 1.0 - v0
            qx = math.exp(lnx - lpx)
            qy = math.exp(lny - lpy)
            qxd = qx * inv_d
            qyd = qy * inv_d
            lpass[i] = lpassi
            dlpass[0, i] = v0 * (-phi - qxd) + v1 * ((1.0 - phi) - qyd)
            dlpass[1, i] = v0 * (qx * dxdl) + v1 * (-qy * x)
            dlpass[2, i] = v0 * qxd + v1 * qyd


@njit(cache=True)
def prior_kernel(
    theta,
    grad,
    idx,
    loc,
    inv_sd,
    const_fixed,
    n_races,
    n_locations,
    t_start,
    mu_start,
    inv_sigma_t,
    const_t,
    block_starts,
    block_lens,
    log_sigma_idx,
    inv_hyper2,
):
    logp = const_fixed
    for k in range(idx.shape[0]):
        z = (theta[idx[k]] - loc[k]) * inv_sd[k]
        logp -= 0.5 * z * z
        grad[idx[k]] -= z * inv_sd[k]

    logp += const_t
    for r in range(n_races):
        mu = theta[mu_start + r]
        gmu = 0.0
        base = t_start + r * n_locations
        for d in range(n_locations):
            z = (theta[base + d] - mu) * inv_sigma_t
            logp -= 0.5 * z * z
            zz = z * inv_sigma_t
            grad[base + d] -= zz
            gmu += zz
        grad[mu_start + r] += gmu

    for b in range(block_starts.shape[0]):
        start = block_starts[b]
        n = block_lens[b]
        lsl = log_sigma_idx[b]
        log_sigma = theta[lsl]
        sigma = math.exp(log_sigma)
        inv_sigma = 1.0 / sigma
        zz_sum = 0.0
        for k in range(n):
            z = theta[start + k] * inv_sigma
            zz_sum += z * z
            grad[start + k] -= z * inv_sigma
        logp += -0.5 * zz_sum - n * log_sigma - n * _LOG_SQRT_2PI
        logp += (
            -0.5 * sigma * sigma * inv_hyper2[b]
            + _LN2
            - 0.5 * math.log(1.0 / inv_hyper2[b])
            - _LOG_SQRT_2PI
            + log_sigma
        )
        grad[lsl] += -n + zz_sum - sigma * sigma * inv_hyper2[b] + 1.0
    return logp
