"""Multi-chain dynamic-trajectory HMC.

The transition is NUTS-style: leapfrog integration of an auxiliary
Hamiltonian, doubling the trajectory until a no-U-turn criterion fires,
with multinomial sampling of the next state from the trajectory
(progressively biased toward the newer half).  Warmup adapts the step
size by dual averaging toward a target acceptance statistic and a
diagonal mass matrix from expanding variance-estimation windows, in the
usual fast/slow/fast schedule.

Chains are independent: each owns its RNG (spawned from one seed
sequence, so results are reproducible regardless of how chains are
scheduled) and sees the target through ``value_and_grad`` only.  With
more than one worker, chains run in separate processes; the draws merge
after completion.  Integration steps (one gradient evaluation each) and
wall-clock time are recorded per iteration to feed the sampling-cost
decomposition in :mod:`threshtest.diagnostics`.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SamplerConfig", "PosteriorDraws", "sample", "leapfrog", "kinetic_energy"]


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 5
    warmup_iters: int = 1000
    sampling_iters: int = 4000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    max_energy_error: float = 1000.0
    metric: str = "diag"
    adapt_metric: bool = True
    workers: int | None = None

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must be in (0, 1)")
        if self.warmup_iters < 0 or self.sampling_iters < 1:
            raise ValueError("need nonnegative warmup and at least one sampling iteration")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        if self.metric not in ("diag", "dense"):
            raise ValueError("metric must be 'diag' or 'dense'")


@dataclass
class PosteriorDraws:
    """Post-warmup draws plus per-iteration instrumentation."""

    draws: np.ndarray  # (chains, iters, dim)
    divergent: np.ndarray  # (chains, iters) bool
    n_steps: np.ndarray  # (chains, iters) leapfrog steps
    accept_stat: np.ndarray  # (chains, iters)
    chain_seconds: np.ndarray  # (chains,) sampling-phase wall clock
    warmup_seconds: np.ndarray
    step_size: np.ndarray  # (chains,) adapted step sizes
    inv_mass: np.ndarray  # (chains, dim)
    config: SamplerConfig
    param_names: list[str] | None = None

    def __post_init__(self):
        c, n, _ = self.draws.shape
        if self.divergent.shape != (c, n) or self.n_steps.shape != (c, n):
            raise ValueError("instrumentation arrays do not match draws")
        if np.isnan(self.draws).any():
            raise ValueError("draws contain NaN")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    @property
    def divergence_rate(self) -> float:
        return float(self.divergent.mean())

    def posterior_mean(self) -> np.ndarray:
        return self.flat.mean(axis=0)


def kinetic_energy(r: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(r @ (inv_mass * r))


def leapfrog(theta, r, grad, eps, inv_mass, target):
    """One leapfrog step with a diagonal metric; returns (theta', r', logp', grad')."""
    r_half = r + (0.5 * eps) * grad
    theta_new = theta + eps * (inv_mass * r_half)
    logp_new, grad_new = target.value_and_grad(theta_new)
    r_new = r_half + (0.5 * eps) * grad_new
    return theta_new, r_new, logp_new, grad_new


class _DiagMetric:
    """Diagonal inverse mass: velocities and momenta via elementwise ops."""

    def __init__(self, inv_mass: np.ndarray):
        self.inv_mass = inv_mass
        self._momentum_scale = 1.0 / np.sqrt(inv_mass)

    def draw_momentum(self, rng) -> np.ndarray:
        return rng.standard_normal(self.inv_mass.size) * self._momentum_scale

    def velocity(self, r: np.ndarray) -> np.ndarray:
        return self.inv_mass * r

    def kinetic(self, r: np.ndarray) -> float:
        return 0.5 * float(r @ (self.inv_mass * r))

    def as_array(self, dim: int) -> np.ndarray:
        return self.inv_mass


class _DenseMetric:
    """Dense inverse mass (a covariance estimate); momenta via its Cholesky."""

    def __init__(self, cov: np.ndarray):
        self.cov = cov
        self._chol_t = np.linalg.cholesky(cov).T  # upper triangular

    def draw_momentum(self, rng) -> np.ndarray:
        from scipy.linalg import solve_triangular

        z = rng.standard_normal(self.cov.shape[0])
        return solve_triangular(self._chol_t, z, lower=False)

    def velocity(self, r: np.ndarray) -> np.ndarray:
        return self.cov @ r

    def kinetic(self, r: np.ndarray) -> float:
        return 0.5 * float(r @ (self.cov @ r))

    def as_array(self, dim: int) -> np.ndarray:
        return np.diag(self.cov)


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target accept stat."""

    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def restart(self, eps: float):
        self.mu = math.log(10.0 * eps)
        self.log_eps = math.log(eps)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


class _Welford:
    """Streaming variance of parameter vectors."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return self.m2 / (self.count - 1)

    def regularized_variance(self) -> np.ndarray:
        # Shrink toward a small diagonal, as adaptation windows are short.
        n = self.count
        var = self.variance()
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))

    def metric(self) -> _DiagMetric:
        return _DiagMetric(self.regularized_variance())


class _WelfordCov:
    """Streaming covariance of parameter vectors."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def push(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def metric(self) -> _DenseMetric:
        # Off-diagonals are shrunk toward zero with a sample-size-dependent
        # factor: a window much shorter than the dimension cannot support
        # dim^2 parameters, while a window of several times the dimension
        # supports the full estimate.  The diagonal gets the usual
        # small-variance regularization.  The result is a convex mix of a
        # PSD matrix and a PD diagonal, so the Cholesky always exists.
        n = self.count
        dim = self.mean.size
        cov = self.m2 / max(n - 1, 1)
        var = (n / (n + 5.0)) * np.diag(cov) + 1e-3 * (5.0 / (n + 5.0))
        if n >= 2.5 * dim:
            alpha = n / (n + 5.0)
        else:
            alpha = n / (n + dim + 5.0)
        reg = alpha * cov + np.diag(var - alpha * np.diag(cov))
        return _DenseMetric(reg)


def _warmup_schedule(warmup: int, init_buffer=75, term_buffer=50, base_window=25):
    """(step-size-only head, list of slow-window lengths, tail) iteration counts."""
    if warmup <= 0:
        return 0, [], 0
    if warmup < init_buffer + term_buffer + base_window:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.10 * warmup))
    slow_total = max(warmup - init_buffer - term_buffer, 0)
    windows = []
    w = base_window
    remaining = slow_total
    while remaining > 0:
        if w >= remaining or 2 * w > remaining:
            windows.append(remaining)
            break
        windows.append(w)
        remaining -= w
        w *= 2
    term_buffer = warmup - init_buffer - sum(windows)
    return init_buffer, windows, term_buffer


class _Subtree:
    __slots__ = (
        "theta_minus", "r_minus", "grad_minus", "v_minus",
        "theta_plus", "r_plus", "grad_plus", "v_plus",
        "theta", "logp", "grad",
        "log_sum_weight", "sum_accept", "n_leapfrog",
        "divergent", "turning",
    )


class _ChainRunner:
    """Runs one chain: adaptation, transitions, instrumentation."""

    def __init__(self, target, config: SamplerConfig, rng: np.random.Generator,
                 initial_metric=None):
        self.target = target
        self.config = config
        self.rng = rng
        self.dim = target.dim
        if initial_metric is None:
            self.metric = _DiagMetric(np.ones(self.dim))
        elif np.ndim(initial_metric) == 1:
            self.metric = _DiagMetric(np.asarray(initial_metric, dtype=float))
        else:
            self.metric = _DenseMetric(np.asarray(initial_metric, dtype=float))

    # -- initialization ---------------------------------------------------

    def _initial_point(self, init=None):
        if init is not None:
            theta = np.asarray(init, dtype=float).copy()
            logp, grad = self.target.value_and_grad(theta)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                return theta, logp, grad
            raise RuntimeError("supplied initial point has non-finite density")
        for _ in range(100):
            theta = self.rng.uniform(
                -self.config.init_radius, self.config.init_radius, self.dim
            )
            logp, grad = self.target.value_and_grad(theta)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                return theta, logp, grad
        raise RuntimeError("could not find a finite initial density in 100 tries")

    def _find_reasonable_step(self, theta, logp, grad) -> float:
        """Double/halve a unit step until one leapfrog crosses 50% acceptance."""
        r = self.metric.draw_momentum(self.rng)
        h0 = -logp + self.metric.kinetic(r)

        def log_accept(e: float) -> float:
            _, r_new, logp_new, _ = self._step(theta, r, grad, e)
            h_new = -logp_new + self.metric.kinetic(r_new)
            return h0 - h_new if np.isfinite(h_new) else -np.inf

        eps = 1.0
        la = log_accept(eps)
        direction = 1.0 if la > math.log(0.5) else -1.0
        for _ in range(100):
            if direction * la <= direction * math.log(0.5):
                break
            eps *= 2.0**direction
            if not (1e-10 < eps < 1e7):
                break
            la = log_accept(eps)
        return min(max(eps, 1e-10), 1e7)

    def _step(self, theta, r, grad, eps):
        """One leapfrog step under the current metric."""
        r_half = r + (0.5 * eps) * grad
        theta_new = theta + eps * self.metric.velocity(r_half)
        logp_new, grad_new = self.target.value_and_grad(theta_new)
        r_new = r_half + (0.5 * eps) * grad_new
        return theta_new, r_new, logp_new, grad_new

    # -- NUTS transition ---------------------------------------------------

    def _leaf(self, theta, r, grad, eps, h0):
        out = _Subtree()
        theta_new, r_new, logp_new, grad_new = self._step(theta, r, grad, eps)
        with np.errstate(over="ignore", invalid="ignore"):
            h = -logp_new + self.metric.kinetic(r_new)
        if not np.isfinite(h):
            h = np.inf
        log_w = h0 - h
        out.theta_minus = out.theta_plus = out.theta = theta_new
        out.r_minus = out.r_plus = r_new
        out.grad_minus = out.grad_plus = out.grad = grad_new
        out.v_minus = out.v_plus = self.metric.velocity(r_new)
        out.logp = logp_new
        out.log_sum_weight = log_w
        out.sum_accept = min(1.0, math.exp(min(log_w, 0.0)))
        out.n_leapfrog = 1
        out.divergent = (h - h0) > self.config.max_energy_error
        out.turning = False
        return out

    def _build_tree(self, depth, theta, r, grad, direction, eps, h0):
        if depth == 0:
            return self._leaf(theta, r, grad, direction * eps, h0)

        left = self._build_tree(depth - 1, theta, r, grad, direction, eps, h0)
        if left.divergent or left.turning:
            return left

        if direction > 0:
            right = self._build_tree(
                depth - 1, left.theta_plus, left.r_plus, left.grad_plus, direction, eps, h0
            )
        else:
            right = self._build_tree(
                depth - 1, left.theta_minus, left.r_minus, left.grad_minus, direction, eps, h0
            )

        left.n_leapfrog += right.n_leapfrog
        left.sum_accept += right.sum_accept
        if right.divergent or right.turning:
            left.divergent = right.divergent
            left.turning = right.turning
            return left

        total = np.logaddexp(left.log_sum_weight, right.log_sum_weight)
        if math.log(self.rng.random()) < right.log_sum_weight - total:
            left.theta = right.theta
            left.logp = right.logp
            left.grad = right.grad
        left.log_sum_weight = total

        if direction > 0:
            left.theta_plus = right.theta_plus
            left.r_plus = right.r_plus
            left.grad_plus = right.grad_plus
            left.v_plus = right.v_plus
        else:
            left.theta_minus = right.theta_minus
            left.r_minus = right.r_minus
            left.grad_minus = right.grad_minus
            left.v_minus = right.v_minus

        dtheta = left.theta_plus - left.theta_minus
        left.turning = (dtheta @ left.v_minus) < 0 or (dtheta @ left.v_plus) < 0
        return left

    def transition(self, theta, logp, grad, eps):
        """One draw; returns (theta, logp, grad, accept_stat, n_steps, divergent)."""
        r0 = self.metric.draw_momentum(self.rng)
        h0 = -logp + self.metric.kinetic(r0)

        tree = _Subtree()
        tree.theta_minus = tree.theta_plus = tree.theta = theta
        tree.r_minus = tree.r_plus = r0
        tree.grad_minus = tree.grad_plus = tree.grad = grad
        tree.v_minus = tree.v_plus = self.metric.velocity(r0)
        tree.logp = logp
        tree.log_sum_weight = 0.0
        n_steps = 0
        sum_accept = 0.0
        divergent = False

        for depth in range(self.config.max_tree_depth):
            direction = 1 if self.rng.random() < 0.5 else -1
            if direction > 0:
                sub = self._build_tree(
                    depth, tree.theta_plus, tree.r_plus, tree.grad_plus, 1, eps, h0
                )
            else:
                sub = self._build_tree(
                    depth, tree.theta_minus, tree.r_minus, tree.grad_minus, -1, eps, h0
                )
            n_steps += sub.n_leapfrog
            sum_accept += sub.sum_accept
            if sub.divergent:
                divergent = True
                break
            if sub.turning:
                break

            # Biased progressive sampling: favor the newer half.
            if (
                sub.log_sum_weight > tree.log_sum_weight
                or math.log(self.rng.random()) < sub.log_sum_weight - tree.log_sum_weight
            ):
                tree.theta = sub.theta
                tree.logp = sub.logp
                tree.grad = sub.grad
            tree.log_sum_weight = np.logaddexp(tree.log_sum_weight, sub.log_sum_weight)

            if direction > 0:
                tree.theta_plus = sub.theta_plus
                tree.r_plus = sub.r_plus
                tree.grad_plus = sub.grad_plus
                tree.v_plus = sub.v_plus
            else:
                tree.theta_minus = sub.theta_minus
                tree.r_minus = sub.r_minus
                tree.grad_minus = sub.grad_minus
                tree.v_minus = sub.v_minus

            dtheta = tree.theta_plus - tree.theta_minus
            if (dtheta @ tree.v_minus) < 0 or (dtheta @ tree.v_plus) < 0:
                break

        accept_stat = sum_accept / max(n_steps, 1)
        return tree.theta, tree.logp, tree.grad, accept_stat, n_steps, divergent

    # -- full chain --------------------------------------------------------

    def run(self, init=None):
        cfg = self.config
        theta, logp, grad = self._initial_point(init)

        t_warm = time.perf_counter()
        eps = self._find_reasonable_step(theta, logp, grad)
        da = _DualAveraging(eps, cfg.target_accept)

        head, windows, tail = _warmup_schedule(cfg.warmup_iters)
        phases = [("fast", head)] + [("slow", w) for w in windows] + [("fast", tail)]
        for kind, length in phases:
            # A window shorter than ~100 draws cannot support a dense
            # covariance estimate even with shrinkage; fall back to the
            # diagonal for those and go dense once windows are long enough.
            use_dense = cfg.metric == "dense" and length >= 100
            accumulator = _WelfordCov if use_dense else _Welford
            estimate = kind == "slow" and cfg.adapt_metric
            welford = accumulator(self.dim) if estimate else None
            for _ in range(length):
                theta, logp, grad, accept, _, _ = self.transition(theta, logp, grad, eps)
                eps = da.update(accept)
                if welford is not None:
                    welford.push(theta)
            if estimate and welford.count >= 2:
                self.metric = welford.metric()
                eps = self._find_reasonable_step(theta, logp, grad)
                da.restart(eps)
        if cfg.warmup_iters > 0:
            eps = da.adapted
        warmup_seconds = time.perf_counter() - t_warm

        draws = np.empty((cfg.sampling_iters, self.dim))
        divergent = np.zeros(cfg.sampling_iters, dtype=bool)
        n_steps = np.zeros(cfg.sampling_iters, dtype=np.int64)
        accept_stat = np.zeros(cfg.sampling_iters)
        t_sample = time.perf_counter()
        for i in range(cfg.sampling_iters):
            theta, logp, grad, accept, steps, div = self.transition(theta, logp, grad, eps)
            draws[i] = theta
            divergent[i] = div
            n_steps[i] = steps
            accept_stat[i] = accept
        chain_seconds = time.perf_counter() - t_sample

        return {
            "draws": draws,
            "divergent": divergent,
            "n_steps": n_steps,
            "accept_stat": accept_stat,
            "chain_seconds": chain_seconds,
            "warmup_seconds": warmup_seconds,
            "step_size": eps,
            "inv_mass": self.metric.as_array(self.dim),
        }


def _run_chain(args):
    target, config, seed_seq, init, initial_metric = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    return _ChainRunner(target, config, rng, initial_metric=initial_metric).run(init)


def sample(
    target, config: SamplerConfig, *, initial_points=None, initial_metric=None
) -> PosteriorDraws:
    """Draw from ``target`` (an object with ``dim`` and ``value_and_grad``).

    Deterministic for a given (seed, chains) pair: chain RNGs are spawned
    from one seed sequence, so scheduling and worker count do not affect
    the draws.  ``initial_metric`` seeds the metric before the first
    adaptation window (a vector for diagonal, a matrix for dense); warmup
    still refines it.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if initial_points is None:
        inits = [None] * config.chains
    else:
        inits = [np.asarray(p, dtype=float) for p in initial_points]
        if len(inits) != config.chains:
            raise ValueError("need one initial point per chain")

    jobs = [(target, config, seeds[c], inits[c], initial_metric) for c in range(config.chains)]
    import os

    workers = config.workers
    if workers is None:
        workers = min(config.chains, os.cpu_count() or 1)
    if workers <= 1 or config.chains == 1:
        results = [_run_chain(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, jobs))

    names = None
    if hasattr(target, "layout"):
        names = target.layout.param_names()
    return PosteriorDraws(
        draws=np.stack([r["draws"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        n_steps=np.stack([r["n_steps"] for r in results]),
        accept_stat=np.stack([r["accept_stat"] for r in results]),
        chain_seconds=np.array([r["chain_seconds"] for r in results]),
        warmup_seconds=np.array([r["warmup_seconds"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        inv_mass=np.stack([r["inv_mass"] for r in results]),
        config=config,
        param_names=names,
    )
