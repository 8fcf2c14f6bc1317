"""Robustness battery for threshold-test fits.

Synthetic data generation (with optional threshold heterogeneity),
posterior predictive checks, the heterogeneity sweep, placebo
relabeling, subset disaggregation and the census sensitivity sweep.
Every operation is deterministic given its seed, and reports carry the
seed they were produced with.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from threshtest import distributions as dist
from threshtest.dataio import RawStopRecord, aggregate
from threshtest.frisk import CellCounts, FriskModel, ThresholdSummary, extract_thresholds
from threshtest.params import ModelParams, PriorConfig
from threshtest.rates import cell_rates
from threshtest.sampler import PosteriorDraws, SamplerConfig, sample
from threshtest.stop import PrecinctStopData, StopModel

__all__ = [
    "IdentifiabilityError",
    "SyntheticSpec",
    "PPCReport",
    "example_params",
    "generate",
    "generate_records",
    "generate_stop_data",
    "fit_frisk",
    "fit_stop",
    "laplace_initialization",
    "ppc",
    "heterogeneity_sweep",
    "placebo",
    "subset_disaggregate",
    "census_sweep",
    "citywide_rate_ratio",
    "intervals_overlap",
]

logger = logging.getLogger(__name__)


class IdentifiabilityError(RuntimeError):
    """Raised when a requested analysis would break model identifiability."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Generating parameters for synthetic frisk data.

    ``heterogeneity_sigma`` is the scale of logit-normal noise around
    each cell threshold: every stop gets its own threshold draw
    T ~ logit-normal(logit(t_rd), sigma), a frisk occurs iff p >= T, and
    a frisked stop finds a weapon with probability p.
    """

    params: ModelParams
    stops_per_cell: np.ndarray  # (R, D) or scalar-broadcastable
    heterogeneity_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.heterogeneity_sigma < 0:
            raise ValueError("heterogeneity_sigma must be >= 0")
        counts = np.broadcast_to(
            np.asarray(self.stops_per_cell, dtype=np.int64), self.params.logit_t.shape
        )
        if np.any(counts < 0):
            raise ValueError("stop counts must be >= 0")
        object.__setattr__(self, "stops_per_cell", counts)


def example_params(
    n_races: int = 3,
    n_locations: int = 30,
    seed: int = 0,
    *,
    race_threshold_logits=None,
) -> ModelParams:
    """A reproducible generating-parameter set for synthetic experiments.

    Race-level threshold logits default to well-separated values (the
    first race gets the highest threshold); location effects are modest,
    matching the tight location priors.
    """
    rng = np.random.default_rng(seed)
    if race_threshold_logits is None:
        base = np.array([-1.7, -2.3, -2.6])
        mu_t = (
            base[:n_races]
            if n_races <= 3
            else np.concatenate([base, -2.6 - 0.3 * np.arange(1, n_races - 2)])
        )
    else:
        mu_t = np.asarray(race_threshold_logits, dtype=float)
        if mu_t.size != n_races:
            raise ValueError("need one threshold logit per race")
    phi_r = np.linspace(-2.5, -1.8, n_races)
    lam_r = np.linspace(0.0, -0.1, n_races)
    return ModelParams(
        phi_r=phi_r,
        lam_r=lam_r,
        phi_d=np.concatenate([[0.0], rng.normal(0.0, 0.25, n_locations - 1)]),
        lam_d=np.concatenate([[0.0], rng.normal(0.0, 0.15, n_locations - 1)]),
        logit_t=mu_t[:, None] + rng.normal(0.0, 0.35, (n_races, n_locations)),
        mu_t=mu_t,
        log_sigma_phi_d=float(np.log(0.25)),
        log_sigma_lam_d=float(np.log(0.15)),
    )


def _simulate_cell(rng, n, phi, delta, logit_t, sigma):
    """Per-stop simulation for one cell; returns (frisks, hits)."""
    p = dist.sample(dist.DiscParams(phi, delta), n, rng)
    if sigma == 0.0:
        thresholds = expit(logit_t)
        frisked = p >= thresholds
    else:
        t_draws = expit(logit_t + sigma * rng.standard_normal(n))
        frisked = p >= t_draws
    hits = frisked & (rng.random(n) < p)
    return frisked, hits


def generate(spec: SyntheticSpec) -> list[CellCounts]:
    """Aggregate counts from the per-stop generative process."""
    rng = np.random.default_rng(spec.seed)
    mp = spec.params
    phi, delta, lt = mp.phi_rd, mp.delta_rd, mp.logit_t
    cells = []
    r_count, d_count = lt.shape
    for r in range(r_count):
        for d in range(d_count):
            n = int(spec.stops_per_cell[r, d])
            if n == 0:
                cells.append(CellCounts(r, d, 0, 0, 0))
                continue
            frisked, hits = _simulate_cell(
                rng, n, phi[r, d], delta[r, d], lt[r, d], spec.heterogeneity_sigma
            )
            cells.append(CellCounts(r, d, n, int(frisked.sum()), int(hits.sum())))
    return cells


def generate_records(
    spec: SyntheticSpec,
    *,
    race_names: list[str] | None = None,
    precinct_names: list[str] | None = None,
    extra_columns: dict | None = None,
) -> list[RawStopRecord]:
    """Per-stop records from the same process (matched seeds match counts).

    ``extra_columns`` maps record field names to either a list of levels
    (assigned uniformly at random) or a callable rng -> value; used to
    attach placebo/disaggregation factors.
    """
    rng = np.random.default_rng(spec.seed)
    mp = spec.params
    phi, delta, lt = mp.phi_rd, mp.delta_rd, mp.logit_t
    r_count, d_count = lt.shape
    races = race_names or [f"race_{i}" for i in range(r_count)]
    precincts = precinct_names or [f"p{j:03d}" for j in range(d_count)]
    extra_columns = extra_columns or {}

    records = []
    for r in range(r_count):
        for d in range(d_count):
            n = int(spec.stops_per_cell[r, d])
            if n == 0:
                continue
            frisked, hits = _simulate_cell(
                rng, n, phi[r, d], delta[r, d], lt[r, d], spec.heterogeneity_sigma
            )
            extras = {}
            for name, source in extra_columns.items():
                if callable(source):
                    extras[name] = [source(rng) for _ in range(n)]
                else:
                    levels = list(source)
                    extras[name] = [levels[k] for k in rng.integers(0, len(levels), n)]
            known = {"year", "hour", "age", "gender", "suspected_crime"}
            for i in range(n):
                fields = {k: v[i] for k, v in extras.items() if k in known}
                aux = {k: v[i] for k, v in extras.items() if k not in known}
                records.append(
                    RawStopRecord(
                        race=races[r],
                        precinct=precincts[d],
                        frisked=bool(frisked[i]),
                        weapon_found=bool(hits[i]),
                        extra=aux,
                        **fields,
                    )
                )
    return records


def generate_stop_data(
    params: ModelParams,
    census: np.ndarray,
    stops_per_precinct,
    seed: int = 0,
) -> list[PrecinctStopData]:
    """Synthetic censored stop data: multinomial composition plus hits."""
    rng = np.random.default_rng(seed)
    r_count, d_count = params.logit_t.shape
    census = np.asarray(census, dtype=float)
    if census.shape != (r_count, d_count):
        raise ValueError("census must be (n_races, n_locations)")
    totals = np.broadcast_to(np.asarray(stops_per_precinct, dtype=np.int64), (d_count,))

    a = params.phi_r[:, None] + params.phi_d[None, :]
    lam = params.lam_r[:, None] + params.lam_d[None, :]
    rates = cell_rates(a.ravel(), lam.ravel(), params.logit_t.ravel())
    s = rates.s.reshape(r_count, d_count)
    h = rates.h.reshape(r_count, d_count)

    data = []
    for d in range(d_count):
        c = census[:, d] / census[:, d].sum()
        theta = c * s[:, d]
        theta = theta / theta.sum()
        stops = rng.multinomial(int(totals[d]), theta).astype(float)
        hits = rng.binomial(stops.astype(np.int64), h[:, d]).astype(float)
        data.append(PrecinctStopData(d, stops, hits, c))
    return data


# ---------------------------------------------------------------------------
# Fitting glue
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    model: FriskModel | StopModel
    draws: PosteriorDraws
    thresholds: ThresholdSummary

    @property
    def posterior_mean(self) -> np.ndarray:
        return self.draws.posterior_mean()


def laplace_initialization(model, *, chains: int, seed: int, jitter: float = 1.5):
    """Posterior-mode initial points plus a curvature-based initial metric.

    Runs L-BFGS on the log posterior (analytic gradient), takes the
    finite-difference Hessian of the gradient at the mode, and returns
    (initial_points, covariance): chain starts are the mode jittered by
    ``jitter`` times the Laplace scales, and the covariance seeds the
    sampler's dense metric.  The censored stop posterior is stiff enough
    that chains started from generic overdispersed points spend the whole
    warmup finding the typical set; this is the standard remedy.
    """
    from scipy import optimize

    def objective(theta):
        v, g = model.value_and_grad(theta)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(g)
        return -v, -g

    x0 = np.zeros(model.dim)
    lay = model.layout
    x0[lay.mu_t] = model.priors.mu_t_loc
    x0[lay.logit_t] = model.priors.mu_t_loc
    x0[lay.log_sigma_phi_d] = math.log(model.priors.sigma_phi_d_scale)
    x0[lay.log_sigma_lam_d] = math.log(model.priors.sigma_lam_d_scale)
    res = optimize.minimize(
        objective, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "maxfun": 10000},
    )
    mode = res.x

    # Hessian of -logp by central differences of the analytic gradient.
    dim = model.dim
    h = 1e-5
    hess = np.empty((dim, dim))
    for j in range(dim):
        hi = mode.copy()
        lo = mode.copy()
        hi[j] += h
        lo[j] -= h
        hess[:, j] = (model.value_and_grad(lo)[1] - model.value_and_grad(hi)[1]) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    eigval, eigvec = np.linalg.eigh(hess)
    floor = max(eigval.max(), 1.0) * 1e-8
    eigval = np.maximum(eigval, floor)
    cov = (eigvec / eigval) @ eigvec.T

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A91ACE]))
    chol = eigvec * np.sqrt(1.0 / eigval)
    inits = [mode + jitter * (chol @ rng.standard_normal(dim)) for _ in range(chains)]
    return inits, cov


def fit_frisk(
    cells: list[CellCounts],
    *,
    n_races=None,
    n_locations=None,
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
) -> FitResult:
    model = FriskModel(cells, n_races=n_races, n_locations=n_locations, priors=priors)
    cfg = config if config is not None else SamplerConfig()
    draws = sample(model, cfg)
    return FitResult(model, draws, extract_thresholds(draws.draws, model))


def fit_stop(
    data: list[PrecinctStopData],
    *,
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
    init: str = "laplace",
) -> FitResult:
    model = StopModel(data, priors=priors)
    cfg = config if config is not None else SamplerConfig()
    if init == "laplace":
        inits, cov = laplace_initialization(model, chains=cfg.chains, seed=cfg.seed)
        draws = sample(model, cfg, initial_points=inits, initial_metric=cov)
    elif init == "random":
        draws = sample(model, cfg)
    else:
        raise ValueError(f"init must be 'laplace' or 'random', got {init!r}")
    return FitResult(model, draws, extract_thresholds(draws.draws, model))


# ---------------------------------------------------------------------------
# Posterior predictive checks
# ---------------------------------------------------------------------------


@dataclass
class PPCReport:
    """Observed vs model-implied rates with count-weighted RMSEs.

    For the frisk model the primary rate is the frisk/search rate
    (weighted by stops) and hit rates are weighted by frisks.  For the
    stop model the primary rate is the within-precinct stop share
    (weighted by precinct totals) and hit rates are weighted by stops.
    Paper-scale reference values on the real data are recorded for
    context: frisk-rate RMSE 0.05%, hit-rate RMSE 2.5%.
    """

    kind: str
    observed_primary: np.ndarray
    predicted_primary: np.ndarray
    primary_weights: np.ndarray
    observed_hit_rate: np.ndarray
    predicted_hit_rate: np.ndarray
    hit_weights: np.ndarray
    rmse_primary: float
    rmse_hit_rate: float
    seed: int | None = None
    reference_rmse_primary: float = 0.0005
    reference_rmse_hit_rate: float = 0.025


def _weighted_rmse(obs, pred, weights) -> float:
    w = np.asarray(weights, dtype=float)
    mask = w > 0
    if not np.any(mask):
        return 0.0
    d = (np.asarray(obs) - np.asarray(pred))[mask]
    w = w[mask]
    return float(np.sqrt(np.sum(w * d * d) / np.sum(w)))


def ppc(fit: FitResult) -> PPCReport:
    """Posterior predictive check at the posterior-mean parameters."""
    model = fit.model
    theta = fit.posterior_mean
    if isinstance(model, FriskModel):
        rates = model.derived_rates(theta)
        obs = model.observed_rates()
        stops, searches = model._stops, model._searches
        obs_hit = np.where(searches > 0, obs.hit_rate, 0.0)
        return PPCReport(
            kind="frisk",
            observed_primary=obs.search_rate,
            predicted_primary=rates.search_rate,
            primary_weights=stops,
            observed_hit_rate=obs_hit,
            predicted_hit_rate=rates.hit_rate,
            hit_weights=searches,
            rmse_primary=_weighted_rmse(obs.search_rate, rates.search_rate, stops),
            rmse_hit_rate=_weighted_rmse(obs_hit, rates.hit_rate, searches),
            seed=fit.draws.config.seed,
        )
    if isinstance(model, StopModel):
        pred_share = model.stop_shares(theta)
        pred_hit = model.hit_rates(theta)
        stops = model._stops
        totals = stops.sum(axis=0, keepdims=True)
        obs_share = np.where(totals > 0, stops / np.maximum(totals, 1.0), 0.0)
        obs_hit = np.where(stops > 0, model._hits / np.maximum(stops, 1.0), 0.0)
        weights = np.broadcast_to(totals, stops.shape)
        return PPCReport(
            kind="stop",
            observed_primary=obs_share.ravel(),
            predicted_primary=pred_share.ravel(),
            primary_weights=weights.ravel(),
            observed_hit_rate=obs_hit.ravel(),
            predicted_hit_rate=pred_hit.ravel(),
            hit_weights=stops.ravel(),
            rmse_primary=_weighted_rmse(obs_share, pred_share, weights),
            rmse_hit_rate=_weighted_rmse(obs_hit, pred_hit, stops),
            seed=fit.draws.config.seed,
        )
    raise TypeError(f"unsupported model type {type(model)!r}")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepEntry:
    label: str
    value: float | str
    thresholds: ThresholdSummary
    fit: FitResult
    seed: int


def heterogeneity_sweep(
    spec: SyntheticSpec,
    sigmas=(0.0, 0.25, 0.5, 0.75, 1.0),
    *,
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
) -> list[SweepEntry]:
    """Refit on synthetic data with increasing threshold noise."""
    entries = []
    for i, sigma in enumerate(sigmas):
        sub = replace(spec, heterogeneity_sigma=float(sigma), seed=spec.seed + i)
        cells = generate(sub)
        fit = fit_frisk(
            cells,
            n_races=spec.params.logit_t.shape[0],
            n_locations=spec.params.logit_t.shape[1],
            priors=priors,
            config=config,
        )
        entries.append(
            SweepEntry(
                label="heterogeneity_sigma",
                value=float(sigma),
                thresholds=fit.thresholds,
                fit=fit,
                seed=sub.seed,
            )
        )
    return entries


def intervals_overlap(lo_a, hi_a, lo_b, hi_b) -> bool:
    return not (hi_a < lo_b or hi_b < lo_a)


@dataclass
class PlaceboResult:
    levels: list[str]
    thresholds: ThresholdSummary
    fit: FitResult
    all_pairs_overlap: bool


def placebo(
    records: list[RawStopRecord],
    column: str,
    *,
    model: str = "frisk",
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
) -> PlaceboResult:
    """Rerun the threshold test with the race role played by ``column``.

    Refused for the stop model: placebo factors carry no census base
    rates and eliminate the across-group heterogeneity the composition
    likelihood identifies, so the relabeled model is unidentifiable.
    """
    if model != "frisk":
        raise IdentifiabilityError(
            "placebo relabeling is only defined for the frisk model; natural "
            "placebos break stop-model identifiability"
        )
    agg = aggregate(records, group_by=column)
    fit = fit_frisk(agg.cells, priors=priors, config=config)
    summ = fit.thresholds
    n = len(agg.races)
    overlap = all(
        intervals_overlap(summ.race_lo[i], summ.race_hi[i], summ.race_lo[j], summ.race_hi[j])
        for i in range(n)
        for j in range(i + 1, n)
    )
    return PlaceboResult(
        levels=agg.races, thresholds=summ, fit=fit, all_pairs_overlap=overlap
    )


def _fit_level(args):
    cells, n_races, n_locations, priors, config = args
    return fit_frisk(
        cells, n_races=n_races, n_locations=n_locations, priors=priors, config=config
    )


def subset_disaggregate(
    records: list[RawStopRecord],
    column: str,
    *,
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
    max_workers: int = 1,
) -> dict[str, FitResult]:
    """Independent frisk fits per level of ``column``.

    Levels run concurrently subject to ``max_workers`` (each level's
    chains then run within that worker); empty levels are skipped with a
    warning.
    """
    levels: dict[str, list[RawStopRecord]] = {}
    for rec in records:
        value = rec.column(column)
        if value is None:
            raise ValueError(f"records missing values for column {column!r}")
        levels.setdefault(str(value), []).append(rec)

    jobs = {}
    for level in sorted(levels):
        subset = levels[level]
        if not subset:
            logger.warning("skipping empty level %r of %r", level, column)
            continue
        agg = aggregate(subset)
        level_config = config if config is not None else SamplerConfig()
        jobs[level] = (agg.cells, len(agg.races), len(agg.precincts), priors,
                       replace(level_config, workers=1) if max_workers > 1 else level_config)

    if max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = dict(zip(jobs.keys(), pool.map(_fit_level, jobs.values())))
    else:
        results = {level: _fit_level(args) for level, args in jobs.items()}
    return results


def census_sweep(
    data: list[PrecinctStopData],
    factors=(0.5, 1.0, 2.0),
    *,
    race_index: int = 0,
    priors: PriorConfig | None = None,
    config: SamplerConfig | None = None,
) -> list[SweepEntry]:
    """Refit the stop model with one race's census share rescaled.

    Each factor multiplies the chosen race's fraction in every precinct,
    with renormalization; factor 1.0 reproduces the base fit.
    """
    entries = []
    for factor in factors:
        scaled = []
        for p in data:
            census = p.census.copy()
            census[race_index] *= factor
            scaled.append(
                PrecinctStopData(p.location, p.stops.copy(), p.hits.copy(), census)
            )
        fit = fit_stop(scaled, priors=priors, config=config)
        entries.append(
            SweepEntry(
                label="census_factor",
                value=float(factor),
                thresholds=fit.thresholds,
                fit=fit,
                seed=fit.draws.config.seed,
            )
        )
    return entries


def citywide_rate_ratio(model: FriskModel, theta, race: int, logit_shift: float) -> float:
    """Aggregate frisk-rate ratio after shifting one race's thresholds.

    Stop-weighted mean of ccdf(t') over the race's cells divided by the
    same at the fitted thresholds; the dataset-specific size of this
    ratio is exposed for reporting, not asserted.
    """
    theta = np.asarray(theta, dtype=float)
    shifted = theta.copy()
    lay = model.layout
    block = slice(
        lay.logit_t.start + race * lay.n_locations,
        lay.logit_t.start + (race + 1) * lay.n_locations,
    )
    shifted[block] += logit_shift

    def race_rate(vec):
        rates = model.derived_rates(vec)
        mask = model._race == race
        w = model._stops[mask]
        return float(np.sum(w * rates.search_rate[mask]) / np.sum(w))

    return race_rate(shifted) / race_rate(theta)
