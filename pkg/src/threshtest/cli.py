"""Command-line interface.

Subcommands: fit-frisk, fit-stop, approx-sweep, synth, ppc,
heterogeneity, placebo, disaggregate, census-sweep, dist-table.

Exit codes: 0 success; 1 configuration or data error; 2 inference-quality
failure (any R-hat above 1.1 under --strict).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

import threshtest as tt
from threshtest import approx, robustness as rb
from threshtest.dataio import (
    RunConfig,
    aggregate,
    build_stop_data,
    read_cells_csv,
    read_census_csv,
    read_draws_csv,
    read_records,
    write_cells_csv,
    write_draws_csv,
    write_json,
    write_race_thresholds_csv,
    write_records_csv,
    write_thresholds_csv,
)
from threshtest.diagnostics import diagnose
from threshtest.frisk import FriskModel, extract_thresholds
from threshtest.robustness import IdentifiabilityError
from threshtest.stop import StopModel

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_QUALITY = 2

logger = logging.getLogger(__name__)


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--chains", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--metric", choices=["diag", "dense"])
    parser.add_argument("--workers", type=int)
    parser.add_argument("--save-draws", action="store_true", default=None, dest="save_draws")
    parser.add_argument("--strict", action="store_true", default=None)
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")


def _load_config(args, **extra) -> RunConfig:
    overrides = {
        "output": args.output,
        "seed": args.seed,
        "chains": args.chains,
        "warmup": args.warmup,
        "samples": args.samples,
        "metric": args.metric,
        "workers": args.workers,
        "save_draws": args.save_draws,
        "strict": args.strict,
    }
    overrides.update(extra)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        cfg = RunConfig.from_file(args.config, overrides)
    else:
        cfg = RunConfig.from_dict(overrides)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_frisk_inputs(cfg: RunConfig):
    if not cfg.stops:
        raise ValueError("no stops CSV configured (key 'stops' or --stops)")
    if cfg.aggregated:
        return read_cells_csv(cfg.stops)
    records = read_records(cfg.stops, cfg.columns)
    return aggregate(records, group_by=cfg.group_by)


def _finish_fit(cfg: RunConfig, command: str, fit, agg, wall_clock: float) -> int:
    out = _out_dir(cfg)
    diag = diagnose(fit.draws)
    summary = fit.thresholds
    write_thresholds_csv(out / "thresholds.csv", summary, agg.races, agg.precincts,
                         model=fit.model if isinstance(fit.model, FriskModel) else None)
    write_race_thresholds_csv(out / "race_thresholds.csv", summary, agg.races)
    write_json(out / "diagnostics.json", {
        **diag.to_dict(),
        "rhat": diag.rhat,
        "ess": diag.ess,
        "param_names": fit.draws.param_names,
    })
    report = rb.ppc(fit)
    write_json(out / "ppc.json", {
        "kind": report.kind,
        "rmse_primary": report.rmse_primary,
        "rmse_hit_rate": report.rmse_hit_rate,
        "reference_rmse_primary": report.reference_rmse_primary,
        "reference_rmse_hit_rate": report.reference_rmse_hit_rate,
    })
    with open(out / "ppc.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["observed_primary", "predicted_primary", "primary_weight",
                         "observed_hit_rate", "predicted_hit_rate", "hit_weight"])
        for row in zip(report.observed_primary, report.predicted_primary,
                       report.primary_weights, report.observed_hit_rate,
                       report.predicted_hit_rate, report.hit_weights):
            writer.writerow([f"{v:.8g}" for v in row])
    if cfg.save_draws:
        write_draws_csv(out / "draws.csv", fit.draws.draws, fit.draws.param_names)
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "config": RunConfig.parse_text(cfg.to_text()),
        "wall_clock_seconds": wall_clock,
        "divergence_rate": fit.draws.divergence_rate,
        "divergence_flagged": fit.draws.divergence_rate > 0.01,
        "max_rhat": diag.max_rhat,
        "n_eff_min": diag.n_eff,
        "versions": _versions(),
    }
    write_json(out / "manifest.json", manifest)
    print(f"wrote {out}/thresholds.csv, diagnostics.json, ppc.json, manifest.json")
    print(f"max R-hat {diag.max_rhat:.4f}, min n_eff {diag.n_eff:.0f}, "
          f"divergence rate {fit.draws.divergence_rate:.2%}")
    if cfg.strict and diag.max_rhat > 1.1:
        print(f"strict mode: R-hat {diag.max_rhat:.3f} exceeds 1.1", file=sys.stderr)
        return EXIT_QUALITY
    return EXIT_OK


def _versions() -> dict:
    import scipy

    return {"threshtest": tt.__version__, "numpy": np.__version__, "scipy": scipy.__version__}


# -- subcommands -------------------------------------------------------------


def cmd_fit_frisk(args) -> int:
    cfg = _load_config(args, stops=args.stops, model="frisk")
    if args.print_config:
        print(cfg.to_text(), end="")
        return EXIT_OK
    agg = _load_frisk_inputs(cfg)
    t0 = time.perf_counter()
    fit = rb.fit_frisk(agg.cells, n_races=len(agg.races), n_locations=len(agg.precincts),
                       priors=cfg.priors(), config=cfg.sampler())
    return _finish_fit(cfg, "fit-frisk", fit, agg, time.perf_counter() - t0)


def cmd_fit_stop(args) -> int:
    cfg = _load_config(args, stops=args.stops, census=args.census, model="stop")
    if args.print_config:
        print(cfg.to_text(), end="")
        return EXIT_OK
    if not cfg.census:
        raise ValueError("the stop model needs a census CSV (key 'census' or --census)")
    if cfg.aggregated:
        agg = read_cells_csv(cfg.stops)
    else:
        records = read_records(cfg.stops, cfg.columns)
        if cfg.suspected_crime:
            records = [r for r in records if r.suspected_crime == cfg.suspected_crime]
            if not records:
                raise ValueError(f"no records with suspected_crime == {cfg.suspected_crime!r}")
        agg = aggregate(records)
    data = build_stop_data(agg, read_census_csv(cfg.census))
    t0 = time.perf_counter()
    fit = rb.fit_stop(data, priors=cfg.priors(), config=cfg.sampler())
    return _finish_fit(cfg, "fit-stop", fit, agg, time.perf_counter() - t0)


def cmd_approx_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    rows = approx.sweep(levels=args.levels)
    with open(out / "approx_sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    pairs = approx.claim_pairs()
    claim_ln = [r for r in rows if r["kind"] == "logit_normal"]
    claim_beta = [
        r for r in rows
        if r["kind"] == "beta" and (r["param1"], r["param2"]) in set(pairs["beta"])
    ]
    summary = {
        "n_fits": len(rows),
        "logit_normal_max_tv": max(r["tv_distance"] for r in claim_ln),
        "beta_claim_region_max_tv": max(r["tv_distance"] for r in claim_beta),
        "beta_overall_max_tv": max(r["tv_distance"] for r in rows if r["kind"] == "beta"),
    }
    write_json(out / "approx_summary.json", summary)
    print(f"wrote {out}/approx_sweep.csv ({len(rows)} fits)")
    print(f"logit-normal max TV {summary['logit_normal_max_tv']:.4f}; "
          f"beta claim-region max TV {summary['beta_claim_region_max_tv']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    params = rb.example_params(args.races, args.precincts, seed=cfg.seed)
    spec = rb.SyntheticSpec(params, args.stops_per_cell,
                            heterogeneity_sigma=args.heterogeneity, seed=cfg.seed)
    extra = {}
    if args.extra_column:
        name, levels = args.extra_column.split(":", 1)
        extra[name] = levels.split(",")
    records = rb.generate_records(spec, extra_columns=extra)
    write_records_csv(out / "synthetic_stops.csv", records)
    agg = aggregate(records)
    write_cells_csv(out / "synthetic_cells.csv", agg)
    write_json(out / "synthetic_truth.json", {
        "seed": cfg.seed,
        "heterogeneity_sigma": args.heterogeneity,
        "stops_per_cell": args.stops_per_cell,
        "phi_r": params.phi_r,
        "lam_r": params.lam_r,
        "phi_d": params.phi_d,
        "lam_d": params.lam_d,
        "mu_t": params.mu_t,
        "logit_t": params.logit_t,
        "t_rd": params.t_rd,
    })
    print(f"wrote {len(records)} records to {out}/synthetic_stops.csv")
    return EXIT_OK


def cmd_ppc(args) -> int:
    cfg = _load_config(args, stops=args.stops, census=args.census)
    agg = _load_frisk_inputs(cfg) if not args.census else None
    draws = read_draws_csv(args.draws)
    if args.census:
        if cfg.aggregated:
            agg = read_cells_csv(cfg.stops)
        else:
            agg = aggregate(read_records(cfg.stops, cfg.columns))
        model = StopModel(build_stop_data(agg, read_census_csv(args.census)), priors=cfg.priors())
    else:
        model = FriskModel(agg.cells, n_races=len(agg.races),
                           n_locations=len(agg.precincts), priors=cfg.priors())
    if draws.shape[-1] != model.dim:
        raise ValueError(f"draws dimension {draws.shape[-1]} != model dimension {model.dim}")
    from threshtest.sampler import PosteriorDraws, SamplerConfig

    pd = PosteriorDraws(
        draws=draws,
        divergent=np.zeros(draws.shape[:2], dtype=bool),
        n_steps=np.ones(draws.shape[:2], dtype=np.int64),
        accept_stat=np.ones(draws.shape[:2]),
        chain_seconds=np.zeros(draws.shape[0]),
        warmup_seconds=np.zeros(draws.shape[0]),
        step_size=np.ones(draws.shape[0]),
        inv_mass=np.ones((draws.shape[0], draws.shape[2])),
        config=SamplerConfig(chains=draws.shape[0], sampling_iters=draws.shape[1], seed=cfg.seed),
    )
    fit = rb.FitResult(model, pd, extract_thresholds(draws, model))
    report = rb.ppc(fit)
    out = _out_dir(cfg)
    write_json(out / "ppc.json", {
        "kind": report.kind,
        "rmse_primary": report.rmse_primary,
        "rmse_hit_rate": report.rmse_hit_rate,
        "reference_rmse_primary": report.reference_rmse_primary,
        "reference_rmse_hit_rate": report.reference_rmse_hit_rate,
    })
    print(f"{report.kind} PPC: primary-rate RMSE {report.rmse_primary:.5f}, "
          f"hit-rate RMSE {report.rmse_hit_rate:.5f}")
    return EXIT_OK


def cmd_heterogeneity(args) -> int:
    cfg = _load_config(args, stops=args.stops)
    agg = _load_frisk_inputs(cfg)
    base = rb.fit_frisk(agg.cells, n_races=len(agg.races), n_locations=len(agg.precincts),
                        priors=cfg.priors(), config=cfg.sampler())
    params = base.model.unpack(base.posterior_mean)
    stops = np.zeros(params.logit_t.shape, dtype=np.int64)
    for c in base.model.cells:
        stops[c.race, c.location] = c.stops
    spec = rb.SyntheticSpec(params, stops, seed=cfg.seed)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    entries = rb.heterogeneity_sweep(spec, sigmas, priors=cfg.priors(), config=cfg.sampler())
    out = _out_dir(cfg)
    _write_sweep_csv(out / "heterogeneity.csv", entries, agg.races, "sigma")
    print(f"wrote {out}/heterogeneity.csv ({len(entries)} refits)")
    return EXIT_OK


def _write_sweep_csv(path, entries, races, value_name):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([value_name, "race", "threshold_mean", "threshold_lo", "threshold_hi", "seed"])
        for entry in entries:
            summ = entry.thresholds
            for i, race in enumerate(races):
                writer.writerow([
                    entry.value, race,
                    f"{summ.race_mean[i]:.8g}", f"{summ.race_lo[i]:.8g}",
                    f"{summ.race_hi[i]:.8g}", entry.seed,
                ])


def cmd_placebo(args) -> int:
    cfg = _load_config(args, stops=args.stops)
    records = read_records(cfg.stops, cfg.columns)
    result = rb.placebo(records, args.column, model=args.model,
                        priors=cfg.priors(), config=cfg.sampler())
    out = _out_dir(cfg)
    summ = result.thresholds
    with open(out / "placebo.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "threshold_mean", "threshold_lo", "threshold_hi"])
        for i, level in enumerate(result.levels):
            writer.writerow([level, f"{summ.race_mean[i]:.8g}",
                             f"{summ.race_lo[i]:.8g}", f"{summ.race_hi[i]:.8g}"])
    write_json(out / "placebo.json", {
        "column": args.column,
        "levels": result.levels,
        "all_pairs_overlap": result.all_pairs_overlap,
    })
    print(f"placebo on {args.column!r}: credible intervals "
          f"{'all overlap' if result.all_pairs_overlap else 'do NOT all overlap'}")
    return EXIT_OK


def cmd_disaggregate(args) -> int:
    cfg = _load_config(args, stops=args.stops)
    records = read_records(cfg.stops, cfg.columns)
    fits = rb.subset_disaggregate(records, args.column, priors=cfg.priors(),
                                  config=cfg.sampler(), max_workers=args.level_workers)
    out = _out_dir(cfg)
    with open(out / "disaggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "race", "threshold_mean", "threshold_lo", "threshold_hi"])
        for level, fit in fits.items():
            agg = aggregate([r for r in records if str(r.column(args.column)) == level])
            summ = fit.thresholds
            for i, race in enumerate(agg.races):
                writer.writerow([level, race, f"{summ.race_mean[i]:.8g}",
                                 f"{summ.race_lo[i]:.8g}", f"{summ.race_hi[i]:.8g}"])
    print(f"wrote {out}/disaggregate.csv ({len(fits)} levels)")
    return EXIT_OK


def cmd_census_sweep(args) -> int:
    cfg = _load_config(args, stops=args.stops, census=args.census, model="stop")
    agg = read_cells_csv(cfg.stops) if cfg.aggregated else aggregate(read_records(cfg.stops, cfg.columns))
    data = build_stop_data(agg, read_census_csv(cfg.census))
    factors = [float(f) for f in args.factors.split(",")]
    race_index = agg.races.index(args.race) if args.race else 0
    entries = rb.census_sweep(data, factors, race_index=race_index,
                              priors=cfg.priors(), config=cfg.sampler())
    out = _out_dir(cfg)
    _write_sweep_csv(out / "census_sweep.csv", entries, agg.races, "factor")
    print(f"wrote {out}/census_sweep.csv ({len(entries)} refits)")
    return EXIT_OK


def cmd_dist_table(args) -> int:
    cfg = _load_config(args)
    p = tt.DiscParams(args.phi, args.delta)
    ts = np.linspace(args.t_min, args.t_max, args.points)
    out = _out_dir(cfg)
    with open(out / "dist_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pdf", "ccdf", "conditional_mean"])
        for t in ts:
            writer.writerow([
                f"{t:.8g}", f"{tt.pdf(t, p):.10g}",
                f"{tt.ccdf(t, p):.10g}", f"{tt.conditional_mean(t, p):.10g}",
            ])
    print(f"wrote {out}/dist_table.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threshtest",
                                     description="Threshold tests for discrimination")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-frisk", help="fit the frisk-decision threshold model")
    p.add_argument("--stops", help="stops CSV (per-record, or aggregated with aggregated=true)")
    _add_common(p)
    p.set_defaults(fn=cmd_fit_frisk)

    p = sub.add_parser("fit-stop", help="fit the censored stop-decision model")
    p.add_argument("--stops")
    p.add_argument("--census", help="census CSV: precinct, race, fraction")
    _add_common(p)
    p.set_defaults(fn=cmd_fit_stop)

    p = sub.add_parser("approx-sweep", help="TV-distance approximation sweep")
    p.add_argument("--levels", type=int, default=400)
    _add_common(p)
    p.set_defaults(fn=cmd_approx_sweep)

    p = sub.add_parser("synth", help="generate synthetic stop records")
    p.add_argument("--races", type=int, default=3)
    p.add_argument("--precincts", type=int, default=30)
    p.add_argument("--stops-per-cell", type=int, default=1000)
    p.add_argument("--heterogeneity", type=float, default=0.0)
    p.add_argument("--extra-column", help="name:level1,level2,... auxiliary column")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ppc", help="posterior predictive check from saved draws")
    p.add_argument("--draws", required=True)
    p.add_argument("--stops", required=True)
    p.add_argument("--census", help="run the stop-model PPC instead")
    _add_common(p)
    p.set_defaults(fn=cmd_ppc)

    p = sub.add_parser("heterogeneity", help="threshold-noise robustness sweep")
    p.add_argument("--stops", required=True)
    p.add_argument("--sigmas", default="0,0.25,0.5,0.75,1")
    _add_common(p)
    p.set_defaults(fn=cmd_heterogeneity)

    p = sub.add_parser("placebo", help="rerun with race replaced by another column")
    p.add_argument("--stops", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--model", default="frisk", choices=["frisk", "stop"])
    _add_common(p)
    p.set_defaults(fn=cmd_placebo)

    p = sub.add_parser("disaggregate", help="independent fits per level of a column")
    p.add_argument("--stops", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--level-workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(fn=cmd_disaggregate)

    p = sub.add_parser("census-sweep", help="stop-model census sensitivity sweep")
    p.add_argument("--stops", required=True)
    p.add_argument("--census", required=True)
    p.add_argument("--factors", default="0.5,1,2")
    p.add_argument("--race", help="race whose share is rescaled (default: first)")
    _add_common(p)
    p.set_defaults(fn=cmd_census_sweep)

    p = sub.add_parser("dist-table", help="tabulate pdf/ccdf/conditional mean")
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--t-min", type=float, default=0.001)
    p.add_argument("--t-max", type=float, default=0.999)
    p.add_argument("--points", type=int, default=199)
    _add_common(p)
    p.set_defaults(fn=cmd_dist_table)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IdentifiabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
