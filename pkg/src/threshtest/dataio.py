"""Data ingestion, aggregation, run configuration and report writers.

Input stops are per-record CSV rows (one stop each) or pre-aggregated
cell counts; census base rates come from a separate CSV.  The run
configuration is a flat key=value text file with CLI-flag overrides;
column names are remappable because the public stop-and-frisk releases
rename columns across years.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from threshtest.frisk import CellCounts, ThresholdSummary
from threshtest.params import PriorConfig
from threshtest.sampler import SamplerConfig
from threshtest.stop import PrecinctStopData

__all__ = [
    "RawStopRecord",
    "AggregateResult",
    "RunConfig",
    "aggregate",
    "read_records",
    "read_cells_csv",
    "read_census_csv",
    "build_stop_data",
    "write_thresholds_csv",
    "write_race_thresholds_csv",
    "write_json",
    "write_draws_csv",
    "read_draws_csv",
    "write_records_csv",
    "write_cells_csv",
]

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


@dataclass(frozen=True)
class RawStopRecord:
    """One pedestrian stop.

    ``extra`` carries auxiliary columns (e.g. day-of-week for placebo
    relabeling) that have no fixed schema.
    """

    race: str
    precinct: str
    frisked: bool
    weapon_found: bool
    year: int | None = None
    hour: int | None = None
    age: int | None = None
    gender: str | None = None
    suspected_crime: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.race or not self.precinct:
            raise ValueError("race and precinct must be nonempty")
        if self.weapon_found and not self.frisked:
            raise ValueError("weapon_found without frisked is inconsistent")

    def column(self, name: str):
        """A named attribute or auxiliary column value."""
        if name in self.extra:
            return self.extra[name]
        if hasattr(self, name):
            return getattr(self, name)
        raise KeyError(f"record has no column {name!r}")


@dataclass
class AggregateResult:
    """Cells plus the category orderings that index them."""

    cells: list[CellCounts]
    races: list[str]
    precincts: list[str]

    @property
    def n_stops(self) -> int:
        return sum(c.stops for c in self.cells)


def _parse_bool(text: str, column: str) -> bool:
    v = text.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"cannot parse boolean {text!r} in column {column!r}")


DEFAULT_COLUMNS = {
    "race": "race",
    "precinct": "precinct",
    "frisked": "frisked",
    "weapon_found": "weapon_found",
    "year": "year",
    "hour": "hour",
    "age": "age",
    "gender": "gender",
    "suspected_crime": "suspected_crime",
}


def read_records(path, columns: dict[str, str] | None = None) -> list[RawStopRecord]:
    """Read per-stop records; ``columns`` remaps logical to file column names."""
    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        for required in ("race", "precinct", "frisked", "weapon_found"):
            if cols[required] not in reader.fieldnames:
                raise ValueError(f"{path}: missing column {cols[required]!r}")
        mapped = set(cols.values())
        for row in reader:
            def opt(key, cast):
                name = cols[key]
                if name in row and row[name] not in (None, ""):
                    return cast(row[name])
                return None

            extra = {
                k: v for k, v in row.items() if k not in mapped and v not in (None, "")
            }
            records.append(
                RawStopRecord(
                    race=row[cols["race"]].strip(),
                    precinct=row[cols["precinct"]].strip(),
                    frisked=_parse_bool(row[cols["frisked"]], cols["frisked"]),
                    weapon_found=_parse_bool(row[cols["weapon_found"]], cols["weapon_found"]),
                    year=opt("year", int),
                    hour=opt("hour", int),
                    age=opt("age", int),
                    gender=opt("gender", str),
                    suspected_crime=opt("suspected_crime", str),
                    extra=extra,
                )
            )
    return records


def aggregate(
    records: list[RawStopRecord],
    *,
    races: list[str] | None = None,
    precincts: list[str] | None = None,
    group_by: str = "race",
) -> AggregateResult:
    """Group stops into (group, precinct) cells.

    ``group_by`` names the record attribute or auxiliary column playing
    the race role (the placebo tests swap in day-of-week style columns).
    Explicit category lists reject unknown values; otherwise categories
    are the sorted distinct values observed.
    """
    groups = [str(r.column(group_by)) for r in records]
    if any(g in ("", "None") for g in groups):
        raise ValueError(f"records contain empty values for {group_by!r}")
    race_list = sorted(set(groups)) if races is None else list(races)
    precinct_list = (
        sorted({r.precinct for r in records}) if precincts is None else list(precincts)
    )
    r_index = {v: i for i, v in enumerate(race_list)}
    d_index = {v: i for i, v in enumerate(precinct_list)}

    stops = np.zeros((len(race_list), len(precinct_list)), dtype=np.int64)
    searches = np.zeros_like(stops)
    hits = np.zeros_like(stops)
    for rec, g in zip(records, groups):
        if g not in r_index:
            raise ValueError(f"unknown {group_by} category {g!r}")
        if rec.precinct not in d_index:
            raise ValueError(f"unknown precinct {rec.precinct!r}")
        i, j = r_index[g], d_index[rec.precinct]
        stops[i, j] += 1
        searches[i, j] += rec.frisked
        hits[i, j] += rec.weapon_found

    cells = [
        CellCounts(i, j, int(stops[i, j]), int(searches[i, j]), int(hits[i, j]))
        for i in range(len(race_list))
        for j in range(len(precinct_list))
        if stops[i, j] > 0
    ]
    return AggregateResult(cells=cells, races=race_list, precincts=precinct_list)


def read_cells_csv(path) -> AggregateResult:
    """Read pre-aggregated counts: race, precinct, stops, frisks, hits."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"race", "precinct", "stops", "frisks", "hits"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for row in reader:
            rows.append(
                (
                    row["race"].strip(),
                    row["precinct"].strip(),
                    int(row["stops"]),
                    int(row["frisks"]),
                    int(row["hits"]),
                )
            )
    races = sorted({r[0] for r in rows})
    precincts = sorted({r[1] for r in rows})
    r_index = {v: i for i, v in enumerate(races)}
    d_index = {v: i for i, v in enumerate(precincts)}
    cells = [
        CellCounts(r_index[race], d_index[prec], stops, frisks, hits)
        for race, prec, stops, frisks, hits in rows
    ]
    return AggregateResult(cells=cells, races=races, precincts=precincts)


def read_census_csv(path) -> dict[str, dict[str, float]]:
    """Census fractions: precinct, race, fraction -> nested mapping."""
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"precinct", "race", "fraction"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for row in reader:
            out.setdefault(row["precinct"].strip(), {})[row["race"].strip()] = float(
                row["fraction"]
            )
    return out


def build_stop_data(
    agg: AggregateResult, census: dict[str, dict[str, float]]
) -> list[PrecinctStopData]:
    """Join aggregated stop counts with census fractions into model input.

    For the stop model every stop counts as a weapon search, so the cell
    'frisks' column is ignored and hits are weapon recoveries.
    """
    r_count, d_count = len(agg.races), len(agg.precincts)
    stops = np.zeros((r_count, d_count))
    hits = np.zeros((r_count, d_count))
    for c in agg.cells:
        stops[c.race, c.location] = c.stops
        hits[c.race, c.location] = c.hits
    data = []
    for j, prec in enumerate(agg.precincts):
        if prec not in census:
            raise ValueError(f"census file has no precinct {prec!r}")
        fractions = census[prec]
        missing = [race for race in agg.races if race not in fractions]
        if missing:
            raise ValueError(f"census for precinct {prec!r} missing races {missing}")
        c = np.array([fractions[race] for race in agg.races], dtype=float)
        data.append(PrecinctStopData(j, stops[:, j], hits[:, j], c))
    return data


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a fit run needs; parsed from key=value text plus overrides."""

    model: str = "frisk"
    stops: str = ""
    census: str = ""
    output: str = "out"
    aggregated: bool = False
    seed: int = 0
    chains: int = 5
    warmup: int = 1000
    samples: int = 4000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    metric: str = "dense"
    workers: int = 0  # 0 = auto
    save_draws: bool = False
    strict: bool = False
    ci: float = 0.95
    suspected_crime: str = ""  # stop-model filter; empty = no filter
    group_by: str = "race"
    phi_r_scale: float = 2.0
    lam_r_scale: float = 2.0
    mu_t_loc: float = -3.0
    mu_t_scale: float = 2.0
    sigma_t: float = 1.0
    sigma_phi_d_scale: float = 0.25
    sigma_lam_d_scale: float = 0.25
    columns: dict = field(default_factory=dict)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        values = cls.parse_text(Path(path).read_text(encoding="utf-8"))
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        cfg = cls()
        for key, raw in values.items():
            if key.startswith("column."):
                cfg.columns[key.split(".", 1)[1]] = str(raw)
                continue
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                value = raw if isinstance(raw, bool) else _parse_bool(str(raw), key)
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = str(raw)
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    @staticmethod
    def parse_text(text: str) -> dict:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        return values

    def validate(self):
        if self.model not in ("frisk", "stop"):
            raise ValueError(f"model must be 'frisk' or 'stop', got {self.model!r}")
        for name in (
            "phi_r_scale",
            "lam_r_scale",
            "mu_t_scale",
            "sigma_t",
            "sigma_phi_d_scale",
            "sigma_lam_d_scale",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0.5 < self.ci < 1.0):
            raise ValueError("ci must be in (0.5, 1)")

    def priors(self) -> PriorConfig:
        return PriorConfig(
            phi_r_scale=self.phi_r_scale,
            lam_r_scale=self.lam_r_scale,
            mu_t_loc=self.mu_t_loc,
            mu_t_scale=self.mu_t_scale,
            sigma_t=self.sigma_t,
            sigma_phi_d_scale=self.sigma_phi_d_scale,
            sigma_lam_d_scale=self.sigma_lam_d_scale,
        )

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            chains=self.chains,
            warmup_iters=self.warmup,
            sampling_iters=self.samples,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            seed=self.seed,
            metric=self.metric,
            workers=self.workers if self.workers > 0 else None,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "columns":
                for key, value in sorted(self.columns.items()):
                    lines.append(f"column.{key} = {value}")
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Report writers
# ---------------------------------------------------------------------------


def write_thresholds_csv(path, summary: ThresholdSummary, races, precincts, model=None):
    """Per-cell posterior thresholds, plot-ready."""
    counts = {}
    if model is not None:
        counts = {(c.race, c.location): c for c in model.cells}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["race", "precinct", "stops", "threshold_mean", "threshold_lo", "threshold_hi"]
        )
        for i, race in enumerate(races):
            for j, prec in enumerate(precincts):
                cell = counts.get((i, j))
                writer.writerow(
                    [
                        race,
                        prec,
                        cell.stops if cell else 0,
                        f"{summary.cell_mean[i, j]:.8g}",
                        f"{summary.cell_lo[i, j]:.8g}",
                        f"{summary.cell_hi[i, j]:.8g}",
                    ]
                )


def write_race_thresholds_csv(path, summary: ThresholdSummary, races):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "threshold_mean", "threshold_lo", "threshold_hi"])
        for i, race in enumerate(races):
            writer.writerow(
                [
                    race,
                    f"{summary.race_mean[i]:.8g}",
                    f"{summary.race_lo[i]:.8g}",
                    f"{summary.race_hi[i]:.8g}",
                ]
            )


def write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_draws_csv(path, draws, param_names=None):
    """Flattened draws with a chain column."""
    chains, iters, dim = draws.shape
    names = param_names or [f"param_{i}" for i in range(dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", *names])
        for c in range(chains):
            for i in range(iters):
                writer.writerow([c, i, *(f"{v:.17g}" for v in draws[c, i])])


def read_draws_csv(path) -> np.ndarray:
    """Inverse of :func:`write_draws_csv`; returns (chains, iters, dim)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["chain", "iteration"]:
            raise ValueError(f"{path}: not a draws CSV")
        rows = [(int(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader]
    chains = max(r[0] for r in rows) + 1
    iters = max(r[1] for r in rows) + 1
    dim = len(rows[0][2])
    out = np.empty((chains, iters, dim))
    for c, i, vals in rows:
        out[c, i] = vals
    return out


def write_records_csv(path, records: list[RawStopRecord]):
    """Per-stop records; auxiliary columns become extra CSV columns."""
    extra_keys = sorted({k for r in records for k in r.extra})
    optional = [
        name
        for name in ("year", "hour", "age", "gender", "suspected_crime")
        if any(getattr(r, name) is not None for r in records)
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "precinct", "frisked", "weapon_found", *optional, *extra_keys])
        for r in records:
            row = [r.race, r.precinct, int(r.frisked), int(r.weapon_found)]
            row += [getattr(r, name) for name in optional]
            row += [r.extra.get(k, "") for k in extra_keys]
            writer.writerow(row)


def write_cells_csv(path, agg: AggregateResult):
    """Aggregated counts in the fit-ready schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "precinct", "stops", "frisks", "hits"])
        for c in agg.cells:
            writer.writerow(
                [agg.races[c.race], agg.precincts[c.location], c.stops, c.searches, c.hits]
            )
