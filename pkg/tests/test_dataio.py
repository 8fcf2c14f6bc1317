import numpy as np
import pytest

from threshtest.dataio import (
    AggregateResult,
    RawStopRecord,
    RunConfig,
    aggregate,
    build_stop_data,
    read_cells_csv,
    read_census_csv,
    read_draws_csv,
    read_records,
    write_cells_csv,
    write_draws_csv,
    write_records_csv,
)


def rec(race="black", precinct="p1", frisked=False, weapon=False, **kw):
    return RawStopRecord(race=race, precinct=precinct, frisked=frisked, weapon_found=weapon, **kw)


class TestRawStopRecord:
    def test_weapon_without_frisk_rejected(self):
        with pytest.raises(ValueError):
            rec(frisked=False, weapon=True)

    def test_empty_category_rejected(self):
        with pytest.raises(ValueError):
            rec(race="")

    def test_column_lookup(self):
        r = rec(extra={"day_of_week": "tue"})
        assert r.column("day_of_week") == "tue"
        assert r.column("race") == "black"
        with pytest.raises(KeyError):
            r.column("nope")


class TestAggregate:
    def test_small_example(self):
        records = [
            rec("white", "p1", True, False),
            rec("white", "p1", False, False),
            rec("black", "p2", True, True),
        ]
        agg = aggregate(records)
        assert agg.races == ["black", "white"]
        assert agg.precincts == ["p1", "p2"]
        by_cell = {(c.race, c.location): c for c in agg.cells}
        white_p1 = by_cell[(1, 0)]
        assert (white_p1.stops, white_p1.searches, white_p1.hits) == (2, 1, 0)
        black_p2 = by_cell[(0, 1)]
        assert (black_p2.stops, black_p2.searches, black_p2.hits) == (1, 1, 1)

    def test_totals_preserved(self):
        rng = np.random.default_rng(0)
        races = ["a", "b", "c"]
        precincts = [f"p{i}" for i in range(5)]
        records = []
        for _ in range(5000):
            frisked = bool(rng.random() < 0.3)
            records.append(
                rec(
                    races[rng.integers(3)],
                    precincts[rng.integers(5)],
                    frisked,
                    bool(frisked and rng.random() < 0.2),
                )
            )
        agg = aggregate(records)
        assert agg.n_stops == len(records)
        assert sum(c.searches for c in agg.cells) == sum(r.frisked for r in records)

    def test_unknown_category_rejected(self):
        with pytest.raises(ValueError):
            aggregate([rec("white", "p1")], races=["black"])

    def test_group_by_auxiliary_column(self):
        records = [
            rec(extra={"dow": "mon"}),
            rec(extra={"dow": "tue"}),
            rec(extra={"dow": "mon"}),
        ]
        agg = aggregate(records, group_by="dow")
        assert agg.races == ["mon", "tue"]
        assert agg.n_stops == 3


class TestCsvRoundTrips:
    def test_records_round_trip(self, tmp_path):
        records = [
            rec("white", "p1", True, True, year=2010, extra={"dow": "mon"}),
            rec("black", "p2", False, False, year=2011, extra={"dow": "tue"}),
        ]
        path = tmp_path / "records.csv"
        write_records_csv(path, records)
        back = read_records(path)
        assert [(r.race, r.precinct, r.frisked, r.weapon_found, r.year) for r in back] == [
            ("white", "p1", True, True, 2010),
            ("black", "p2", False, False, 2011),
        ]
        assert [r.extra["dow"] for r in back] == ["mon", "tue"]

    def test_cells_round_trip(self, tmp_path):
        records = [rec("white", "p1", True, False), rec("black", "p1", False, False)]
        agg = aggregate(records)
        path = tmp_path / "cells.csv"
        write_cells_csv(path, agg)
        back = read_cells_csv(path)
        assert back.races == agg.races
        assert back.cells == agg.cells

    def test_draws_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        draws = rng.standard_normal((2, 7, 3))
        path = tmp_path / "draws.csv"
        write_draws_csv(path, draws)
        back = read_draws_csv(path)
        assert np.allclose(back, draws, rtol=0, atol=1e-15)

    def test_census_csv(self, tmp_path):
        path = tmp_path / "census.csv"
        path.write_text(
            "precinct,race,fraction\np1,white,0.6\np1,black,0.4\np2,white,0.3\np2,black,0.7\n"
        )
        census = read_census_csv(path)
        assert census["p1"]["white"] == 0.6
        agg = AggregateResult(
            cells=[],
            races=["black", "white"],
            precincts=["p1", "p2"],
        )
        from threshtest.frisk import CellCounts

        agg.cells = [
            CellCounts(0, 0, 10, 2, 2),
            CellCounts(1, 0, 5, 1, 1),
            CellCounts(0, 1, 8, 0, 0),
            CellCounts(1, 1, 2, 0, 0),
        ]
        data = build_stop_data(agg, census)
        assert len(data) == 2
        assert np.allclose(data[0].census, [0.4, 0.6])
        assert data[0].stops[0] == 10

    def test_missing_census_precinct_errors(self, tmp_path):
        path = tmp_path / "census.csv"
        path.write_text("precinct,race,fraction\np1,white,1.0\n")
        census = read_census_csv(path)
        from threshtest.frisk import CellCounts

        agg = AggregateResult(
            cells=[CellCounts(0, 0, 5, 0, 0)], races=["white"], precincts=["p9"]
        )
        with pytest.raises(ValueError):
            build_stop_data(agg, census)


class TestRunConfig:
    def test_parse_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            """
            # a comment
            model = frisk
            stops = data.csv
            chains = 3
            target_accept = 0.9
            save_draws = true
            column.race = suspect_race
            phi_r_scale = 1.5
            """
        )
        cfg = RunConfig.from_file(path, overrides={"chains": 4, "seed": 7})
        assert cfg.model == "frisk"
        assert cfg.chains == 4  # override wins
        assert cfg.seed == 7
        assert cfg.target_accept == 0.9
        assert cfg.save_draws is True
        assert cfg.columns["race"] == "suspect_race"
        assert cfg.priors().phi_r_scale == 1.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"not_a_key": 1})

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"model": "nonsense"})
        with pytest.raises(ValueError):
            RunConfig.from_dict({"sigma_t": 0})

    def test_digest_stable_and_sensitive(self):
        a = RunConfig.from_dict({"seed": 1})
        b = RunConfig.from_dict({"seed": 1})
        c = RunConfig.from_dict({"seed": 2})
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_text_round_trip(self):
        cfg = RunConfig.from_dict({"chains": 2, "metric": "diag"})
        back = RunConfig.from_dict(RunConfig.parse_text(cfg.to_text()))
        assert back == cfg

    def test_sampler_and_priors_views(self):
        cfg = RunConfig.from_dict({"chains": 2, "warmup": 50, "samples": 60, "workers": 3})
        sc = cfg.sampler()
        assert (sc.chains, sc.warmup_iters, sc.sampling_iters, sc.workers) == (2, 50, 60, 3)
        assert cfg.priors().mu_t_loc == -3.0
