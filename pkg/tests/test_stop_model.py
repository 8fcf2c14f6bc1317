import logging

import numpy as np
import pytest
from scipy.special import expit, logit
from scipy.optimize import brentq

import oracles
import threshtest as tt
from threshtest.params import prior_logp_grad
from threshtest.stop import PrecinctStopData, StopModel


def make_model(seed=0, n_races=3, n_locations=4, total=2000):
    rng = np.random.default_rng(seed)
    data = []
    for d in range(n_locations):
        census = rng.dirichlet(np.ones(n_races) * 5)
        stops = rng.multinomial(total, census)
        hits = rng.binomial(stops, 0.1)
        data.append(PrecinctStopData(d, stops.astype(float), hits.astype(float), census))
    return StopModel(data)


class TestPrecinctStopData:
    def test_validation(self):
        with pytest.raises(ValueError):
            PrecinctStopData(0, np.array([5.0]), np.array([6.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            PrecinctStopData(0, np.array([5.0]), np.array([1.0]), np.array([0.0]))

    def test_census_normalized(self):
        p = PrecinctStopData(0, np.array([5.0, 5.0]), np.zeros(2), np.array([2.0, 6.0]))
        assert np.allclose(p.census, [0.25, 0.75])


class TestStopProbability:
    def test_vanishing_threshold(self):
        model = make_model()
        theta = np.zeros(model.dim)
        theta[model.layout.logit_t] = logit(1e-12)
        for r in range(model.n_races):
            assert model.stop_probability(r, 0, theta) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_across_races(self):
        model = make_model()
        theta = np.zeros(model.dim)
        probs = [model.stop_probability(r, 1, theta) for r in range(model.n_races)]
        assert np.allclose(probs, probs[0])

    def test_matches_distributions_ccdf(self):
        model = make_model(seed=1)
        rng = np.random.default_rng(2)
        theta = rng.normal(0.0, 0.5, model.dim)
        mp = model.unpack(theta)
        for r, d in [(0, 0), (1, 3), (2, 2)]:
            p = tt.DiscParams(mp.phi_rd[r, d], mp.delta_rd[r, d])
            expected = tt.ccdf(mp.t_rd[r, d], p)
            assert model.stop_probability(r, d, theta) == pytest.approx(expected, rel=1e-12)


class TestComposition:
    def test_uniform(self):
        model = make_model()
        theta = np.zeros(model.dim)
        comp = model.composition(0, theta, census=np.full(model.n_races, 1 / 3))
        assert np.allclose(comp, 1 / 3)

    def test_two_race_normalization(self):
        # Equal census, stop probabilities 0.2 and 0.1 -> shares (2/3, 1/3).
        data = [
            PrecinctStopData(0, np.array([50.0, 50.0]), np.zeros(2), np.array([0.5, 0.5]))
        ]
        model = StopModel(data)
        theta = np.zeros(model.dim)
        lay = model.layout
        p = tt.DiscParams(0.5, 1.0)  # phi_r = lam_r = 0 per race
        for r, target in enumerate((0.2, 0.1)):
            t = brentq(lambda t_: tt.ccdf(t_, p) - target, 1e-9, 1 - 1e-9)
            theta[lay.logit_t.start + lay.cell_index(r, 0)] = logit(t)
        comp = model.composition(0, theta)
        assert comp == pytest.approx([2 / 3, 1 / 3], abs=1e-9)

    def test_three_race_oracle(self):
        model = make_model(seed=3)
        rng = np.random.default_rng(4)
        theta = rng.normal(0.0, 0.5, model.dim)
        d = 2
        census = model._census[:, d]
        probs = np.array(
            [model.stop_probability(r, d, theta) for r in range(model.n_races)]
        )
        expected = census * probs
        expected = expected / expected.sum()
        assert np.allclose(model.composition(d, theta), expected, atol=1e-12)

    def test_sums_to_one(self):
        model = make_model(seed=5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            theta = rng.normal(0.0, 1.0, model.dim)
            for d in range(model.n_locations):
                assert model.composition(d, theta).sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_zero_census(self):
        model = make_model()
        with pytest.raises(ValueError):
            model.composition(0, np.zeros(model.dim), census=np.zeros(model.n_races))


class TestLogPosterior:
    def test_single_race_driven_by_hits(self):
        # Degenerate multinomial: theta_d = 1, so the composition term is
        # constant and only hits move the likelihood.
        data = [PrecinctStopData(0, np.array([100.0]), np.array([12.0]), np.array([1.0]))]
        model = StopModel(data)
        theta = np.array([-0.3, 0.2, -1.5, -1.2, -0.8, -0.9])
        mp = model.unpack(theta)
        p = tt.DiscParams(mp.phi_rd[0, 0], mp.delta_rd[0, 0])
        h = tt.conditional_mean(mp.t_rd[0, 0], p)
        expected = (
            prior_logp_grad(theta, model.layout, model.priors)[0]
            + oracles.binomial_logpmf(12, 100, h)
        )
        assert model.log_posterior(theta) == pytest.approx(expected, rel=1e-12)

    def test_symmetric_two_race_multinomial_oracle(self):
        data = [
            PrecinctStopData(
                0, np.array([60.0, 40.0]), np.array([6.0, 4.0]), np.array([0.5, 0.5])
            )
        ]
        model = StopModel(data)
        theta = np.zeros(model.dim)
        theta[model.layout.logit_t] = logit(0.2)  # equal thresholds
        mp = model.unpack(theta)
        p = tt.DiscParams(0.5, 1.0)
        h = tt.conditional_mean(0.2, p)
        expected = (
            prior_logp_grad(theta, model.layout, model.priors)[0]
            + oracles.multinomial_logpmf([60, 40], [0.5, 0.5])
            + oracles.binomial_logpmf(6, 60, h)
            + oracles.binomial_logpmf(4, 40, h)
        )
        assert model.log_posterior(theta) == pytest.approx(expected, rel=1e-12)

    def test_finite_differences(self):
        model = make_model(seed=7)
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(8):
            theta = rng.normal(0.0, 0.5, model.dim)
            _, grad = model.value_and_grad(theta)
            for i in rng.choice(model.dim, size=12, replace=False):
                hi = theta.copy()
                lo = theta.copy()
                hi[i] += h
                lo[i] -= h
                fd = (model.log_posterior(hi) - model.log_posterior(lo)) / (2 * h)
                if abs(grad[i]) < 1e-8:
                    continue
                assert abs(fd - grad[i]) / abs(grad[i]) < 1e-5

    def test_signal_space_shift_changes_likelihood(self):
        # Shifting every threshold by +0.5 in signal space must strictly
        # move the hit likelihood: identifiability comes from hits plus
        # composition jointly, not composition alone.
        model = make_model(seed=9)
        rng = np.random.default_rng(10)
        theta = rng.normal(0.0, 0.3, model.dim)
        lay = model.layout
        mp = model.unpack(theta)
        shifted = theta.copy()
        shifted[lay.logit_t] = theta[lay.logit_t] + 0.5 * mp.delta_rd.ravel()

        def loglik(th):
            return model.log_posterior(th) - prior_logp_grad(th, lay, model.priors)[0]

        assert abs(loglik(shifted) - loglik(theta)) > 1e-3


class TestCensusFloor:
    def test_zero_share_with_stops_warns_and_floors(self, caplog):
        data = [
            PrecinctStopData(
                0, np.array([30.0, 70.0]), np.zeros(2), np.array([0.0, 1.0])
            )
        ]
        with caplog.at_level(logging.WARNING, logger="threshtest.stop"):
            model = StopModel(data)
        assert "flooring" in caplog.text
        assert model._census[0, 0] > 0
        assert model._census[:, 0].sum() == pytest.approx(1.0)
        theta = np.zeros(model.dim)
        assert np.isfinite(model.log_posterior(theta))

    def test_location_indices_must_be_contiguous(self):
        data = [
            PrecinctStopData(1, np.array([5.0]), np.zeros(1), np.array([1.0])),
            PrecinctStopData(3, np.array([5.0]), np.zeros(1), np.array([1.0])),
        ]
        with pytest.raises(ValueError):
            StopModel(data)
