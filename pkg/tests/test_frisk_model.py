import numpy as np
import pytest
from scipy.special import expit

import oracles
import threshtest as tt
from threshtest.frisk import CellCounts, FriskModel, extract_thresholds
from threshtest.params import PriorConfig, prior_logp_grad


def small_model(seed=0, n_races=3, n_locations=4, stops=500):
    rng = np.random.default_rng(seed)
    cells = []
    for r in range(n_races):
        for d in range(n_locations):
            searches = int(rng.integers(20, stops // 2))
            hits = int(rng.integers(0, max(searches // 2, 1)))
            cells.append(CellCounts(r, d, stops, searches, hits))
    return FriskModel(cells)


class TestCellCounts:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            CellCounts(0, 0, stops=10, searches=12, hits=0)
        with pytest.raises(ValueError):
            CellCounts(0, 0, stops=10, searches=5, hits=6)


class TestLogPosterior:
    def test_empty_data_is_prior_only(self):
        model = FriskModel([], n_races=2, n_locations=3)
        rng = np.random.default_rng(3)
        theta = rng.normal(0.0, 0.5, model.dim)
        expected, _ = prior_logp_grad(theta, model.layout, model.priors)
        assert model.log_posterior(theta) == pytest.approx(expected, rel=1e-12)

    def test_single_cell_binomial_oracle(self):
        model = FriskModel([CellCounts(0, 0, stops=100, searches=30, hits=15)])
        theta = np.array([-0.5, 0.3, -1.2, -2.0, -1.0, -1.0])
        phi = float(expit(theta[0]))
        delta = float(np.exp(theta[1]))
        t = float(expit(theta[2]))
        p = tt.DiscParams(phi, delta)
        s = tt.ccdf(t, p)
        h = tt.conditional_mean(t, p)
        expected = (
            prior_logp_grad(theta, model.layout, model.priors)[0]
            + oracles.binomial_logpmf(30, 100, s)
            + oracles.binomial_logpmf(15, 30, h)
        )
        assert model.log_posterior(theta) == pytest.approx(expected, rel=1e-12)

    def test_zero_stop_cell_is_inert(self):
        cells = [
            CellCounts(0, 0, 100, 40, 10),
            CellCounts(0, 1, 80, 20, 5),
            CellCounts(1, 0, 90, 30, 12),
            CellCounts(1, 1, 70, 25, 8),
        ]
        base = FriskModel(cells, n_races=2, n_locations=3)
        padded = FriskModel(
            cells + [CellCounts(1, 2, 0, 0, 0)], n_races=2, n_locations=3
        )
        rng = np.random.default_rng(4)
        theta = rng.normal(0.0, 0.5, base.dim)
        assert base.log_posterior(theta) == pytest.approx(
            padded.log_posterior(theta), rel=1e-14
        )

    def test_duplicate_cells_rejected(self):
        with pytest.raises(ValueError):
            FriskModel([CellCounts(0, 0, 10, 2, 1), CellCounts(0, 0, 20, 3, 1)])

    def test_permutation_equivariance(self):
        model = small_model(seed=5)
        perm = [2, 0, 1]  # race relabeling
        permuted_cells = [
            CellCounts(perm[c.race], c.location, c.stops, c.searches, c.hits)
            for c in model.cells
        ]
        permuted = FriskModel(permuted_cells)
        rng = np.random.default_rng(6)
        theta = rng.normal(0.0, 0.5, model.dim)

        lay = model.layout
        theta_p = theta.copy()
        inv = np.argsort(perm)
        theta_p[lay.phi_r] = theta[lay.phi_r][inv]
        theta_p[lay.lam_r] = theta[lay.lam_r][inv]
        theta_p[lay.mu_t] = theta[lay.mu_t][inv]
        u = theta[lay.logit_t].reshape(model.n_races, model.n_locations)
        theta_p[lay.logit_t] = u[inv].ravel()
        assert model.log_posterior(theta) == pytest.approx(
            permuted.log_posterior(theta_p), rel=1e-12
        )


class TestGradient:
    def test_empty_data_gradient_is_prior_gradient(self):
        model = FriskModel([], n_races=2, n_locations=2)
        theta = np.full(model.dim, 0.1)
        _, expected = prior_logp_grad(theta, model.layout, model.priors)
        assert np.allclose(model.log_posterior_grad(theta), expected)

    def test_finite_differences(self):
        model = small_model(seed=7)
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(10):
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

    def test_threshold_locality(self):
        model = small_model(seed=9, n_races=2, n_locations=3)
        rng = np.random.default_rng(10)
        theta = rng.normal(0.0, 0.4, model.dim)
        lay = model.layout

        def loglik_grad(th):
            _, g = model.value_and_grad(th)
            _, gp = prior_logp_grad(th, lay, model.priors)
            return g - gp

        base = loglik_grad(theta)
        cell = lay.cell_index(1, 2)
        idx = lay.logit_t.start + cell
        bumped = theta.copy()
        bumped[idx] += 0.3
        after = loglik_grad(bumped)
        changed = np.nonzero(np.abs(after - base) > 1e-12)[0]
        # Only that cell's threshold entry plus its race/location effect
        # entries may move.
        allowed = {
            idx,
            lay.phi_r.start + 1,
            lay.lam_r.start + 1,
            lay.phi_d.start + 1,  # location 2 -> phi_d block offset 1
            lay.lam_d.start + 1,
        }
        assert set(changed.tolist()) <= allowed


class TestDerivedRates:
    def test_monotone_threshold_effect(self):
        model = small_model(seed=11, n_races=2, n_locations=2)
        theta = np.zeros(model.dim)
        lay = model.layout
        rates0 = model.derived_rates(theta)
        bumped = theta.copy()
        bumped[lay.logit_t] += 0.5
        rates1 = model.derived_rates(bumped)
        assert np.all(rates1.search_rate < rates0.search_rate)
        assert np.all(rates1.hit_rate > rates0.hit_rate)

    def test_hit_rate_above_threshold(self):
        model = small_model(seed=12)
        rng = np.random.default_rng(13)
        theta = rng.normal(0.0, 0.5, model.dim)
        rates = model.derived_rates(theta)
        t = expit(theta[model.layout.logit_t][model._tidx])
        assert np.all(rates.hit_rate > t)


class TestExtractThresholds:
    def test_constant_draws(self):
        model = small_model(seed=14, n_races=2, n_locations=2)
        theta = np.linspace(-1, 1, model.dim)
        draws = np.tile(theta, (50, 1))
        summ = extract_thresholds(draws, model)
        t = expit(theta[model.layout.logit_t]).reshape(2, 2)
        assert np.allclose(summ.cell_mean, t)
        assert np.allclose(summ.cell_lo, t)
        assert np.allclose(summ.cell_hi, t)
        assert np.allclose(summ.race_lo, summ.race_hi)

    def test_quantiles_bracket_mean(self):
        model = small_model(seed=15, n_races=2, n_locations=3)
        rng = np.random.default_rng(16)
        draws = rng.normal(-1.0, 0.3, size=(400, model.dim))
        summ = extract_thresholds(draws, model)
        assert np.all(summ.cell_lo <= summ.cell_mean + 1e-12)
        assert np.all(summ.cell_mean <= summ.cell_hi + 1e-12)
        assert np.all(summ.race_lo <= summ.race_mean)
        assert np.all(summ.race_mean <= summ.race_hi)

    def test_rejects_mismatched_dimensions(self):
        model = small_model(seed=17, n_races=2, n_locations=2)
        with pytest.raises(ValueError):
            extract_thresholds(np.zeros((10, model.dim + 3)), model)
        with pytest.raises(ValueError):
            extract_thresholds(np.zeros((0, model.dim)), model)
