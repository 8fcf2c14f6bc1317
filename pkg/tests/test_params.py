import numpy as np
import pytest
from scipy import stats

from threshtest.params import ModelParams, ParamLayout, PriorConfig, prior_logp_grad


def prior_oracle(theta, layout, priors):
    """Log prior via scipy.stats, term by term."""
    lp = 0.0
    lp += stats.norm.logpdf(theta[layout.phi_r], scale=priors.phi_r_scale).sum()
    lp += stats.norm.logpdf(theta[layout.lam_r], scale=priors.lam_r_scale).sum()
    mu = theta[layout.mu_t]
    lp += stats.norm.logpdf(mu, loc=priors.mu_t_loc, scale=priors.mu_t_scale).sum()
    u = theta[layout.logit_t].reshape(layout.n_races, layout.n_locations)
    lp += stats.norm.logpdf(u, loc=mu[:, None], scale=priors.sigma_t).sum()
    for block, lsl, hyper in (
        (layout.phi_d, layout.log_sigma_phi_d, priors.sigma_phi_d_scale),
        (layout.lam_d, layout.log_sigma_lam_d, priors.sigma_lam_d_scale),
    ):
        sigma = float(np.exp(theta[lsl][0]))
        lp += stats.norm.logpdf(theta[block], scale=sigma).sum()
        # half-normal hyperprior plus the log-scale Jacobian
        lp += stats.halfnorm.logpdf(sigma, scale=hyper) + np.log(sigma)
    return float(lp)


class TestLayout:
    def test_dimensions(self):
        lay = ParamLayout(3, 30)
        assert lay.dim == 3 + 3 + 29 + 29 + 90 + 3 + 1 + 1

    def test_cell_index(self):
        lay = ParamLayout(3, 5)
        assert lay.cell_index(0, 0) == 0
        assert lay.cell_index(2, 4) == 14
        assert list(lay.cell_index([1, 2], [0, 3])) == [5, 13]

    def test_param_names_cover_dim(self):
        lay = ParamLayout(2, 4)
        assert len(lay.param_names()) == lay.dim

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            ParamLayout(0, 5)


class TestModelParams:
    def test_pack_unpack_round_trip(self):
        lay = ParamLayout(3, 7)
        rng = np.random.default_rng(0)
        theta = rng.normal(size=lay.dim)
        mp = ModelParams.unpack(theta, lay)
        assert mp.phi_d[0] == 0.0 and mp.lam_d[0] == 0.0
        assert np.allclose(mp.pack(lay), theta)

    def test_derived_quantities(self):
        lay = ParamLayout(2, 2)
        theta = np.zeros(lay.dim)
        mp = ModelParams.unpack(theta, lay)
        assert np.allclose(mp.phi_rd, 0.5)
        assert np.allclose(mp.delta_rd, 1.0)
        assert np.allclose(mp.t_rd, 0.5)

    def test_unpack_rejects_wrong_length(self):
        lay = ParamLayout(2, 2)
        with pytest.raises(ValueError):
            ModelParams.unpack(np.zeros(lay.dim + 1), lay)


class TestPrior:
    def test_matches_scipy_oracle(self):
        lay = ParamLayout(3, 6)
        priors = PriorConfig()
        rng = np.random.default_rng(1)
        for _ in range(5):
            theta = rng.normal(0.0, 0.8, lay.dim)
            lp, _ = prior_logp_grad(theta, lay, priors)
            assert lp == pytest.approx(prior_oracle(theta, lay, priors), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        lay = ParamLayout(2, 4)
        priors = PriorConfig(phi_r_scale=1.5, sigma_t=0.7)
        rng = np.random.default_rng(2)
        theta = rng.normal(0.0, 0.6, lay.dim)
        _, grad = prior_logp_grad(theta, lay, priors)
        h = 1e-6
        for i in range(lay.dim):
            hi = theta.copy()
            lo = theta.copy()
            hi[i] += h
            lo[i] -= h
            fd = (
                prior_logp_grad(hi, lay, priors)[0] - prior_logp_grad(lo, lay, priors)[0]
            ) / (2 * h)
            assert fd == pytest.approx(grad[i], rel=1e-6, abs=1e-7)

    def test_scale_validation(self):
        with pytest.raises(ValueError):
            PriorConfig(sigma_t=0.0)
