"""Parity between the numba kernels and the numpy reference paths."""

import numpy as np
import pytest
from scipy import special

from threshtest import _fast
from threshtest.params import ParamLayout, PriorConfig, PriorEval, prior_logp_grad
from threshtest.rates import cell_terms, cell_terms_numpy

pytestmark = pytest.mark.skipif(not _fast.HAVE_NUMBA, reason="numba unavailable")


class TestLogNdtr:
    def test_matches_scipy_everywhere(self):
        xs = np.concatenate(
            [
                np.linspace(-40, 40, 4001),
                np.array([-300.0, -100.0, -26.001, -25.999, 5.999, 6.001, 100.0]),
            ]
        )
        mine = np.array([_fast._log_ndtr(float(x)) for x in xs])
        ref = special.log_ndtr(xs)
        rel = np.abs(mine - ref) / np.maximum(np.abs(ref), 1e-300)
        mask = ref < -1e-300
        assert np.max(rel[mask]) < 1e-12
        # near zero, absolute accuracy is what matters
        assert np.max(np.abs(mine[~mask] - ref[~mask])) < 1e-15

    def test_nan_propagates(self):
        assert np.isnan(_fast._log_ndtr(float("nan")))


class TestCellTermsParity:
    @pytest.mark.parametrize("need_pass", [True, False])
    def test_random_inputs(self, need_pass):
        rng = np.random.default_rng(0)
        a = rng.normal(-1.0, 1.5, 200)
        lam = rng.normal(0.0, 0.8, 200)
        u = rng.normal(-1.5, 2.0, 200)
        fast = cell_terms(a, lam, u, need_pass=need_pass)
        ref = cell_terms_numpy(a, lam, u, need_pass=need_pass)
        for name in ("log_p_hit", "log_p_miss", "log_s"):
            np.testing.assert_allclose(
                getattr(fast, name), getattr(ref, name), rtol=1e-12, atol=1e-13
            )
        for name in ("d_log_p_hit", "d_log_p_miss", "d_log_s"):
            np.testing.assert_allclose(
                getattr(fast, name), getattr(ref, name), rtol=1e-9, atol=1e-11
            )
        if need_pass:
            np.testing.assert_allclose(fast.log_p_pass, ref.log_p_pass, rtol=1e-12, atol=1e-13)
            np.testing.assert_allclose(
                fast.d_log_p_pass, ref.d_log_p_pass, rtol=1e-9, atol=1e-11
            )

    def test_extreme_inputs_agree_on_finiteness(self):
        a = np.array([-30.0, 0.0, 30.0, 0.0, 5.0])
        lam = np.array([3.0, 800.0, -3.0, 0.0, -800.0])
        u = np.array([-50.0, 50.0, 0.0, 700.0, -700.0])
        fast = cell_terms(a, lam, u)
        ref = cell_terms_numpy(a, lam, u)
        for name in ("log_p_hit", "log_p_miss", "log_s", "log_p_pass"):
            f, r = getattr(fast, name), getattr(ref, name)
            np.testing.assert_array_equal(np.isfinite(f), np.isfinite(r))


class TestPriorParity:
    def test_matches_numpy_and_reference(self):
        lay = ParamLayout(3, 8)
        priors = PriorConfig(sigma_t=0.8, mu_t_loc=-2.5)
        ev = PriorEval(lay, priors)
        rng = np.random.default_rng(1)
        for _ in range(10):
            theta = rng.normal(0.0, 0.7, lay.dim)
            g_fast = np.zeros(lay.dim)
            g_np = np.zeros(lay.dim)
            lp_fast = ev(theta, g_fast)
            lp_np = ev.call_numpy(theta, g_np)
            assert lp_fast == pytest.approx(lp_np, rel=1e-12)
            np.testing.assert_allclose(g_fast, g_np, rtol=1e-10, atol=1e-12)
            lp_ref, g_ref = prior_logp_grad(theta, lay, priors)
            assert lp_fast == pytest.approx(lp_ref, rel=1e-12)
            np.testing.assert_allclose(g_fast, g_ref, rtol=1e-10, atol=1e-12)
