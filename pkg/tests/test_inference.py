import warnings

import numpy as np
import pytest
from scipy import stats

from didsim.estimators import fit_glm_irls, fit_wls
from didsim.inference import cluster_dfc, infer, v_cluster, v_huber, v_ols, var_alpha, wald

from .conftest import make_design


@pytest.fixture
def intercept_fit():
    return fit_wls(make_design(np.ones(3), [1, 2, 3]))


class TestFixtures:
    def test_v_ols(self, intercept_fit):
        assert v_ols(intercept_fit)[0, 0] == pytest.approx(1 / 3, abs=1e-12)

    def test_v_huber(self, intercept_fit):
        np.testing.assert_allclose(intercept_fit.residuals, [-1, 0, 1])
        assert v_huber(intercept_fit)[0, 0] == pytest.approx(2 / 9, abs=1e-12)

    def test_v_cluster(self):
        # clusters {1, 2} and {3}: score sums -1 and 1, meat 2, dfc = 2 * (2 / 2) = 2
        fit = fit_wls(make_design(np.ones(3), [1, 2, 3], clusters=[0, 0, 1]))
        assert cluster_dfc(2, 3, 1) == 2.0
        assert v_cluster(fit)[0, 0] == pytest.approx(4 / 9, abs=1e-12)
        assert v_cluster(fit, small_sample=False)[0, 0] == pytest.approx(2 / 9, abs=1e-12)

    def test_singleton_clusters(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
        fit = fit_wls(make_design(X, rng.normal(size=30)))
        dfc = cluster_dfc(30, 30, 3)
        np.testing.assert_array_equal(v_cluster(fit), dfc * v_huber(fit))

    def test_zero_residuals(self):
        X = np.column_stack([np.ones(4), np.arange(4.0)])
        fit = fit_wls(make_design(X, 1 + 2 * np.arange(4.0)))
        np.testing.assert_allclose(v_ols(fit), 0, atol=1e-25)
        np.testing.assert_allclose(v_huber(fit), 0, atol=1e-25)

    def test_weighted_hc0(self):
        X, y, w = np.ones(3), np.array([1.0, 2.0, 4.0]), np.array([1.0, 2.0, 1.0])
        fit = fit_wls(make_design(X, y, w))
        b = np.average(y, weights=w)
        meat = np.sum((w * (y - b)) ** 2)
        assert v_huber(fit)[0, 0] == pytest.approx(meat / w.sum() ** 2)


def test_huber_close_to_ols_when_homoskedastic():
    rng = np.random.default_rng(11)
    X = np.column_stack([np.ones(200), rng.normal(size=200)])
    fit = fit_wls(make_design(X, X @ [1, 2] + rng.normal(size=200)))
    ratio = v_huber(fit)[1, 1] / v_ols(fit)[1, 1]
    assert 0.8 <= ratio <= 1.2


@pytest.mark.parametrize("method", ["none", "huber", "cluster", "arellano"])
def test_var_alpha_matches_full_matrix(method):
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(60), rng.normal(size=(60, 3))])
    fit = fit_wls(make_design(X, rng.normal(size=60), rng.uniform(1, 3, 60), clusters=np.repeat(np.arange(12), 5), target=2))
    full = {"none": v_ols(fit), "huber": v_huber(fit), "cluster": v_cluster(fit),
            "arellano": v_cluster(fit, small_sample=False)}[method]
    assert var_alpha(fit, method) == pytest.approx(full[2, 2], rel=1e-12)


def test_var_alpha_unknown_method(intercept_fit):
    with pytest.raises(ValueError):
        var_alpha(intercept_fit, "jackknife")


class TestWald:
    def test_null_statistic(self):
        assert wald(0.0, 1.0) == (0.0, 1.0)

    def test_normal(self):
        assert wald(1.96, 1.0)[1] == pytest.approx(0.05, abs=1e-3)

    def test_student_t(self):
        assert wald(2.0, 1.0, df=3)[1] == pytest.approx(0.139, abs=1e-3)

    def test_zero_variance(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            t, p = wald(0.5, 0.0)
        assert p == 0.0 and t == np.inf

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            wald(1.0, -1.0)


def test_reference_distributions():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(12), rng.normal(size=12)])
    fit = fit_wls(make_design(X, rng.normal(size=12), clusters=np.repeat(np.arange(4), 3), target=1))
    r = infer(fit, "none")
    assert r.p_value == pytest.approx(2 * stats.t.sf(abs(r.t_stat), 10), rel=1e-10)
    r = infer(fit, "cluster")
    assert r.p_value == pytest.approx(2 * stats.norm.sf(abs(r.t_stat)), rel=1e-10)


def test_count_model_uses_unscaled_bread():
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(500), rng.normal(size=500)])
    y = rng.poisson(np.exp(1 + 0.3 * X[:, 1]))
    fit = fit_glm_irls(make_design(X, y, target=1), "poisson")
    mu = fit.info["mu"]
    np.testing.assert_allclose(v_ols(fit), np.linalg.inv(X.T @ (mu[:, None] * X)), rtol=1e-8)
    r = infer(fit, "none")
    assert r.p_value == pytest.approx(2 * stats.norm.sf(abs(r.t_stat)))


def test_wald_p_is_uniform_under_null():
    rng = np.random.default_rng(9)
    p = []
    with warnings.catch_warnings():
        for _ in range(2000):
            X = np.column_stack([np.ones(40), rng.normal(size=40)])
            p.append(infer(fit_wls(make_design(X, rng.normal(size=40), target=1)), "none").p_value)
    assert abs(np.mean(np.array(p) < 0.05) - 0.05) < 0.015
