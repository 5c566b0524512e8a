import numpy as np
import pytest

from didsim.estimators import ModelSpec, build_design, fit_wls
from didsim.gee import _Groups, _moment_rho, ar1_corr, fit_gee_ar1
from didsim.inference import infer
from didsim.scenario import sample_scenario, substream

from .conftest import make_design


def ar1_panel_design(rho, n_clusters=50, T=18, seed=0, beta=(1.0, 0.5)):
    rng = np.random.default_rng(seed)
    e = np.empty((n_clusters, T))
    e[:, 0] = rng.normal(size=n_clusters)
    for t in range(1, T):
        e[:, t] = rho * e[:, t - 1] + np.sqrt(1 - rho**2) * rng.normal(size=n_clusters)
    x = rng.normal(size=(n_clusters, T))
    y = beta[0] + beta[1] * x + e
    X = np.column_stack([np.ones(n_clusters * T), x.ravel()])
    return make_design(X, y.ravel(), clusters=np.repeat(np.arange(n_clusters), T),
                       times=np.tile(np.arange(T), n_clusters), target=1)


def test_ar1_corr():
    np.testing.assert_allclose(ar1_corr([0, 1, 3], 0.5), [[1, 0.5, 0.125], [0.5, 1, 0.25], [0.125, 0.25, 1]])


def test_independence_equals_wls(synth_panel):
    sc = sample_scenario(substream(2, 5, 0), synth_panel.states, synth_panel.years, 5)["instant"]
    for wt in ("unweighted", "population_weighted"):
        d = build_design(synth_panel, sc, ModelSpec("gee", weighting=wt))
        np.testing.assert_allclose(fit_gee_ar1(d, rho=0.0).beta, fit_wls(d).beta, rtol=1e-10, atol=1e-12)


def test_independence_sandwich_equals_hc0_cluster_without_dfc():
    d = ar1_panel_design(0.5, n_clusters=20, T=6, seed=3)
    g = fit_gee_ar1(d, rho=0.0)
    f = fit_wls(d)
    u = np.zeros((20, 2))
    np.add.at(u, d.cluster_ids, f.X * f.residuals[:, None])
    expected = f.bread @ (u.T @ u) @ f.bread
    np.testing.assert_allclose(g.robust_cov, expected, rtol=1e-10)


def test_alternating_residuals_contribute_zero():
    groups = _Groups(np.zeros(4, dtype=int), np.arange(4))
    # e_t * e_{t-1} sums to zero, so the estimate is 0 whatever the correction
    assert _moment_rho(np.array([1.0, 0.0, 1.0, 0.0]), groups, k=1) == 0.0


def test_moment_rho_hand_value():
    groups = _Groups(np.array([0, 0, 0, 1, 1, 1]), np.array([0, 1, 2, 0, 1, 2]))
    r = np.array([1.0, 2.0, 3.0, 1.0, -1.0, 1.0])
    # products: 2 + 6 - 1 - 1 = 6 over 4 pairs minus k=2 parameters
    assert _moment_rho(r, groups, k=2) == pytest.approx(3.0)


def test_recovers_rho():
    g = fit_gee_ar1(ar1_panel_design(0.8, seed=1))
    assert 0.7 <= g.rho <= 0.9
    assert g.beta[1] == pytest.approx(0.5, abs=0.05)


def test_unbalanced_clusters():
    d = ar1_panel_design(0.6, n_clusters=30, T=8, seed=5)
    keep = ~((d.cluster_ids % 3 == 0) & (d.time_ids == 7))
    d2 = make_design(d.X[keep], d.y[keep], clusters=d.cluster_ids[keep], times=d.time_ids[keep], target=1)
    g = fit_gee_ar1(d2)
    assert -1 < g.rho < 1 and np.isfinite(g.robust_cov).all()


def test_duplicate_times_rejected():
    d = make_design(np.ones(4), [1, 2, 3, 4], clusters=[0, 0, 1, 1], times=[0, 0, 0, 1])
    with pytest.raises(ValueError):
        fit_gee_ar1(d)


def test_infer_on_gee(synth_panel):
    sc = sample_scenario(substream(2, 5, 1), synth_panel.states, synth_panel.years, 5)["slow"]
    g = fit_gee_ar1(build_design(synth_panel, sc, ModelSpec("gee")))
    r = infer(g, "gee")
    assert r.var_alpha == pytest.approx(g.robust_cov[1, 1])
    assert 0 < r.p_value <= 1
    assert 0.5 < g.rho < 1
    with pytest.raises(ValueError):
        infer(g, "cluster")
