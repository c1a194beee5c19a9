import numpy as np
import pytest

from proxidist._validation import IllConditionedError, InputError
from proxidist.basis import BasisSpec
from proxidist.bridge import SolverConfig
from proxidist.data import Dataset
from proxidist.estimator import (NaiveAIPWEstimator, ProximalDistributionEstimator, crossfit_cdf,
                                 cvar_estimate, default_grid, make_folds, naive_aipw_cdf,
                                 one_step_scores, quantile_from_cdf, shortfall_process)

SPEC_W = BasisSpec(kind="polynomial", side="w", degree=2)
SPEC_Z = BasisSpec(kind="polynomial", side="z", degree=2)


def test_fold_sizes():
    assert sorted(make_folds(6, 3, seed=1).sizes()) == [2, 2, 2]
    assert sorted(make_folds(7, 3, seed=1).sizes()) == [2, 2, 3]
    a, b = make_folds(50, 5, seed=9), make_folds(50, 5, seed=9)
    np.testing.assert_array_equal(a.fold_ids, b.fold_ids)
    with pytest.raises(InputError):
        make_folds(3, 4)
    with pytest.raises(InputError):
        make_folds(3, 1)


def test_default_grid(rng):
    y = rng.standard_normal(500)
    g = default_grid(y, 61)
    assert g.size == 61 and np.all(np.diff(g) > 0)
    assert g[0] == pytest.approx(np.quantile(y, 0.02))
    np.testing.assert_allclose(default_grid(np.repeat([0.0, 1.0], 50), 61), [0.0, 0.5, 1.0])


def test_centering_identity(toy_data):
    est = crossfit_cdf(toy_data, SPEC_W, SPEC_Z, seed=0, levels=default_grid(toy_data.y, 9))
    for m in est.influence + est.shortfall_influence:
        assert np.abs(m.mean(axis=0)).max() <= 1e-12
    assert est.cdf.shape == (2, est.grid.size)
    assert len(est.diagnostics) == 10


def test_zero_dual_bridge_gives_plugin(toy_data):
    zero_q = lambda arm, rows: np.zeros(rows.size)  # noqa: E731
    est = crossfit_cdf(toy_data, SPEC_W, SPEC_Z, seed=0, q_override=zero_q)
    np.testing.assert_allclose(est.cdf, est.por, atol=1e-14)
    np.testing.assert_array_equal(est.pipw, 0.0)


def test_one_step_scores():
    h = np.array([[0.2, 0.5]])
    out = one_step_scores(h, np.array([2.0]), np.array([1.0]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(out, [[1.8, -0.5]])


def test_crossfit_leakage(toy_data):
    folds = make_folds(toy_data.n, 4, seed=2)
    grid = default_grid(toy_data.y, 11)
    zero_q = lambda arm, rows: np.zeros(rows.size)  # noqa: E731
    base = crossfit_cdf(toy_data, SPEC_W, SPEC_Z, folds=folds, grid=grid, q_override=zero_q)
    y = toy_data.y.copy()
    in_fold = folds.fold_ids == 0
    y[in_fold] += 3.0
    moved = Dataset(y=y, a=toy_data.a, z=toy_data.z, w=toy_data.w, x=toy_data.x)
    pert = crossfit_cdf(moved, SPEC_W, SPEC_Z, folds=folds, grid=grid, q_override=zero_q)
    for arm in (0, 1):
        s0 = base.influence[arm] + base.cdf[arm]
        s1 = pert.influence[arm] + pert.cdf[arm]
        np.testing.assert_allclose(s0[in_fold], s1[in_fold], atol=1e-12)
        assert np.abs(s0[~in_fold] - s1[~in_fold]).max() > 1e-3


def test_empty_arm_in_training_complement(rng):
    n = 20
    a = np.zeros(n, int)
    a[0] = 1
    data = Dataset(y=rng.standard_normal(n), a=a, z=rng.standard_normal((n, 1)),
                   w=rng.standard_normal((n, 1)), x=np.zeros((n, 0)))
    folds = make_folds(n, 2, seed=0)
    with pytest.raises(InputError, match="empty arm"):
        crossfit_cdf(data, SPEC_W.with_(degree=1), SPEC_Z.with_(degree=1), folds=folds)


def test_solver_failure_carries_fold(toy_data):
    with pytest.raises(IllConditionedError, match="fold 0, arm 0"):
        crossfit_cdf(toy_data, SPEC_W, SPEC_Z, solver=SolverConfig(method="square", cond_cap=1.0),
                     seed=0)


def test_shortfall_below_minimum(toy_data):
    levels = np.array([toy_data.y.min() - 1.0, toy_data.y.min() - 0.5])
    lv, S, eta = shortfall_process(toy_data, SPEC_W, SPEC_Z, seed=0, levels=levels)
    np.testing.assert_allclose(S, 0.0, atol=1e-14)
    np.testing.assert_allclose(eta[0], 0.0, atol=1e-14)


def test_quantile_from_cdf():
    grid = np.array([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(quantile_from_cdf(grid, [0.2, 0.5, 0.9], [0.1, 0.5, 0.6, 0.95]),
                                  [0.0, 1.0, 2.0, 2.0])


def test_cvar_uniform_closed_form():
    levels = np.linspace(0, 1, 1001)
    S = np.vstack([levels ** 2 / 2] * 2)
    zero = (np.zeros((10, levels.size)),) * 2
    out = cvar_estimate(levels, S, zero, [0.5])
    np.testing.assert_allclose(out.value[:, 0], 0.25)
    np.testing.assert_allclose(out.quantile[:, 0], 0.5)
    assert np.all(out.value <= out.quantile)


def test_cvar_tau_one_is_sample_mean(rng):
    y = rng.exponential(size=300)
    levels = np.sort(y)
    S = np.maximum(levels[:, None] - y[None, :], 0).mean(1)
    eta = np.maximum(levels[None, :] - y[:, None], 0) - S
    with pytest.warns(RuntimeWarning, match="enlarge search grid"):
        out = cvar_estimate(levels, np.vstack([S, S]), (eta, eta), [1.0])
    assert out.value[0, 0] == pytest.approx(y.mean(), rel=1e-12)
    with pytest.raises(InputError):
        cvar_estimate(levels, np.vstack([S, S]), (eta, eta), [0.0])


def test_naive_randomized_matches_arm_ecdf(rng):
    n = 4000
    x = rng.standard_normal((n, 1))
    a = rng.integers(0, 2, n)
    y = x[:, 0] + 0.5 * a + rng.standard_normal(n)
    data = Dataset(y=y, a=a, z=rng.standard_normal((n, 1)), w=rng.standard_normal((n, 1)), x=x)
    grid = np.array([-1.0, 0.0, 1.0])
    est = naive_aipw_cdf(data, grid, seed=0)
    for arm in (0, 1):
        ecdf = (y[a == arm, None] <= grid).mean(0)
        np.testing.assert_allclose(est.cdf[arm], ecdf, atol=0.03)


def test_naive_clipping(rng):
    n = 400
    a = np.repeat([0, 1], n // 2)
    x = (a + 0.01 * rng.standard_normal(n))[:, None]
    data = Dataset(y=rng.standard_normal(n), a=a, z=rng.standard_normal((n, 1)),
                   w=rng.standard_normal((n, 1)), x=x)
    est = naive_aipw_cdf(data, np.array([0.0]), seed=0)
    assert est.diagnostics[0]["n_clipped"] > 0
    assert np.all(np.isfinite(est.cdf))


def test_estimator_api(component1_data):
    data, oracle = component1_data
    est = ProximalDistributionEstimator(basis_w=SPEC_W, basis_z=SPEC_Z, n_grid=41,
                                        random_state=0).fit(data)
    proj = est.projected_cdf()
    assert np.all(np.diff(proj, axis=1) >= 0)
    bands = est.bands(n_multipliers=200, seed=0)
    clipped = np.clip(est.cdf_, 0, 1)
    assert np.all(bands.lower <= clipped) and np.all(clipped <= bands.upper)
    qb = est.quantile_bands([0.25, 0.5, 0.75], n_multipliers=200, seed=0)
    q = est.quantiles([0.25, 0.5, 0.75])
    assert np.all(qb.lower <= q) and np.all(q <= qb.upper)
    assert est.qte([0.5]).shape == (1,)
    cv = est.cvar([0.25, 0.5])
    assert np.all(cv.lower <= cv.value) and np.all(cv.value <= cv.quantile + 1e-12)
    params = est.get_params()
    assert params["n_folds"] == 5 and params["ridge_constant"] == 0.01
    naive = NaiveAIPWEstimator(n_grid=41, random_state=0).fit(data)
    assert naive.quantiles([0.5]).shape == (2, 1)


def test_estimator_rejects_missing(toy_data):
    with pytest.raises(InputError, match="non-finite"):
        Dataset(y=np.array([np.nan, 1.0]), a=[0, 1], z=np.zeros((2, 1)), w=np.zeros((2, 1)),
                x=np.zeros((2, 0)))
    x = toy_data.x.copy()
    x[0, 0] = np.nan
    bad = Dataset(y=toy_data.y, a=toy_data.a, z=toy_data.z, w=toy_data.w, x=x)
    with pytest.raises(InputError, match="missing"):
        ProximalDistributionEstimator().fit(bad)


def test_estimator_determinism(toy_data):
    a = ProximalDistributionEstimator(random_state=4, n_grid=15).fit(toy_data)
    b = ProximalDistributionEstimator(random_state=4, n_grid=15).fit(toy_data)
    np.testing.assert_array_equal(a.cdf_, b.cdf_)
