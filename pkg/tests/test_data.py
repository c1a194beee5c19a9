import numpy as np
import pandas as pd
import pytest

from proxidist._validation import InputError
from proxidist.data import (Dataset, Preprocessor, dataset_from_frame, fit_preprocess,
                            load_dataset, load_rhc, rhc_frame, screen_covariates)
from proxidist.simulators.synthetic_rhc import synthetic_rhc_frame

SCHEMA = {"y": "y", "a": "a", "z": ["z1"], "w": ["w1"], "x": ["x1"]}


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_table(tmp_path):
    p = write(tmp_path, "y,a,z1,w1,x1\n0.5,1,1,2,3\n1.5,0,2,3,4\n2.5,1,3,4,5\n")
    data = load_dataset(p, SCHEMA)
    assert data.n == 3
    assert data.z.shape == (3, 1) and data.w.shape == (3, 1)
    np.testing.assert_array_equal(data.y, [0.5, 1.5, 2.5])


def test_non_binary_treatment(tmp_path):
    p = write(tmp_path, "y,a,z1,w1,x1\n0.5,1,1,2,3\n1.5,2,2,3,4\n")
    with pytest.raises(InputError, match="non-binary treatment"):
        load_dataset(p, SCHEMA)


def test_missing_column_and_empty_file(tmp_path):
    p = write(tmp_path, "y,a,z1,x1\n0.5,1,1,3\n")
    with pytest.raises(InputError, match="missing column"):
        load_dataset(p, SCHEMA)
    with pytest.raises(InputError, match="empty file"):
        load_dataset(write(tmp_path, "", "e.csv"), SCHEMA)
    with pytest.raises(InputError, match="no such file"):
        load_dataset(tmp_path / "nope.csv", SCHEMA)


def test_rows_with_missing_outcome_or_treatment_dropped(tmp_path):
    p = write(tmp_path, "y,a,z1,w1,x1\n0.5,1,1,2,3\n,0,2,3,4\n2.5,,3,4,5\n3.5,0,1,1,\n")
    data = load_dataset(p, SCHEMA)
    assert data.n == 2 and data.n_dropped == 2
    assert np.isnan(data.x[1, 0])


def test_star_schema_and_categoricals():
    frame = pd.DataFrame({"y": [1.0, 2, 3], "a": [0, 1, 1], "z1": [1.0, 2, 3], "w1": [0.0, 1, 0],
                          "c": ["u", "v", "u"], "id": [1, 2, 3], "x1": [0.1, 0.2, 0.3]})
    data = dataset_from_frame(frame, {"y": "y", "a": "a", "z": ["z1"], "w": ["w1"], "x": "*",
                                      "exclude": ["id"]})
    assert data.x_names == ("c", "x1")
    assert data.categorical == ("c",)
    np.testing.assert_array_equal(data.x[:, 0], [0, 1, 0])


def test_rhc_recipe_outcome():
    frame = pd.DataFrame({"sadmdte": [10, 10, 10, 10], "dschdte": [13, np.nan, 10, 11],
                          "dthdte": [np.nan, 15, np.nan, np.nan],
                          "swang1": ["RHC", "No RHC", "RHC", "No RHC"]})
    out = rhc_frame(frame, winsor_quantile=1.0)
    # the zero-day stay is dropped, the missing discharge falls back to death date
    np.testing.assert_allclose(out["hospital_days"], [3, 5, 1])
    np.testing.assert_allclose(out["y"], np.log1p([3, 5, 1]))
    np.testing.assert_array_equal(out["swang1"], [1, 0, 0])


def test_rhc_winsorization():
    days = np.arange(1, 1001, dtype=float)
    frame = pd.DataFrame({"sadmdte": np.zeros(1000), "dschdte": days, "swang1": np.zeros(1000)})
    out = rhc_frame(frame)
    cap = np.quantile(days, 0.995)
    assert out["hospital_days"].max() == pytest.approx(cap)
    assert out["y"].max() == pytest.approx(np.log1p(cap))


def test_load_rhc_synthetic(tmp_path):
    p = tmp_path / "rhc.csv"
    synthetic_rhc_frame(400, seed=1).to_csv(p, index=False)
    data = load_rhc(p)
    assert data.z_names == ("pafi1", "paco21") and data.w_names == ("ph1", "hema1")
    assert "ptid" not in data.x_names and "sadmdte" not in data.x_names
    assert set(data.categorical) == {"sex", "cat1"}


def test_preprocess_median_and_mode():
    pre = Preprocessor().fit(np.array([[1.0], [3.0], [np.nan]]))
    assert pre.fill_values_[0] == 2.0
    out = pre.transform(np.array([[1.0], [3.0], [np.nan]]))
    imputed = np.array([1.0, 3.0, 2.0])
    np.testing.assert_allclose(out[:, 0], (imputed - imputed.mean()) / imputed.std())
    cat = Preprocessor(categorical_features=[0]).fit(np.array([[0.0], [0.0], [1.0]]))
    assert cat.fill_values_[0] == 0.0
    assert cat.transform(np.array([[0.0], [np.nan], [1.0]])).shape == (3, 2)
    np.testing.assert_array_equal(cat.transform(np.array([[np.nan]])), [[1.0, 0.0]])


def test_preprocess_idempotent(rng):
    X = rng.normal(5, 3, (50, 3))
    once = Preprocessor().fit_transform(X)
    twice = Preprocessor().fit_transform(once)
    np.testing.assert_allclose(twice.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(twice.std(0), 1, atol=1e-12)


def test_preprocess_all_missing_column():
    with pytest.raises(InputError, match="entirely missing"):
        Preprocessor().fit(np.array([[np.nan], [np.nan]]))


def test_plan_ignores_rows_outside_scope(toy_data):
    rows = np.arange(100)
    plan = fit_preprocess(toy_data, rows)
    x = toy_data.x.copy()
    x[100:] = 1e6
    mutated = Dataset(y=toy_data.y, a=toy_data.a, z=toy_data.z, w=toy_data.w, x=x)
    plan2 = fit_preprocess(mutated, rows)
    np.testing.assert_array_equal(plan.x.mean_, plan2.x.mean_)
    np.testing.assert_array_equal(plan.x.scale_, plan2.x.scale_)
    assert plan.fitted_on == "rows"
    with pytest.raises(InputError):
        fit_preprocess(toy_data, np.array([], dtype=int))


def test_plan_apply_one_hot_names():
    frame = pd.DataFrame({"y": [1.0, 2, 3, 4], "a": [0, 1, 1, 0], "z1": [1.0, 2, 3, 4],
                          "w1": [0.0, 1, 0, 1], "c": ["u", "v", None, "u"]})
    data = dataset_from_frame(frame, {"y": "y", "a": "a", "z": ["z1"], "w": ["w1"], "x": ["c"]})
    out = fit_preprocess(data).apply(data)
    assert out.x_names == ("c=u", "c=v")
    np.testing.assert_array_equal(out.x, [[1, 0], [0, 1], [1, 0], [1, 0]])
    assert out.is_finite()


def test_screen_selects_treatment_copy(rng):
    n = 300
    a = (rng.random(n) < 0.5).astype(int)
    x = np.column_stack([rng.standard_normal(n), a.astype(float), rng.standard_normal(n)])
    data = Dataset(y=rng.standard_normal(n), a=a, z=np.zeros((n, 1)), w=np.zeros((n, 1)), x=x)
    assert screen_covariates(data, 1) == [1]


def test_screen_tie_break_and_determinism(rng):
    n = 100
    a = (rng.random(n) < 0.5).astype(int)
    f = rng.standard_normal(n)
    x = np.column_stack([rng.standard_normal(n), f, f, rng.standard_normal(n)])
    data = Dataset(y=f + rng.standard_normal(n), a=a, z=np.zeros((n, 1)), w=np.zeros((n, 1)), x=x)
    first = screen_covariates(data, 2)
    assert first == [1, 2]
    assert screen_covariates(data, 2) == first


def test_screen_zero_variance_warns(rng):
    n = 50
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    data = Dataset(y=rng.standard_normal(n), a=rng.integers(0, 2, n), z=np.zeros((n, 1)),
                   w=np.zeros((n, 1)), x=x)
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        assert screen_covariates(data, 1) == [1]
    with pytest.raises(InputError):
        screen_covariates(data, 3)


def test_dataset_invariants():
    with pytest.raises(InputError, match="non-binary"):
        Dataset(y=[1.0, 2.0], a=[0, 3], z=[[1], [2]], w=[[1], [2]], x=[[1], [2]])
    data = Dataset(y=[1.0, 2.0], a=[1, 1], z=[[1], [2]], w=[[1], [2]], x=[[1], [2]])
    with pytest.raises(InputError, match="empty arm"):
        data.check_arms()
