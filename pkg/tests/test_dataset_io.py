import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from intervene.dataset_io import Dataset, ScalingInfo, load_dataset, save_dataset, standardize
from intervene.errors import ValidationError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
    ds = load_dataset(p, "y")
    assert (ds.n, ds.d) == (3, 2)
    assert ds.column_names == ("a", "b")
    np.testing.assert_array_equal(ds.outcomes, [3, 6, 9])
    np.testing.assert_array_equal(ds.covariates[:, 1], [2, 5, 8])


def test_outcome_column_in_the_middle_keeps_order(tmp_path):
    p = write(tmp_path, "a,y,b\n1,2,3\n4,5,6\n")
    ds = load_dataset(p, "y")
    assert ds.column_names == ("a", "b")
    np.testing.assert_array_equal(ds.covariates, [[1, 3], [4, 6]])


def test_nan_cell_names_row_and_column(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,3\n4,NaN,6\n")
    with pytest.raises(ValidationError, match=r"row 3.*'b'"):
        load_dataset(p, "y")


def test_unparseable_cell(tmp_path):
    p = write(tmp_path, "a,y\n1,2\nfoo,3\n")
    with pytest.raises(ValidationError, match=r"row 3.*'a'.*foo"):
        load_dataset(p, "y")


def test_missing_outcome_column(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,3\n")
    with pytest.raises(ValidationError, match="'z'"):
        load_dataset(p, "z")


def test_missing_file_and_empty_body(tmp_path):
    with pytest.raises(ValidationError, match="no such file"):
        load_dataset(tmp_path / "absent.csv", "y")
    with pytest.raises(ValidationError, match="no data rows"):
        load_dataset(write(tmp_path, "a,y\n"), "y")
    with pytest.raises(ValidationError, match="empty"):
        load_dataset(write(tmp_path, "", "e.csv"), "y")


def test_ragged_row(tmp_path):
    with pytest.raises(ValidationError, match="row 2"):
        load_dataset(write(tmp_path, "a,b,y\n1,2\n"), "y")


def test_load_is_deterministic_and_round_trips(tmp_path, rng):
    ds = Dataset(rng.normal(size=(7, 3)), rng.normal(size=7), ("p", "q", "r"), "out")
    path = tmp_path / "rt.csv"
    save_dataset(ds, path)
    a, b = load_dataset(path, "out"), load_dataset(path, "out")
    np.testing.assert_array_equal(a.covariates, ds.covariates)
    np.testing.assert_array_equal(a.outcomes, ds.outcomes)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    assert a.column_names == ds.column_names


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValidationError):
        Dataset(np.array([[1.0, np.inf]]), np.ones(1))
    with pytest.raises(ValidationError):
        Dataset(np.ones((2, 2)), np.ones(2), ("only_one",))
    ds = Dataset(np.ones((2, 2)), np.ones(2))
    assert ds.column_names == ("x1", "x2")
    with pytest.raises(ValueError):
        ds.covariates[0, 0] = 5.0


def test_standardize_two_values():
    ds = Dataset(np.array([[1.0], [3.0]]), np.array([0.0, 1.0]))
    std, info = standardize(ds)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(std.covariates[:, 0], [-s, s], rtol=1e-14)
    np.testing.assert_allclose(info.covariate_scales, [np.sqrt(2)], rtol=1e-14)
    assert abs(std.covariates.mean()) < 1e-15


def test_standardize_idempotent(rng):
    std, _ = standardize(Dataset(rng.normal(size=(30, 3)), rng.normal(size=30)))
    again, info = standardize(std)
    np.testing.assert_allclose(again.covariates, std.covariates, atol=1e-12)
    np.testing.assert_allclose(info.means, 0, atol=1e-12)
    np.testing.assert_allclose(info.scales, 1, atol=1e-12)


def test_constant_column_named():
    ds = Dataset(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]]), np.array([1.0, 2.0, 0.0]),
                 ("flat", "ok"))
    with pytest.raises(ValidationError, match="'flat'"):
        standardize(ds)


def test_scaling_json_fields():
    info = ScalingInfo([1.0, 2.0], [0.5, 3.0], ("a", "y"))
    obj = json.loads(info.to_json())
    assert set(obj) == {"means", "scales", "columns"}
    back = ScalingInfo.from_json(info.to_json())
    np.testing.assert_array_equal(back.scales, info.scales)
    with pytest.raises(ValidationError):
        ScalingInfo([0.0], [0.0])


@given(arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)),
       st.floats(0.1, 100.0))
def test_round_trip_property(X, spread):
    X = X + spread * np.arange(X.shape[0])[:, None]  # guarantee nonconstant columns
    y = np.linspace(-1.0, 2.0, X.shape[0]) * spread
    ds = Dataset(X, y)
    std, info = standardize(ds)
    back = info.invert(std)
    scale = np.maximum(np.abs(X).max(), 1.0)
    assert np.max(np.abs(back.covariates - X)) <= 1e-12 * scale * 10
    np.testing.assert_allclose(std.covariates.var(axis=0, ddof=1), 1.0, rtol=1e-9)
    np.testing.assert_allclose(std.outcomes.mean(), 0.0, atol=1e-12)
