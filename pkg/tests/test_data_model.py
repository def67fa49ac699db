import numpy as np
import pytest

from common.data_model import (
    EffectEstimate,
    EstimateDiagnostics,
    ObservationSet,
    expand_quadratic,
    read_csv,
    sort_by_key,
    validate,
)
from common.errors import (
    DataError,
    DegenerateArm,
    DimensionMismatch,
    EmptyInput,
    NonBinaryTreatment,
    NonFinite,
    NumericalOverflow,
    ParseError,
)


def test_validate_builds_observation_set():
    data = validate([(1.0, 1, [0.5, 1.0]), (2.0, 0, [0.1, -1.0]), (3.0, 1, [2.0, 0.0])])
    assert data.n == 3
    assert data.dim == 2
    assert data.n1 == 2
    assert data.n0 == 1
    assert data.d.dtype == np.int64
    assert not data.x.flags.writeable


def test_validate_scalar_covariate():
    data = validate([(1.0, 1, 0.3), (0.0, 0, 0.1)])
    assert data.x.shape == (2, 1)


@pytest.mark.parametrize("records, error", [
    ([], EmptyInput),
    ([(1.0, 2, 0.0), (1.0, 0, 1.0)], NonBinaryTreatment),
    ([(1.0, 1, 0.0), (1.0, 1, 1.0)], DegenerateArm),
    ([(1.0, 0, 0.0), (1.0, 0, 1.0)], DegenerateArm),
    ([(np.nan, 1, 0.0), (1.0, 0, 1.0)], NonFinite),
    ([(1.0, 1, np.inf), (1.0, 0, 1.0)], NonFinite),
    ([(1.0, 1, [0.0, 1.0]), (1.0, 0, [1.0])], DimensionMismatch),
    ([(1.0, 1)], DimensionMismatch),
])
def test_validate_rejects_invalid_records(records, error):
    with pytest.raises(error):
        validate(records)


def test_data_errors_share_family():
    with pytest.raises(DataError):
        validate([(1.0, 0.5, 0.0), (1.0, 0, 1.0)])


def test_sort_by_key_is_stable_for_ties():
    data = ObservationSet.from_arrays([0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0])
    perm = sort_by_key(data, [2.0, 1.0, 2.0, 1.0])
    np.testing.assert_array_equal(perm.order, [1, 3, 0, 2])
    np.testing.assert_array_equal(perm.key, [1.0, 1.0, 2.0, 2.0])


def units(n):
    return ObservationSet.from_arrays(np.zeros(n), np.arange(n) % 2, np.zeros(n))


@pytest.mark.parametrize("key, order", [
    ([3.0, 1.0, 2.0], [1, 2, 0]),
    ([1.0, 1.0, 1.0], [0, 1, 2]),
    ([2.5, -1.0, 2.5, 0.0], [1, 3, 0, 2]),
])
def test_sort_by_key_examples(key, order):
    perm = sort_by_key(units(len(key)), key)
    np.testing.assert_array_equal(perm.order, order)
    np.testing.assert_array_equal(perm.key, np.sort(key))


def test_sort_by_key_sorted_input_is_identity(rng):
    key = np.sort(rng.integers(0, 5, 50).astype(float))
    data = units(50)
    perm = sort_by_key(data, key)
    np.testing.assert_array_equal(perm.order, np.arange(50))
    again = sort_by_key(data, perm.key)
    np.testing.assert_array_equal(again.order, np.arange(50))


def test_sort_permutation_restore_inverts_apply():
    data = ObservationSet.from_arrays(np.arange(5.0), [1, 0, 1, 0, 1], np.arange(5.0))
    perm = sort_by_key(data, [3.0, -1.0, 4.0, 1.0, 5.0])
    values = np.array([10.0, 11.0, 12.0, 13.0, 14.0])
    np.testing.assert_array_equal(perm.restore(perm.apply(values)), values)


def test_sort_by_key_rejects_bad_keys():
    data = ObservationSet.from_arrays([0, 0], [1, 0], [0, 0])
    with pytest.raises(NonFinite):
        sort_by_key(data, [np.nan, 1.0])
    with pytest.raises(DimensionMismatch):
        sort_by_key(data, [1.0, 2.0, 3.0])


def test_take_revalidates_resample():
    data = ObservationSet.from_arrays([1.0, 2.0, 3.0], [1, 0, 1], [0.0, 1.0, 2.0])
    resample = data.take([0, 0, 1])
    np.testing.assert_array_equal(resample.y, [1.0, 1.0, 2.0])
    with pytest.raises(DegenerateArm):
        data.take([0, 2, 2])


def test_expand_quadratic_column_order():
    data = ObservationSet.from_arrays([0.0, 1.0], [1, 0], [[2.0, 3.0], [1.0, -1.0]])
    expanded = expand_quadratic(data)
    np.testing.assert_array_equal(expanded.x[0], [2.0, 3.0, 6.0, 4.0, 9.0])
    np.testing.assert_array_equal(expanded.x[1], [1.0, -1.0, -1.0, 1.0, 1.0])


def test_effect_estimate_rejects_non_finite_value():
    diagnostics = EstimateDiagnostics(block_count=1, min_propensity=0.5, max_propensity=0.5)
    with pytest.raises(NumericalOverflow):
        EffectEstimate(value=np.inf, method='PARA', target='ATT', diagnostics=diagnostics)
    with pytest.raises(ValueError):
        EffectEstimate(value=1.0, method='PSM', target='ATT', diagnostics=diagnostics)


def test_read_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,d,x1,x2\n1.5,1,0.1,2\n-2,0,0.3,1\n0.25,1, 4,5\n", encoding="utf-8")
    data = read_csv(path)
    assert data.n == 3
    assert data.dim == 2
    np.testing.assert_array_equal(data.y, [1.5, -2.0, 0.25])
    np.testing.assert_array_equal(data.x[2], [4.0, 5.0])


def test_read_csv_reports_line_of_missing_cell(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,d,x1\n1,1,0.1\n2,0,\n3,1,0.5\n", encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        read_csv(path)
    assert excinfo.value.line == 3
    assert "line 3" in str(excinfo.value)


def test_read_csv_reports_non_numeric_cell(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,d,x1\n1,1,0.1\n2,0,abc\n", encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        read_csv(path)
    assert excinfo.value.line == 3


def test_read_csv_requires_contiguous_covariates(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,d,x1,x3\n1,1,0.1,1\n2,0,0.2,2\n", encoding="utf-8")
    with pytest.raises(DimensionMismatch):
        read_csv(path)


def test_read_csv_requires_outcome_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("d,x1\n1,0.1\n0,0.2\n", encoding="utf-8")
    with pytest.raises(DimensionMismatch):
        read_csv(path)
