import numpy as np
import pytest
import scipy.sparse as sp

from multispat.exceptions import DataError, StructuralError
from multispat.geometry import Projector
from multispat.stack import MISSING, join_stacks, stack_areal, stack_geostat, stack_point_pattern

NA = None


def as_table(stack):
    """Response as a list of rows with None for missing entries."""
    r = stack.response
    return [[None if m else float(v) for v, m in zip(row.data, np.ma.getmaskarray(row))]
            for row in r]


def test_areal_toy():
    s = stack_areal([[1, 4, 3], [2, 6, 5]], np.ones((2, 3)))
    assert as_table(s) == [
        [1, NA, NA], [2, NA, NA],
        [NA, 4, NA], [NA, 6, NA],
        [NA, NA, 3], [NA, NA, 5],
    ]
    assert s.tags == ["col0", "col1", "col2"]


def test_areal_single_variable():
    s = stack_areal([[3], [0], [7]], [1.0, 2.0, 3.0])
    assert as_table(s) == [[3], [0], [7]]
    np.testing.assert_array_equal(s.exposure, [1, 2, 3])


def test_areal_one_area():
    s = stack_areal([[5, 6]], [[1.0, 2.0]], effects={"a": "factor", "u": [0, 1]})
    assert as_table(s) == [[5, NA], [NA, 6]]
    np.testing.assert_array_equal(s.blocks["u"].toarray(), [[1], [1]])


def test_areal_blocks():
    s = stack_areal([[1, 4], [2, 6], [0, 1]], np.ones((3, 2)),
                    effects={"alpha": "factor", "u": [0], "v": [1]})
    np.testing.assert_array_equal(s.blocks["alpha"].toarray(),
                                  [[1, 0]] * 3 + [[0, 1]] * 3)
    np.testing.assert_array_equal(s.blocks["u"].toarray(), np.vstack([np.eye(3), np.zeros((3, 3))]))
    np.testing.assert_array_equal(s.blocks["v"].toarray(), np.vstack([np.zeros((3, 3)), np.eye(3)]))
    # every row has exactly one observed entry and one alpha level
    assert np.all(s.observed.sum(axis=1) == 1)
    assert np.all(s.blocks["alpha"].sum(axis=1) == 1)


def test_areal_missing_values_and_bad_layout():
    s = stack_areal([[1, None], [MISSING, 2]], np.ones((2, 2)))
    assert as_table(s) == [[1, NA], [NA, NA], [NA, NA], [NA, 2]]
    with pytest.raises(StructuralError):
        stack_areal([[1, 2]], np.ones((1, 2)), effects={"u": [2]})
    with pytest.raises(DataError):
        stack_areal([[1, 2]], [[1.0, 0.0]])
    with pytest.raises(DataError):
        stack_areal([[1, float("nan")]], np.ones((1, 2)))


def test_geostat_toy():
    vals = [[1.2, 4.8, 3.7], [2.1, 6.5, 5.4]]
    stacks = [stack_geostat([vals[0][k], vals[1][k]], k, 3, {"alpha": 1.0}, tag=f"v{k}")
              for k in range(3)]
    joined = join_stacks(stacks)
    cols = [[row[k] for row in as_table(joined)] for k in range(3)]
    assert cols == [
        [1.2, 2.1, NA, NA, NA, NA],
        [NA, NA, 4.8, 6.5, NA, NA],
        [NA, NA, NA, NA, 3.7, 5.4],
    ]
    np.testing.assert_array_equal(joined.index("v1"), [2, 3])
    np.testing.assert_array_equal(joined.rows("v2").response.data[:, 2], [3.7, 5.4])


def test_geostat_column_out_of_range():
    with pytest.raises(StructuralError):
        stack_geostat([1.0], 3, 3, {})


def test_geostat_all_missing_prediction():
    A = sp.csr_matrix(np.full((4, 2), 0.5))
    s = stack_geostat(None, 0, 2, {"field": A}, tag="pred")
    assert s.n_rows == 4 and not s.observed.any()


def test_point_pattern_toy():
    w = [2.3, 4.3, 6.2]
    A = Projector(sp.csr_matrix(np.eye(3)[[0, 1, 2, 0]]), np.zeros(4, dtype=bool))
    s = stack_point_pattern(w, A, pattern=1, n_patterns=2, mesh_effects=("u",),
                            fixed_effects=("b",))
    assert as_table(s) == [[NA, 0], [NA, 0], [NA, 0], [NA, 1], [NA, 1], [NA, 1], [NA, 1]]
    assert s.exposure.tolist() == [2.3, 4.3, 6.2, 0, 0, 0, 0]
    np.testing.assert_array_equal(s.blocks["u"].toarray()[:3], np.eye(3))
    np.testing.assert_array_equal(s.blocks["b"].toarray().ravel(), np.ones(7))


def test_point_pattern_without_points():
    A = Projector(sp.csr_matrix((0, 3)), np.zeros(0, dtype=bool))
    s = stack_point_pattern([1.0, 1.0, 1.0], A, 0, 1)
    assert as_table(s) == [[0], [0], [0]]


def test_point_pattern_rejects_outside_points():
    A = Projector(sp.csr_matrix((1, 3)), np.array([True]))
    with pytest.raises(DataError):
        stack_point_pattern([1.0, 1.0, 1.0], A, 0, 1)


def test_join_by_name_and_dimension_mismatch():
    a = stack_geostat([1.0], 0, 2, {"u": sp.csr_matrix([[1.0, 0.0]])}, tag="a")
    b = stack_geostat([2.0], 1, 2, {"v": 1.0}, tag="b")
    j = join_stacks([a, b])
    np.testing.assert_array_equal(j.blocks["u"].toarray(), [[1, 0], [0, 0]])
    np.testing.assert_array_equal(j.blocks["v"].toarray(), [[0], [1]])
    c = stack_geostat([3.0], 1, 2, {"u": sp.csr_matrix([[1.0, 0.0, 0.0]])})
    with pytest.raises(StructuralError):
        join_stacks([a, c])
    with pytest.raises(KeyError):
        j.index("nope")
