import numpy as np
import pandas as pd
import pytest

from cbsurv.dataset import ColumnSchema, load_dataset
from cbsurv.design import (
    INTERCEPT,
    ModelSpec,
    TimeBasis,
    bspline_basis,
    build_design_matrix,
    build_time_basis,
    design_rows,
)
from cbsurv.errors import DataError
from cbsurv.sampling import annotate_moments, sample_base_series

SCHEMA = ColumnSchema("time", "status", "id")


@pytest.fixture
def table():
    dataset = load_dataset("test/sample.csv", SCHEMA)
    return sample_base_series(dataset, ratio=20, seed=1)


def test_simple_bases():
    linear = build_time_basis(TimeBasis("linear"), [1.0, 2.0])
    np.testing.assert_array_equal(linear, [[1.0], [2.0]])

    log = build_time_basis(TimeBasis("log", epsilon=1e-8), [np.e])
    assert log[0, 0] == pytest.approx(1.0, abs=1e-15)

    # Zero is pulled up to the guard
    log = build_time_basis(TimeBasis("log", epsilon=1e-3), [0.0])
    assert log[0, 0] == pytest.approx(np.log(1e-3))

    assert build_time_basis(TimeBasis("constant"), [1.0, 2.0, 3.0]).shape == (3, 0)


def de_boor(t, knots, degree):
    """Cox-de Boor recursion, the last span closed on the right"""
    knots = np.asarray(knots, dtype=float)
    n_spans = len(knots) - 1
    last = max(i for i in range(n_spans) if knots[i] < knots[i + 1])

    values = np.zeros(n_spans)
    for i in range(n_spans):
        if knots[i] <= t < knots[i + 1] or (i == last and t == knots[i + 1]):
            values[i] = 1.0

    for d in range(1, degree + 1):
        nxt = np.zeros(n_spans - d)
        for i in range(n_spans - d):
            left = knots[i + d] - knots[i]
            right = knots[i + d + 1] - knots[i + 1]
            if left > 0:
                nxt[i] += (t - knots[i]) / left * values[i]
            if right > 0:
                nxt[i] += (knots[i + d + 1] - t) / right * values[i + 1]
        values = nxt
    return values


def test_partition_of_unity():
    # Cubic, no interior knots, boundary (0, 10)
    plain = TimeBasis("bspline", boundary_knots=(0.0, 10.0))
    full = bspline_basis([5.0], plain.knot_vector(), 3, include_first=True)
    assert full.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(full[0], de_boor(5.0, plain.knot_vector(), 3), atol=1e-12)

    basis = TimeBasis("bspline", interior_knots=(3.0, 6.0), boundary_knots=(0.0, 10.0))
    times = np.linspace(0, 10, 41)

    full = bspline_basis(times, basis.knot_vector(), basis.degree, include_first=True)
    oracle = np.array([de_boor(t, basis.knot_vector(), basis.degree) for t in times])
    np.testing.assert_allclose(full, oracle, atol=1e-12)
    np.testing.assert_allclose(oracle.sum(axis=1), 1.0, atol=1e-12)

    quadratic = TimeBasis("bspline", degree=2, interior_knots=(2.5,), boundary_knots=(0.0, 4.0))
    full = bspline_basis(times / 2.5, quadratic.knot_vector(), 2, include_first=True)
    oracle = np.array([de_boor(t, quadratic.knot_vector(), 2) for t in times / 2.5])
    np.testing.assert_allclose(full, oracle, atol=1e-12)

    # The model basis drops the first function
    assert build_time_basis(basis, times).shape == (41, 5)
    assert basis.column_names == [f"bs(time){i}" for i in range(1, 6)]


def test_spline_resolve():
    basis = TimeBasis("bspline", df=5).resolve([1.0, 2.0, 3.0, 4.0, 5.0], 6.0)

    assert basis.boundary_knots == (0.0, 5.0)
    assert len(basis.interior_knots) == 2
    assert basis.n_columns == 5
    assert basis.resolve([100.0], 100.0) == basis


def test_degenerate_knots():
    with pytest.raises(DataError, match="degenerate"):
        TimeBasis("bspline", boundary_knots=(1.0, 1.0))
    with pytest.raises(DataError, match="degenerate"):
        TimeBasis("bspline", interior_knots=(12.0,), boundary_knots=(0.0, 10.0))
    with pytest.raises(DataError):
        TimeBasis("cubic")


def test_column_counts(table):
    cases = [
        (ModelSpec(TimeBasis("constant"), ("arm",)), 2),
        (ModelSpec(TimeBasis("linear"), ("arm",)), 3),
        (ModelSpec(TimeBasis("bspline", df=3), ("arm",), ("arm",)), 8),
    ]
    for spec, count in cases:
        design = build_design_matrix(table, spec)

        # Check the shape
        assert design.X.shape == (len(table), count)
        assert len(design.column_names) == count
        assert design.column_names[0] == INTERCEPT
        np.testing.assert_array_equal(design.X[:, 0], 1.0)


def test_column_order(table):
    spec = ModelSpec(TimeBasis("linear"), ("arm", "age"), ("arm",))
    design = build_design_matrix(table, spec)

    assert design.column_names == [INTERCEPT, "time", "arm[T.treated]", "age", "arm[T.treated]:time"]

    treated = (table.frame["arm"] == "treated").to_numpy()
    np.testing.assert_array_equal(design.X[:, 2], treated.astype(float))
    np.testing.assert_allclose(design.X[:, 4], treated * table.moment_times)
    np.testing.assert_array_equal(design.y, table.indicators)


def test_reference_level(table):
    spec = ModelSpec(TimeBasis("constant"), ("arm",), reference_levels={"arm": "treated"})
    design = build_design_matrix(table, spec)
    assert design.column_names == [INTERCEPT, "arm[T.control]"]

    with pytest.raises(DataError, match="reference level"):
        build_design_matrix(table, ModelSpec(TimeBasis(), ("arm",), (), {"arm": "x"}))


def test_unseen_level(table):
    spec = build_design_matrix(table, ModelSpec(TimeBasis("linear"), ("arm",))).spec

    with pytest.raises(DataError, match="unseen level"):
        design_rows(pd.DataFrame({"arm": ["other"]}), [1.0], spec)

    with pytest.raises(DataError, match="missing covariate"):
        design_rows(pd.DataFrame({"age": [50.0]}), [1.0], spec)


def test_missing_covariate(table):
    with pytest.raises(DataError, match="not in table"):
        build_design_matrix(table, ModelSpec(TimeBasis(), ("weight",)))


def test_interactions_need_time():
    with pytest.raises(DataError, match="non-constant"):
        ModelSpec(TimeBasis("constant"), ("arm",), ("arm",))


def test_constant_column_warning(table):
    table = annotate_moments(table, "one", lambda sid, t, cov: 1.0)
    design = build_design_matrix(table, ModelSpec(TimeBasis("linear"), ("one",)))

    assert design.warnings == ("constant column one",)


def test_design_rows_broadcast(table):
    spec = build_design_matrix(table, ModelSpec(TimeBasis("linear"), ("arm", "age"))).spec
    profile = pd.DataFrame({"arm": ["treated"], "age": [60.0]})

    rows = design_rows(profile, [0.0, 1.0, 2.0], spec)
    np.testing.assert_array_equal(
        rows, [[1.0, 0.0, 1.0, 60.0], [1.0, 1.0, 1.0, 60.0], [1.0, 2.0, 1.0, 60.0]]
    )

    with pytest.raises(DataError, match="differ in length"):
        design_rows(pd.concat([profile, profile]), [0.0, 1.0, 2.0], spec)


def test_basis_nesting():
    small = TimeBasis("bspline", interior_knots=(3.0,), boundary_knots=(0.0, 10.0))
    big = TimeBasis("bspline", interior_knots=(3.0, 6.0), boundary_knots=(0.0, 10.0))
    moved = TimeBasis("bspline", interior_knots=(2.0, 6.0), boundary_knots=(0.0, 10.0))

    assert small.nested_in(big)
    assert small.nested_in(small)
    assert not big.nested_in(small)
    assert not small.nested_in(moved)
    assert not small.nested_in(TimeBasis("bspline", interior_knots=(3.0,), boundary_knots=(0.0, 9.0)))
    assert not small.nested_in(TimeBasis("bspline", degree=2, interior_knots=(3.0,), boundary_knots=(0.0, 10.0)))

    # The intercept alone sits inside every basis
    assert TimeBasis("constant").nested_in(big)
    assert TimeBasis("linear").nested_in(TimeBasis("linear"))
    assert not TimeBasis("linear").nested_in(TimeBasis("log", epsilon=1e-8))
    assert not TimeBasis("log", epsilon=1e-8).nested_in(TimeBasis("log", epsilon=1e-7))


def test_spec_nesting(table):
    small = ModelSpec(TimeBasis("linear"), ("arm",)).resolve(table)
    big = ModelSpec(TimeBasis("linear"), ("arm", "age"), ("arm",)).resolve(table)
    flipped = ModelSpec(TimeBasis("linear"), ("arm", "age"), reference_levels={"arm": "treated"})

    assert small.nested_in(big)
    assert not big.nested_in(small)
    assert not small.nested_in(flipped.resolve(table))
