import numpy as np
import pytest
import yaml

from cbsurv.dataset import ColumnSchema, load_dataset
from cbsurv.design import ModelSpec, TimeBasis
from cbsurv.errors import DataError, ModelFormatError, UsageError
from cbsurv.fit import fit_smooth_hazard
from cbsurv.rep import (
    basis_from_str,
    basis_to_str,
    load_model,
    model_to_dict,
    save_model,
    spec_from_str,
    spec_to_str,
)
from cbsurv.risk import cif_single
from cbsurv.simulate import Bernoulli, Exponential, TruthSpec, simulate_dataset


@pytest.fixture(scope="module")
def arm_model():
    dataset = load_dataset("test/sample.csv", ColumnSchema("time", "status", "id"))
    return fit_smooth_hazard(dataset, spec_from_str("time=linear; terms=arm"), ratio=50, seed=1)


@pytest.fixture(scope="module")
def spline_model():
    truth = TruthSpec([Exponential(0.3, {"trt": 0.5})], {"trt": Bernoulli()}, tau=5.0, n=400, seed=2)
    spec = spec_from_str("time=bspline(df=4); terms=trt; interactions=trt")
    return fit_smooth_hazard(simulate_dataset(truth), spec, ratio=20, seed=3)


def test_spec_from_str():
    spec = spec_from_str("time=bspline(df=5); terms=trt,age; interactions=trt:time; ref=trt:placebo")

    assert spec.time_basis == TimeBasis("bspline", df=5)
    assert spec.covariate_terms == ("trt", "age")
    assert spec.interactions == ("trt",)
    assert spec.reference_levels == {"trt": "placebo"}

    # Everything is optional
    assert spec_from_str("") == ModelSpec()
    assert spec_from_str("terms=x").time_basis.kind == "constant"


def test_spec_to_str():
    text = "time=linear; terms=trt,age; interactions=trt; ref=trt:placebo"
    assert spec_to_str(spec_from_str(text)) == text

    spec = spec_from_str("time=bspline(df=5)")
    assert spec_from_str(spec_to_str(spec)) == spec


def test_basis_from_str():
    basis = basis_from_str("bspline(degree=2, knots=1|2.5, boundary=0|10)")

    assert basis.degree == 2
    assert basis.interior_knots == (1.0, 2.5)
    assert basis.boundary_knots == (0.0, 10.0)
    assert basis_from_str(basis_to_str(basis)) == basis

    assert basis_from_str("log").kind == "log"
    assert basis_to_str(TimeBasis("linear")) == "linear"


def test_parse_errors():
    bad = [
        "time=cubic",
        "time=bspline(order=3)",
        "time=bspline(df=x)",
        "time=bspline(boundary=5|1)",
        "terms",
        "formula=y~x",
        "ref=trt",
        "terms=trt; interactions=trt",
        "terms=trt,trt",
    ]
    for text in bad:
        with pytest.raises(UsageError):
            spec_from_str(text)


def test_save_load(tmp_path, arm_model):
    path = str(tmp_path / "model.yml")
    save_model(arm_model, path)
    loaded = load_model(path)

    # Bit-exact numbers
    np.testing.assert_array_equal(loaded.coefficients, arm_model.coefficients)
    np.testing.assert_array_equal(loaded.covariance, arm_model.covariance)
    assert loaded.offset_value == arm_model.offset_value
    assert loaded.fit == arm_model.fit
    assert loaded.spec == arm_model.spec
    assert loaded.column_names == ["(Intercept)", "time", "arm[T.treated]"]
    assert loaded.fingerprint == arm_model.fingerprint


def test_spline_knots_survive(tmp_path, spline_model):
    path = str(tmp_path / "spline.yml")
    save_model(spline_model, path)
    loaded = load_model(path)

    assert loaded.spec.time_basis == spline_model.spec.time_basis
    assert loaded.spec.time_basis.resolved

    profiles = [{"trt": 0.0}, {"trt": 1.0}]
    for profile in profiles:
        a = cif_single(spline_model, profile, np.linspace(0, 5, 11))
        b = cif_single(loaded, profile, np.linspace(0, 5, 11))
        np.testing.assert_array_equal(a.values, b.values)


def test_model_file_errors(tmp_path, arm_model):
    doc = model_to_dict(arm_model)

    cases = [
        ({k: v for k, v in doc.items() if k != "version"}, "no version"),
        (dict(doc, version=99), "unsupported model file version"),
        (dict(doc, coefficients=[[1.0, 2.0]]), "coefficient shape"),
        (dict(doc, covariance=[[1.0]]), "covariance shape"),
        (dict(doc, fit_stats={"deviance": 1.0}), "corrupt"),
    ]
    for k, (bad, message) in enumerate(cases):
        path = tmp_path / f"bad{k}.yml"
        path.write_text(yaml.safe_dump(bad))
        with pytest.raises(ModelFormatError, match=message):
            load_model(str(path))

    path = tmp_path / "garbage.yml"
    path.write_text("version: [1\n")
    with pytest.raises(ModelFormatError):
        load_model(str(path))

    with pytest.raises(DataError, match="cannot read"):
        load_model(str(tmp_path / "missing.yml"))
