"""
Text representations: the model-spec term language and the model file.

A model spec is written as `;`-separated clauses, for example

    time=bspline(df=5); terms=trt,age; interactions=trt; ref=trt:placebo

Time bases are `constant`, `linear`, `log` and `bspline(...)`, the latter
taking `df`, `degree`, `knots` (interior knots, `|`-separated) and
`boundary` (`lower|upper`).
"""

import re
from dataclasses import asdict
from typing import Dict, List

import numpy as np
import yaml

from cbsurv.design import KINDS, ModelSpec, TimeBasis
from cbsurv.errors import DataError, ModelFormatError, UsageError
from cbsurv.model import FitStats, HazardModel

MODEL_VERSION = 1

_BASIS = re.compile(r"^(?P<kind>[a-z]+)(\((?P<args>[^()]*)\))?$")


def _floats(text) -> List[float]:
    return [float(v) for v in text.split("|") if v.strip()]


def basis_from_str(text: str) -> TimeBasis:
    match = _BASIS.match(text.strip().replace(" ", ""))
    if match is None or match["kind"] not in KINDS:
        raise UsageError(f"cannot parse time basis {text!r}, expected one of {KINDS}")

    kwargs = {}
    if match["args"]:
        for arg in match["args"].split(","):
            key, _, value = arg.partition("=")
            try:
                if key in ("df", "degree"):
                    kwargs[key] = int(value)
                elif key == "knots":
                    kwargs["interior_knots"] = tuple(_floats(value))
                elif key == "boundary":
                    kwargs["boundary_knots"] = tuple(_floats(value))
                else:
                    raise UsageError(f"unknown time basis argument {key!r}")
            except ValueError as e:
                raise UsageError(f"bad value for {key} in {text!r}") from e

    try:
        return TimeBasis(kind=match["kind"], **kwargs)
    except DataError as e:
        raise UsageError(str(e)) from e


def basis_to_str(basis: TimeBasis) -> str:
    if basis.kind != "bspline":
        return basis.kind

    args = [f"degree={basis.degree}"]
    if basis.df is not None:
        args.append(f"df={basis.df}")
    if basis.interior_knots:
        args.append("knots=" + "|".join(repr(k) for k in basis.interior_knots))
    if basis.boundary_knots is not None:
        args.append("boundary=" + "|".join(repr(k) for k in basis.boundary_knots))
    return f"bspline({','.join(args)})"


def _names(value) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def spec_from_str(text: str) -> ModelSpec:
    """
    Parses the term language. Unknown clauses are usage errors, and `time`
    defaults to a constant hazard.
    """
    basis = TimeBasis()
    terms, interactions = [], []
    reference: Dict[str, str] = {}

    for clause in text.split(";"):
        clause = clause.strip()
        if not clause:
            continue

        key, sep, value = clause.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"model clause {clause!r} is not key=value")

        if key == "time":
            basis = basis_from_str(value)
        elif key == "terms":
            terms = _names(value)
        elif key == "interactions":
            # `trt:time` and `trt` mean the same thing
            interactions = [n.split(":")[0] for n in _names(value)]
        elif key == "ref":
            for pair in _names(value):
                name, _, level = pair.partition(":")
                if not level:
                    raise UsageError(f"reference {pair!r} must look like name:level")
                reference[name] = level
        else:
            raise UsageError(f"unknown model clause {key!r}")

    try:
        return ModelSpec(basis, tuple(terms), tuple(interactions), reference)
    except DataError as e:
        raise UsageError(str(e)) from e


def spec_to_str(spec: ModelSpec) -> str:
    clauses = [f"time={basis_to_str(spec.time_basis)}"]
    if spec.covariate_terms:
        clauses.append("terms=" + ",".join(spec.covariate_terms))
    if spec.interactions:
        clauses.append("interactions=" + ",".join(spec.interactions))
    if spec.reference_levels:
        clauses.append("ref=" + ",".join(f"{k}:{v}" for k, v in spec.reference_levels.items()))
    return "; ".join(clauses)


def _matrix(values):
    return None if values is None else np.asarray(values, dtype=float).tolist()


def model_to_dict(model: HazardModel) -> dict:
    spec = model.spec
    basis = asdict(spec.time_basis) if spec is not None else None
    if basis is not None:
        basis["interior_knots"] = list(basis["interior_knots"])
        if basis["boundary_knots"] is not None:
            basis["boundary_knots"] = list(basis["boundary_knots"])

    fit = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in asdict(model.fit).items()}

    return {
        "version": MODEL_VERSION,
        "basis": basis,
        "causes": model.causes,
        "column_names": list(model.column_names),
        "coefficients": _matrix(model.coefficients),
        "covariance": _matrix(model.covariance),
        "offset_value": float(model.offset_value),
        "fit_stats": fit,
        "spec": None
        if spec is None
        else {
            "covariate_terms": list(spec.covariate_terms),
            "interactions": list(spec.interactions),
            "reference_levels": dict(spec.reference_levels),
            "levels": {k: list(v) for k, v in spec.levels.items()},
        },
        "fingerprint": model.fingerprint,
    }


def model_from_dict(doc) -> HazardModel:
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError("model file has no version field")
    if doc["version"] != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model file version {doc['version']!r}, expected {MODEL_VERSION}"
        )

    try:
        spec = None
        if doc["spec"] is not None:
            basis = TimeBasis(**doc["basis"])
            spec = ModelSpec(basis, **doc["spec"])

        coefficients = np.array(doc["coefficients"], dtype=float)
        covariance = doc["covariance"]
        if covariance is not None:
            covariance = np.array(covariance, dtype=float)

        model = HazardModel(
            coefficients=coefficients,
            covariance=covariance,
            spec=spec,
            offset_value=float(doc["offset_value"]),
            fit=FitStats(**doc["fit_stats"]),
            column_names=list(doc["column_names"]),
            fingerprint=doc.get("fingerprint", ""),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"corrupt model file: {e}") from e

    if coefficients.ndim != 2 or coefficients.shape != (doc["causes"], len(model.column_names)):
        raise ModelFormatError("corrupt model file: coefficient shape does not match columns")
    if covariance is not None and covariance.shape != (model.n_parameters,) * 2:
        raise ModelFormatError("corrupt model file: covariance shape does not match coefficients")
    return model


def save_model(model: HazardModel, path):
    try:
        with open(path, "w") as f:
            yaml.safe_dump(model_to_dict(model), f, sort_keys=False)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def load_model(path) -> HazardModel:
    try:
        with open(path, "r") as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ModelFormatError(f"corrupt model file {path}: {e}") from e
    return model_from_dict(doc)
