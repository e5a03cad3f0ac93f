"""
Design matrices for smooth-in-time hazard models.

Columns are always laid out as

    [intercept | time basis | main effects | covariate x time interactions]

A time basis never carries its own intercept. Categorical covariates are
one-hot encoded with the reference level dropped.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from cbsurv.errors import DataError
from cbsurv.sampling import PersonMomentTable
from cbsurv.slogging import Logger

KINDS = ("constant", "linear", "log", "bspline")
INTERCEPT = "(Intercept)"
LOG_GUARD = 1e-8
KNOT_RTOL = 1e-12


@dataclass(frozen=True)
class TimeBasis:

    kind: str = "constant"
    degree: int = 3
    df: Optional[int] = None
    interior_knots: Tuple[float, ...] = ()
    boundary_knots: Optional[Tuple[float, float]] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown time basis {self.kind}, expected one of {KINDS}")

        object.__setattr__(self, "interior_knots", tuple(float(k) for k in self.interior_knots))
        if self.boundary_knots is not None:
            object.__setattr__(
                self, "boundary_knots", tuple(float(k) for k in self.boundary_knots)
            )

        if self.kind == "bspline":
            if self.degree < 1:
                raise DataError("spline degree must be at least 1")
            if self.df is not None and self.df < self.degree:
                raise DataError(f"spline df must be at least the degree ({self.degree})")

        if self.boundary_knots is not None:
            lower, upper = self.boundary_knots
            if not lower < upper:
                raise DataError("degenerate knot vector: lower boundary must be below upper")
            inner = np.asarray(self.interior_knots)
            if np.any(inner <= lower) or np.any(inner >= upper) or np.any(np.diff(inner) <= 0):
                raise DataError("degenerate knot vector: interior knots must be sorted and inside")

    @property
    def resolved(self) -> bool:
        if self.kind == "bspline":
            return self.boundary_knots is not None
        if self.kind == "log":
            return self.epsilon is not None
        return True

    @property
    def n_columns(self) -> int:
        if self.kind == "constant":
            return 0
        if self.kind in ("linear", "log"):
            return 1
        if self.boundary_knots is not None:
            return self.degree + len(self.interior_knots)
        return self.df if self.df is not None else self.degree

    @property
    def column_names(self) -> List[str]:
        if self.kind == "constant":
            return []
        if self.kind == "linear":
            return ["time"]
        if self.kind == "log":
            return ["log(time)"]
        return [f"bs(time){i + 1}" for i in range(self.n_columns)]

    def resolve(self, case_times, tau) -> "TimeBasis":
        """
        Fixes the data-dependent parts of the basis: spline knots from the
        case series times, the log guard from tau.
        """
        if self.kind == "log" and self.epsilon is None:
            return replace(self, epsilon=LOG_GUARD * float(tau))

        if self.kind != "bspline" or self.boundary_knots is not None:
            return self

        case_times = np.asarray(case_times, dtype=float)
        boundary = (0.0, float(case_times.max()))

        interior = self.interior_knots
        if not interior and self.df is not None and self.df > self.degree:
            n_inner = self.df - self.degree
            probs = np.arange(1, n_inner + 1) / (n_inner + 1)
            interior = tuple(np.quantile(case_times, probs))

        return replace(self, boundary_knots=boundary, interior_knots=interior)

    def nested_in(self, other: "TimeBasis") -> bool:
        """
        Whether every function of time this basis spans, together with the
        intercept, is also spanned by `other`. Splines nest when degree and
        boundary agree and the interior knots are a subset.
        """
        if self.kind == "constant":
            return True
        if self.kind != other.kind:
            return False
        if self.kind == "linear":
            return True
        if self.kind == "log":
            return self.epsilon == other.epsilon

        if self.degree != other.degree:
            return False
        if self.boundary_knots is None or other.boundary_knots is None:
            return False
        if not np.allclose(self.boundary_knots, other.boundary_knots, rtol=KNOT_RTOL, atol=0.0):
            return False
        outer = np.asarray(other.interior_knots, dtype=float)
        return all(
            np.any(np.isclose(k, outer, rtol=KNOT_RTOL, atol=0.0)) for k in self.interior_knots
        )

    def knot_vector(self) -> np.ndarray:
        lower, upper = self.boundary_knots
        return np.concatenate(
            [
                np.full(self.degree + 1, lower),
                np.asarray(self.interior_knots, dtype=float),
                np.full(self.degree + 1, upper),
            ]
        )


def bspline_basis(times, knots, degree, include_first=False) -> np.ndarray:
    """
    Evaluates every B-spline of the clamped knot vector at `times`.

    Times outside the boundary knots are clamped to them. The first basis
    function is dropped unless `include_first` is set, leaving the intercept
    to the model.
    """
    knots = np.asarray(knots, dtype=float)
    n_basis = len(knots) - degree - 1
    lower, upper = knots[degree], knots[n_basis]

    clamped = np.clip(np.asarray(times, dtype=float), lower, upper)
    basis = BSpline(knots, np.eye(n_basis), degree, extrapolate=False)(clamped)
    basis = np.nan_to_num(basis, nan=0.0)

    return basis if include_first else basis[:, 1:]


def build_time_basis(spec: TimeBasis, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)

    if not np.all(np.isfinite(times)):
        raise DataError("non-finite time")

    if spec.kind == "constant":
        return np.zeros((len(times), 0))

    if spec.kind == "linear":
        return times.reshape(-1, 1)

    if spec.kind == "log":
        epsilon = spec.epsilon if spec.epsilon is not None else LOG_GUARD * times.max()
        return np.log(np.maximum(times, epsilon)).reshape(-1, 1)

    if not spec.resolved:
        spec = spec.resolve(times, times.max())

    return bspline_basis(times, spec.knot_vector(), spec.degree)


@dataclass(frozen=True)
class ModelSpec:

    time_basis: TimeBasis = field(default_factory=TimeBasis)
    covariate_terms: Tuple[str, ...] = ()
    interactions: Tuple[str, ...] = ()
    reference_levels: Dict[str, str] = field(default_factory=dict)
    levels: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "covariate_terms", tuple(self.covariate_terms))
        object.__setattr__(self, "interactions", tuple(self.interactions))

        if len(set(self.covariate_terms)) != len(self.covariate_terms):
            raise DataError("covariate terms must be unique")
        if len(set(self.interactions)) != len(self.interactions):
            raise DataError("interactions must be unique")
        if self.interactions and self.time_basis.kind == "constant":
            raise DataError("interactions with time need a non-constant time basis")

    @property
    def covariates(self) -> List[str]:
        """Every covariate the spec reads, main effects first"""
        extra = [c for c in self.interactions if c not in self.covariate_terms]
        return list(self.covariate_terms) + extra

    def _encoded(self, name) -> List[str]:
        if name in self.levels:
            ref = self.reference_levels[name]
            return [f"{name}[T.{lvl}]" for lvl in self.levels[name] if lvl != ref]
        return [name]

    @property
    def column_names(self) -> List[str]:
        names = [INTERCEPT] + self.time_basis.column_names
        for term in self.covariate_terms:
            names += self._encoded(term)
        for term in self.interactions:
            for enc in self._encoded(term):
                names += [f"{enc}:{t}" for t in self.time_basis.column_names]
        return names

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def nested_in(self, other: "ModelSpec") -> bool:
        if not self.time_basis.nested_in(other.time_basis):
            return False
        if not set(self.covariate_terms) <= set(other.covariate_terms):
            return False
        if not set(self.interactions) <= set(other.interactions):
            return False
        for name in self.covariates:
            if self.levels.get(name) != other.levels.get(name):
                return False
            if self.reference_levels.get(name) != other.reference_levels.get(name):
                return False
        return True

    @property
    def time_columns(self) -> List[int]:
        """Indices of the columns that are pure functions of time"""
        return list(range(1, 1 + self.time_basis.n_columns))

    def resolve(self, table: PersonMomentTable) -> "ModelSpec":
        frame = table.frame
        for name in self.covariates:
            if name not in frame.columns:
                raise DataError(f"covariate {name} not in table")

        levels = dict(self.levels)
        reference = dict(self.reference_levels)
        table_levels = table.levels or {}
        table_reference = table.reference_levels or {}

        for name in self.covariates:
            if name in levels:
                continue

            values = frame[name]
            if name in table_levels:
                levels[name] = list(table_levels[name])
            elif not pd.api.types.is_numeric_dtype(values):
                levels[name] = sorted(values.astype(str).unique())
            else:
                continue

            ref = reference.get(name, table_reference.get(name, levels[name][0]))
            if ref not in levels[name]:
                raise DataError(f"reference level {ref} not among levels of {name}")
            reference[name] = ref

        case_times = table.case_series["moment_time"].to_numpy(dtype=float)
        basis = self.time_basis.resolve(case_times, table.meta.tau)

        return replace(self, time_basis=basis, levels=levels, reference_levels=reference)


def _encode(values, name, spec: ModelSpec) -> np.ndarray:
    if name not in spec.levels:
        numeric = pd.to_numeric(pd.Series(values), errors="coerce").to_numpy(dtype=float)
        if np.any(np.isnan(numeric)):
            raise DataError(f"covariate {name} must be numeric")
        return numeric.reshape(-1, 1)

    values = pd.Series(values).astype(str).to_numpy()
    known = spec.levels[name]
    unseen = set(values) - set(known)
    if unseen:
        raise DataError(f"unseen level(s) {sorted(unseen)} for {name}")

    ref = spec.reference_levels[name]
    kept = [lvl for lvl in known if lvl != ref]
    if not kept:
        return np.zeros((len(values), 0))
    return np.stack([(values == lvl).astype(float) for lvl in kept], axis=1)


def design_rows(covariates: pd.DataFrame, times, spec: ModelSpec) -> np.ndarray:
    """
    Design rows for covariate rows at the given times.

    A single covariate row is broadcast against every time.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if len(covariates) == 1 and len(times) != 1:
        covariates = covariates.loc[covariates.index.repeat(len(times))].reset_index(drop=True)

    if len(covariates) != len(times):
        raise DataError("covariate rows and times differ in length")

    for name in spec.covariates:
        if name not in covariates.columns:
            raise DataError(f"profile is missing covariate {name}")

    blocks = [np.ones((len(times), 1))]

    time_block = build_time_basis(spec.time_basis, times)
    blocks.append(time_block)

    encoded = {name: _encode(covariates[name].to_numpy(), name, spec) for name in spec.covariates}

    for term in spec.covariate_terms:
        blocks.append(encoded[term])

    for term in spec.interactions:
        for k in range(encoded[term].shape[1]):
            blocks.append(encoded[term][:, [k]] * time_block)

    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class DesignMatrix:

    X: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    column_names: List[str]
    spec: ModelSpec
    warnings: Tuple[str, ...] = ()


def build_design_matrix(table: PersonMomentTable, spec: ModelSpec) -> DesignMatrix:
    spec = spec.resolve(table)

    X = design_rows(table.frame, table.moment_times, spec)
    names = spec.column_names

    warnings = []
    spread = np.ptp(X, axis=0) if len(X) else np.zeros(X.shape[1])
    for name, s in zip(names[1:], spread[1:]):
        if s == 0:
            warnings.append(f"constant column {name}")
            Logger.warn(f"design column {name} is constant")

    return DesignMatrix(
        X=X,
        y=table.indicators.copy(),
        offset=table.offsets.copy(),
        column_names=names,
        spec=spec,
        warnings=tuple(warnings),
    )
