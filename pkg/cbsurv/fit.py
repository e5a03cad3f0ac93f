from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from cbsurv.dataset import SurvivalDataset
from cbsurv.design import DesignMatrix, ModelSpec, build_design_matrix
from cbsurv.errors import DataError, UsageError
from cbsurv.model import HazardModel, fit_design, with_fingerprint
from cbsurv.penalized import (
    DEFAULT_MIN_RATIO,
    DEFAULT_N_LAMBDA,
    CVResult,
    PenalizedPath,
    cv_elastic_net,
    default_penalty_factors,
    fit_elastic_net,
    lambda_path,
)
from cbsurv.sampling import DEFAULT_RATIO, PersonMomentTable, sample_base_series
from cbsurv.slogging import Logger
from cbsurv.utils import fingerprint_frame

FAMILIES = ("auto", "binary", "multinomial", "penalized")
LAMBDA_CHOICES = ("min", "1se")


@dataclass
class FitOutcome:

    model: HazardModel
    table: PersonMomentTable
    design: DesignMatrix
    path: Optional[PenalizedPath] = None
    cv: Optional[CVResult] = None


@dataclass
class FitContext:
    """
    Everything needed to go from data to a fitted hazard model.

    Called with a SurvivalDataset it samples the base series first, with a
    PersonMomentTable it fits directly.
    """

    spec: ModelSpec
    family: str = "auto"
    ratio: float = DEFAULT_RATIO
    seed: int = 0
    alpha: float = 1.0
    n_lambda: int = DEFAULT_N_LAMBDA
    min_ratio: float = DEFAULT_MIN_RATIO
    lambdas: Optional[np.ndarray] = None
    penalty_factors: Dict[str, float] = field(default_factory=dict)
    folds: int = 5
    lambda_choice: str = "min"
    standardize: bool = True
    threads: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown family {self.family}, expected one of {FAMILIES}")
        if self.lambda_choice not in LAMBDA_CHOICES:
            raise UsageError(f"lambda choice must be one of {LAMBDA_CHOICES}")

    def sample(self, data: Union[SurvivalDataset, PersonMomentTable]) -> PersonMomentTable:
        if isinstance(data, PersonMomentTable):
            return data
        Logger.info("SAMPLE", "input is a dataset, sampling a base series first")
        return sample_base_series(data, self.ratio, self.seed, threads=self.threads)

    def weights(self, spec: ModelSpec) -> np.ndarray:
        w = default_penalty_factors(spec)
        names = spec.column_names
        for name, value in self.penalty_factors.items():
            if name not in names:
                raise UsageError(f"penalty factor for unknown column {name}")
            w[names.index(name)] = float(value)
        return w

    def _penalized(self, design, fingerprint):
        if design.y.max() > 1:
            raise UsageError("penalized fits support a single cause only")

        w = self.weights(design.spec)
        X, y, offset = design.X, design.y, design.offset

        lambdas = self.lambdas
        if lambdas is None:
            lambdas = lambda_path(
                X, y, offset, self.alpha, w, self.n_lambda, self.min_ratio, self.standardize
            )

        path = fit_elastic_net(
            X, y, offset, self.alpha, w, lambdas, self.standardize, design.column_names, design.spec
        )

        cv = None
        chosen = path.lambdas[-1]
        if self.folds:
            cv = cv_elastic_net(
                X,
                y,
                offset,
                self.alpha,
                w,
                folds=self.folds,
                seed=self.seed,
                lambdas=path.lambdas,
                standardize=self.standardize,
                threads=self.threads,
            )
            chosen = cv.lambda_min if self.lambda_choice == "min" else cv.lambda_1se

        model = with_fingerprint(path.to_model(chosen), fingerprint)
        return model, path, cv

    def __call__(self, data) -> FitOutcome:
        table = self.sample(data)
        fingerprint = fingerprint_frame(table.frame)

        design = build_design_matrix(table, self.spec)
        J = int(design.y.max())

        if self.family == "binary" and J != 1:
            raise DataError(f"binary family needs a single cause, table has {J}")
        if self.family == "multinomial" and J < 2:
            Logger.warn("multinomial family on a single cause reduces to the logistic fit")

        if self.family == "penalized":
            model, path, cv = self._penalized(design, fingerprint)
            return FitOutcome(model, table, design, path, cv)

        return FitOutcome(fit_design(design, fingerprint), table, design)


def fit_smooth_hazard(data, spec: ModelSpec, **kwargs) -> HazardModel:
    """
    Fits a smooth-in-time hazard model to a dataset or a person-moment
    table, logistic for a single cause and multinomial otherwise.
    """
    return FitContext(spec, **kwargs)(data).model
