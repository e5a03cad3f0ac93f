"""
Elastic-net penalized case-base fits for a single cause.

Minimizes

    -loglik(theta) / n + lambda * sum_j w_j * (alpha |theta_j| + (1 - alpha) theta_j^2 / 2)

over a decreasing lambda grid. Each outer step is an IRLS quadratic
approximation, solved by cyclic coordinate descent with covariance
updates. The intercept is never penalized; time columns default to w = 0.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.special import expit

from cbsurv.design import ModelSpec
from cbsurv.errors import DataError, NumericalError, UsageError
from cbsurv.model import FitStats, HazardModel, fit_logistic_offset
from cbsurv.slogging import Logger
from cbsurv.utils import FOLD_STREAM, make_rng, map_chunks

CD_TOL = 1e-7
DEVIANCE_TOL = 1e-8
MAX_OUTER = 100
MAX_SWEEPS = 10000
MAX_HALVINGS = 20
MIN_WEIGHT = 1e-5

DEFAULT_N_LAMBDA = 100
DEFAULT_MIN_RATIO = 1e-4


def default_penalty_factors(spec: ModelSpec = None, n_columns=None) -> np.ndarray:
    """Zero for the intercept and the time basis, one for everything else"""
    if spec is not None:
        w = np.ones(spec.n_columns)
        w[spec.time_columns] = 0.0
    else:
        w = np.ones(n_columns)
    w[0] = 0.0
    return w


@dataclass(frozen=True)
class Standardization:

    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def compute(cls, X, w, standardize=True):
        p = X.shape[1]
        means, scales = np.zeros(p), np.ones(p)
        if standardize:
            for j in np.flatnonzero(w > 0):
                sd = X[:, j].std()
                if sd > 0:
                    means[j], scales[j] = X[:, j].mean(), sd
        return cls(means, scales)

    def apply(self, X):
        return (X - self.means) / self.scales

    def to_original(self, theta):
        """Back-transforms standardized coefficients; column 0 is the intercept"""
        out = theta / self.scales
        out[0] = theta[0] - np.sum(theta[1:] * self.means[1:] / self.scales[1:])
        return out


def _check_inputs(X, y, offset, alpha, w):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    offset = np.asarray(offset, dtype=float)
    w = np.asarray(w, dtype=float)

    if not np.all((y == 0) | (y == 1)):
        raise DataError("penalized fits support a single cause (y in {0, 1}) only")
    if not 0 <= alpha <= 1:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if len(w) != X.shape[1]:
        raise UsageError(f"need {X.shape[1]} penalty factors, got {len(w)}")
    if np.any(w < 0):
        raise UsageError("penalty factors must be non-negative")
    if w[0] != 0:
        raise UsageError("the intercept (column 0) cannot be penalized")
    if np.all(w == 0):
        raise UsageError("all penalty factors are zero, nothing to penalize")
    return X, y, offset, w


def _null_fit(Xs, y, offset, w):
    """Unpenalized columns only, penalized coefficients at zero"""
    free = np.flatnonzero(w == 0)
    model = fit_logistic_offset(Xs[:, free], y, offset)
    theta = np.zeros(Xs.shape[1])
    theta[free] = model.coefficients[0]
    return theta


def lambda_path(
    X,
    y,
    offset,
    alpha,
    w,
    n_lambda=DEFAULT_N_LAMBDA,
    min_ratio=DEFAULT_MIN_RATIO,
    standardize=True,
) -> np.ndarray:
    X, y, offset, w = _check_inputs(X, y, offset, alpha, w)
    if alpha == 0:
        raise UsageError("alpha = 0 has no finite lambda_max, pass an explicit lambda grid")
    if n_lambda < 2:
        raise UsageError("n_lambda must be at least 2")
    if not 0 < min_ratio < 1:
        raise UsageError("min_ratio must lie in (0, 1)")

    Xs = Standardization.compute(X, w, standardize).apply(X)
    theta = _null_fit(Xs, y, offset, w)
    residual = y - expit(Xs @ theta + offset)
    gradient = np.abs(Xs.T @ residual) / len(y)

    penalized = w > 0
    lam_max = np.max(gradient[penalized] / (alpha * w[penalized]))

    # Keeps the first soft-threshold clear of rounding in the gradient
    lam_max *= 1.0 + 1e-9
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def _penalty(theta, lam, alpha, w):
    return lam * np.sum(w * (alpha * np.abs(theta) + 0.5 * (1 - alpha) * theta**2))


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _soft(u, threshold):
    return np.sign(u) * max(abs(u) - threshold, 0.0)


def _coordinate_descent(G, c, theta, lam, alpha, w):
    """
    Minimizes theta' G theta / 2 - c' theta + penalty by cyclic updates.
    """
    theta = theta.copy()
    g_theta = G @ theta
    diag = np.diag(G)

    for _ in range(MAX_SWEEPS):
        max_change = 0.0
        for j in range(len(theta)):
            if diag[j] <= 0:
                continue
            u = c[j] - g_theta[j] + diag[j] * theta[j]
            if w[j] == 0:
                new = u / diag[j]
            else:
                new = _soft(u, lam * alpha * w[j]) / (diag[j] + lam * (1 - alpha) * w[j])

            change = new - theta[j]
            if change != 0.0:
                g_theta += G[:, j] * change
                theta[j] = new
                max_change = max(max_change, abs(change))

        if max_change <= CD_TOL:
            break

    return theta


def _solve_lambda(Xs, y, offset, alpha, w, lam, theta):
    n = len(y)
    eta = Xs @ theta + offset
    objective = -_loglik(eta, y) / n + _penalty(theta, lam, alpha, w)
    deviance = -2.0 * _loglik(eta, y)

    for outer in range(1, MAX_OUTER + 1):
        p = expit(eta)
        weights = np.maximum(p * (1 - p), MIN_WEIGHT)
        working = eta - offset + (y - p) / weights

        weighted = Xs * weights[:, None]
        G = Xs.T @ weighted / n
        c = weighted.T @ working / n

        candidate = _coordinate_descent(G, c, theta, lam, alpha, w)

        # Step halving keeps the penalized objective non-increasing
        for _ in range(MAX_HALVINGS):
            eta_new = Xs @ candidate + offset
            objective_new = -_loglik(eta_new, y) / n + _penalty(candidate, lam, alpha, w)
            if objective_new <= objective + 1e-15 * abs(objective):
                break
            candidate = (theta + candidate) / 2
        else:
            eta_new = Xs @ candidate + offset
            objective_new = -_loglik(eta_new, y) / n + _penalty(candidate, lam, alpha, w)

        if not np.isfinite(objective_new):
            raise NumericalError(f"penalized fit diverged at lambda = {lam}")

        deviance_new = -2.0 * _loglik(eta_new, y)
        change = abs(deviance_new - deviance) / (abs(deviance_new) + 0.1)
        step = np.max(np.abs(candidate - theta))

        theta, eta, objective, deviance = candidate, eta_new, objective_new, deviance_new
        if change <= DEVIANCE_TOL and step <= CD_TOL:
            break

    return theta, deviance, outer


@dataclass(frozen=True)
class PenalizedPath:

    alpha: float
    penalty_factors: np.ndarray
    lambdas: np.ndarray
    coefficients: np.ndarray
    std_coefficients: np.ndarray
    deviances: np.ndarray
    null_deviance: float
    standardization: Standardization
    column_names: List[str]
    offset_value: float
    iterations: np.ndarray
    spec: Optional[ModelSpec] = None

    def __len__(self):
        return len(self.lambdas)

    def n_nonzero(self) -> np.ndarray:
        penalized = self.penalty_factors > 0
        return np.sum(self.coefficients[:, penalized] != 0, axis=1)

    def index_of(self, lam) -> int:
        return int(np.argmin(np.abs(self.lambdas - lam)))

    def kkt_residuals(self, X, y, offset) -> np.ndarray:
        """
        Largest violation of the optimality conditions at every lambda, on
        the standardized scale.
        """
        Xs = self.standardization.apply(np.asarray(X, dtype=float))
        n = len(y)
        w, alpha = self.penalty_factors, self.alpha

        out = []
        for lam, theta in zip(self.lambdas, self.std_coefficients):
            gradient = -Xs.T @ (y - expit(Xs @ theta + offset)) / n
            worst = 0.0
            for j in range(len(theta)):
                if w[j] == 0:
                    worst = max(worst, abs(gradient[j]))
                elif theta[j] == 0:
                    worst = max(worst, abs(gradient[j]) - alpha * lam * w[j])
                else:
                    stationary = (
                        gradient[j]
                        + (1 - alpha) * lam * w[j] * theta[j]
                        + alpha * lam * w[j] * np.sign(theta[j])
                    )
                    worst = max(worst, abs(stationary))
            out.append(worst)
        return np.array(out)

    def to_model(self, lam) -> HazardModel:
        k = self.index_of(lam)
        coef = self.coefficients[k]
        dof = int(np.sum(coef != 0))
        fit = FitStats(
            deviance=float(self.deviances[k]),
            null_deviance=self.null_deviance,
            aic=float(self.deviances[k]) + 2.0 * dof,
            iterations=int(self.iterations[k]),
            converged=True,
            gradient_norm=0.0,
            n_obs=0,
            penalized=True,
            lambda_=float(self.lambdas[k]),
        )
        return HazardModel(
            coefficients=coef.reshape(1, -1).copy(),
            covariance=None,
            spec=self.spec,
            offset_value=self.offset_value,
            fit=fit,
            column_names=list(self.column_names),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.coefficients, columns=self.column_names)
        frame.insert(0, "lambda", self.lambdas)
        frame.insert(1, "deviance", self.deviances)
        frame.insert(2, "n_nonzero", self.n_nonzero())
        return frame


def fit_elastic_net(
    X,
    y,
    offset,
    alpha,
    w,
    lambdas,
    standardize=True,
    column_names=None,
    spec=None,
) -> PenalizedPath:
    """
    Fits every lambda in order, each warm-started from the previous one.
    Coefficients are reported on the original scale of X.
    """
    X, y, offset, w = _check_inputs(X, y, offset, alpha, w)
    lambdas = np.asarray(lambdas, dtype=float)

    if len(lambdas) == 0:
        raise UsageError("empty lambda grid")
    if np.any(lambdas < 0) or np.any(np.diff(lambdas) >= 0):
        raise UsageError("lambdas must be non-negative and strictly decreasing")

    record = Standardization.compute(X, w, standardize)
    Xs = record.apply(X)

    theta = _null_fit(Xs, y, offset, w)
    null_deviance = -2.0 * _loglik(Xs @ theta + offset, y)

    Logger.fit_start("elastic-net", *X.shape)
    std_coefs, coefs, deviances, iterations = [], [], [], []
    for lam in lambdas:
        theta, deviance, outer = _solve_lambda(Xs, y, offset, alpha, w, lam, theta)
        std_coefs.append(theta.copy())
        coefs.append(record.to_original(theta.copy()))
        deviances.append(deviance)
        iterations.append(outer)
        Logger.info("PATH", f"lambda={lam!r} deviance={deviance!r} outer={outer}")

    names = list(column_names) if column_names is not None else [f"x{i}" for i in range(X.shape[1])]
    return PenalizedPath(
        alpha=float(alpha),
        penalty_factors=w,
        lambdas=lambdas,
        coefficients=np.array(coefs),
        std_coefficients=np.array(std_coefs),
        deviances=np.array(deviances),
        null_deviance=null_deviance,
        standardization=record,
        column_names=names,
        offset_value=float(np.mean(offset)),
        iterations=np.array(iterations),
        spec=spec,
    )


@dataclass(frozen=True)
class CVResult:

    lambdas: np.ndarray
    cv_deviance: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    fold_ids: np.ndarray
    fold_deviances: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"lambda": self.lambdas, "cv_deviance": self.cv_deviance, "cv_se": self.cv_se}
        )


def assign_folds(y, folds, seed) -> np.ndarray:
    """Seeded shuffle within each class, dealt round-robin, events first"""
    rng = make_rng(seed, FOLD_STREAM)
    fold_ids = np.empty(len(y), dtype=int)
    start = 0
    for label in (1, 0):
        idx = rng.permutation(np.flatnonzero(y == label))
        fold_ids[idx] = (np.arange(len(idx)) + start) % folds
        start += len(idx)
    return fold_ids


def heldout_deviance(X, y, offset, coefficients) -> np.ndarray:
    """Mean deviance per held-out row for every coefficient vector"""
    eta = X @ coefficients.T + offset[:, None]
    ll = y[:, None] * eta - np.logaddexp(0.0, eta)
    return -2.0 * ll.mean(axis=0)


def cv_elastic_net(
    X,
    y,
    offset,
    alpha,
    w,
    folds=5,
    seed=0,
    lambdas=None,
    n_lambda=DEFAULT_N_LAMBDA,
    min_ratio=DEFAULT_MIN_RATIO,
    standardize=True,
    threads=None,
) -> CVResult:
    X, y, offset, w = _check_inputs(X, y, offset, alpha, w)
    if folds < 2:
        raise UsageError("need at least 2 folds")
    if folds > len(y):
        raise UsageError("more folds than rows")

    if lambdas is None:
        lambdas = lambda_path(X, y, offset, alpha, w, n_lambda, min_ratio, standardize)
    lambdas = np.asarray(lambdas, dtype=float)

    fold_ids = assign_folds(y, folds, seed)
    leave_one_out = folds == len(y)
    for k in range(folds):
        if not leave_one_out and not np.any(y[fold_ids == k] == 1):
            raise DataError(f"fold {k} has no events")

    def run_fold(k):
        train, test = fold_ids != k, fold_ids == k
        path = fit_elastic_net(X[train], y[train], offset[train], alpha, w, lambdas, standardize)
        return heldout_deviance(X[test], y[test], offset[test], path.coefficients)

    fold_deviances = np.array(map_chunks(run_fold, range(folds), threads))
    cv = fold_deviances.mean(axis=0)
    se = fold_deviances.std(axis=0, ddof=1) / np.sqrt(folds)

    best = int(np.argmin(cv))
    within = np.flatnonzero(cv <= cv[best] + se[best])
    lambda_1se = float(lambdas[within].max())
    Logger.info("CV", f"folds={folds} lambda_min={lambdas[best]!r} lambda_1se={lambda_1se!r}")

    return CVResult(
        lambdas=lambdas,
        cv_deviance=cv,
        cv_se=se,
        lambda_min=float(lambdas[best]),
        lambda_1se=lambda_1se,
        fold_ids=fold_ids,
        fold_deviances=fold_deviances,
    )
