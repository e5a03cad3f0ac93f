"""
Hazard models fitted by offset logistic and offset multinomial regression.

With the base series as the reference class and the sampling offset
log(B/b) added to every non-reference linear predictor, the fitted
coefficients are log-hazard coefficients. Deviance is -2 times the log of
the case-base estimating function at the estimate, and AIC and likelihood
ratio tests are built from it as for an ordinary likelihood.
"""

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit, logsumexp
from scipy.stats import chi2, norm

from cbsurv.design import DesignMatrix, ModelSpec, design_rows
from cbsurv.errors import (
    ConvergenceError,
    DataError,
    NumericalError,
    RankDeficientError,
    SeparationError,
    UsageError,
)
from cbsurv.slogging import Logger

# Per person-moment: the absolute tolerance on max|score| is SCORE_TOL * n,
# reported as FitStats.score_tol.
SCORE_TOL = 1e-8
DEVIANCE_TOL = 1e-10
LRT_SLACK = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 20
JITTER = 1e-10
SEPARATION_NORM = 1e4
SATURATION = 1e-6


@dataclass(frozen=True)
class FitStats:

    deviance: float
    null_deviance: float
    aic: float
    iterations: int
    converged: bool
    gradient_norm: float
    n_obs: int
    penalized: bool = False
    lambda_: Optional[float] = None
    max_score: Optional[float] = None
    score_tol: Optional[float] = None


@dataclass(frozen=True)
class HazardModel:
    """
    Row j of `coefficients` holds the log-hazard coefficients of cause j + 1.

    `covariance` is indexed by the stacked, cause-major parameter vector and
    is None for penalized fits.
    """

    coefficients: np.ndarray
    covariance: Optional[np.ndarray]
    spec: Optional[ModelSpec]
    offset_value: float
    fit: FitStats
    column_names: List[str]
    fingerprint: str = ""

    @property
    def causes(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_parameters(self) -> int:
        return int(self.coefficients.size)

    def cause_covariance(self, cause=1) -> np.ndarray:
        if self.covariance is None:
            raise NumericalError("model has no covariance (penalized fit)")
        p = self.coefficients.shape[1]
        block = slice((cause - 1) * p, cause * p)
        return self.covariance[block, block]

    def standard_errors(self) -> np.ndarray:
        if self.covariance is None:
            raise NumericalError("model has no covariance (penalized fit)")
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None)).reshape(
            self.coefficients.shape
        )

    def rows(self, profile, times) -> np.ndarray:
        if self.spec is None:
            raise UsageError("model was fitted from a bare matrix, it has no design spec")
        times = _check_times(times)
        return design_rows(profile_frame(profile), times, self.spec)

    def log_hazard(self, profile, times) -> np.ndarray:
        """Log hazard of every cause, shape (len(times), causes), offset excluded"""
        return self.rows(profile, times) @ self.coefficients.T

    def hazard_ratios(self, level=0.95) -> pd.DataFrame:
        frame = wald_ci(self, level)
        return frame[["cause", "term", "hr", "hr_lower", "hr_upper"]]


def profile_frame(profile) -> pd.DataFrame:
    if isinstance(profile, pd.DataFrame):
        return profile.reset_index(drop=True)
    if isinstance(profile, pd.Series):
        return profile.to_frame().T.reset_index(drop=True)
    return pd.DataFrame([dict(profile)])


def _check_times(times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if not np.all(np.isfinite(times)) or np.any(times < 0):
        raise DataError("time outside basis support: times must be finite and non-negative")
    return times


def check_rank(X, column_names=None):
    """Raises RankDeficientError naming the columns a pivoted QR cannot place"""
    n, p = X.shape
    names = column_names or [f"x{i}" for i in range(p)]

    if n < p:
        raise RankDeficientError(names[n:])

    _, R, pivots = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if len(diag) else 0.0)
    rank = int(np.sum(diag > tol))

    if rank < p:
        raise RankDeficientError([names[i] for i in sorted(pivots[rank:])])


def _solve(info, score):
    try:
        factor = linalg.cho_factor(info)
    except linalg.LinAlgError:
        jitter = JITTER * max(1.0, np.max(np.abs(np.diag(info))))
        factor = linalg.cho_factor(info + jitter * np.eye(len(info)))
    return linalg.cho_solve(factor, score)


def _invert(info):
    eye = np.eye(len(info))
    try:
        cov = _solve(info, eye)
    except linalg.LinAlgError as e:
        raise NumericalError("observed information is singular") from e
    return (cov + cov.T) / 2


class _Logistic:
    """Log-likelihood pieces of the offset logistic model"""

    def __init__(self, X, y, offset):
        self.X, self.y, self.offset = X, y.astype(float), offset
        self.causes = 1

    def loglik(self, theta):
        eta = self.X @ theta + self.offset
        return float(np.sum(self.y * eta - np.logaddexp(0.0, eta)))

    def score(self, theta):
        eta = self.X @ theta + self.offset
        return self.X.T @ (self.y - expit(eta))

    def information(self, theta):
        p = expit(self.X @ theta + self.offset)
        w = p * (1.0 - p)
        return self.X.T @ (w[:, None] * self.X)

    def saturated(self, theta):
        p = expit(self.X @ theta + self.offset)
        return bool(np.all(np.abs(self.y - p) < SATURATION))


class _Multinomial:
    """
    Log-likelihood pieces of the offset multinomial model, class 0 as
    reference. Parameters are stacked cause-major.
    """

    def __init__(self, X, y, offset, causes):
        self.X, self.y, self.offset = X, y, offset
        self.causes = causes
        self.indicator = np.stack([(y == j).astype(float) for j in range(1, causes + 1)], axis=1)

    def _eta(self, theta):
        theta = theta.reshape(self.causes, -1)
        return self.X @ theta.T + self.offset[:, None]

    def _probs(self, eta):
        lse = logsumexp(np.column_stack([np.zeros(len(eta)), eta]), axis=1)
        return np.exp(eta - lse[:, None]), lse

    def loglik(self, theta):
        eta = self._eta(theta)
        _, lse = self._probs(eta)
        return float(np.sum(self.indicator * eta) - np.sum(lse))

    def score(self, theta):
        probs, _ = self._probs(self._eta(theta))
        return (self.X.T @ (self.indicator - probs)).T.reshape(-1)

    def information(self, theta):
        probs, _ = self._probs(self._eta(theta))
        J, p = self.causes, self.X.shape[1]
        info = np.zeros((J * p, J * p))
        for j in range(J):
            for k in range(j, J):
                w = probs[:, j] * ((j == k) - probs[:, k])
                block = self.X.T @ (w[:, None] * self.X)
                info[j * p : (j + 1) * p, k * p : (k + 1) * p] = block
                info[k * p : (k + 1) * p, j * p : (j + 1) * p] = block.T
        return info

    def saturated(self, theta):
        eta = self._eta(theta)
        probs, lse = self._probs(eta)
        observed = np.where(self.y > 0, np.sum(self.indicator * probs, axis=1), np.exp(-lse))
        return bool(np.all(observed > 1.0 - SATURATION))


def _start(X, y, offset, causes):
    counts = np.array([np.sum(y == j) for j in range(causes + 1)], dtype=float)
    theta = np.zeros((causes, X.shape[1]))
    theta[:, 0] = np.log(counts[1:] / counts[0]) - np.mean(offset)
    return theta.reshape(-1)


def _newton(problem, theta, n_obs):
    """
    Newton-Raphson with step halving.

    Stops when the largest score component per person-moment is below
    SCORE_TOL and the relative deviance change is below DEVIANCE_TOL.
    """
    ll = problem.loglik(theta)
    change = np.inf
    converged = False
    it = 0

    for it in range(1, MAX_ITER + 1):
        score = problem.score(theta)
        gradient_norm = float(np.max(np.abs(score))) / n_obs

        if gradient_norm <= SCORE_TOL and change <= DEVIANCE_TOL:
            converged = True
            it -= 1
            break

        if np.linalg.norm(theta) >= SEPARATION_NORM and gradient_norm > SCORE_TOL:
            raise SeparationError(
                f"coefficients diverge (norm {np.linalg.norm(theta):.3g}), "
                "the classes look separable"
            )

        step = _solve(problem.information(theta), score)

        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta + scale * step
            ll_new = problem.loglik(candidate)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            scale /= 2.0
        else:
            # No ascent direction left at working precision
            candidate, ll_new = theta, ll

        change = abs(ll_new - ll) / (abs(ll_new) + 0.1)
        theta, ll = candidate, ll_new
        Logger.iteration(it, -2.0 * ll, gradient_norm)

    score = problem.score(theta)
    gradient_norm = float(np.max(np.abs(score))) / n_obs
    if not converged:
        converged = gradient_norm <= SCORE_TOL and change <= DEVIANCE_TOL

    return theta, ll, it, converged, gradient_norm


def _fit(problem, X, y, offset, column_names, spec, family, fingerprint):
    n, p = X.shape
    names = list(column_names) if column_names is not None else [f"x{i}" for i in range(p)]
    check_rank(X, names)

    J = problem.causes
    Logger.fit_start(family, n, p)
    theta, ll, iterations, converged, gradient_norm = _newton(
        problem, _start(X, y, offset, J), n
    )

    if problem.saturated(theta):
        raise SeparationError("every person-moment is fitted perfectly, the classes are separable")

    if not converged:
        Logger.warn(f"{family} fit did not converge after {iterations} iterations")

    covariance = _invert(problem.information(theta))

    # Intercept-only fit of the same family for the null deviance
    ones = np.ones((n, 1))
    if J == 1:
        null_problem = _Logistic(ones, y, offset)
    else:
        null_problem = _Multinomial(ones, y, offset, J)
    _, null_ll, _, _, _ = _newton(null_problem, _start(ones, y, offset, J), n)

    deviance = -2.0 * ll
    fit = FitStats(
        deviance=deviance,
        null_deviance=-2.0 * null_ll,
        aic=deviance + 2.0 * J * p,
        iterations=iterations,
        converged=bool(converged),
        gradient_norm=gradient_norm,
        n_obs=n,
        max_score=gradient_norm * n,
        score_tol=SCORE_TOL * n,
    )
    Logger.info("FIT", f"family={family} deviance={deviance!r} iterations={iterations}")

    return HazardModel(
        coefficients=theta.reshape(J, p),
        covariance=covariance,
        spec=spec,
        offset_value=float(np.mean(offset)),
        fit=fit,
        column_names=names,
        fingerprint=fingerprint,
    )


def _validate(X, y, offset):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    offset = np.asarray(offset, dtype=float)

    if X.ndim != 2 or len(X) != len(y) or len(y) != len(offset):
        raise DataError("X, y and offset must have matching rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(offset))):
        raise DataError("X and offset must be finite")
    return X, y, offset


def fit_logistic_offset(
    X, y, offset, column_names=None, spec=None, fingerprint=""
) -> HazardModel:
    X, y, offset = _validate(X, y, offset)

    if not np.all((y == 0) | (y == 1)):
        raise DataError("logistic fit needs y in {0, 1}")
    if y.sum() == 0 or y.sum() == len(y):
        raise DataError("logistic fit needs both classes present")

    problem = _Logistic(X, y, offset)
    return _fit(problem, X, y, offset, column_names, spec, "logistic", fingerprint)


def fit_multinomial_offset(
    X, y, offset, column_names=None, spec=None, fingerprint=""
) -> HazardModel:
    X, y, offset = _validate(X, y, offset)

    if np.any(y < 0):
        raise DataError("class labels must be non-negative")
    J = int(y.max())
    for j in range(J + 1):
        if not np.any(y == j):
            raise DataError(f"empty class {j}")

    problem = _Multinomial(X, y, offset, J)
    return _fit(problem, X, y, offset, column_names, spec, "multinomial", fingerprint)


def fit_design(design: DesignMatrix, fingerprint="") -> HazardModel:
    """Logistic for a single cause, multinomial otherwise"""
    fit_fn = fit_logistic_offset if design.y.max() == 1 else fit_multinomial_offset
    return fit_fn(
        design.X, design.y, design.offset, design.column_names, design.spec, fingerprint
    )


def _require_inference(model):
    if model.covariance is None:
        raise NumericalError("model has no covariance (penalized fit)")
    if not model.fit.converged:
        raise ConvergenceError("inference needs a converged model")


def _z(level):
    if not 0 < level < 1:
        raise UsageError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf((1 + level) / 2))


def wald_ci(model: HazardModel, level=0.95) -> pd.DataFrame:
    _require_inference(model)
    z = _z(level)

    se = model.standard_errors()
    rows = []
    for j in range(model.causes):
        for k, term in enumerate(model.column_names):
            est = model.coefficients[j, k]
            lower, upper = est - z * se[j, k], est + z * se[j, k]
            rows.append(
                {
                    "cause": j + 1,
                    "term": term,
                    "estimate": est,
                    "se": se[j, k],
                    "lower": lower,
                    "upper": upper,
                    "hr": np.exp(est),
                    "hr_lower": np.exp(lower),
                    "hr_upper": np.exp(upper),
                }
            )
    return pd.DataFrame(rows)


def summary_table(model: HazardModel) -> pd.DataFrame:
    """Estimate, standard error, z statistic and two-sided p value"""
    _require_inference(model)
    se = model.standard_errors()
    rows = []
    for j in range(model.causes):
        for k, term in enumerate(model.column_names):
            est = model.coefficients[j, k]
            z = est / se[j, k] if se[j, k] > 0 else np.inf
            rows.append(
                {
                    "cause": j + 1,
                    "term": term,
                    "estimate": est,
                    "se": se[j, k],
                    "z": z,
                    "p": 2 * norm.sf(abs(z)),
                }
            )
    return pd.DataFrame(rows)


def hazard_ratio_curve(
    model: HazardModel, profile_a, profile_b, times, level=0.95, cause=1
) -> pd.DataFrame:
    """
    HR(t) of profile a against profile b with a pointwise delta-method band.

    The variance of log HR(t) is c' V c with c the difference of the two
    design rows at t.
    """
    _require_inference(model)
    z = _z(level)
    times = _check_times(times)

    c = model.rows(profile_a, times) - model.rows(profile_b, times)
    theta = model.coefficients[cause - 1]
    cov = model.cause_covariance(cause)

    log_hr = c @ theta
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", c, cov, c), 0, None))

    return pd.DataFrame(
        {
            "time": times,
            "hr": np.exp(log_hr),
            "lower": np.exp(log_hr - z * se),
            "upper": np.exp(log_hr + z * se),
            "se_log_hr": se,
        }
    )


def hazard_curve(model: HazardModel, profile, times, level=0.95, cause=1) -> pd.DataFrame:
    """Hazard of one cause over time with a delta-method band on the log scale"""
    _require_inference(model)
    z = _z(level)
    times = _check_times(times)

    rows = model.rows(profile, times)
    cov = model.cause_covariance(cause)
    log_h = rows @ model.coefficients[cause - 1]
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", rows, cov, rows), 0, None))

    return pd.DataFrame(
        {
            "time": times,
            "hazard": np.exp(log_h),
            "lower": np.exp(log_h - z * se),
            "upper": np.exp(log_h + z * se),
        }
    )


@dataclass(frozen=True)
class LRTResult:

    statistic: float
    df: int
    p: float


def lrt(nested: HazardModel, full: HazardModel) -> LRTResult:
    """
    Likelihood ratio test of `nested` against `full`.

    Column names alone do not decide nesting: spline columns are named by
    position, so models carrying a spec are compared on their resolved
    time bases, terms and levels.
    """
    if not set(nested.column_names) <= set(full.column_names):
        raise DataError("models are not nested: nested columns must be a subset of full columns")
    if nested.spec is not None and full.spec is not None and not nested.spec.nested_in(full.spec):
        raise DataError("models are not nested: time bases, knots or terms differ")
    if nested.causes != full.causes:
        raise DataError("models are not nested: different numbers of causes")
    if nested.fingerprint != full.fingerprint:
        raise DataError("models were fitted on different person-moment tables")

    statistic = nested.fit.deviance - full.fit.deviance
    if statistic < -LRT_SLACK * (1.0 + abs(full.fit.deviance)):
        raise NumericalError(
            f"full model deviance exceeds the nested one by {-statistic:.3g}, "
            "one of the fits has not converged"
        )
    statistic = max(statistic, 0.0)

    df = full.n_parameters - nested.n_parameters
    p = float(chi2.sf(statistic, df)) if df > 0 else 1.0
    return LRTResult(statistic, df, p)


def aic(model: HazardModel) -> float:
    """Penalized fits count only their nonzero coefficients"""
    if model.fit.penalized:
        return model.fit.aic
    return model.fit.deviance + 2.0 * model.n_parameters


def with_fingerprint(model: HazardModel, fingerprint: str) -> HazardModel:
    return replace(model, fingerprint=fingerprint)
