"""
Survival and cumulative incidence from fitted hazards.

    S(t)    = exp(-int_0^t sum_j lambda_j(u) du)
    CI(t)   = 1 - S(t)                       single event
    CI_j(t) = int_0^t lambda_j(u) S(u) du    competing causes

Integrals use the trapezoidal rule on a refined grid, or plain Monte Carlo
means over uniform draws in every grid interval. For competing causes the
subdensity increments of each sub-interval are normalized to the drop in S
over it, so sum_j CI_j + S = 1 holds at every grid point.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from cbsurv.errors import DataError, UsageError
from cbsurv.model import HazardModel, profile_frame
from cbsurv.slogging import Logger
from cbsurv.utils import MC_STREAM, make_rng, map_chunks

METHODS = ("trapezoid", "monte_carlo")
DEFAULT_REFINEMENT = 100
DEFAULT_SAMPLES = 1000
MIN_SAMPLES = 100


def hazard_at(model: HazardModel, t, profile) -> np.ndarray:
    """Hazard of every cause at times t, shape (len(t), causes)"""
    return np.exp(model.log_hazard(profile, t))


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if len(grid) == 0 or not np.all(np.isfinite(grid)):
        raise DataError("time grid must be a non-empty finite vector")
    if grid[0] != 0:
        raise DataError("time grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise DataError("non-monotone grid: times must be strictly increasing")
    return grid


def parse_grid(text) -> np.ndarray:
    """`start:stop:count`, start must be 0"""
    try:
        start, stop, count = text.split(":")
        return check_grid(np.linspace(float(start), float(stop), int(count)))
    except ValueError as e:
        raise UsageError(f"grid must look like start:stop:count, got {text!r}") from e


def refine(grid, refinement):
    """Inserts refinement - 1 points between user grid points"""
    if refinement < 1:
        raise UsageError("refinement must be at least 1")
    if len(grid) == 1:
        return grid.copy(), np.array([0])

    pieces = [np.linspace(a, b, refinement + 1)[:-1] for a, b in zip(grid[:-1], grid[1:])]
    fine = np.concatenate(pieces + [grid[-1:]])
    return fine, np.arange(len(grid)) * refinement


@dataclass(frozen=True)
class SurvivalCurve:

    time_grid: np.ndarray
    survival: np.ndarray
    se: Optional[np.ndarray]
    method: str


@dataclass(frozen=True)
class RiskCurve:
    """
    Cumulative incidence indexed (grid point, profile, cause) with the
    overall survival indexed (grid point, profile).
    """

    time_grid: np.ndarray
    values: np.ndarray
    survival: np.ndarray
    method: str
    profiles: pd.DataFrame
    mc_meta: Optional[dict] = None

    @property
    def causes(self) -> int:
        return self.values.shape[2]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time": self.time_grid})
        for p in range(self.values.shape[1]):
            for j in range(self.causes):
                name = f"profile{p + 1}" if self.causes == 1 else f"profile{p + 1}.cause{j + 1}"
                frame[name] = self.values[:, p, j]
        return frame


def _trapezoid(model, profile, grid, refinement):
    fine, idx = refine(grid, refinement)
    hazards = hazard_at(model, fine, profile)
    cumulative = cumulative_trapezoid(hazards.sum(axis=1), fine, initial=0.0)
    survival = np.exp(-cumulative)

    # Subdensity increments per sub-interval, shared out over the drop in S
    sub = survival[:, None] * hazards
    increments = 0.5 * (sub[1:] + sub[:-1]) * np.diff(fine)[:, None]
    drop = survival[:-1] - survival[1:]
    total = increments.sum(axis=1)
    share = np.divide(increments, total[:, None], out=np.zeros_like(increments), where=total[:, None] > 0)
    incidence = np.vstack([np.zeros((1, hazards.shape[1])), np.cumsum(share * drop[:, None], axis=0)])

    return survival[idx], incidence[idx], None, None


def _monte_carlo(model, profile, grid, n_samples, seed, refinement):
    J = model.causes
    cumulative = np.zeros(len(grid))
    variance = np.zeros(len(grid))
    increments = np.zeros((len(grid), J))
    inc_variance = np.zeros((len(grid), J))

    # Deterministic cumulative hazard, only used to weight subdensity draws
    fine, _ = refine(grid, refinement)
    fine_cumulative = cumulative_trapezoid(
        hazard_at(model, fine, profile).sum(axis=1), fine, initial=0.0
    )

    for k in range(1, len(grid)):
        a, b = grid[k - 1], grid[k]
        rng = make_rng(seed, MC_STREAM, k)
        u = a + (b - a) * rng.random(n_samples)

        hazards = hazard_at(model, u, profile)
        total = hazards.sum(axis=1)
        cumulative[k] = cumulative[k - 1] + (b - a) * total.mean()
        variance[k] = variance[k - 1] + (b - a) ** 2 * total.var(ddof=1) / n_samples

        sub = hazards * np.exp(-np.interp(u, fine, fine_cumulative))[:, None]
        increments[k] = (b - a) * sub.mean(axis=0)
        inc_variance[k] = inc_variance[k - 1] + (b - a) ** 2 * sub.var(axis=0, ddof=1) / n_samples

    survival = np.exp(-cumulative)
    drop = np.concatenate([[0.0], survival[:-1] - survival[1:]])
    total = increments.sum(axis=1)
    share = np.divide(increments, total[:, None], out=np.zeros_like(increments), where=total[:, None] > 0)
    incidence = np.cumsum(share * drop[:, None], axis=0)

    survival_se = survival * np.sqrt(variance)
    if J == 1:
        incidence_se = survival_se[:, None]
    else:
        incidence_se = np.sqrt(inc_variance)
    return survival, incidence, survival_se, incidence_se


def _integrate(model, profile, grid, method, refinement, n_samples, seed):
    if method == "trapezoid":
        return _trapezoid(model, profile, grid, refinement)
    if method == "monte_carlo":
        if n_samples < MIN_SAMPLES:
            raise UsageError(f"monte carlo integration needs at least {MIN_SAMPLES} samples")
        return _monte_carlo(model, profile, grid, n_samples, seed, refinement)
    raise UsageError(f"unknown integration method {method}, expected one of {METHODS}")


def survival_curve(
    model: HazardModel,
    profile,
    grid,
    method="trapezoid",
    n_samples=DEFAULT_SAMPLES,
    seed=0,
    refinement=DEFAULT_REFINEMENT,
) -> SurvivalCurve:
    grid = check_grid(grid)
    survival, _, se, _ = _integrate(
        model, profile_frame(profile), grid, method, refinement, n_samples, seed
    )
    return SurvivalCurve(grid, survival, se, method)


def _risk(model, profiles, grid, method, refinement, n_samples, seed, threads):
    grid = check_grid(grid)
    profiles = profile_frame(profiles)

    def run(p):
        return _integrate(model, profiles.iloc[[p]], grid, method, refinement, n_samples, seed)

    results = map_chunks(run, range(len(profiles)), threads)
    survival = np.stack([r[0] for r in results], axis=1)
    values = np.stack([r[1] for r in results], axis=1)

    mc_meta = None
    if method == "monte_carlo":
        mc_meta = {
            "n_samples": n_samples,
            "seed": seed,
            "survival_se": np.stack([r[2] for r in results], axis=1),
            "se": np.stack([r[3] for r in results], axis=1),
        }

    Logger.info("RISK", f"method={method} profiles={len(profiles)} grid={len(grid)}")
    return RiskCurve(grid, values, survival, method, profiles, mc_meta)


def cif_single(
    model: HazardModel,
    profiles,
    grid,
    method="trapezoid",
    n_samples=DEFAULT_SAMPLES,
    seed=0,
    refinement=DEFAULT_REFINEMENT,
    threads=None,
) -> RiskCurve:
    if model.causes != 1:
        raise UsageError(f"model has {model.causes} causes, use cif_competing")

    curve = _risk(model, profiles, grid, method, refinement, n_samples, seed, threads)

    # CI = 1 - S exactly, whatever the integration
    values = 1.0 - curve.survival[:, :, None]
    values[0] = 0.0
    return RiskCurve(curve.time_grid, values, curve.survival, method, curve.profiles, curve.mc_meta)


def cif_competing(
    model: HazardModel,
    profiles,
    grid,
    method="trapezoid",
    n_samples=DEFAULT_SAMPLES,
    seed=0,
    refinement=DEFAULT_REFINEMENT,
    threads=None,
) -> RiskCurve:
    if model.causes < 2:
        raise UsageError("competing-risk incidence needs a model with at least two causes")
    return _risk(model, profiles, grid, method, refinement, n_samples, seed, threads)


def cumulative_incidence(model: HazardModel, profiles, grid, **kwargs) -> RiskCurve:
    if model.causes == 1:
        return cif_single(model, profiles, grid, **kwargs)
    return cif_competing(model, profiles, grid, **kwargs)
