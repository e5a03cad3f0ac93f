"""
Survival data with known truth.

Every cause gets a latent time drawn by inverting its cumulative hazard,
scaled proportionally by exp(x'beta). The observed time is the smallest of
the latent times, the censoring time and tau.
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from cbsurv.dataset import EVENT, ID, TIME, SurvivalDataset
from cbsurv.errors import DataError
from cbsurv.sampling import total_person_time
from cbsurv.utils import SIMULATION_STREAM, make_rng, map_chunks

CHUNK_SIZE = 4096


@dataclass(frozen=True)
class Exponential:

    rate: float
    effects: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.rate <= 0:
            raise DataError("exponential rate must be positive")

    def hazard(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)

    def cumulative_hazard(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def inverse_cumulative_hazard(self, h):
        return h / self.rate


@dataclass(frozen=True)
class Gompertz:
    """Hazard exp(a + b t)"""

    a: float
    b: float
    effects: Dict[str, float] = field(default_factory=dict)

    def hazard(self, t):
        return np.exp(self.a + self.b * np.asarray(t, dtype=float))

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.b == 0:
            return np.exp(self.a) * t
        return np.exp(self.a) / self.b * np.expm1(self.b * t)

    def inverse_cumulative_hazard(self, h):
        h = np.asarray(h, dtype=float)
        if self.b == 0:
            return h / np.exp(self.a)

        # A negative slope leaves a finite total hazard, past it the event never happens
        arg = 1.0 + self.b * h / np.exp(self.a)
        out = np.full_like(h, np.inf)
        ok = arg > 0
        out[ok] = np.log(arg[ok]) / self.b
        return out


@dataclass(frozen=True)
class Weibull:
    """Hazard (shape / scale) (t / scale)^(shape - 1)"""

    shape: float
    scale: float
    effects: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise DataError("weibull shape and scale must be positive")

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return self.shape / self.scale * (t / self.scale) ** (self.shape - 1)

    def cumulative_hazard(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** self.shape

    def inverse_cumulative_hazard(self, h):
        return self.scale * np.asarray(h, dtype=float) ** (1.0 / self.shape)


@dataclass(frozen=True)
class Bernoulli:

    p: float = 0.5

    def draw(self, rng, n):
        return (rng.random(n) < self.p).astype(float)


@dataclass(frozen=True)
class Normal:

    mean: float = 0.0
    sd: float = 1.0

    def draw(self, rng, n):
        return self.mean + self.sd * rng.standard_normal(n)


@dataclass(frozen=True)
class TruthSpec:

    causes: List
    covariates: Dict = field(default_factory=dict)
    tau: float = 10.0
    censoring_rate: Optional[float] = None
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "causes", list(self.causes))
        if not self.causes:
            raise DataError("truth needs at least one cause")
        if self.tau <= 0:
            raise DataError("tau must be positive")
        if self.censoring_rate is not None and self.censoring_rate <= 0:
            raise DataError("censoring rate must be positive")
        if self.n < 1:
            raise DataError("need at least one subject")
        for cause in self.causes:
            for name in cause.effects:
                if name not in self.covariates:
                    raise DataError(f"effect on unknown covariate {name}")

    def to_dict(self):
        return {
            "causes": [{"family": type(c).__name__, **asdict(c)} for c in self.causes],
            "covariates": {k: {"sampler": type(v).__name__, **asdict(v)} for k, v in self.covariates.items()},
            "tau": self.tau,
            "censoring_rate": self.censoring_rate,
            "n": self.n,
            "seed": self.seed,
        }


def _simulate_chunk(args):
    spec, chunk, size = args
    rng = make_rng(spec.seed, SIMULATION_STREAM, chunk)

    covariates = {name: sampler.draw(rng, size) for name, sampler in spec.covariates.items()}

    latent = np.empty((size, len(spec.causes)))
    for j, cause in enumerate(spec.causes):
        linear = np.zeros(size)
        for name, beta in cause.effects.items():
            linear += beta * covariates[name]
        target = rng.standard_exponential(size) / np.exp(linear)
        latent[:, j] = cause.inverse_cumulative_hazard(target)

    if spec.censoring_rate is not None:
        censor = rng.exponential(1.0 / spec.censoring_rate, size)
    else:
        censor = np.full(size, np.inf)

    first = latent.min(axis=1)
    cause = latent.argmin(axis=1) + 1

    observed = np.minimum(np.minimum(first, censor), spec.tau)
    event = np.where((first <= censor) & (first <= spec.tau), cause, 0)
    return observed, event, covariates


def simulate_frame(spec: TruthSpec, threads=None) -> pd.DataFrame:
    jobs = [
        (spec, chunk, min(CHUNK_SIZE, spec.n - start))
        for chunk, start in enumerate(range(0, spec.n, CHUNK_SIZE))
    ]
    parts = map_chunks(_simulate_chunk, jobs, threads)

    frame = pd.DataFrame(
        {
            ID: [str(i + 1) for i in range(spec.n)],
            TIME: np.concatenate([p[0] for p in parts]),
            EVENT: np.concatenate([p[1] for p in parts]).astype(int),
        }
    )
    for name in spec.covariates:
        frame[name] = np.concatenate([p[2][name] for p in parts])
    return frame


def simulate_dataset(spec: TruthSpec, threads=None) -> SurvivalDataset:
    """
    Deterministic given spec.seed. Raises a DataError when no subject has
    an event, the way any dataset without events does.
    """
    frame = simulate_frame(spec, threads)
    return SurvivalDataset.from_frame(frame, n_causes=len(spec.causes), tau=spec.tau)


@dataclass(frozen=True)
class ExponentialMLE:

    rate: float
    se_log_rate: float
    events: int
    person_time: float


def exponential_mle(dataset: SurvivalDataset, cause=None) -> ExponentialMLE:
    events = dataset.n_events(cause)
    if events == 0:
        raise DataError("no events")
    person_time = total_person_time(dataset)
    return ExponentialMLE(events / person_time, 1.0 / np.sqrt(events), events, person_time)


def weibull_truth_coefficients(shape, scale):
    """
    (intercept, log-time slope) of the log hazard of a Weibull(shape, scale):
    log(shape / scale) - (shape - 1) log(scale) + (shape - 1) log(t).
    """
    if shape <= 0 or scale <= 0:
        raise DataError("weibull shape and scale must be positive")
    intercept = np.log(shape / scale) - (shape - 1) * np.log(scale)
    return float(intercept), float(shape - 1)
