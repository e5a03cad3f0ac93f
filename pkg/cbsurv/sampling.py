"""
Case-base sampling.

The case series is every observed event, taken at the subject's follow-up
time. The base series is drawn uniformly over total person-time: a subject
is picked with probability proportional to its follow-up time, then a
moment is picked uniformly over that follow-up. Every row carries the same
offset log(B/b).
"""

import os
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
import pandas as pd
import yaml

from cbsurv.dataset import ID, TIME, EVENT, SurvivalDataset, read_table, write_table
from cbsurv.errors import DataError, UsageError
from cbsurv.slogging import Logger
from cbsurv.utils import SAMPLING_STREAM, make_rng, map_chunks, round_half_up

MOMENT = "moment_time"
INDICATOR = "event_indicator"
OFFSET = "offset"

# A file with these columns is a person-moment table, not a dataset
SIGNATURE = (ID, MOMENT, INDICATOR, OFFSET)

DEFAULT_RATIO = 100.0
MAX_ROWS = 50_000_000
CHUNK_SIZE = 65536


@dataclass(frozen=True)
class SamplingMeta:

    B: float
    b: int
    ratio: float
    seed: int
    tau: float
    n_causes: int


@dataclass(frozen=True)
class PersonMomentTable:
    """
    Case and base series rows.

    Columns: subject_id, moment_time, event_indicator (0 for the base
    series, j for a cause j case), offset, then the covariates of the
    parent dataset.
    """

    frame: pd.DataFrame
    meta: SamplingMeta
    levels: dict = None
    reference_levels: dict = None

    def __len__(self):
        return len(self.frame)

    @property
    def moment_times(self) -> np.ndarray:
        return self.frame[MOMENT].to_numpy(dtype=float)

    @property
    def indicators(self) -> np.ndarray:
        return self.frame[INDICATOR].to_numpy(dtype=int)

    @property
    def offsets(self) -> np.ndarray:
        return self.frame[OFFSET].to_numpy(dtype=float)

    @property
    def case_series(self) -> pd.DataFrame:
        return self.frame[self.frame[INDICATOR] > 0]

    @property
    def base_series(self) -> pd.DataFrame:
        return self.frame[self.frame[INDICATOR] == 0]

    @property
    def covariate_names(self):
        return [c for c in self.frame.columns if c not in SIGNATURE]

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()

    def save(self, path, sep=","):
        """Writes the rows and a `.meta.yml` sidecar with the sampling record"""
        write_table(self.frame, path, sep=sep)
        with open(meta_path(path), "w") as f:
            yaml.safe_dump(
                {
                    "meta": asdict(self.meta),
                    "levels": self.levels or {},
                    "reference_levels": self.reference_levels or {},
                },
                f,
                sort_keys=False,
            )

    @classmethod
    def load(cls, path, sep=","):
        frame = read_table(path, sep=sep)
        if not is_person_moment_frame(frame):
            raise DataError(f"{path} is not a person-moment table")

        sidecar = meta_path(path)
        if os.path.exists(sidecar):
            with open(sidecar, "r") as f:
                doc = yaml.safe_load(f)
            meta = SamplingMeta(**doc["meta"])
            levels = doc.get("levels") or {}
            reference = doc.get("reference_levels") or {}
        else:
            meta = _meta_from_rows(frame)
            levels, reference = {}, {}

        for col in [MOMENT, OFFSET] + [c for c in frame.columns if c not in SIGNATURE]:
            if col in levels:
                frame[col] = frame[col].astype(str)
            elif pd.api.types.is_numeric_dtype(frame[col]):
                frame[col] = frame[col].astype(float)

        return cls(frame, meta, levels, reference)


def meta_path(path):
    return str(path) + ".meta.yml"


def is_person_moment_frame(frame: pd.DataFrame) -> bool:
    return all(c in frame.columns for c in SIGNATURE)


def _meta_from_rows(frame):
    indicators = frame[INDICATOR].to_numpy(dtype=int)
    b = int(np.sum(indicators == 0))
    events = int(np.sum(indicators > 0))
    offset = float(frame[OFFSET].iloc[0])
    return SamplingMeta(
        B=float(b * np.exp(offset)),
        b=b,
        ratio=b / events,
        seed=-1,
        tau=float(frame[MOMENT].max()),
        n_causes=int(indicators.max()),
    )


def total_person_time(dataset: SurvivalDataset) -> float:
    if len(dataset) == 0:
        raise DataError("empty dataset")
    return float(np.sum(dataset.times))


def compute_offset(b: int, B: float) -> float:
    if b < 1:
        raise DataError("base series must have at least one row")
    if B <= 0:
        raise DataError("total person-time must be positive")
    return float(np.log(B) - np.log(b))


def _draw_chunk(args):
    seed, chunk, size, cumulative, times = args
    rng = make_rng(seed, SAMPLING_STREAM, chunk)

    # Subject proportional to follow-up, then a moment uniform over it
    position = rng.random(size) * cumulative[-1]
    subject = np.searchsorted(cumulative, position, side="right")
    subject = np.minimum(subject, len(times) - 1)
    moment = times[subject] * (1.0 - rng.random(size))
    return subject, moment


def sample_base_series(
    dataset: SurvivalDataset,
    ratio: float = DEFAULT_RATIO,
    seed: int = 0,
    max_rows: int = MAX_ROWS,
    threads: int = None,
) -> PersonMomentTable:
    """
    Draws b = round(ratio * events) base moments and appends the case series.

    The base series is drawn in fixed-size chunks, each from its own
    generator stream, so the result does not depend on the thread count.
    """
    if ratio <= 0:
        raise UsageError("ratio must be positive")

    n_events = dataset.n_events()
    b = round_half_up(ratio * n_events)
    if b == 0:
        raise DataError("no events to sample a base series for")
    if b + n_events > max_rows:
        raise DataError(f"base series of {b} rows exceeds the row cap of {max_rows}")

    times = dataset.times
    B = total_person_time(dataset)
    offset = compute_offset(b, B)
    cumulative = np.cumsum(times)

    jobs = []
    for chunk, start in enumerate(range(0, b, CHUNK_SIZE)):
        jobs.append((seed, chunk, min(CHUNK_SIZE, b - start), cumulative, times))

    draws = map_chunks(_draw_chunk, jobs, threads)
    subject = np.concatenate([d[0] for d in draws])
    moment = np.concatenate([d[1] for d in draws])

    source = dataset.frame
    covariates = dataset.covariate_names

    base = pd.DataFrame(
        {
            ID: source[ID].to_numpy()[subject],
            MOMENT: moment,
            INDICATOR: np.zeros(b, dtype=int),
        }
    )

    cases = source[source[EVENT] > 0]
    case = pd.DataFrame(
        {
            ID: cases[ID].to_numpy(),
            MOMENT: cases[TIME].to_numpy(dtype=float),
            INDICATOR: cases[EVENT].to_numpy(dtype=int),
        }
    )

    for col in covariates:
        base[col] = source[col].to_numpy()[subject]
        case[col] = cases[col].to_numpy()

    frame = pd.concat([case, base], ignore_index=True)
    frame.insert(3, OFFSET, np.full(len(frame), offset))

    meta = SamplingMeta(
        B=B, b=b, ratio=float(ratio), seed=int(seed), tau=dataset.tau, n_causes=dataset.n_causes
    )
    Logger.info("SAMPLE", f"events={n_events} b={b} B={B!r} offset={offset!r} seed={seed}")

    return PersonMomentTable(frame, meta, dict(dataset.levels), dict(dataset.reference_levels))


def annotate_moments(
    table: PersonMomentTable, name: str, rule: Callable[[str, float, dict], float]
) -> PersonMomentTable:
    """
    Appends a covariate computed per row from (subject_id, moment_time,
    covariates), e.g. a time-dependent exposure defined after sampling.
    """
    if name in table.frame.columns:
        raise DataError(f"column {name} already exists")

    covariates = table.covariate_names
    if covariates:
        records = table.frame[covariates].to_dict("records")
    else:
        records = [{} for _ in range(len(table.frame))]
    ids = table.frame[ID].to_numpy()
    moments = table.moment_times

    values = []
    for i, (sid, t, cov) in enumerate(zip(ids, moments, records)):
        try:
            values.append(rule(sid, float(t), cov))
        except Exception as e:
            raise DataError(f"annotation rule failed on row {i}: {e}") from e

    frame = table.frame.copy()
    frame[name] = values
    return PersonMomentTable(frame, table.meta, table.levels, table.reference_levels)
