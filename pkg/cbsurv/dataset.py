"""
Survival datasets and delimited-text tables.

A SurvivalDataset is always held with canonical column names, whatever the
source file called them: subject_id, followup_time, event_type, then the
covariates in file order. Event code 0 means censored, 1..J are causes.
"""

import os
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional

import numpy as np
import pandas as pd

from cbsurv.errors import DataError

ID = "subject_id"
TIME = "followup_time"
EVENT = "event_type"

FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class ColumnSchema:
    """Maps the columns of a source file onto the dataset fields"""

    time_column: str = TIME
    event_column: str = EVENT
    id_column: Optional[str] = None
    categorical_columns: FrozenSet[str] = frozenset()
    reference_levels: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.time_column == self.event_column:
            raise DataError("time and event columns must be distinct")

        object.__setattr__(self, "categorical_columns", frozenset(self.categorical_columns))

        for name in self.reference_levels:
            if name not in self.categorical_columns:
                raise DataError(f"reference level given for non-categorical column {name}")

    @classmethod
    def canonical(cls, categorical_columns=(), reference_levels=None):
        """Schema of a file written by `write_table` from a dataset"""
        return cls(TIME, EVENT, ID, frozenset(categorical_columns), dict(reference_levels or {}))


@dataclass(frozen=True)
class SurvivalDataset:

    frame: pd.DataFrame
    n_causes: int
    tau: float
    levels: Dict[str, List[str]] = field(default_factory=dict)
    reference_levels: Dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.frame)

    @property
    def times(self) -> np.ndarray:
        return self.frame[TIME].to_numpy(dtype=float)

    @property
    def events(self) -> np.ndarray:
        return self.frame[EVENT].to_numpy(dtype=int)

    @property
    def subject_ids(self) -> np.ndarray:
        return self.frame[ID].to_numpy()

    @property
    def covariate_names(self) -> List[str]:
        return [c for c in self.frame.columns if c not in (ID, TIME, EVENT)]

    @property
    def categorical_columns(self) -> List[str]:
        return list(self.levels.keys())

    def n_events(self, cause=None) -> int:
        if cause is None:
            return int(np.sum(self.events > 0))
        return int(np.sum(self.events == cause))

    def schema(self) -> ColumnSchema:
        return ColumnSchema.canonical(self.levels.keys(), self.reference_levels)

    @classmethod
    def from_frame(cls, raw, schema=None, n_causes=None, tau=None):
        """
        Validates a raw frame and returns the dataset.

        Every problem raises a DataError before anything is built.
        """
        schema = schema or ColumnSchema()
        if schema.id_column is None and ID in raw.columns:
            schema = replace(schema, id_column=ID)

        for col in [schema.time_column, schema.event_column, schema.id_column]:
            if col is not None and col not in raw.columns:
                raise DataError(f"missing column {col}")

        for col in schema.categorical_columns:
            if col not in raw.columns:
                raise DataError(f"missing column {col}")

        if len(raw) == 0:
            raise DataError("dataset has no rows")

        missing = raw.isna()
        if missing.values.any():
            col = raw.columns[np.argmax(missing.values.any(axis=0))]
            row = int(np.argmax(missing[col].values))
            raise DataError(f"missing cell in column {col} row {row}")

        times = pd.to_numeric(raw[schema.time_column], errors="coerce")
        if times.isna().any():
            row = int(np.argmax(times.isna().values))
            raise DataError(f"non-numeric time in row {row}")
        times = times.to_numpy(dtype=float)

        if not np.all(np.isfinite(times)):
            raise DataError("non-finite follow-up time")

        if np.any(times <= 0):
            row = int(np.argmax(times <= 0))
            raise DataError(f"non-positive follow-up in row {row}")

        events = pd.to_numeric(raw[schema.event_column], errors="coerce").to_numpy(dtype=float)
        if np.any(np.isnan(events)) or np.any(events != np.round(events)) or np.any(events < 0):
            raise DataError("event codes must be non-negative integers")
        events = events.astype(int)

        n_causes = int(events.max()) if n_causes is None else int(n_causes)
        if n_causes < 1:
            raise DataError("dataset needs at least one event")
        if events.max() > n_causes:
            raise DataError(f"event code {events.max()} outside 0..{n_causes}")
        if not np.any(events > 0):
            raise DataError("dataset needs at least one event")

        tau = float(times.max()) if tau is None else float(tau)
        if tau <= 0:
            raise DataError("tau must be positive")
        if np.any(times > tau):
            raise DataError(f"follow-up time exceeds tau = {tau}")

        if schema.id_column is None:
            ids = [str(i + 1) for i in range(len(raw))]
        else:
            ids = raw[schema.id_column].astype(str).to_list()

        frame = pd.DataFrame({ID: ids, TIME: times, EVENT: events})

        levels = {}
        reference = {}
        skip = {schema.time_column, schema.event_column, schema.id_column}
        for col in raw.columns:
            if col in skip:
                continue

            values = raw[col]
            categorical = col in schema.categorical_columns or not pd.api.types.is_numeric_dtype(values)

            if categorical:
                values = values.astype(str)
                observed = sorted(values.unique())
                ref = schema.reference_levels.get(col, observed[0])
                if ref not in observed:
                    raise DataError(f"reference level {ref} not observed in column {col}")
                levels[col] = observed
                reference[col] = ref
                frame[col] = values.to_numpy()
            else:
                frame[col] = values.to_numpy(dtype=float)

        return cls(frame, n_causes, tau, levels, reference)

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()


def read_table(path, sep=",", id_column=ID) -> pd.DataFrame:
    """Reads a delimited table, keeping every real exactly as written"""
    if not os.path.exists(path):
        raise DataError(f"no such file {path}")

    try:
        return pd.read_csv(
            path, sep=sep, float_precision="round_trip", dtype={id_column: str}
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {path}: {e}") from e


def load_dataset(path, schema=None, n_causes=None, tau=None, sep=",") -> SurvivalDataset:
    schema = schema or ColumnSchema()
    raw = read_table(path, sep=sep, id_column=schema.id_column or ID)
    return SurvivalDataset.from_frame(raw, schema, n_causes=n_causes, tau=tau)


def write_table(rows, path, sep=","):
    """
    Writes any frame-like object as delimited text with a header.

    Reals get 17 significant digits so a read gives back the same doubles.
    Columns keep the order of the frame.
    """
    if hasattr(rows, "to_frame") and not isinstance(rows, pd.DataFrame):
        rows = rows.to_frame()

    if not isinstance(rows, pd.DataFrame):
        rows = pd.DataFrame(rows)

    try:
        rows.to_csv(path, sep=sep, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
