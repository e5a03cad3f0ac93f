"""
Population-time plots and curve plots, rendered to SVG with matplotlib.

In a population-time plot every subject is a horizontal strip one unit
high and as long as its follow-up. Strips are stacked with the longest
follow-up at the bottom, so the gray area is the person-time of the
stratum and the number of strips above a time t is the number at risk.
"""

import io
from dataclasses import dataclass
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from cbsurv.dataset import EVENT, ID, TIME, SurvivalDataset
from cbsurv.errors import DataError
from cbsurv.sampling import MOMENT, PersonMomentTable
from cbsurv.utils import JITTER_STREAM, make_rng

ALL = "all"


@dataclass(frozen=True)
class PlotStyle:

    area_color: str = "0.85"
    case_color: str = "firebrick"
    base_color: str = "steelblue"
    point_size: float = 4.0
    width: float = 6.0
    height: float = 4.0
    salt: str = "cbsurv"


@dataclass(frozen=True)
class StratumArea:
    """
    Step boundary of a stratum, from (0, 0) right along the bottom strip,
    up every strip edge and back to (0, n).
    """

    label: str
    polyline: np.ndarray
    times: np.ndarray
    subject_ids: List[str]

    @property
    def n_subjects(self) -> int:
        return len(self.times)

    @property
    def person_time(self) -> float:
        return float(np.sum(self.times))

    def area(self) -> float:
        x, y = self.polyline[:, 0], self.polyline[:, 1]
        return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def at_risk(self, t) -> np.ndarray:
        """Subjects still followed at t, i.e. the height of the area at t"""
        ordered = self.times[::-1]
        return len(ordered) - np.searchsorted(ordered, np.asarray(t, dtype=float), side="left")


@dataclass(frozen=True)
class PopTimeLayout:

    strata: List[StratumArea]
    case_points: pd.DataFrame
    base_points: pd.DataFrame
    exposure: Optional[str] = None
    seed: int = 0

    def labels(self) -> List[str]:
        return [s.label for s in self.strata]

    def to_frame(self) -> pd.DataFrame:
        """Area vertices, case points and base points in one long table"""
        parts = []
        for s in self.strata:
            parts.append(
                pd.DataFrame(
                    {
                        "stratum": s.label,
                        "series": "area",
                        "time": s.polyline[:, 0],
                        "y": s.polyline[:, 1],
                        "cause": 0,
                    }
                )
            )

        case = self.case_points.assign(series="case")
        base = self.base_points.assign(series="base", cause=0)
        columns = ["stratum", "series", "time", "y", "cause"]
        return pd.concat(parts + [case[columns], base[columns]], ignore_index=True)


def _stratum_area(label, frame) -> StratumArea:
    order = np.argsort(-frame[TIME].to_numpy(dtype=float), kind="stable")
    times = frame[TIME].to_numpy(dtype=float)[order]
    ids = frame[ID].to_numpy()[order].tolist()

    n = len(times)
    steps = np.empty((2 * n, 2))
    steps[0::2, 0] = times
    steps[0::2, 1] = np.arange(n)
    steps[1::2, 0] = times
    steps[1::2, 1] = np.arange(1, n + 1)

    polyline = np.vstack([[0.0, 0.0], steps, [0.0, float(n)]])
    return StratumArea(label, polyline, times, ids)


def _strata(dataset, exposure):
    frame = dataset.frame
    if exposure is None:
        return [(ALL, frame)]

    if exposure not in frame.columns:
        raise DataError(f"exposure {exposure} not in dataset")
    if exposure not in dataset.levels:
        raise DataError(f"exposure {exposure} must be categorical")

    return [(lvl, frame[frame[exposure] == lvl]) for lvl in dataset.levels[exposure]]


def poptime_layout(
    dataset: SurvivalDataset,
    exposure: Optional[str] = None,
    base: Optional[PersonMomentTable] = None,
    seed: int = 0,
) -> PopTimeLayout:
    """
    Case points sit at the event time with a height drawn uniformly below
    the number at risk. Base points sit in the middle of their subject's
    strip.
    """
    rng = make_rng(seed, JITTER_STREAM)

    strata, cases, bases = [], [], []
    for label, frame in _strata(dataset, exposure):
        area = _stratum_area(label, frame)
        strata.append(area)

        events = frame[frame[EVENT] > 0]
        t = events[TIME].to_numpy(dtype=float)
        height = area.at_risk(t)
        cases.append(
            pd.DataFrame(
                {
                    "stratum": label,
                    "subject_id": events[ID].to_numpy(),
                    "time": t,
                    "y": rng.random(len(t)) * height,
                    "cause": events[EVENT].to_numpy(dtype=int),
                }
            )
        )

        if base is not None:
            rank = {sid: k for k, sid in enumerate(area.subject_ids)}
            rows = base.base_series
            rows = rows[rows[ID].isin(rank.keys())]
            bases.append(
                pd.DataFrame(
                    {
                        "stratum": label,
                        "subject_id": rows[ID].to_numpy(),
                        "time": rows[MOMENT].to_numpy(dtype=float),
                        "y": np.array([rank[s] for s in rows[ID]], dtype=float) + 0.5,
                    }
                )
            )

    empty = pd.DataFrame({"stratum": [], "subject_id": [], "time": [], "y": []})
    return PopTimeLayout(
        strata=strata,
        case_points=pd.concat(cases, ignore_index=True),
        base_points=pd.concat(bases, ignore_index=True) if bases else empty,
        exposure=exposure,
        seed=seed,
    )


def _to_svg(fig, style) -> bytes:
    buffer = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": style.salt, "svg.fonttype": "none"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


def draw_stratum(ax, area, cases, bases, style):
    ax.fill(area.polyline[:, 0], area.polyline[:, 1], color=style.area_color, lw=0)

    if len(bases):
        points = ax.scatter(bases["time"], bases["y"], s=style.point_size, color=style.base_color, lw=0)
        points.set_gid("base-points")

    if len(cases):
        points = ax.scatter(cases["time"], cases["y"], s=style.point_size, color=style.case_color, lw=0)
        points.set_gid("case-points")

    ax.set_title(area.label)
    ax.set_xlabel("Follow-up time")
    ax.set_ylim(0, max(area.n_subjects, 1))


def render_svg(layout: PopTimeLayout, style: PlotStyle = None) -> bytes:
    """Byte-identical output for identical layout and style"""
    style = style or PlotStyle()
    k = len(layout.strata)

    with matplotlib.rc_context({"svg.hashsalt": style.salt}):
        fig, axes = plt.subplots(1, k, figsize=(style.width * k, style.height), squeeze=False)
        for ax, area in zip(axes[0], layout.strata):
            cases = layout.case_points[layout.case_points["stratum"] == area.label]
            bases = layout.base_points[layout.base_points["stratum"] == area.label]
            draw_stratum(ax, area, cases, bases, style)
        axes[0][0].set_ylabel("Population")

    return _to_svg(fig, style)


def plot_risk(curve, style: PlotStyle = None) -> bytes:
    """One line per profile and cause"""
    style = style or PlotStyle()
    fig, ax = plt.subplots(1, 1, figsize=(style.width, style.height))

    frame = curve.to_frame()
    for name in frame.columns[1:]:
        ax.plot(frame["time"], frame[name], label=name, drawstyle="default")

    ax.set_xlabel("Follow-up time")
    ax.set_ylabel("Cumulative incidence")
    ax.set_ylim(0, 1)
    ax.legend(loc="upper left")
    return _to_svg(fig, style)


def plot_hazard_ratio(frame: pd.DataFrame, style: PlotStyle = None) -> bytes:
    """Hazard ratio over time with its pointwise band, on a log scale"""
    style = style or PlotStyle()
    fig, ax = plt.subplots(1, 1, figsize=(style.width, style.height))

    ax.fill_between(frame["time"], frame["lower"], frame["upper"], color=style.area_color, lw=0)
    ax.plot(frame["time"], frame["hr"], color="black")
    ax.axhline(1.0, color="0.5", ls="--", lw=0.8)

    ax.set_yscale("log")
    ax.set_xlabel("Follow-up time")
    ax.set_ylabel("Hazard ratio")
    return _to_svg(fig, style)
