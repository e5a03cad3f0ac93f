import numpy as np
import pandas as pd
import pytest

from cbsurv.dataset import ColumnSchema, SurvivalDataset, load_dataset
from cbsurv.errors import DataError
from cbsurv.model import FitStats, HazardModel
from cbsurv.design import ModelSpec
from cbsurv.risk import cif_single
from cbsurv.sampling import sample_base_series
from cbsurv.vis import PlotStyle, plot_hazard_ratio, plot_risk, poptime_layout, render_svg

SCHEMA = ColumnSchema("time", "status", "id")


@pytest.fixture
def three():
    frame = pd.DataFrame({"followup_time": [3.0, 1.0, 2.0], "event_type": [0, 0, 1]})
    return SurvivalDataset.from_frame(frame)


def test_three_subjects(three):
    layout = poptime_layout(three, seed=1)
    area = layout.strata[0]

    assert layout.labels() == ["all"]
    np.testing.assert_array_equal(area.times, [3.0, 2.0, 1.0])
    assert area.subject_ids == ["1", "3", "2"]
    assert area.area() == pytest.approx(6.0)
    assert area.area() == pytest.approx(area.person_time)

    # One case point, at the event time and below the two still at risk
    assert len(layout.case_points) == 1
    assert layout.case_points["time"][0] == 2.0
    assert 0 <= layout.case_points["y"][0] < 2
    assert len(layout.base_points) == 0


def test_at_risk(three):
    area = poptime_layout(three).strata[0]
    np.testing.assert_array_equal(area.at_risk([0.0, 1.0, 1.5, 2.0, 3.0, 3.5]), [3, 3, 2, 2, 1, 0])


def test_strata():
    dataset = load_dataset("test/sample.csv", SCHEMA)
    layout = poptime_layout(dataset, exposure="arm")

    assert layout.labels() == ["control", "treated"]
    assert [s.n_subjects for s in layout.strata] == [4, 4]
    assert sum(s.area() for s in layout.strata) == pytest.approx(18.0)
    assert len(layout.case_points) == 4

    with pytest.raises(DataError, match="categorical"):
        poptime_layout(dataset, exposure="age")
    with pytest.raises(DataError, match="not in dataset"):
        poptime_layout(dataset, exposure="weight")


def test_base_points():
    dataset = load_dataset("test/sample.csv", SCHEMA)
    table = sample_base_series(dataset, ratio=5, seed=2)
    layout = poptime_layout(dataset, exposure="arm", base=table)

    assert len(layout.base_points) == len(table.base_series)
    assert layout.base_points["y"].min() > 0
    assert layout.base_points["y"].max() < 4

    frame = layout.to_frame()
    assert list(frame.columns) == ["stratum", "series", "time", "y", "cause"]
    assert (frame["series"] == "base").sum() == len(table.base_series)
    assert (frame["series"] == "case").sum() == 4


def test_svg_deterministic(three):
    a = render_svg(poptime_layout(three, seed=3))
    b = render_svg(poptime_layout(three, seed=3))

    assert a == b
    assert b"case-points" in a
    assert b"base-points" not in a

    other = render_svg(poptime_layout(three, seed=3), PlotStyle(salt="other"))
    assert other != a


def test_curve_plots():
    spec = ModelSpec()
    fit = FitStats(0.0, 0.0, 0.0, 1, True, 0.0, 1)
    model = HazardModel(np.array([[-1.0]]), None, spec, 0.0, fit, spec.column_names)
    curve = cif_single(model, {}, np.linspace(0, 3, 7))

    assert plot_risk(curve).startswith(b"<?xml")

    frame = pd.DataFrame(
        {"time": [0.0, 1.0], "hr": [1.0, 1.2], "lower": [0.8, 0.9], "upper": [1.3, 1.6]}
    )
    assert b"</svg>" in plot_hazard_ratio(frame)


def test_golden_layout():
    dataset = load_dataset("test/sample.csv", SCHEMA)
    frame = poptime_layout(dataset, exposure="arm", seed=5).to_frame()
    golden = pd.read_csv("test/poptime_golden.csv")

    assert list(frame.columns) == list(golden.columns)
    assert len(frame) == len(golden)
    assert frame["stratum"].tolist() == golden["stratum"].tolist()
    assert frame["series"].tolist() == golden["series"].tolist()
    np.testing.assert_array_equal(frame["time"], golden["time"])
    np.testing.assert_array_equal(frame["cause"], golden["cause"])

    area = (golden["series"] == "area").to_numpy()
    np.testing.assert_array_equal(frame["y"][area], golden["y"][area])

    # Case rows hold the at-risk height that bounds the jitter
    y = frame["y"][~area].to_numpy()
    assert np.all(y >= 0)
    assert np.all(y < golden["y"][~area].to_numpy())
