import numpy as np
import pandas as pd
import pytest

from cbsurv.dataset import SurvivalDataset
from cbsurv.errors import DataError
from cbsurv.fit import fit_smooth_hazard
from cbsurv.rep import spec_from_str
from cbsurv.simulate import (
    Bernoulli,
    Exponential,
    Gompertz,
    Normal,
    TruthSpec,
    Weibull,
    exponential_mle,
    simulate_dataset,
    simulate_frame,
    weibull_truth_coefficients,
)


def test_frame_layout():
    spec = TruthSpec([Exponential(0.1, {"trt": -0.5})], {"trt": Bernoulli(), "age": Normal(50, 10)}, n=50)
    frame = simulate_frame(spec)

    # Check the columns
    assert list(frame.columns) == ["subject_id", "followup_time", "event_type", "trt", "age"]
    assert frame["subject_id"].tolist()[:3] == ["1", "2", "3"]
    assert set(frame["trt"].unique()) <= {0.0, 1.0}

    # Follow-up never exceeds tau
    assert frame["followup_time"].max() <= spec.tau
    censored = frame[frame["event_type"] == 0]
    np.testing.assert_array_equal(censored["followup_time"], spec.tau)


def test_exponential_mean():
    dataset = simulate_dataset(TruthSpec([Exponential(0.5)], tau=1000.0, n=20000, seed=1))

    assert dataset.n_events() == 20000
    assert abs(dataset.times.mean() - 2.0) < 0.05


def test_competing_share():
    truth = TruthSpec([Exponential(0.2), Exponential(0.1)], tau=1000.0, n=20000, seed=2)
    dataset = simulate_dataset(truth)

    assert dataset.n_causes == 2
    assert abs(dataset.n_events(1) / len(dataset) - 2 / 3) < 0.015


def test_censoring():
    truth = TruthSpec([Exponential(0.1)], tau=1000.0, censoring_rate=0.1, n=20000, seed=3)
    dataset = simulate_dataset(truth)

    # Equal rates, so about half the subjects are censored
    assert abs(dataset.n_events() / len(dataset) - 0.5) < 0.015


def test_split_invariance():
    spec = TruthSpec([Gompertz(-2.0, 0.1)], {"x": Normal()}, n=10000, seed=4)
    pd.testing.assert_frame_equal(simulate_frame(spec, threads=1), simulate_frame(spec, threads=4))


def test_families():
    h = np.array([0.0, 0.5, 3.0])
    for family in (Exponential(0.3), Gompertz(-1.0, 0.4), Gompertz(-1.0, 0.0), Weibull(1.5, 2.0)):
        t = family.inverse_cumulative_hazard(h)
        np.testing.assert_allclose(family.cumulative_hazard(t), h, atol=1e-12)

    # A falling Gompertz hazard has a finite total
    t = Gompertz(0.0, -1.0).inverse_cumulative_hazard(np.array([0.5, 2.0]))
    assert t[0] == pytest.approx(np.log(2.0))
    assert t[1] == np.inf

    np.testing.assert_allclose(Weibull(1.0, 4.0).hazard([1.0, 2.0]), 0.25)


def test_truth_errors():
    with pytest.raises(DataError, match="tau"):
        TruthSpec([Exponential(0.1)], tau=0.0)
    with pytest.raises(DataError, match="unknown covariate"):
        TruthSpec([Exponential(0.1, {"trt": 1.0})])
    with pytest.raises(DataError):
        TruthSpec([])
    with pytest.raises(DataError):
        Exponential(-1.0)
    with pytest.raises(DataError):
        Weibull(0.0, 1.0)


def test_truth_to_dict():
    truth = TruthSpec([Weibull(2.0, 1.0)], {"x": Bernoulli(0.3)}, tau=5.0, n=10)
    doc = truth.to_dict()

    assert doc["causes"] == [{"family": "Weibull", "shape": 2.0, "scale": 1.0, "effects": {}}]
    assert doc["covariates"] == {"x": {"sampler": "Bernoulli", "p": 0.3}}
    assert doc["tau"] == 5.0


def test_weibull_truth_coefficients():
    assert weibull_truth_coefficients(1.0, 1.0) == (0.0, 0.0)

    intercept, slope = weibull_truth_coefficients(2.0, 1.0)
    assert intercept == pytest.approx(np.log(2.0))
    assert slope == 1.0


def test_exponential_mle():
    frame = pd.DataFrame({"followup_time": [5.0] * 20, "event_type": [1] * 10 + [0] * 10})
    mle = exponential_mle(SurvivalDataset.from_frame(frame))

    assert mle.rate == pytest.approx(0.1)
    assert mle.se_log_rate == pytest.approx(1 / np.sqrt(10))
    assert mle.person_time == 100.0


@pytest.mark.slow
def test_weibull_recovery():
    dataset = simulate_dataset(TruthSpec([Weibull(2.0, 1.0)], tau=3.0, n=2000, seed=5))
    model = fit_smooth_hazard(dataset, spec_from_str("time=log"), ratio=50, seed=6)

    intercept, slope = weibull_truth_coefficients(2.0, 1.0)
    assert abs(model.coefficients[0, 0] - intercept) < 0.15
    assert abs(model.coefficients[0, 1] - slope) < 0.15
