import numpy as np
import pandas as pd
import pytest

from cbsurv.dataset import ColumnSchema, SurvivalDataset, load_dataset, write_table
from cbsurv.errors import DataError

SCHEMA = ColumnSchema("time", "status", "id")


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_sample():
    dataset = load_dataset("test/sample.csv", SCHEMA)

    assert len(dataset) == 8
    assert dataset.n_causes == 1
    assert dataset.tau == 4.0
    assert dataset.n_events() == 4

    # Strings are categorical, numbers stay numeric
    assert dataset.levels == {"arm": ["control", "treated"]}
    assert dataset.reference_levels == {"arm": "control"}
    assert dataset.frame["age"].dtype == float
    assert list(dataset.subject_ids[:2]) == ["a", "b"]


def test_three_rows(tmp_path):
    path = write(tmp_path, "followup_time,event_type\n1,0\n2,1\n3,0\n")
    dataset = load_dataset(path)

    assert dataset.n_causes == 1
    assert dataset.tau == 3.0
    assert list(dataset.subject_ids) == ["1", "2", "3"]
    np.testing.assert_array_equal(dataset.times, [1.0, 2.0, 3.0])


def test_competing_causes():
    dataset = load_dataset("test/competing.csv", SCHEMA)
    assert dataset.n_causes == 2
    assert dataset.n_events(1) == 2
    assert dataset.n_events(2) == 2


def test_non_positive_followup(tmp_path):
    path = write(tmp_path, "followup_time,event_type\n1,1\n-1,0\n")
    with pytest.raises(DataError, match="non-positive follow-up"):
        load_dataset(path)


def test_validation_errors(tmp_path):
    cases = [
        ("followup_time,status\n1,1\n", "missing column"),
        ("followup_time,event_type\n1,1\nabc,0\n", "non-numeric time"),
        ("followup_time,event_type,x\n1,1,2\n2,0,\n", "missing cell"),
        ("followup_time,event_type\n1,0\n2,0\n", "at least one event"),
        ("followup_time,event_type\n1,1.5\n", "non-negative integers"),
    ]
    for k, (text, message) in enumerate(cases):
        path = write(tmp_path, text, f"bad{k}.csv")
        with pytest.raises(DataError, match=message):
            load_dataset(path)


def test_event_outside_causes(tmp_path):
    path = write(tmp_path, "followup_time,event_type\n1,2\n2,1\n")
    with pytest.raises(DataError, match="outside"):
        load_dataset(path, n_causes=1)


def test_tau():
    with pytest.raises(DataError, match="exceeds tau"):
        load_dataset("test/sample.csv", SCHEMA, tau=3.0)

    # An event exactly at tau is an observed event
    dataset = load_dataset("test/sample.csv", SCHEMA, tau=4.0)
    assert dataset.events[dataset.times == 4.0][0] == 1


def test_reference_level():
    schema = ColumnSchema("time", "status", "id", {"arm"}, {"arm": "treated"})
    assert load_dataset("test/sample.csv", schema).reference_levels["arm"] == "treated"

    schema = ColumnSchema("time", "status", "id", {"arm"}, {"arm": "placebo"})
    with pytest.raises(DataError, match="not observed"):
        load_dataset("test/sample.csv", schema)


def test_schema_columns_distinct():
    with pytest.raises(DataError):
        ColumnSchema("time", "time")


def test_missing_file():
    with pytest.raises(DataError, match="no such file"):
        load_dataset("test/does_not_exist.csv")


def test_write_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    write_table(pd.DataFrame(columns=["a", "b"]), path)

    with open(path) as f:
        assert f.read() == "a,b\n"


def test_round_trip(tmp_path):
    dataset = load_dataset("test/sample.csv", SCHEMA)

    # Reals that do not survive a short decimal representation
    frame = dataset.frame.copy()
    frame["age"] = frame["age"] / 3.0
    dataset = SurvivalDataset(frame, 1, 4.0, dataset.levels, dataset.reference_levels)

    path = str(tmp_path / "round.csv")
    write_table(dataset, path)
    loaded = load_dataset(path, dataset.schema())

    pd.testing.assert_frame_equal(loaded.frame, dataset.frame)
    assert loaded.tau == dataset.tau


def test_tab_separated(tmp_path):
    path = write(tmp_path, "followup_time\tevent_type\n1\t1\n2\t0\n", "data.tsv")
    dataset = load_dataset(path, sep="\t")
    assert len(dataset) == 2


def test_unwritable(tmp_path):
    with pytest.raises(DataError, match="cannot write"):
        write_table(pd.DataFrame({"a": [1]}), str(tmp_path / "missing" / "out.csv"))
