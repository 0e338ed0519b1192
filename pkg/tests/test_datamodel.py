import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsieve.datamodel import (Dataset, ThresholdSpec, aggregate_sequences, naive_bins,
                                 read_csv, validate_dataset, write_csv)
from deepsieve.errors import DatasetValidationError, DomainError, EmptySequenceSet

COLUMNS = ["id", "arm", "stratum", "time", "event", "k", "m", "sequenced", "x1"]


def row(**kw):
    base = dict(id="r1", arm="1", stratum="1", time="2.0", event="1", k="1", m="5",
                sequenced="1", x1="0")
    base.update({k: str(v) for k, v in kw.items()})
    return base


@pytest.mark.parametrize("marks, expected", [
    ([0, 0, 0, 0, 1], (1, 5)),
    ([0, 0, 0, 0, 0], (0, 5)),
    ([1, 1], (2, 2)),
])
def test_aggregate_examples(marks, expected):
    assert aggregate_sequences(marks) == expected


def test_aggregate_empty():
    with pytest.raises(EmptySequenceSet):
        aggregate_sequences([])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.randoms())
def test_aggregate_permutation_invariant(marks, rnd):
    shuffled = list(marks)
    rnd.shuffle(shuffled)
    k, m = aggregate_sequences(marks)
    assert (k, m) == aggregate_sequences(shuffled)
    assert 0 <= k <= m == len(marks)


def test_nonpositive_time_reported():
    with pytest.raises(DatasetValidationError) as err:
        validate_dataset([row(time=0)], COLUMNS)
    assert ("r1", "nonpositive time") in err.value.problems


def test_k_exceeds_m_reported():
    with pytest.raises(DatasetValidationError) as err:
        validate_dataset([row(k=7, m=5)], COLUMNS)
    assert ("r1", "K exceeds M") in err.value.problems


def test_every_violation_listed_with_row_id():
    rows = [row(id="a", time=-1), row(id="b", arm=3), row(id="c", k="", m=""),
            row(id="d", event=0), row(id="e")]
    with pytest.raises(DatasetValidationError) as err:
        validate_dataset(rows, COLUMNS)
    ids = {rid for rid, _ in err.value.problems}
    assert ids == {"a", "b", "c", "d"}
    problems = set(err.value.problems)
    assert ("b", "unknown arm code '3'") in problems
    assert ("c", "missing k/m for a sequenced event") in problems
    assert ("d", "marks present for a non-event") in problems


def test_missing_column():
    with pytest.raises(DatasetValidationError) as err:
        validate_dataset([{c: "1" for c in COLUMNS if c != "m"}],
                         [c for c in COLUMNS if c != "m"])
    assert ("header", "missing column m") in err.value.problems


def test_toy_file_loads(toy_path):
    ds = read_csv(toy_path)
    assert ds.n == 10 and ds.p == 1 and ds.L == 1
    assert ds.event.all() and ds.sequenced.all()
    assert list(ds.k) == [0] * 5 + [1] * 5
    assert set(ds.m) == {5}


def test_long_format_marks_match_wide(toy_path, toy_marks_path):
    wide = read_csv(toy_path)
    long = read_csv(toy_path, toy_marks_path)
    np.testing.assert_array_equal(wide.k, long.k)
    np.testing.assert_array_equal(wide.m, long.m)


def test_unsequenced_event_kept_without_marks():
    ds = validate_dataset([row(), row(id="r2", k="", m="", sequenced=0)], COLUMNS)
    assert ds.event.all()
    assert list(ds.has_marks) == [True, False]
    assert ds.k[1] == -1 and ds.m[1] == -1


def test_strata_relabelled_densely():
    rows = [row(id=str(i), stratum=s) for i, s in enumerate(["7", "3", "7", "10"])]
    ds = validate_dataset(rows, COLUMNS)
    assert ds.L == 3
    assert ds.stratum_labels == ("3", "7", "10")
    assert [ds.stratum_labels[c] for c in ds.stratum] == ["7", "3", "7", "10"]


def test_round_trip(tmp_path, toy_path):
    ds = read_csv(toy_path)
    write_csv(ds, tmp_path / "out.csv")
    again = read_csv(tmp_path / "out.csv")
    np.testing.assert_array_equal(ds.time, again.time)
    np.testing.assert_array_equal(ds.k, again.k)
    np.testing.assert_array_equal(ds.covariates, again.covariates)


def test_dataset_is_read_only(toy_path):
    ds = read_csv(toy_path)
    with pytest.raises(ValueError):
        ds.time[0] = 5.0


row_strategy = st.fixed_dictionaries({
    "arm": st.sampled_from(["0", "1", "2"]),
    "time": st.sampled_from(["1.5", "0", "-2", "3"]),
    "event": st.sampled_from(["0", "1"]),
    "k": st.sampled_from(["", "0", "3", "9"]),
    "m": st.sampled_from(["", "5", "10"]),
    "sequenced": st.sampled_from(["0", "1"]),
})


def _row_is_valid(r):
    if r["arm"] not in ("0", "1") or float(r["time"]) <= 0:
        return False
    has = r["k"] != "" or r["m"] != ""
    if r["event"] == "0":
        return not has and r["sequenced"] == "0"
    if r["sequenced"] == "1":
        return r["k"] != "" and r["m"] != "" and int(r["k"]) <= int(r["m"])
    return not has


@given(st.lists(row_strategy, min_size=1, max_size=8), st.randoms())
def test_validation_accepts_exactly_valid_rows(raw, rnd):
    rows = [dict(r, id=f"s{i}", stratum="1", x1="0.5") for i, r in enumerate(raw)]
    expected_bad = {r["id"] for r in rows if not _row_is_valid(r)}
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    for order in (rows, shuffled):
        if expected_bad:
            with pytest.raises(DatasetValidationError) as err:
                validate_dataset(order, COLUMNS)
            assert {rid for rid, _ in err.value.problems} == expected_bad
        else:
            assert validate_dataset(order, COLUMNS).n == len(rows)


@pytest.mark.parametrize("cuts", [(0, 1), (0.1, 0.5, 1), (0, 0.5, 0.4, 1), (0, 0.5, 0.5, 1)])
def test_threshold_rejects_bad_cutpoints(cuts):
    with pytest.raises(DomainError):
        ThresholdSpec(cuts)


@pytest.mark.parametrize("cutoff", [0.0, 1.0, -0.2, 1.5])
def test_binary_cutoff_must_be_interior(cutoff):
    with pytest.raises(DomainError):
        ThresholdSpec.binary(cutoff)


def test_bin_edges():
    two = ThresholdSpec.binary(0.2)
    assert list(two.bin_index([0.0, 0.19, 0.2, 1.0])) == [0, 0, 1, 1]
    three = ThresholdSpec((0, 0.01, 0.99, 1))
    # an interior edge belongs to the bin below, except the top bin's edge
    assert list(three.bin_index([0.005, 0.01, 0.5, 0.99, 1.0])) == [0, 0, 1, 2, 2]


def test_naive_bins():
    bins = naive_bins([0, 1, 2, 0], [5, 5, 4, 0], ThresholdSpec.binary(0.5))
    assert list(bins) == [0, 0, 1, -1]


def test_from_arrays_masks_marks_of_non_events():
    ds = Dataset.from_arrays(arm=[0, 1], time=[1.0, 2.0], event=[True, False],
                             k=[1, 2], m=[3, 4])
    assert list(ds.k) == [1, -1]
    assert list(ds.sequenced) == [True, False]
