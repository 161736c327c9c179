import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqpv.errors import DegenerateDataError
from diqpv.trialdata import (
    CountsTable,
    FIELD_NAMES,
    JointSettingsDistribution,
    TrialRecord,
    aggregate_counts,
    export_counts_csv,
    match_frequencies,
    pack_records,
    read_counts_csv,
    read_trial_codes,
    read_trial_header,
    read_trials,
    settings_weights,
    unpack_codes,
    write_trials,
)

from golden import REFERENCE_COUNTS, reference_counts_table

records_strategy = st.lists(
    st.tuples(*[st.integers(1, 2) for _ in range(5)]), max_size=200
)


def test_record_validation():
    TrialRecord(1, 2, 1, 2, 1)
    with pytest.raises(ValueError):
        TrialRecord(0, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        TrialRecord(1, 1, 3, 1, 1)


def test_packing_literals():
    assert pack_records([(1, 1, 1, 1, 1)])[0] == 0b00000
    assert pack_records([(2, 1, 2, 1, 2)])[0] == 0b10101
    assert pack_records([(2, 2, 2, 2, 2)])[0] == 0b11111
    assert unpack_codes(np.array([0b10101], dtype=np.uint8)).tolist() == [[2, 1, 2, 1, 2]]


def test_file_header_bytes(tmp_path):
    path = tmp_path / "t.qpvt"
    write_trials(path, [(1, 1, 1, 1, 1), (2, 1, 2, 1, 2)])
    raw = path.read_bytes()
    assert raw[:4] == b"QPVT"
    assert raw[4] == 1  # version
    assert raw[5] == 0  # flags
    assert int.from_bytes(raw[6:14], "little") == 2
    assert raw[14:] == bytes([0b00000, 0b10101])


def test_error_flag_round_trip(tmp_path):
    path = tmp_path / "e.qpvt"
    write_trials(path, [(1, 1, 1, 1, 1)], detector_error=True)
    _, err = read_trials(path)
    assert err is True
    assert read_trial_header(path) == (1, True)


@given(records_strategy)
@settings(max_examples=50, deadline=None)
def test_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("rt") / "r.qpvt"
    write_trials(path, records)
    out, err = read_trials(path)
    assert err is False
    assert out.tolist() == [list(r) for r in records]


def test_empty_file_round_trip(tmp_path):
    path = tmp_path / "empty.qpvt"
    write_trials(path, [])
    out, _ = read_trials(path)
    assert out.shape == (0, 5)
    assert aggregate_counts(np.zeros((0, 5), dtype=np.uint8)).total == 0


def test_large_round_trip(tmp_path):
    rng = np.random.Generator(np.random.Philox(key=7))
    codes = rng.integers(0, 32, size=1_000_000, endpoint=False).astype(np.uint8)
    path = tmp_path / "big.qpvt"
    write_trials(path, codes)
    back, _ = read_trial_codes(path)
    assert np.array_equal(back, codes)
    assert read_trial_codes(path, limit=1000)[0].tolist() == codes[:1000].tolist()


def test_truncated_and_bad_magic(tmp_path):
    path = tmp_path / "bad.qpvt"
    path.write_bytes(b"QPVT")
    with pytest.raises(ValueError):
        read_trials(path)
    path.write_bytes(b"XXXX" + bytes(10))
    with pytest.raises(ValueError):
        read_trials(path)


def test_aggregate_matches_bincount_and_is_permutation_invariant():
    rng = np.random.Generator(np.random.Philox(key=11))
    codes = rng.integers(0, 32, size=50_000, endpoint=False).astype(np.uint8)
    counts = aggregate_counts(codes)
    expect = np.bincount(codes, minlength=32)
    assert np.array_equal(counts.table.reshape(32), expect)
    shuffled = codes.copy()
    rng.shuffle(shuffled)
    assert np.array_equal(aggregate_counts(shuffled).table, counts.table)


def test_counts_table_get_add_total():
    counts = reference_counts_table()
    assert counts.get(1, 1, 1, 1, 1) == 18_764_031
    assert counts.get(2, 2, 2, 2, 2) == 364
    assert counts.total == sum(sum(v) for v in REFERENCE_COUNTS.values())
    doubled = counts + counts
    assert doubled.total == 2 * counts.total
    matched = counts.matched()
    assert matched[0, 0, 0, 0] == 18_764_031
    assert matched[1, 0, 1, 0] == 9_481  # settings (2,1), outcome (2,1)
    mism = counts.mismatched_total()
    assert mism[0, 0] == 16 and mism[1, 1] == 35


def test_match_frequencies_literal_and_row_sums():
    counts = reference_counts_table()
    f = match_frequencies(counts)
    assert np.allclose(f.sum(axis=(2, 3)), 1.0, atol=1e-12)
    assert f[0, 0, 0, 0] == pytest.approx(18_764_031 / 18_773_554, abs=1e-15)


def test_match_frequencies_degenerate():
    table = np.zeros((2, 2, 2, 2, 2), dtype=np.int64)
    table[0, 0, 0, 0, 0] = 5  # only settings (1,1) observed
    with pytest.raises(DegenerateDataError):
        match_frequencies(CountsTable(table=table))


def test_counts_csv_round_trip(tmp_path):
    counts = reference_counts_table()
    path = tmp_path / "counts.csv"
    export_counts_csv(counts, path)
    back = read_counts_csv(path)
    assert np.array_equal(back.table, counts.table)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(FIELD_NAMES) + ",count"


def test_counts_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("mqa,oqa,count\n1,1,3\n")
    with pytest.raises(ValueError):
        read_counts_csv(path)


def test_settings_weights_coercion():
    uniform = settings_weights(JointSettingsDistribution.uniform())
    assert np.allclose(uniform, 0.25)
    point = settings_weights(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert point[0, 0] == 1.0
    with pytest.raises(ValueError):
        settings_weights(np.array([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        settings_weights(np.array([[1.5, -0.5], [0.0, 0.0]]))


def test_joint_settings_strictly_positive():
    with pytest.raises(ValueError):
        JointSettingsDistribution(table=np.array([[0.5, 0.5], [0.0, 0.0]]))
    nu = JointSettingsDistribution.uniform()
    assert nu.get(2, 1) == 0.25
