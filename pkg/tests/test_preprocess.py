import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdsovnet import preprocess as P
from pdsovnet.errors import ConfigError, DataError
from pdsovnet.preprocess import RawRecord, WheelProfile

FLOOR = 20 * np.log10(P.EPS_DB)
THETA = 2 * np.pi * np.arange(400) / 400


# ---------------------------------------------------------------------------
# speed window


def test_constant_in_window_speed_is_one_segment():
    assert P.filter_speed(np.full(7, 300.0)) == [(0.0, 7.0)]


def test_out_of_window_speed_gives_nothing():
    assert P.filter_speed(np.full(5, 250.0)) == []


def test_interior_window():
    assert P.filter_speed(np.array([290.0, 300, 300, 290])) == [(1.0, 3.0)]


def test_empty_record():
    assert P.filter_speed(np.array([])) == []


def test_window_bounds_validated():
    with pytest.raises(ConfigError):
        P.filter_speed(np.full(3, 300.0), 305, 295)


@given(st.lists(st.floats(280, 320), min_size=0, max_size=30))
def test_segments_are_maximal_and_in_window(speeds):
    speeds = np.array(speeds)
    segs = P.filter_speed(speeds)
    inside = np.zeros(len(speeds), dtype=bool)
    for t0, t1 in segs:
        inside[int(t0):int(t1)] = True
        assert t0 == 0 or not (295 <= speeds[int(t0) - 1] <= 305)
        assert t1 == len(speeds) or not (295 <= speeds[int(t1)] <= 305)
    np.testing.assert_array_equal(inside, (speeds >= 295) & (speeds <= 305))


# ---------------------------------------------------------------------------
# revolutions


def test_revolution_length_at_300_kmh():
    revs = P.segment_revolutions(np.zeros(5000), 300.0, 2.9)
    assert len(revs) == 14
    assert {len(r) for r in revs} == {348}


def test_zero_length_segment():
    assert P.segment_revolutions(np.zeros(0), 300.0, 2.9) == []


def test_exact_two_revolutions():
    assert len(P.segment_revolutions(np.zeros(696), 300.0, 2.9)) == 2


def test_short_segment_has_no_revolution():
    assert P.segment_revolutions(np.zeros(300), 300.0, 2.9) == []


def test_revolutions_follow_the_speed_series():
    # 1 s at 296 km/h then 1 s at 304 km/h
    revs = P.segment_revolutions(np.zeros(20000), np.array([296.0, 304.0]), 2.9)
    lens = np.array([len(r) for r in revs])
    assert abs(lens[0] - 2.9 / (296 / 3.6) * 1e4) <= 1
    assert abs(lens[-1] - 2.9 / (304 / 3.6) * 1e4) <= 1


# ---------------------------------------------------------------------------
# angle resampling


def test_constant_input_resamples_to_constant():
    np.testing.assert_allclose(P.resample_angle(np.full(348, 2.5), 300.0), 2.5)


def test_constant_speed_tone():
    n = 348
    x = np.cos(2 * np.pi * 3 * np.arange(n) / n)
    assert np.max(np.abs(P.resample_angle(x, 300.0) - np.cos(3 * THETA))) < 1e-3


def test_ramping_speed_tone():
    # warp an order-3 angle tone into time with a speed ramp, then resample back
    v_kmh = np.linspace(295.0, 305.0, 350)
    d = P.cumulative_distance(v_kmh / 3.6)
    theta = 2 * np.pi * d[:-1] / d[-1]
    x = np.cos(3 * theta)
    assert np.max(np.abs(P.resample_angle(x, v_kmh) - np.cos(3 * THETA))) < 1e-2


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_uniform_400_point_signal_is_unchanged(seed):
    x = np.random.default_rng(seed).standard_normal(400)
    assert np.max(np.abs(P.resample_angle(x) - x)) < 1e-12


@given(st.integers(2, 3000))
@settings(max_examples=30)
def test_resample_always_yields_400_points(n):
    assert P.resample_angle(np.ones(n)).shape == (400,)


def test_non_monotone_distance_is_data_error():
    with pytest.raises(DataError):
        P.resample_angle(np.ones(5), np.array([300.0, 300, 0, 300, 300]))


# ---------------------------------------------------------------------------
# labels


def test_single_tone_label():
    labels = P.profile_to_order_labels(0.1 * np.cos(5 * THETA))
    assert labels[4] == pytest.approx(40.0, abs=1e-9)
    assert np.all(np.delete(labels, 4) == FLOOR)


def test_zero_profile_hits_floor():
    assert np.all(P.profile_to_order_labels(np.zeros(400)) == FLOOR)
    assert FLOOR == pytest.approx(-120.0)


def test_two_tone_labels():
    labels = P.profile_to_order_labels(0.1 * np.cos(5 * THETA) + 0.05 * np.cos(12 * THETA))
    assert labels[4] == pytest.approx(40.0, abs=1e-9)
    assert labels[11] == pytest.approx(33.979400086720375, abs=1e-6)


def test_profile_needs_81_points():
    with pytest.raises(DataError):
        P.profile_to_order_labels(np.zeros(80))


def test_profile_of_other_length_is_resampled():
    n = 1200
    prof = 0.1 * np.cos(5 * 2 * np.pi * np.arange(n) / n)
    assert P.profile_to_order_labels(prof)[4] == pytest.approx(40.0, abs=1e-3)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_labels_shift_by_20_db_per_decade(seed):
    rng = np.random.default_rng(seed)
    amps = rng.uniform(1e-3, 1.0, 40)
    prof = sum(a * np.cos((k + 1) * THETA + rng.uniform(0, 6.28)) for k, a in enumerate(amps))
    base, scaled = P.profile_to_order_labels(prof), P.profile_to_order_labels(10 * prof)
    above = base > FLOOR
    np.testing.assert_allclose(scaled[above] - base[above], 20.0, atol=1e-9)


@pytest.mark.parametrize("k", range(1, 41))
def test_order_localisation(k):
    assert np.argmax(P.profile_to_order_labels(0.2 * np.cos(k * THETA + 0.3))) == k - 1


# ---------------------------------------------------------------------------
# dataset assembly


def _record(group, n_rev=10, speed=300.0, channels=4):
    n = int(round(n_rev * 2.9 / (speed / 3.6) * P.FS_VIB))
    t = np.arange(n)
    vib = np.stack([np.cos(2 * np.pi * (c + 2) * t / 348) for c in range(channels)], axis=1)
    return RawRecord(vib, np.array([speed]), 2.9, group)


def _profiles(group):
    return [WheelProfile(0.01 * (c + 1) * np.cos((c + 3) * THETA), group, c) for c in range(4)]


def test_ten_clean_revolutions():
    train, val = P.build_dataset([_record("a")], _profiles("a"), {"a": "train"})
    assert (train.x.shape, train.v.shape, train.y.shape) == ((10, 400, 4), (10, 4), (10, 40, 4))
    assert len(val) == 0
    np.testing.assert_allclose(train.v, 300.0)
    assert train.y[0, 2, 0] == pytest.approx(20.0, abs=1e-9)


def test_val_only_group():
    train, val = P.build_dataset([_record("a", 3)], _profiles("a"), {"val": ["a"], "train": []})
    assert len(train) == 0 and len(val) == 3


def test_two_groups_are_disjoint():
    recs = [_record("a", 3), _record("b", 4)]
    train, val = P.build_dataset(recs, _profiles("a") + _profiles("b"), {"a": "train", "b": "val"})
    assert train.groups == {"a"} and val.groups == {"b"}


def test_group_in_both_splits_is_config_error():
    with pytest.raises(ConfigError, match="split hygiene"):
        P.build_dataset([_record("a", 2)], _profiles("a"), {"train": ["a"], "val": ["a"]})


def test_wrong_channel_count_is_data_error():
    with pytest.raises(DataError, match="channels"):
        P.build_dataset([_record("a", 2, channels=3)], _profiles("a"), {"a": "train"})


def test_missing_profiles_is_data_error():
    with pytest.raises(DataError, match="profiles"):
        P.build_dataset([_record("a", 2)], _profiles("a")[:3], {"a": "train"})


def test_out_of_window_record_yields_nothing():
    train, val = P.build_dataset([_record("a", 3, speed=250.0)], _profiles("a"), {"a": "train"})
    assert len(train) == len(val) == 0


@given(st.lists(st.sampled_from(["train", "val"]), min_size=1, max_size=5))
@settings(max_examples=20, deadline=None)
def test_split_disjointness(assignment):
    groups = [f"g{i}" for i in range(len(assignment))]
    recs = [_record(g, 1) for g in groups]
    profs = [p for g in groups for p in _profiles(g)]
    train, val = P.build_dataset(recs, profs, dict(zip(groups, assignment)))
    assert not (train.groups & val.groups)
    assert train.groups | val.groups == set(groups)
