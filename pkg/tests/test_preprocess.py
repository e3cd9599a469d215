import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_recording
from falldet.domain import LabelEvent, SignalKind, UserProfile
from falldet.errors import EmptyRecording, TooFewSamples, TooShort, UnpairedSignal
from falldet.preprocess import (AX_COLS, AY_COLS, AZ_COLS, ECG_COLS, FEATURE_NAMES, HEIGHT_COL, N_FEATURES,
                                WEIGHT_COL, PreprocessConfig, ScalerMethod, ScalerParams, apply_scaler,
                                build_dataset, existence_label, fit_scaler, inverse_scaler,
                                label_intervals, load_dataset, make_windows, save_dataset, shift_labels,
                                split_dataset, split_sizes, to_intervals, windows_for_recording)
from falldet.simgen import ActivityKind, ScenarioScript, synth_recording

FALL, GETUP = SignalKind.FALL_SIGNAL, SignalKind.GETUP_SIGNAL


def grid_recording(profile, T):
    k_e = np.arange(T * 13 // 100)
    ecg_t = (200 * k_e + 13) // 26
    acc_t = np.arange(T // 5) * 5
    return make_recording(profile, ecg_t=ecg_t, ecg_uv=np.arange(len(ecg_t)), accel_t=acc_t,
                          accel_mg=np.stack([acc_t, acc_t + 1, acc_t + 2], axis=1))


def test_feature_layout():
    assert N_FEATURES == 75 == len(FEATURE_NAMES)
    assert (ECG_COLS.start, ECG_COLS.stop) == (0, 13)
    assert (AX_COLS.start, AY_COLS.start, AZ_COLS.start, AZ_COLS.stop) == (13, 33, 53, 73)
    assert (HEIGHT_COL, WEIGHT_COL) == (73, 74)


def test_117s_recording_gives_1170_intervals():
    rec = synth_recording(ScenarioScript(((ActivityKind.Walking, 117_000),), 0),
                          UserProfile("s", 20, 176.2, 74.4))
    iv, stats = to_intervals(rec, return_stats=True)
    assert iv.shape == (1170, 75)
    assert stats == {"padded": 0, "truncated": 0}
    assert np.all(iv[:, 73] == np.float32(176.2)) and np.all(iv[:, 74] == np.float32(74.4))


def test_interval_contents_follow_layout(profile):
    rec = grid_recording(profile, 1000)
    iv = to_intervals(rec)
    assert iv.shape == (10, 75)
    # interval 3 holds accel samples at t = 300..395, ECG samples 39..51
    assert iv[3, AX_COLS].tolist() == list(range(300, 400, 5))
    assert iv[3, AY_COLS].tolist() == list(range(301, 401, 5))
    assert iv[3, AZ_COLS].tolist() == list(range(302, 402, 5))
    assert iv[3, ECG_COLS].tolist() == list(range(39, 52))


def test_jittered_stream_padding_and_truncation(profile):
    acc_t = np.array([0, 5, 10, 100, 103, 106] + list(range(109, 200, 4)))
    ecg_t = np.arange(0, 200, 8)
    rec = make_recording(profile, ecg_t=ecg_t, ecg_uv=ecg_t, accel_t=acc_t, accel_mg=np.repeat(acc_t, 3))
    iv, stats = to_intervals(rec, return_stats=True)
    assert iv[0, AX_COLS].tolist() == [0, 5] + [10] * 18
    assert len(acc_t[(acc_t >= 100) & (acc_t < 200)]) > 20
    assert iv[1, AX_COLS].tolist() == acc_t[(acc_t >= 100)][:20].tolist()
    assert stats["padded"] > 0 and stats["truncated"] > 0


def test_empty_recording_rejected(profile):
    with pytest.raises(EmptyRecording):
        to_intervals(make_recording(profile))


def test_label_span():
    y = label_intervals([LabelEvent(1000, FALL), LabelEvent(3000, GETUP)], 40)
    assert np.flatnonzero(y).tolist() == list(range(10, 30))


def test_partial_overlap_counts():
    y = label_intervals([LabelEvent(1050, FALL), LabelEvent(2950, GETUP)], 40)
    assert np.flatnonzero(y).tolist() == list(range(10, 30))


def test_lag_shift_example():
    y = np.array([0, 0, 1, 1, 0])
    assert shift_labels(y, 200).tolist() == [1, 1, 0, 0, 0]
    assert shift_labels(y, 0).tolist() == y.tolist()


def test_unpaired_signal():
    with pytest.raises(UnpairedSignal):
        label_intervals([LabelEvent(1000, FALL)], 40)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
def test_lag_composition(bits):
    y = np.array(bits)
    assert shift_labels(shift_labels(y, 100), 100).tolist() == shift_labels(y, 200).tolist()
    for lag in range(0, 600, 100):
        k = lag // 100
        assert shift_labels(y, lag).tolist() == [y[i + k] if i + k < len(y) else 0 for i in range(len(y))]


def test_existence_label_examples():
    assert existence_label([0, 0, 1, 0]) == 1
    assert existence_label([0] * 5) == 0
    assert existence_label([1] * 5) == 1


def test_window_counts():
    iv = np.zeros((30, 75), np.float32)
    lab = np.zeros(30)
    assert len(make_windows(iv, lab, 10, 1)) == 21
    assert len(make_windows(iv, lab, 10, 10)) == 3
    assert len(make_windows(np.zeros((1170, 75)), np.zeros(1170), 20, 1)) == 1151
    with pytest.raises(TooShort):
        make_windows(iv, lab, 31)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 12), st.integers(1, 5), st.data())
def test_window_coverage_and_labels(n, w, stride, data):
    if n < w:
        return
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    iv = np.arange(n * 75, dtype=np.float32).reshape(n, 75)
    ws = make_windows(iv, bits, w, stride)
    assert len(ws) == (n - w) // stride + 1
    for i in range(len(ws)):
        m, label, start = ws[i]
        assert start == i * stride
        assert np.array_equal(m, iv[start:start + w])
        assert label == int(any(bits[start:start + w]))


def test_scaler_hand_values():
    rows = np.zeros((3, 75))
    rows[:, 0] = [1, 2, 3]
    rows[:, 1] = 5
    p = fit_scaler(rows)
    assert p.mean[0] == pytest.approx(2.0)
    assert p.std[0] == pytest.approx(math.sqrt(2 / 3))
    assert p.std[1] == 0
    x = apply_scaler(p, rows)
    assert x[2, 0] == pytest.approx(1.2247, abs=1e-4)
    assert x[1, 0] == 0.0
    assert np.all(x[:, 1] == 0.0)


def test_normalise_records_everything():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(50, 75))
    p = fit_scaler(rows, ScalerMethod.Normalise)
    assert np.allclose(p.min, rows.min(0)) and np.allclose(p.max, rows.max(0))
    assert np.allclose(p.mean, rows.mean(0))
    x = apply_scaler(p, rows)
    assert x.min() == pytest.approx(0.0) and x.max() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(ScalerMethod)), st.integers(0, 10_000))
def test_scaler_round_trip(method, seed):
    rng = np.random.default_rng(seed)
    rows = rng.normal(100, 20, size=(40, 75))
    rows[:, 5] = 3.0
    p = fit_scaler(rows, method)
    back = inverse_scaler(p, apply_scaler(p, rows))
    ok = np.ones(75, bool)
    ok[5] = False
    assert np.max(np.abs(back[:, ok] - rows[:, ok])) < 1e-9 * np.abs(rows).max()


def test_scaler_json_round_trip(tmp_path):
    rows = np.random.default_rng(1).normal(size=(10, 75)) + 3
    p = fit_scaler(rows, ScalerMethod.LogStandardise, fitted_on="x")
    p.save(tmp_path / "s.json")
    q = ScalerParams.load(tmp_path / "s.json")
    assert q == p
    assert np.array_equal(apply_scaler(q, rows), apply_scaler(p, rows))


def test_scaler_is_row_independent():
    rng = np.random.default_rng(2)
    rows = rng.normal(50, 9, size=(64, 75)).astype(np.float32)
    for method in ScalerMethod:
        p = fit_scaler(np.abs(rows) + 1, method)
        whole = apply_scaler(p, np.abs(rows) + 1)
        for i in (0, 17, 63):
            assert np.array_equal(apply_scaler(p, (np.abs(rows) + 1)[i:i + 1])[0], whole[i])


def test_split_sizes():
    assert split_sizes(10) == (6, 2, 2)
    assert split_sizes(11) == (6, 2, 3)
    with pytest.raises(TooFewSamples):
        split_dataset(4)


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 500), st.integers(0, 2**31))
def test_split_partition(n, seed):
    a = split_dataset(n, seed=seed)
    b = split_dataset(n, seed=seed)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    joined = np.concatenate(a)
    assert sorted(joined.tolist()) == list(range(n))
    assert (len(a[0]), len(a[1]), len(a[2])) == split_sizes(n)


def test_config_validation():
    with pytest.raises(ValueError):
        PreprocessConfig(lag_ms=150)
    with pytest.raises(ValueError):
        PreprocessConfig(ratios=(0.5, 0.2, 0.2))


def test_dataset_round_trip(small_suite, tmp_path):
    ds = build_dataset(small_suite, PreprocessConfig(w=10, seed=1), "tiny")
    save_dataset(ds, tmp_path / "d.fds")
    back = load_dataset(tmp_path / "d.fds")
    assert np.array_equal(back.X.view(np.uint32), ds.X.view(np.uint32))
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.split, ds.split)
    assert back.scaler == ds.scaler and back.recording_ids == ds.recording_ids


def test_dataset_scaler_fitted_on_train_windows_only(small_suite):
    ds = build_dataset(small_suite, PreprocessConfig(w=10, seed=1), "tiny")
    raw = np.concatenate([windows_for_recording(r, 10).X for r in small_suite])
    expect = fit_scaler(raw[ds.split == 0])
    assert ds.scaler.fitted_on == "tiny"
    assert np.allclose(ds.scaler.mean, expect.mean, rtol=1e-12) and np.allclose(ds.scaler.std, expect.std, rtol=1e-12)
    assert not np.allclose(fit_scaler(raw).mean, expect.mean, rtol=1e-6)


def test_lag_changes_labels(small_suite):
    a = build_dataset(small_suite, PreprocessConfig(w=10, lag_ms=0), "a")
    b = build_dataset(small_suite, PreprocessConfig(w=10, lag_ms=500), "b")
    assert a.fall_ratio() == pytest.approx(b.fall_ratio(), abs=0.02)
    assert not np.array_equal(a.y, b.y)


def test_exhaustive_existence_labels():
    for w in range(1, 13):
        for bits in itertools.product((0, 1), repeat=w):
            assert existence_label(bits) == int(any(bits))
