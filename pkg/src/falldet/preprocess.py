"""Recordings -> 100 ms intervals -> labelled sliding windows -> scaled dataset.

Interval feature layout (75 columns)::

    [0:13)   ECG samples (uV)
    [13:33)  accel x (mg)
    [33:53)  accel y (mg)
    [53:73)  accel z (mg)
    73       height_cm
    74       weight_kg

Scaler parameters are per interval column and shared by every row of a window,
so the live detector can scale exactly as the offline pipeline does.

Windows are shuffled and split after windowing.  Overlapping windows of one
recording can therefore land in different splits, which leaks neighbouring
context into validation/test scores.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    INTERVAL_MS,
    LabelEvent,
    Recording,
    SignalKind,
    b64_decode_array,
    b64_encode_array,
)
from .errors import (
    EmptyRecording,
    MalformedDocument,
    TooFewSamples,
    TooShort,
    UnpairedSignal,
)

N_FEATURES = 75
ECG_PER_INTERVAL = 13
ACCEL_PER_INTERVAL = 20
ECG_COLS = slice(0, 13)
AX_COLS = slice(13, 33)
AY_COLS = slice(33, 53)
AZ_COLS = slice(53, 73)
HEIGHT_COL = 73
WEIGHT_COL = 74
FEATURE_NAMES = (
    [f"ecg_{i}" for i in range(13)]
    + [f"{a}_{i}" for a in "xyz" for i in range(20)]
    + ["height_cm", "weight_kg"]
)
# coverage of the last sample of a stream; 8 ms is the 130 Hz spacing rounded up
_ECG_TAIL_MS = 8
_ACCEL_TAIL_MS = 5
DEGENERATE_EPS = 1e-12
DATASET_FORMAT = "falldet-dataset"


class ScalerMethod(str, Enum):
    Standardise = "Standardise"
    Normalise = "Normalise"
    LogStandardise = "LogStandardise"


@dataclass(frozen=True)
class PreprocessConfig:
    w: int = 20
    lag_ms: int = 0
    stride: int = 1
    scaler: ScalerMethod = ScalerMethod.Standardise
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scaler", ScalerMethod(self.scaler))
        if self.w < 1 or self.stride < 1:
            raise ValueError("w and stride must be >= 1")
        if self.lag_ms < 0 or self.lag_ms % INTERVAL_MS:
            raise ValueError("lag_ms must be a non-negative multiple of 100")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ValueError("split ratios must be three non-negative numbers summing to 1")


# ---------------------------------------------------------------------------
# intervals


def interval_count(rec: Recording) -> int:
    s = rec.streams
    if not len(s.ecg_t) or not len(s.accel_t):
        return 0
    end = min(int(s.ecg_t[-1]) + _ECG_TAIL_MS, int(s.accel_t[-1]) + _ACCEL_TAIL_MS)
    return end // INTERVAL_MS


def _slot(t: np.ndarray, v: np.ndarray, n: int, per: int, stats: dict) -> np.ndarray:
    """Bin samples into ``n`` intervals of ``per`` values each (repeat-last / drop-tail)."""
    edges = np.searchsorted(t, np.arange(n + 1, dtype=np.int64) * INTERVAL_MS)
    counts = np.diff(edges)
    shape_tail = v.shape[1:]
    if np.all(counts == per):
        return v[edges[0]:edges[0] + n * per].reshape((n, per) + shape_tail)
    out = np.empty((n, per) + shape_tail, dtype=v.dtype)
    for k in range(n):
        lo, c = edges[k], counts[k]
        if c >= per:
            out[k] = v[lo:lo + per]
            stats["truncated"] += int(c - per)
            continue
        if c > 0:
            out[k, :c] = v[lo:lo + c]
            fill = v[lo + c - 1]
        else:
            # nothing in this interval: hold the latest earlier sample, else the next one
            fill = v[lo - 1] if lo > 0 else v[min(lo, len(v) - 1)]
        out[k, c:] = fill
        stats["padded"] += int(per - c)
    return out


def to_intervals(rec: Recording, return_stats: bool = False):
    """Resample a recording into an ``(n, 75)`` float32 interval matrix.

    Interval ``k`` covers ``[100k, 100k + 100)`` ms; the trailing partial
    interval is dropped.
    """
    s = rec.streams
    if not len(s.ecg_t) or not len(s.accel_t):
        raise EmptyRecording(f"recording {rec.recording_id} has an empty sensor stream")
    n = interval_count(rec)
    if n == 0:
        raise EmptyRecording(f"recording {rec.recording_id} is shorter than one interval")
    stats = {"padded": 0, "truncated": 0}
    ecg = _slot(s.ecg_t, s.ecg_uv, n, ECG_PER_INTERVAL, stats)
    acc = _slot(s.accel_t, s.accel_mg, n, ACCEL_PER_INTERVAL, stats)
    out = np.empty((n, N_FEATURES), dtype=np.float32)
    out[:, ECG_COLS] = ecg
    out[:, AX_COLS] = acc[:, :, 0]
    out[:, AY_COLS] = acc[:, :, 1]
    out[:, AZ_COLS] = acc[:, :, 2]
    out[:, HEIGHT_COL] = np.float32(rec.profile.height_cm)
    out[:, WEIGHT_COL] = np.float32(rec.profile.weight_kg)
    return (out, stats) if return_stats else out


def accel_magnitude(intervals: np.ndarray) -> np.ndarray:
    """Per-sample accel magnitude for raw (unscaled) rows; shape (..., 20)."""
    x = np.asarray(intervals, dtype=np.float64)
    return np.sqrt(x[..., AX_COLS] ** 2 + x[..., AY_COLS] ** 2 + x[..., AZ_COLS] ** 2)


# ---------------------------------------------------------------------------
# labels


def fall_spans(events: Sequence[LabelEvent]) -> list[tuple[int, int]]:
    spans = []
    events = list(events)
    if len(events) % 2:
        raise UnpairedSignal(f"{events[-1].kind.value} at {events[-1].t_ms} ms has no partner")
    for i in range(0, len(events), 2):
        a, b = events[i], events[i + 1]
        if a.kind != SignalKind.FALL_SIGNAL or b.kind != SignalKind.GETUP_SIGNAL:
            raise UnpairedSignal(f"expected FALL_SIGNAL/GETUP_SIGNAL pair at event {i}")
        if b.t_ms <= a.t_ms:
            raise UnpairedSignal(f"GETUP_SIGNAL at {b.t_ms} ms does not follow its FALL_SIGNAL")
        spans.append((a.t_ms, b.t_ms))
    return spans


def shift_labels(y: np.ndarray, lag_ms: int) -> np.ndarray:
    if lag_ms < 0 or lag_ms % INTERVAL_MS:
        raise ValueError("lag_ms must be a non-negative multiple of 100")
    k = lag_ms // INTERVAL_MS
    y = np.asarray(y, dtype=np.int8)
    out = np.zeros_like(y)
    if k < len(y):
        out[:len(y) - k] = y[k:]
    return out


def label_intervals(events: Sequence[LabelEvent], n_intervals: int, lag_ms: int = 0) -> np.ndarray:
    """Interval fall bits from signal events, optionally shifted ``lag_ms`` into the past."""
    y = np.zeros(n_intervals, dtype=np.int8)
    for a, b in fall_spans(events):
        lo = max(a // INTERVAL_MS, 0)
        hi = min(-(-b // INTERVAL_MS), n_intervals)
        if lo < hi:
            y[lo:hi] = 1
    return shift_labels(y, lag_ms)


def existence_label(y) -> int:
    y = np.asarray(y)
    if y.size < 1:
        raise ValueError("existence_label needs at least one interval label")
    return int(y.sum() > 0)


# ---------------------------------------------------------------------------
# windows


class WindowSample(tuple):
    """``(matrix, label, window_start_interval)`` view of one window."""

    __slots__ = ()

    def __new__(cls, matrix, label, start):
        return super().__new__(cls, (matrix, int(label), int(start)))

    matrix = property(lambda self: self[0])
    label = property(lambda self: self[1])
    start = property(lambda self: self[2])


@dataclass
class WindowSet:
    X: np.ndarray            # (m, w, 75)
    y: np.ndarray            # (m,) existence labels
    start: np.ndarray        # (m,) first interval index
    source: np.ndarray = field(default=None)  # (m,) index into a recording list

    def __post_init__(self):
        if self.source is None:
            self.source = np.zeros(len(self.y), dtype=np.int32)

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.X[i], self.y[i], self.start[i])

    @property
    def w(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "WindowSet":
        return WindowSet(self.X[idx], self.y[idx], self.start[idx], self.source[idx])

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   np.concatenate([p.start for p in parts]), np.concatenate([p.source for p in parts]))


def window_starts(n: int, w: int, stride: int = 1) -> np.ndarray:
    if w < 1 or stride < 1:
        raise ValueError("w and stride must be >= 1")
    if n < w:
        raise TooShort(f"{n} intervals cannot hold a window of {w}")
    return np.arange(0, n - w + 1, stride, dtype=np.int64)


def make_windows(intervals: np.ndarray, labels, w: int, stride: int = 1) -> WindowSet:
    intervals = np.asarray(intervals)
    labels = np.asarray(labels, dtype=np.int8)
    if len(labels) != len(intervals):
        raise ValueError("intervals and labels lengths differ")
    starts = window_starts(len(intervals), w, stride)
    idx = starts[:, None] + np.arange(w)
    c = np.concatenate([[0], np.cumsum(labels, dtype=np.int64)])
    y = ((c[starts + w] - c[starts]) > 0).astype(np.int8)
    return WindowSet(intervals[idx], y, starts)


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True, eq=False)
class ScalerParams:
    method: ScalerMethod
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray
    fitted_on: str = ""

    def __post_init__(self):
        object.__setattr__(self, "method", ScalerMethod(self.method))
        for name in ("mean", "std", "min", "max"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if a.shape != (N_FEATURES,):
                raise ValueError(f"scaler {name} must have {N_FEATURES} entries")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __eq__(self, other):
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return (self.method == other.method and self.fitted_on == other.fitted_on
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("mean", "std", "min", "max")))

    __hash__ = None

    def to_json(self) -> dict:
        return {"method": self.method.value, "fitted_on": self.fitted_on,
                "mean": self.mean.tolist(), "std": self.std.tolist(),
                "min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ScalerParams":
        return cls(ScalerMethod(obj["method"]), obj["mean"], obj["std"], obj["min"], obj["max"],
                   obj.get("fitted_on", ""))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ScalerParams":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


_LOG_COLS = (HEIGHT_COL, WEIGHT_COL)


def _log_cols(rows: np.ndarray) -> np.ndarray:
    rows = np.array(rows, dtype=np.float64)
    for c in _LOG_COLS:
        # math.log keeps the result independent of array layout / SIMD path
        rows[..., c] = np.vectorize(math.log, otypes=[np.float64])(rows[..., c])
    return rows


def fit_scaler(train_windows, method=ScalerMethod.Standardise, fitted_on: str = "") -> ScalerParams:
    """Per-column statistics over every interval row of the training windows.

    ``train_windows`` may be a :class:`WindowSet` or any array shaped ``(..., 75)``.
    Standard deviations are population (divide by N).
    """
    method = ScalerMethod(method)
    X = train_windows.X if isinstance(train_windows, WindowSet) else train_windows
    rows = np.asarray(X).reshape(-1, N_FEATURES)
    if len(rows) < 2:
        raise ValueError("fit_scaler needs at least two training intervals")
    lo = rows.min(axis=0).astype(np.float64)
    hi = rows.max(axis=0).astype(np.float64)
    if method == ScalerMethod.LogStandardise:
        if np.any(rows[:, list(_LOG_COLS)] <= 0):
            raise ValueError("log transform needs strictly positive height/weight")
        stat_rows = rows.astype(np.float64)
        stat_rows[:, list(_LOG_COLS)] = np.log(stat_rows[:, list(_LOG_COLS)])
    else:
        stat_rows = rows
    mean = np.mean(stat_rows, axis=0, dtype=np.float64)
    std = np.std(stat_rows, axis=0, dtype=np.float64)
    return ScalerParams(method, mean, std, lo, hi, fitted_on)


def apply_scaler(params: ScalerParams, x) -> np.ndarray:
    """Scale rows shaped ``(..., 75)``; returns float64.

    Columns whose spread is below 1e-12 map to exactly 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} feature columns, got {x.shape[-1]}")
    if params.method == ScalerMethod.Normalise:
        span = params.max - params.min
        ok = span >= DEGENERATE_EPS
        out = (x - params.min) / np.where(ok, span, 1.0)
    else:
        if params.method == ScalerMethod.LogStandardise:
            x = _log_cols(x)
        ok = params.std >= DEGENERATE_EPS
        out = (x - params.mean) / np.where(ok, params.std, 1.0)
    return np.where(ok, out, 0.0)


def inverse_scaler(params: ScalerParams, x) -> np.ndarray:
    """Undo :func:`apply_scaler` for non-degenerate columns (degenerate ones return the centre)."""
    x = np.asarray(x, dtype=np.float64)
    if params.method == ScalerMethod.Normalise:
        span = params.max - params.min
        return np.where(span >= DEGENERATE_EPS, x * span + params.min, params.min)
    out = np.where(params.std >= DEGENERATE_EPS, x * params.std + params.mean, params.mean)
    if params.method == ScalerMethod.LogStandardise:
        out = out.copy()
        out[..., list(_LOG_COLS)] = np.exp(out[..., list(_LOG_COLS)])
    return out


def scale_windows(params: ScalerParams, X: np.ndarray, block: int = 4096) -> np.ndarray:
    """Scale a window stack into float32 model inputs, a block at a time."""
    out = np.empty(X.shape, dtype=np.float32)
    for i in range(0, len(X), block):
        out[i:i + block] = apply_scaler(params, X[i:i + block])
    return out


# ---------------------------------------------------------------------------
# splits


def split_sizes(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(n_or_windows, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle under ``seed`` and cut into (train, val, test) index arrays."""
    n = n_or_windows if isinstance(n_or_windows, (int, np.integer)) else len(n_or_windows)
    if n < 5:
        raise TooFewSamples(f"need at least 5 windows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b, _ = split_sizes(n, ratios)
    return perm[:a], perm[a:a + b], perm[a + b:]


# ---------------------------------------------------------------------------
# datasets

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    """Scaled float32 windows with labels and split tags."""

    X: np.ndarray
    y: np.ndarray
    split: np.ndarray          # 0 train, 1 val, 2 test
    recording_ids: list[str]
    source: np.ndarray         # index into recording_ids
    start: np.ndarray
    scaler: ScalerParams
    config: PreprocessConfig

    @property
    def w(self) -> int:
        return self.config.w

    def part(self, name: str) -> WindowSet:
        mask = self.split == SPLIT_NAMES.index(name)
        return WindowSet(self.X[mask], self.y[mask], self.start[mask], self.source[mask])

    @property
    def train(self) -> WindowSet:
        return self.part("train")

    @property
    def val(self) -> WindowSet:
        return self.part("val")

    @property
    def test(self) -> WindowSet:
        return self.part("test")

    def fall_ratio(self) -> float:
        return float(np.mean(self.y)) if len(self.y) else 0.0

    def header(self) -> dict:
        c = self.config
        sizes = [int(np.count_nonzero(self.split == i)) for i in range(3)]
        return {
            "format": DATASET_FORMAT, "version": 1,
            "w": c.w, "n_features": N_FEATURES, "lag_ms": c.lag_ms, "stride": c.stride,
            "seed": c.seed, "ratios": list(c.ratios), "scaler": self.scaler.to_json(),
            "split_sizes": dict(zip(SPLIT_NAMES, sizes)), "n_samples": len(self.y),
            "recordings": self.recording_ids,
        }


def windows_for_recording(rec: Recording, w: int, lag_ms: int = 0, stride: int = 1) -> WindowSet:
    iv = to_intervals(rec)
    y = label_intervals(rec.events, len(iv), lag_ms)
    return make_windows(iv, y, w, stride)


def build_dataset(recordings: Iterable[Recording], config: PreprocessConfig = PreprocessConfig(),
                  dataset_id: str = "") -> Dataset:
    """Window every recording, split, fit the scaler on train rows and scale everything."""
    recs = list(recordings)
    parts = []
    for i, rec in enumerate(recs):
        ws = windows_for_recording(rec, config.w, config.lag_ms, config.stride)
        ws.source = np.full(len(ws), i, dtype=np.int32)
        parts.append(ws)
    if not parts:
        raise TooFewSamples("no recordings to preprocess")
    raw = WindowSet.concat(parts)
    tr, va, te = split_dataset(len(raw), config.ratios, config.seed)
    split = np.empty(len(raw), dtype=np.int8)
    split[tr], split[va], split[te] = 0, 1, 2
    scaler = fit_scaler(raw.X[np.sort(tr)], config.scaler, fitted_on=dataset_id)
    X = scale_windows(scaler, raw.X)
    return Dataset(X, raw.y, split, [r.recording_id for r in recs], raw.source, raw.start, scaler, config)


def save_dataset(ds: Dataset, path) -> None:
    """Header JSON line, then one ``{split, y, rec, start, x}`` line per window."""
    with open(path, "w") as fh:
        fh.write(json.dumps(ds.header(), sort_keys=True, separators=(",", ":")) + "\n")
        for i in range(len(ds.y)):
            fh.write(json.dumps({
                "split": SPLIT_NAMES[ds.split[i]], "y": int(ds.y[i]),
                "rec": int(ds.source[i]), "start": int(ds.start[i]),
                "x": b64_encode_array(ds.X[i].reshape(-1), np.float32),
            }, sort_keys=True, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        first = fh.readline()
        try:
            h = json.loads(first)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(1, f"invalid dataset header: {exc.msg}") from None
        if not isinstance(h, dict) or h.get("format") != DATASET_FORMAT:
            raise MalformedDocument(1, "not a dataset file")
        w = int(h["w"])
        cfg = PreprocessConfig(w=w, lag_ms=h["lag_ms"], stride=h["stride"],
                               scaler=h["scaler"]["method"], ratios=tuple(h["ratios"]), seed=h["seed"])
        n = int(h["n_samples"])
        X = np.empty((n, w, N_FEATURES), dtype=np.float32)
        y = np.empty(n, dtype=np.int8)
        split = np.empty(n, dtype=np.int8)
        source = np.empty(n, dtype=np.int32)
        start = np.empty(n, dtype=np.int64)
        for i in range(n):
            line = fh.readline()
            try:
                obj = json.loads(line)
                X[i] = b64_decode_array(obj["x"], np.float32, w * N_FEATURES).reshape(w, N_FEATURES)
                y[i] = int(obj["y"])
                split[i] = SPLIT_NAMES.index(obj["split"])
                source[i] = int(obj["rec"])
                start[i] = int(obj["start"])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise MalformedDocument(i + 2, f"bad sample line: {exc}") from None
    return Dataset(X, y, split, list(h["recordings"]), source, start,
                   ScalerParams.from_json(h["scaler"]), cfg)
