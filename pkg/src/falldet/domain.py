"""Core value types and the recording document codec.

Sample streams are held column-wise in read-only numpy arrays: integer
millisecond timestamps (int64) and float32 payloads.  Equality on streams is
bit-exact on the float32 payloads.

Recording document layout (UTF-8, one JSON object per line)::

    {"format": "falldet-recording", "version": 1, "meta": {...}, "profile": {...}}
    {"kind": "ecg", "n": N, "t": <b64 int64 LE>, "uV": <b64 float32 LE>}
    {"kind": "accel", "n": N, "t": <b64 int64 LE>, "xyz": <b64 float32 LE, N x 3 row-major>}
    {"kind": "event", "t": 1000, "event": "FALL_SIGNAL"}

Hand-authored documents may also use one line per sample, e.g.
``{"kind": "ecg", "t": 0, "uV": 1.5}`` or
``{"kind": "accel", "t": 5, "x": 0.0, "y": 1000.0, "z": 0.0}``.
Lines of the same kind are concatenated in document order.
"""
from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvariantViolation, MalformedDocument

ECG_HZ = 130
ACCEL_HZ = 200
ACCEL_PERIOD_MS = 1000 // ACCEL_HZ
CHUNK_MS = 5000
INTERVAL_MS = 100

DOC_FORMAT = "falldet-recording"
DOC_VERSION = 1


class SignalKind(str, Enum):
    FALL_SIGNAL = "FALL_SIGNAL"
    GETUP_SIGNAL = "GETUP_SIGNAL"


class EcgSample(NamedTuple):
    t_ms: int
    uV: float


class AccelSample(NamedTuple):
    t_ms: int
    x_mg: float
    y_mg: float
    z_mg: float


class LabelEvent(NamedTuple):
    t_ms: int
    kind: SignalKind


def ecg_grid_ms(k):
    """Timestamp of ECG sample ``k`` on the exact 130 Hz grid, round(k*1000/130)."""
    k = np.asarray(k, dtype=np.int64)
    return (200 * k + 13) // 26


def accel_grid_ms(k):
    return np.asarray(k, dtype=np.int64) * ACCEL_PERIOD_MS


@dataclass(frozen=True)
class UserProfile:
    subject_id: str
    age: int
    height_cm: float
    weight_kg: float
    emergency_contacts: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")
        if int(self.age) != self.age or self.age < 0:
            raise ValueError(f"age must be a non-negative integer, got {self.age!r}")
        if not self.height_cm > 0 or not self.weight_kg > 0:
            raise ValueError("height_cm and weight_kg must be positive")
        contacts = tuple((str(name), str(phone)) for name, phone in self.emergency_contacts)
        object.__setattr__(self, "emergency_contacts", contacts)

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "age": int(self.age),
            "height_cm": float(self.height_cm),
            "weight_kg": float(self.weight_kg),
            "emergency_contacts": [list(c) for c in self.emergency_contacts],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UserProfile":
        return cls(
            subject_id=obj["subject_id"],
            age=int(obj["age"]),
            height_cm=float(obj["height_cm"]),
            weight_kg=float(obj["weight_kg"]),
            emergency_contacts=tuple(tuple(c) for c in obj.get("emergency_contacts", [])),
        )


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    subject_id: str
    chunk_indexes: tuple[int, ...]
    created_at: str

    def __post_init__(self):
        idx = tuple(int(i) for i in self.chunk_indexes)
        if idx != tuple(range(len(idx))):
            raise ValueError(f"chunk_indexes must be 0..n-1 in order, got {list(idx)[:10]}")
        object.__setattr__(self, "chunk_indexes", idx)
        if not self.recording_id:
            raise ValueError("recording_id must be non-empty")

    def to_json(self) -> dict:
        return {
            "recording_id": self.recording_id,
            "subject_id": self.subject_id,
            "chunk_indexes": list(self.chunk_indexes),
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RecordingMeta":
        return cls(
            recording_id=obj["recording_id"],
            subject_id=obj["subject_id"],
            chunk_indexes=tuple(obj["chunk_indexes"]),
            created_at=obj["created_at"],
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _first_non_increasing(t: np.ndarray) -> int | None:
    if len(t) < 2:
        return None
    bad = np.flatnonzero(np.diff(t) <= 0)
    return int(bad[0]) + 1 if len(bad) else None


@dataclass(frozen=True, eq=False)
class Streams:
    """ECG, accelerometer and label-event streams over a common relative time axis."""

    ecg_t: np.ndarray
    ecg_uv: np.ndarray
    accel_t: np.ndarray
    accel_mg: np.ndarray
    events: tuple[LabelEvent, ...] = ()

    def __post_init__(self):
        ecg_t = np.asarray(self.ecg_t, dtype=np.int64).reshape(-1)
        ecg_uv = np.asarray(self.ecg_uv, dtype=np.float32).reshape(-1)
        accel_t = np.asarray(self.accel_t, dtype=np.int64).reshape(-1)
        accel_mg = np.asarray(self.accel_mg, dtype=np.float32).reshape(-1, 3)
        if len(ecg_t) != len(ecg_uv):
            raise ValueError("ecg_t and ecg_uv lengths differ")
        if len(accel_t) != len(accel_mg):
            raise ValueError("accel_t and accel_mg lengths differ")
        events = tuple(LabelEvent(int(e[0]), SignalKind(e[1])) for e in self.events)
        object.__setattr__(self, "ecg_t", _readonly(ecg_t))
        object.__setattr__(self, "ecg_uv", _readonly(ecg_uv))
        object.__setattr__(self, "accel_t", _readonly(accel_t))
        object.__setattr__(self, "accel_mg", _readonly(accel_mg))
        object.__setattr__(self, "events", events)

    @classmethod
    def empty(cls) -> "Streams":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.float32),
                   np.zeros(0, np.int64), np.zeros((0, 3), np.float32), ())

    def __eq__(self, other):
        if not isinstance(other, Streams):
            return NotImplemented
        return (
            np.array_equal(self.ecg_t, other.ecg_t)
            and np.array_equal(self.accel_t, other.accel_t)
            and np.array_equal(self.ecg_uv.view(np.uint32), other.ecg_uv.view(np.uint32))
            and np.array_equal(self.accel_mg.view(np.uint32), other.accel_mg.view(np.uint32))
            and self.events == other.events
        )

    __hash__ = None

    @property
    def is_empty(self) -> bool:
        return not (len(self.ecg_t) or len(self.accel_t) or self.events)

    @property
    def max_t(self) -> int:
        """Largest timestamp over all streams, -1 if empty."""
        cands = [-1]
        if len(self.ecg_t):
            cands.append(int(self.ecg_t[-1]))
        if len(self.accel_t):
            cands.append(int(self.accel_t[-1]))
        if self.events:
            cands.append(self.events[-1].t_ms)
        return max(cands)

    def ecg_samples(self) -> Iterator[EcgSample]:
        for t, v in zip(self.ecg_t.tolist(), self.ecg_uv.tolist()):
            yield EcgSample(t, v)

    def accel_samples(self) -> Iterator[AccelSample]:
        for t, (x, y, z) in zip(self.accel_t.tolist(), self.accel_mg.tolist()):
            yield AccelSample(t, x, y, z)

    def check(self, *, chunk: bool = False) -> None:
        """Raise ValueError naming the offending stream if an invariant fails."""
        for name, t in (("ecg", self.ecg_t), ("accel", self.accel_t)):
            if len(t) and t[0] < 0:
                raise ValueError(f"{name} timestamps must be >= 0")
            i = _first_non_increasing(t)
            if i is not None:
                raise ValueError(f"{name} t_ms not strictly increasing at sample {i} "
                                 f"({int(t[i - 1])} -> {int(t[i])})")
        for i, ev in enumerate(self.events):
            if ev.t_ms < 0:
                raise ValueError("event timestamps must be >= 0")
            if i and ev.t_ms <= self.events[i - 1].t_ms:
                raise ValueError(f"event t_ms not strictly increasing at event {i}")
            if i and ev.kind == self.events[i - 1].kind:
                raise ValueError(f"events must alternate FALL/GETUP, repeated {ev.kind.value} at event {i}")
        if not chunk and self.events and self.events[0].kind != SignalKind.FALL_SIGNAL:
            raise ValueError("first event must be FALL_SIGNAL")

    def between(self, t0: int, t1: int) -> "Streams":
        """Sub-streams with timestamps in [t0, t1)."""
        e0, e1 = np.searchsorted(self.ecg_t, [t0, t1])
        a0, a1 = np.searchsorted(self.accel_t, [t0, t1])
        return Streams(self.ecg_t[e0:e1], self.ecg_uv[e0:e1],
                       self.accel_t[a0:a1], self.accel_mg[a0:a1],
                       tuple(e for e in self.events if t0 <= e.t_ms < t1))

    @classmethod
    def concat(cls, parts: Sequence["Streams"]) -> "Streams":
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.ecg_t for p in parts]),
            np.concatenate([p.ecg_uv for p in parts]),
            np.concatenate([p.accel_t for p in parts]),
            np.concatenate([p.accel_mg for p in parts]),
            tuple(e for p in parts for e in p.events),
        )


def chunk_count(streams: Streams) -> int:
    """Number of 5 s chunks needed to tile the streams' time span."""
    return 0 if streams.is_empty else streams.max_t // CHUNK_MS + 1


@dataclass(frozen=True, eq=False)
class Chunk:
    recording_id: str
    chunk_index: int
    streams: Streams

    def __post_init__(self):
        if self.chunk_index < 0:
            raise ValueError("chunk_index must be >= 0")
        self.streams.check(chunk=True)
        lo, hi = self.chunk_index * CHUNK_MS, (self.chunk_index + 1) * CHUNK_MS
        s = self.streams
        ts = [s.ecg_t, s.accel_t, np.array([e.t_ms for e in s.events], dtype=np.int64)]
        for t in ts:
            if len(t) and (t.min() < lo or t.max() >= hi):
                raise ValueError(f"chunk {self.chunk_index} holds samples outside [{lo}, {hi})")

    def __eq__(self, other):
        if not isinstance(other, Chunk):
            return NotImplemented
        return (self.recording_id == other.recording_id
                and self.chunk_index == other.chunk_index
                and self.streams == other.streams)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Recording:
    meta: RecordingMeta
    profile: UserProfile
    streams: Streams = field(default_factory=Streams.empty)

    def __post_init__(self):
        self.streams.check()
        if self.meta.subject_id != self.profile.subject_id:
            raise ValueError("meta.subject_id does not match profile.subject_id")

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.meta == other.meta and self.profile == other.profile
                and self.streams == other.streams)

    __hash__ = None

    @property
    def recording_id(self) -> str:
        return self.meta.recording_id

    @property
    def events(self) -> tuple[LabelEvent, ...]:
        return self.streams.events

    @property
    def duration_ms(self) -> int:
        return max(self.streams.max_t, 0)


# -- base64 helpers ----------------------------------------------------------

def b64_encode_array(a: np.ndarray, dtype) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()).decode("ascii")


def b64_decode_array(s: str, dtype, count: int | None = None) -> np.ndarray:
    """Decode a base64 LE block; raises ValueError on bad padding or size."""
    try:
        raw = base64.b64decode(s.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ValueError(f"invalid base64 payload: {exc}") from None
    dt = np.dtype(dtype).newbyteorder("<")
    if len(raw) % dt.itemsize:
        raise ValueError(f"payload length {len(raw)} is not a multiple of {dt.itemsize}")
    arr = np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype).newbyteorder("="))
    if count is not None and len(arr) != count:
        raise ValueError(f"payload holds {len(arr)} values, expected {count}")
    return arr


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# -- stream line codec (shared with chunk documents) -------------------------

def streams_to_lines(s: Streams) -> list[str]:
    lines = [
        _dumps({"kind": "ecg", "n": len(s.ecg_t),
                "t": b64_encode_array(s.ecg_t, np.int64),
                "uV": b64_encode_array(s.ecg_uv, np.float32)}),
        _dumps({"kind": "accel", "n": len(s.accel_t),
                "t": b64_encode_array(s.accel_t, np.int64),
                "xyz": b64_encode_array(s.accel_mg.reshape(-1), np.float32)}),
    ]
    lines.extend(_dumps({"kind": "event", "t": e.t_ms, "event": e.kind.value}) for e in s.events)
    return lines


def _check_incoming(prev_last: int | None, t: np.ndarray, stream: str, lineno: int) -> None:
    if not len(t):
        return
    if prev_last is not None and t[0] <= prev_last:
        raise InvariantViolation(lineno, f"{stream} t_ms decreases or repeats ({prev_last} -> {int(t[0])})")
    if t[0] < 0:
        raise InvariantViolation(lineno, f"{stream} t_ms negative")
    i = _first_non_increasing(t)
    if i is not None:
        raise InvariantViolation(lineno, f"{stream} t_ms not strictly increasing at sample {i}")


def streams_from_lines(lines: Iterable[tuple[int, str]], *, chunk: bool = False) -> Streams:
    ecg_t, ecg_v, acc_t, acc_v = [], [], [], []
    events: list[LabelEvent] = []
    last = {"ecg": None, "accel": None}
    for lineno, line in lines:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict) or "kind" not in obj:
            raise MalformedDocument(lineno, "expected an object with a 'kind' field")
        kind = obj["kind"]
        try:
            if kind == "ecg":
                if isinstance(obj["t"], str):
                    t = b64_decode_array(obj["t"], np.int64, obj.get("n"))
                    v = b64_decode_array(obj["uV"], np.float32, len(t))
                else:
                    t = np.array([int(obj["t"])], np.int64)
                    v = np.array([float(obj["uV"])], np.float32)
                _check_incoming(last["ecg"], t, "ecg", lineno)
                if len(t):
                    last["ecg"] = int(t[-1])
                ecg_t.append(t)
                ecg_v.append(v)
            elif kind == "accel":
                if isinstance(obj["t"], str):
                    t = b64_decode_array(obj["t"], np.int64, obj.get("n"))
                    v = b64_decode_array(obj["xyz"], np.float32, 3 * len(t)).reshape(-1, 3)
                else:
                    t = np.array([int(obj["t"])], np.int64)
                    v = np.array([[float(obj["x"]), float(obj["y"]), float(obj["z"])]], np.float32)
                _check_incoming(last["accel"], t, "accel", lineno)
                if len(t):
                    last["accel"] = int(t[-1])
                acc_t.append(t)
                acc_v.append(v)
            elif kind == "event":
                ev = LabelEvent(int(obj["t"]), SignalKind(obj["event"]))
                if events and ev.t_ms <= events[-1].t_ms:
                    raise InvariantViolation(lineno, "event t_ms not strictly increasing")
                if events and ev.kind == events[-1].kind:
                    raise InvariantViolation(lineno, f"events must alternate, repeated {ev.kind.value}")
                if not events and not chunk and ev.kind != SignalKind.FALL_SIGNAL:
                    raise InvariantViolation(lineno, "first event must be FALL_SIGNAL")
                if ev.t_ms < 0:
                    raise InvariantViolation(lineno, "event t_ms negative")
                events.append(ev)
            else:
                raise MalformedDocument(lineno, f"unknown kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise MalformedDocument(lineno, f"missing or mistyped field: {exc}") from None
        except ValueError as exc:
            raise MalformedDocument(lineno, str(exc)) from None
    return Streams(
        np.concatenate(ecg_t) if ecg_t else np.zeros(0, np.int64),
        np.concatenate(ecg_v) if ecg_v else np.zeros(0, np.float32),
        np.concatenate(acc_t) if acc_t else np.zeros(0, np.int64),
        np.concatenate(acc_v) if acc_v else np.zeros((0, 3), np.float32),
        tuple(events),
    )


def _split_lines(data: bytes | str) -> list[tuple[int, str]]:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(1, f"not UTF-8: {exc}") from None
    return [(i + 1, line) for i, line in enumerate(data.split("\n"))]


def encode_recording(rec: Recording) -> bytes:
    header = {"format": DOC_FORMAT, "version": DOC_VERSION,
              "meta": rec.meta.to_json(), "profile": rec.profile.to_json()}
    lines = [_dumps(header)] + streams_to_lines(rec.streams)
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_recording(data: bytes | str) -> Recording:
    lines = _split_lines(data)
    if not lines or not lines[0][1].strip():
        raise MalformedDocument(1, "empty document")
    try:
        header = json.loads(lines[0][1])
    except json.JSONDecodeError as exc:
        raise MalformedDocument(1, f"invalid JSON: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("format") != DOC_FORMAT:
        raise MalformedDocument(1, "missing recording header")
    try:
        meta = RecordingMeta.from_json(header["meta"])
        profile = UserProfile.from_json(header["profile"])
    except (KeyError, TypeError) as exc:
        raise MalformedDocument(1, f"missing or mistyped header field: {exc}") from None
    except ValueError as exc:
        raise InvariantViolation(1, str(exc)) from None
    streams = streams_from_lines(lines[1:])
    try:
        return Recording(meta, profile, streams)
    except ValueError as exc:
        raise InvariantViolation(1, str(exc)) from None


def save_recording(rec: Recording, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_recording(rec))


def load_recording(path) -> Recording:
    with open(path, "rb") as fh:
        return decode_recording(fh.read())
