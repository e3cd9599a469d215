"""Cut a live sample stream into fixed 5 s chunks."""
from __future__ import annotations

from typing import Iterator, Union

import numpy as np

from ..domain import CHUNK_MS, AccelSample, Chunk, EcgSample, LabelEvent, Streams
from ..errors import OutOfOrderSample

StreamItem = Union[EcgSample, AccelSample, LabelEvent]


class Chunker:
    """Buffers samples and emits chunk ``k`` once stream time reaches ``(k+1) * 5000`` ms.

    Items must arrive in non-decreasing time order overall and strictly
    increasing order within each stream.
    """

    def __init__(self, recording_id: str, span_ms: int = CHUNK_MS):
        self.recording_id = recording_id
        self.span_ms = span_ms
        self.index = 0
        self._last_t = -1
        self._last = {EcgSample: -1, AccelSample: -1, LabelEvent: -1}
        self._dirty = False
        self._reset()

    def _reset(self):
        self._ecg_t, self._ecg_v = [], []
        self._acc_t, self._acc_v = [], []
        self._events = []
        self._dirty = False

    def _emit(self) -> Chunk:
        s = Streams(
            np.array(self._ecg_t, np.int64), np.array(self._ecg_v, np.float32),
            np.array(self._acc_t, np.int64), np.array(self._acc_v, np.float32).reshape(-1, 3),
            tuple(self._events),
        )
        chunk = Chunk(self.recording_id, self.index, s)
        self.index += 1
        self._reset()
        return chunk

    def push(self, item: StreamItem) -> list[Chunk]:
        t = int(item.t_ms)
        kind = type(item)
        if t < self._last_t or t <= self._last[kind]:
            raise OutOfOrderSample(f"{kind.__name__} at t={t} after t={max(self._last_t, self._last[kind])}")
        out = []
        while t >= (self.index + 1) * self.span_ms:
            out.append(self._emit())
        self._last_t = self._last[kind] = t
        if kind is EcgSample:
            self._ecg_t.append(t)
            self._ecg_v.append(item.uV)
        elif kind is AccelSample:
            self._acc_t.append(t)
            self._acc_v.append((item.x_mg, item.y_mg, item.z_mg))
        else:
            self._events.append(item)
        self._dirty = True
        return out

    def flush(self) -> list[Chunk]:
        """Emit the partial chunk in progress, if it holds anything."""
        return [self._emit()] if self._dirty else []


def iter_items(streams: Streams, stop_at_ms: int | None = None) -> Iterator[StreamItem]:
    """All samples and events of ``streams`` merged in time order.

    Same-time items come out ECG first, then accel, then events.
    """
    t = np.concatenate([streams.ecg_t, streams.accel_t,
                        np.array([e.t_ms for e in streams.events], dtype=np.int64)])
    src = np.concatenate([np.zeros(len(streams.ecg_t), np.int8), np.ones(len(streams.accel_t), np.int8),
                          np.full(len(streams.events), 2, np.int8)])
    pos = np.concatenate([np.arange(len(streams.ecg_t)), np.arange(len(streams.accel_t)),
                          np.arange(len(streams.events))])
    order = np.lexsort((src, t))
    ecg_v = streams.ecg_uv.tolist()
    acc = streams.accel_mg.tolist()
    for ti, si, pi in zip(t[order].tolist(), src[order].tolist(), pos[order].tolist()):
        if stop_at_ms is not None and ti > stop_at_ms:
            return
        if si == 0:
            yield EcgSample(ti, ecg_v[pi])
        elif si == 1:
            yield AccelSample(ti, *acc[pi])
        else:
            yield streams.events[pi]


def chunk_streams(recording_id: str, streams: Streams) -> list[Chunk]:
    """Offline helper: the full chunk sequence a live session would produce."""
    ch = Chunker(recording_id)
    out = []
    for item in iter_items(streams):
        out.extend(ch.push(item))
    out.extend(ch.flush())
    return out
