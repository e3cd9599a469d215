"""Client side: channels (in-process, TCP, fault-injecting) and the recording session."""
from __future__ import annotations

import itertools
import socket
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..domain import Recording, decode_recording
from ..errors import ChannelError, FinalFlushFailed, Forbidden, MissingMeta, ProtocolError, StoreFailure
from .chunker import Chunker, iter_items
from .server import IngestServer
from .wire import (FrameDecoder, WireMessage, WireResponse, decode_body, encode_frame, get_recording,
                   post_chunk, post_meta, post_user, read_frame)


class LocalChannel:
    """In-process channel that still pushes every message through the frame codec."""

    def __init__(self, server: IngestServer, source_addr: str = "127.0.0.1"):
        self.server = server
        self.source_addr = source_addr

    def request(self, msg: WireMessage) -> WireResponse:
        dec = FrameDecoder()
        (body,) = dec.feed(encode_frame(msg))
        resp = self.server.handle(body, self.source_addr)
        (rbody,) = dec.feed(encode_frame(resp))
        return WireResponse.from_json(decode_body(rbody))

    def close(self):
        pass


class TcpChannel:
    def __init__(self, host: str, port: int, timeout: float = 10.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ChannelError(f"cannot connect to {host}:{port}: {exc}") from None
        self.rfile = self.sock.makefile("rb")

    def request(self, msg: WireMessage) -> WireResponse:
        try:
            self.sock.sendall(encode_frame(msg))
            body = read_frame(self.rfile)
        except OSError as exc:
            raise ChannelError(str(exc)) from None
        if body is None:
            raise ChannelError("server closed the connection")
        return WireResponse.from_json(decode_body(body))

    def close(self):
        self.rfile.close()
        self.sock.close()


@dataclass(frozen=True)
class ChannelFault:
    drop_prob: float = 0.0
    reorder_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.drop_prob, self.reorder_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("fault probabilities must lie in [0, 1]")
        if self.drop_prob + self.reorder_prob > 1.0:
            raise ValueError("drop_prob + reorder_prob must not exceed 1")


class FaultyChannel:
    """Seeded lossy wrapper around another channel.

    A dropped exchange loses either the request or the response (even odds).
    A reordered request is held back and delivered after the next request
    that gets through; the sender sees a timeout for it either way.
    """

    def __init__(self, inner, fault: ChannelFault):
        self.inner = inner
        self.fault = fault
        self.rng = np.random.default_rng(fault.seed)
        self._held: list[WireMessage] = []
        self.delivered = 0

    def _deliver(self, msg):
        self.delivered += 1
        return self.inner.request(msg)

    def drain(self):
        held, self._held = self._held, []
        for m in held:
            self._deliver(m)

    def request(self, msg: WireMessage) -> WireResponse:
        u = self.rng.random()
        if u < self.fault.drop_prob:
            if self.rng.random() < 0.5:
                raise ChannelError("request lost")
            self._deliver(msg)
            self.drain()
            raise ChannelError("response lost")
        if u < self.fault.drop_prob + self.fault.reorder_prob:
            self._held.append(msg)
            raise ChannelError("request delayed")
        resp = self._deliver(msg)
        self.drain()
        return resp

    def close(self):
        self.drain()
        self.inner.close()


class Decision(str, Enum):
    Save = "Save"
    Cancel = "Cancel"


@dataclass(frozen=True)
class SessionOutcome:
    status: Decision
    posted_chunks: frozenset = field(default_factory=frozenset)
    meta_posted: bool = False
    n_chunks: int = 0
    attempts: int = 0
    failures: int = 0

    def __post_init__(self):
        if (self.status == Decision.Save) != self.meta_posted:
            raise ValueError("a saved session posts its meta; a cancelled one never does")

    def to_json(self) -> dict:
        return {"status": self.status.value, "posted_chunks": sorted(self.posted_chunks),
                "meta_posted": self.meta_posted, "n_chunks": self.n_chunks,
                "attempts": self.attempts, "failures": self.failures}


_FATAL = {Forbidden.__name__: Forbidden, ProtocolError.__name__: ProtocolError}
_REMOTE_ERRORS = {c.__name__: c for c in (Forbidden, ProtocolError, MissingMeta, StoreFailure)}


def client_session(rec: Recording, channel, decision=Decision.Save, *, budget: int = 10,
                   stop_at_ms: int | None = None) -> SessionOutcome:
    """Stream ``rec`` through a chunker and post chunks as they complete.

    A failed post goes to the back of the queue and is retried on the next
    pass.  On Save the partial last chunk is flushed and the queue drained in
    at most ``budget`` passes, then the meta is posted.  On Cancel nothing
    further is sent.  ``stop_at_ms`` ends the stream early (inclusive).
    """
    decision = Decision(decision)
    ids = itertools.count(1)
    queue: deque = deque([("user", rec.profile)])
    posted: set[int] = set()
    stats = {"attempts": 0, "failures": 0}

    def send(msg: WireMessage) -> bool:
        stats["attempts"] += 1
        try:
            resp = channel.request(msg)
        except ChannelError:
            stats["failures"] += 1
            return False
        if not resp.ok:
            if resp.error in _FATAL:
                raise _FATAL[resp.error](resp.message)
            stats["failures"] += 1
            return False
        return True

    def one_pass():
        for _ in range(len(queue)):
            kind, obj = queue.popleft()
            msg = post_user(obj, next(ids)) if kind == "user" else post_chunk(obj, next(ids))
            if send(msg):
                if kind == "chunk":
                    posted.add(obj.chunk_index)
            else:
                queue.append((kind, obj))

    chunker = Chunker(rec.recording_id)
    for item in iter_items(rec.streams, stop_at_ms):
        emitted = chunker.push(item)
        if emitted:
            queue.extend(("chunk", c) for c in emitted)
            one_pass()

    if decision == Decision.Cancel:
        return SessionOutcome(decision, frozenset(posted), False, chunker.index,
                              stats["attempts"], stats["failures"])

    queue.extend(("chunk", c) for c in chunker.flush())
    n_chunks = chunker.index
    meta = replace(rec.meta, chunk_indexes=tuple(range(n_chunks)))
    meta_ok = False
    for _ in range(budget):
        if queue:
            one_pass()
        if not queue:
            meta_ok = send(post_meta(meta, next(ids)))
            if meta_ok:
                break
    if not meta_ok:
        raise FinalFlushFailed(f"{len(queue)} items still queued after {budget} passes")
    return SessionOutcome(decision, frozenset(posted), True, n_chunks, stats["attempts"], stats["failures"])


def fetch_recording(channel, recording_id: str) -> Recording:
    resp = channel.request(get_recording(recording_id, 1))
    if not resp.ok:
        cls = _REMOTE_ERRORS.get(resp.error, ProtocolError)
        raise cls(resp.message)
    return decode_recording(resp.body["recording"])
