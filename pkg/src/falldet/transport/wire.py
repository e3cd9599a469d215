"""Length-prefixed JSON framing and the request/response message types."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

from ..domain import Chunk, RecordingMeta, UserProfile, streams_from_lines, streams_to_lines
from ..errors import MalformedDocument, ProtocolError

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024
CHUNK_FORMAT = "falldet-chunk"


class MsgType(str, Enum):
    PING = "PING"
    POST_USER = "POST_USER"
    POST_CHUNK = "POST_CHUNK"
    POST_META = "POST_META"
    GET_RECORDING = "GET_RECORDING"


@dataclass(frozen=True)
class WireMessage:
    type: MsgType
    payload: dict = field(default_factory=dict)
    request_id: int = 0

    def to_json(self) -> dict:
        return {"type": MsgType(self.type).value, "payload": self.payload, "request_id": self.request_id}

    @classmethod
    def from_json(cls, obj) -> "WireMessage":
        if not isinstance(obj, dict):
            raise ProtocolError("message must be a JSON object")
        try:
            return cls(MsgType(obj["type"]), dict(obj.get("payload") or {}), int(obj["request_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad message envelope: {exc}") from None


@dataclass(frozen=True)
class WireResponse:
    request_id: int | None
    ok: bool
    error: str | None = None
    message: str = ""
    body: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"request_id": self.request_id, "ok": self.ok, "error": self.error,
                "message": self.message, "body": self.body}

    @classmethod
    def from_json(cls, obj) -> "WireResponse":
        try:
            return cls(obj["request_id"], bool(obj["ok"]), obj.get("error"), obj.get("message", ""),
                       obj.get("body") or {})
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"bad response envelope: {exc}") from None


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_frame(obj) -> bytes:
    body = _dumps(obj.to_json() if hasattr(obj, "to_json") else obj)
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes):
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame is not JSON: {exc}") from None


class FrameDecoder:
    """Incremental decoder: feed bytes, collect complete frame bodies."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= HEADER.size:
            (n,) = HEADER.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise ProtocolError(f"frame of {n} bytes exceeds limit")
            if len(self._buf) < HEADER.size + n:
                break
            out.append(bytes(self._buf[HEADER.size:HEADER.size + n]))
            del self._buf[:HEADER.size + n]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def read_frame(rfile) -> bytes | None:
    """Blocking read of one frame body from a file-like stream; None on clean EOF."""
    head = rfile.read(HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("connection closed inside a frame header")
    (n,) = HEADER.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit")
    body = rfile.read(n)
    if len(body) < n:
        raise ProtocolError("connection closed inside a frame body")
    return body


# -- payload codecs ----------------------------------------------------------

def encode_chunk(chunk: Chunk) -> str:
    head = json.dumps({"format": CHUNK_FORMAT, "version": 1, "recording_id": chunk.recording_id,
                       "chunk_index": chunk.chunk_index}, sort_keys=True, separators=(",", ":"))
    return "\n".join([head] + streams_to_lines(chunk.streams)) + "\n"


def decode_chunk(doc: str) -> Chunk:
    lines = [(i + 1, ln) for i, ln in enumerate(doc.split("\n"))]
    try:
        head = json.loads(lines[0][1])
        if head.get("format") != CHUNK_FORMAT:
            raise MalformedDocument(1, "missing chunk header")
        rid, idx = str(head["recording_id"]), int(head["chunk_index"])
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as exc:
        raise MalformedDocument(1, f"bad chunk header: {exc}") from None
    streams = streams_from_lines(lines[1:], chunk=True)
    try:
        return Chunk(rid, idx, streams)
    except ValueError as exc:
        raise MalformedDocument(1, str(exc)) from None


def ping() -> WireMessage:
    return WireMessage(MsgType.PING)


def post_user(profile: UserProfile, request_id: int = 0) -> WireMessage:
    return WireMessage(MsgType.POST_USER, profile.to_json(), request_id)


def post_chunk(chunk: Chunk, request_id: int = 0) -> WireMessage:
    return WireMessage(MsgType.POST_CHUNK, {"doc": encode_chunk(chunk)}, request_id)


def post_meta(meta: RecordingMeta, request_id: int = 0) -> WireMessage:
    return WireMessage(MsgType.POST_META, meta.to_json(), request_id)


def get_recording(recording_id: str, request_id: int = 0) -> WireMessage:
    return WireMessage(MsgType.GET_RECORDING, {"recording_id": recording_id}, request_id)
