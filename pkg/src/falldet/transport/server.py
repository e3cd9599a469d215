"""Allowlisted ingest server: message handling plus a threaded TCP front end."""
from __future__ import annotations

import logging
import socketserver
import threading

from ..domain import RecordingMeta, UserProfile, encode_recording
from ..errors import FallDetError, Forbidden, ProtocolError
from .store import Store, reassemble
from .wire import MsgType, WireMessage, WireResponse, decode_body, decode_chunk, encode_frame, read_frame

log = logging.getLogger(__name__)


class IngestServer:
    def __init__(self, store: Store, allowlist):
        self.store = store
        self.allowlist = frozenset(allowlist)

    def handle(self, frame, source_addr: str) -> WireResponse:
        """Process one request frame (raw bytes or a :class:`WireMessage`).

        The source address is checked before the body is even parsed.
        """
        if source_addr not in self.allowlist:
            return WireResponse(None, False, Forbidden.__name__, f"{source_addr} is not allowlisted")
        rid = None
        try:
            msg = frame if isinstance(frame, WireMessage) else WireMessage.from_json(decode_body(frame))
            rid = msg.request_id
            body = self._dispatch(msg)
            return WireResponse(rid, True, body=body)
        except FallDetError as exc:
            return WireResponse(rid, False, type(exc).__name__, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return WireResponse(rid, False, ProtocolError.__name__, f"bad payload: {exc}")

    def _dispatch(self, msg: WireMessage) -> dict:
        p = msg.payload
        if msg.type == MsgType.PING:
            return {"pong": True}
        if msg.type == MsgType.POST_USER:
            return {"stored": self.store.put_user(UserProfile.from_json(p))}
        if msg.type == MsgType.POST_CHUNK:
            return {"stored": self.store.put_chunk(decode_chunk(p["doc"]))}
        if msg.type == MsgType.POST_META:
            return {"stored": self.store.put_meta(RecordingMeta.from_json(p))}
        if msg.type == MsgType.GET_RECORDING:
            rec = reassemble(self.store, str(p["recording_id"]))
            return {"recording": encode_recording(rec).decode("utf-8")}
        raise ProtocolError(f"unsupported message type {msg.type}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        ingest: IngestServer = self.server.ingest
        addr = self.client_address[0]
        while True:
            try:
                body = read_frame(self.rfile)
            except ProtocolError as exc:
                log.warning("dropping connection from %s: %s", addr, exc)
                return
            if body is None:
                return
            resp = ingest.handle(body, addr)
            self.wfile.write(encode_frame(resp))
            self.wfile.flush()


class TcpIngestServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, ingest: IngestServer, host: str = "127.0.0.1", port: int = 0):
        self.ingest = ingest
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
