"""Chunked recording upload: chunker, framed wire protocol, server, store and client session."""
from .chunker import Chunker, chunk_streams, iter_items
from .client import (ChannelFault, Decision, FaultyChannel, LocalChannel, SessionOutcome, TcpChannel,
                     client_session, fetch_recording)
from .server import IngestServer, TcpIngestServer
from .store import Store, list_recordings, load_all, reassemble
from .wire import FrameDecoder, MsgType, WireMessage, WireResponse, encode_frame

__all__ = [
    "Chunker", "chunk_streams", "iter_items", "ChannelFault", "Decision", "FaultyChannel", "LocalChannel",
    "SessionOutcome", "TcpChannel", "client_session", "fetch_recording", "IngestServer", "TcpIngestServer",
    "Store", "list_recordings", "load_all", "reassemble", "FrameDecoder", "MsgType", "WireMessage",
    "WireResponse", "encode_frame",
]
