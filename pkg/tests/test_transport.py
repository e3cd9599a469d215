import dataclasses
import socket
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_recording
from falldet.domain import AccelSample, EcgSample, encode_recording
from falldet.errors import (DuplicateMeta, FinalFlushFailed, Forbidden, MissingChunk, MissingMeta,
                            OutOfOrderSample, ProtocolError)
from falldet.simgen import ActivityKind, ScenarioScript, make_profiles, synth_recording
from falldet.transport import (ChannelFault, Chunker, Decision, FaultyChannel, FrameDecoder, IngestServer,
                               LocalChannel, MsgType, SessionOutcome, Store, TcpChannel, TcpIngestServer,
                               WireMessage, chunk_streams, client_session, encode_frame, fetch_recording,
                               list_recordings, reassemble)
from falldet.transport.wire import ping, post_chunk, post_meta, post_user

ALLOW = ["127.0.0.1"]


@pytest.fixture(scope="module")
def rec():
    script = ScenarioScript(((ActivityKind.Walking, 9000), (ActivityKind.Stumble, 4000),
                             (ActivityKind.Standing, 10_300)), 4)
    return synth_recording(script, make_profiles(1, 4)[0], recording_id="rec-a")


@pytest.fixture
def server(tmp_path):
    return IngestServer(Store(tmp_path / "store"), ALLOW)


class Recorder:
    def __init__(self, inner):
        self.inner = inner
        self.sent = []

    def request(self, msg):
        self.sent.append(msg)
        return self.inner.request(msg)

    def close(self):
        self.inner.close()


def test_chunk_emitted_when_time_crosses_boundary():
    ch = Chunker("r")
    for t in range(0, 5000, 5):
        assert ch.push(AccelSample(t, 0, 0, 1000)) == []
    out = ch.push(AccelSample(5000, 0, 0, 1000))
    assert [c.chunk_index for c in out] == [0]
    assert len(out[0].streams.accel_t) == 1000


def test_partial_chunk_only_on_flush():
    ch = Chunker("r")
    emitted = []
    for t in range(0, 12_300, 5):
        emitted += [c.chunk_index for c in ch.push(AccelSample(t, 1, 2, 3))]
    assert emitted == [0, 1]
    tail = ch.flush()
    assert [c.chunk_index for c in tail] == [2]
    assert tail[0].streams.accel_t[-1] == 12_295


def test_out_of_order_rejected():
    ch = Chunker("r")
    ch.push(EcgSample(200, 1.0))
    with pytest.raises(OutOfOrderSample):
        ch.push(EcgSample(100, 1.0))
    with pytest.raises(OutOfOrderSample):
        ch.push(EcgSample(200, 2.0))


def test_gap_emits_empty_chunks():
    ch = Chunker("r")
    ch.push(AccelSample(10, 0, 0, 0))
    out = ch.push(AccelSample(16_000, 0, 0, 0))
    assert [c.chunk_index for c in out] == [0, 1, 2]
    assert out[1].streams.is_empty


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 3000), min_size=1, max_size=60))
def test_chunks_tile_the_stream(gaps):
    t = np.cumsum(gaps)
    rec = make_recording(make_profiles(1, 0)[0], accel_t=t, accel_mg=np.ones((len(t), 3)))
    chunks = chunk_streams("r", rec.streams)
    assert [c.chunk_index for c in chunks] == list(range(len(chunks)))
    for c in chunks:
        ts = c.streams.accel_t
        assert np.all((ts >= c.chunk_index * 5000) & (ts < (c.chunk_index + 1) * 5000))
    assert np.array_equal(np.concatenate([c.streams.accel_t for c in chunks]), t)


def test_lossless_session_posts_in_order_then_meta(server, rec):
    chan = Recorder(LocalChannel(server))
    out = client_session(rec, chan, Decision.Save)
    assert out.status == Decision.Save and out.meta_posted
    kinds = [m.type for m in chan.sent]
    assert kinds[0] == MsgType.POST_USER and kinds[-1] == MsgType.POST_META
    idx = [int(m.payload["doc"].split('"chunk_index":')[1].split(",")[0]) for m in chan.sent
           if m.type == MsgType.POST_CHUNK]
    assert idx == list(range(5))
    assert out.posted_chunks == frozenset(range(5)) and out.failures == 0
    assert encode_recording(reassemble(server.store, "rec-a")) == encode_recording(rec)


def test_lossy_save_posts_everything(server, rec):
    chan = FaultyChannel(LocalChannel(server), ChannelFault(drop_prob=0.3, seed=3))
    out = client_session(rec, chan, Decision.Save)
    chan.close()
    assert out.status == Decision.Save
    assert out.posted_chunks == frozenset(range(out.n_chunks)) and out.failures > 0
    assert encode_recording(reassemble(server.store, "rec-a")) == encode_recording(rec)


@pytest.mark.parametrize("seed", range(6))
def test_end_to_end_identity_under_faults(tmp_path, rec, seed):
    srv = IngestServer(Store(tmp_path / f"s{seed}"), ALLOW)
    chan = FaultyChannel(LocalChannel(srv), ChannelFault(drop_prob=0.5, reorder_prob=0.1, seed=seed))
    client_session(rec, chan, Decision.Save)
    chan.close()
    assert encode_recording(reassemble(srv.store, "rec-a")) == encode_recording(rec)


def test_cancel_leaves_orphans(server, rec):
    out = client_session(rec, LocalChannel(server), Decision.Cancel, stop_at_ms=15_000)
    assert out.status == Decision.Cancel and not out.meta_posted
    assert out.posted_chunks == {0, 1, 2}
    assert server.store.orphan_chunks() == [("rec-a", 0), ("rec-a", 1), ("rec-a", 2)]
    assert list_recordings(server.store) == []
    with pytest.raises(MissingMeta):
        reassemble(server.store, "rec-a")
    with pytest.raises(MissingMeta):
        fetch_recording(LocalChannel(server), "rec-a")


def test_flush_budget_exhausted(server, rec):
    chan = FaultyChannel(LocalChannel(server), ChannelFault(drop_prob=1.0, seed=0))
    with pytest.raises(FinalFlushFailed):
        client_session(rec, chan, Decision.Save, budget=3)


def test_session_outcome_invariant():
    with pytest.raises(ValueError):
        SessionOutcome(Decision.Cancel, meta_posted=True)
    with pytest.raises(ValueError):
        ChannelFault(drop_prob=1.5)


def test_allowlist_blocks_every_mutation(server, rec):
    chunks = chunk_streams(rec.recording_id, rec.streams)
    msgs = [post_user(rec.profile), post_chunk(chunks[0]), post_meta(rec.meta), ping()]
    for m in msgs:
        r = server.handle(encode_frame(m)[4:], "10.0.0.9")
        assert not r.ok and r.error == "Forbidden"
    # rejected before parsing: garbage from an outsider is still just Forbidden
    assert server.handle(b"\xff not json", "10.0.0.9").error == "Forbidden"
    assert server.store.mutations == 0 and server.store.chunk_keys() == []
    with pytest.raises(Forbidden):
        client_session(rec, LocalChannel(server, source_addr="10.0.0.9"))
    assert server.store.mutations == 0


def test_ping_and_bad_payload(server):
    assert server.handle(ping(), "127.0.0.1").ok
    r = server.handle(b"{not json", "127.0.0.1")
    assert not r.ok and r.error == "ProtocolError"


def test_chunk_post_is_idempotent(server, rec):
    c = chunk_streams(rec.recording_id, rec.streams)[1]
    first = server.handle(post_chunk(c, 1), "127.0.0.1")
    second = server.handle(post_chunk(c, 2), "127.0.0.1")
    assert first.ok and second.ok
    assert first.body["stored"] and not second.body["stored"]
    assert server.store.chunk_keys() == [("rec-a", 1)]


def test_duplicate_meta(server, rec):
    assert server.handle(post_meta(rec.meta), "127.0.0.1").ok
    assert server.handle(post_meta(rec.meta), "127.0.0.1").ok
    other = dataclasses.replace(rec.meta, created_at="2030-01-01T00:00:00Z")
    r = server.handle(post_meta(other), "127.0.0.1")
    assert r.error == "DuplicateMeta"
    with pytest.raises(DuplicateMeta):
        server.store.put_meta(other)


def test_reassemble_ignores_arrival_order(server, rec):
    chunks = chunk_streams(rec.recording_id, rec.streams)[:3]
    short = dataclasses.replace(rec.meta, chunk_indexes=(0, 1, 2))
    for i in (2, 0, 1):
        server.store.put_chunk(chunks[i])
    server.store.put_user(rec.profile)
    server.store.put_meta(short)
    got = reassemble(server.store, "rec-a")
    want = rec.streams.between(0, 15_000)
    assert np.array_equal(got.streams.ecg_t, want.ecg_t)
    assert np.array_equal(got.streams.accel_mg.view(np.uint32), want.accel_mg.view(np.uint32))
    assert got.streams.events == want.events


def test_missing_chunk_named(server, rec):
    chunks = chunk_streams(rec.recording_id, rec.streams)
    for c in chunks[:3]:
        server.store.put_chunk(c)
    server.store.put_user(rec.profile)
    server.store.put_meta(dataclasses.replace(rec.meta, chunk_indexes=(0, 1, 2, 3)))
    with pytest.raises(MissingChunk) as err:
        reassemble(server.store, "rec-a")
    assert err.value.index == 3


def test_store_survives_reopen(tmp_path, rec):
    srv = IngestServer(Store(tmp_path / "s"), ALLOW)
    client_session(rec, LocalChannel(srv))
    again = Store(tmp_path / "s")
    assert again.list_recordings() == ["rec-a"]
    assert encode_recording(reassemble(again, "rec-a")) == encode_recording(rec)


def test_tcp_round_trip(tmp_path, rec):
    srv = TcpIngestServer(IngestServer(Store(tmp_path / "s"), ALLOW))
    srv.start_background()
    try:
        chan = TcpChannel("127.0.0.1", srv.port)
        out = client_session(rec, chan)
        assert out.meta_posted
        assert encode_recording(fetch_recording(chan, "rec-a")) == encode_recording(rec)
        chan.close()
    finally:
        srv.shutdown()
        srv.server_close()


def test_tcp_server_drops_oversized_frame(tmp_path):
    srv = TcpIngestServer(IngestServer(Store(tmp_path / "s"), ALLOW))
    srv.start_background()
    try:
        with socket.create_connection(("127.0.0.1", srv.port), timeout=5) as s:
            s.sendall(struct.pack(">I", 2**31))
            assert s.recv(10) == b""
    finally:
        srv.shutdown()
        srv.server_close()


def test_frame_decoder_handles_split_input():
    frames = encode_frame(ping()) + encode_frame(WireMessage(MsgType.GET_RECORDING, {"recording_id": "x"}, 7))
    dec = FrameDecoder()
    got = []
    for i in range(len(frames)):
        got += dec.feed(frames[i:i + 1])
    assert len(got) == 2 and dec.pending == 0
    assert encode_frame(ping())[:4] == struct.pack(">I", len(got[0]))
    with pytest.raises(ProtocolError):
        FrameDecoder().feed(struct.pack(">I", 2**30))
