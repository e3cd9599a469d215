"""On-disk store for users, recording metas and chunk documents, plus reassembly."""
from __future__ import annotations

import json
import os
import re
import threading
from pathlib import Path

from ..domain import Chunk, Recording, RecordingMeta, Streams, UserProfile
from ..errors import MalformedDocument, MissingChunk, MissingMeta, DuplicateMeta, StoreFailure
from .wire import decode_chunk, encode_chunk

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$")


def _check_id(rid: str) -> str:
    if not isinstance(rid, str) or not _SAFE_ID.match(rid):
        raise ValueError(f"identifier {rid!r} is not a safe store key")
    return rid


def _line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


class Store:
    """``users.jsonl`` and ``metas.jsonl`` are append-only logs; each chunk is one file.

    Writes go through a single lock; reads of chunk files need none because
    chunk files are renamed into place complete.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.chunk_dir = self.root / "chunks"
        self._lock = threading.Lock()
        self.mutations = 0
        try:
            self.chunk_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreFailure(f"cannot create store at {self.root}: {exc}") from None
        self._users: dict[str, UserProfile] = {}
        self._metas: dict[str, RecordingMeta] = {}
        for obj in self._read_log("users.jsonl"):
            p = UserProfile.from_json(obj)
            self._users[p.subject_id] = p
        for obj in self._read_log("metas.jsonl"):
            m = RecordingMeta.from_json(obj)
            self._metas.setdefault(m.recording_id, m)

    def _read_log(self, name):
        path = self.root / name
        if not path.exists():
            return []
        out = []
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise MalformedDocument(i, f"{name}: {exc.msg}") from None
        return out

    def _append(self, name: str, obj) -> None:
        try:
            with open(self.root / name, "a") as fh:
                fh.write(_line(obj))
        except OSError as exc:
            raise StoreFailure(str(exc)) from None
        self.mutations += 1

    def _chunk_path(self, rid: str, index: int) -> Path:
        return self.chunk_dir / _check_id(rid) / f"{int(index):06d}.jsonl"

    # -- writes ------------------------------------------------------------

    def put_user(self, profile: UserProfile) -> bool:
        """Insert or replace a profile; returns False when nothing changed."""
        _check_id(profile.subject_id)
        with self._lock:
            if self._users.get(profile.subject_id) == profile:
                return False
            self._append("users.jsonl", profile.to_json())
            self._users[profile.subject_id] = profile
            return True

    def put_chunk(self, chunk: Chunk) -> bool:
        """Store a chunk once; a repeat post of the same key is a no-op returning False."""
        path = self._chunk_path(chunk.recording_id, chunk.chunk_index)
        with self._lock:
            if path.exists():
                return False
            try:
                path.parent.mkdir(exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(encode_chunk(chunk))
                os.replace(tmp, path)
            except OSError as exc:
                raise StoreFailure(str(exc)) from None
            self.mutations += 1
            return True

    def put_meta(self, meta: RecordingMeta) -> bool:
        _check_id(meta.recording_id)
        with self._lock:
            old = self._metas.get(meta.recording_id)
            if old is not None:
                if old != meta:
                    raise DuplicateMeta(f"recording {meta.recording_id} already has a different meta")
                return False
            self._append("metas.jsonl", meta.to_json())
            self._metas[meta.recording_id] = meta
            return True

    # -- reads -------------------------------------------------------------

    def get_user(self, subject_id: str) -> UserProfile:
        try:
            return self._users[subject_id]
        except KeyError:
            raise MissingMeta(f"no profile for subject {subject_id!r}") from None

    def get_meta(self, recording_id: str) -> RecordingMeta:
        try:
            return self._metas[recording_id]
        except KeyError:
            raise MissingMeta(f"no meta for recording {recording_id!r}") from None

    def get_chunk(self, recording_id: str, index: int) -> Chunk:
        try:
            path = self._chunk_path(recording_id, index)
        except ValueError:
            raise MissingChunk(index, recording_id) from None
        try:
            doc = path.read_text()
        except FileNotFoundError:
            raise MissingChunk(index, recording_id) from None
        except OSError as exc:
            raise StoreFailure(str(exc)) from None
        return decode_chunk(doc)

    def has_chunk(self, recording_id: str, index: int) -> bool:
        return self._chunk_path(recording_id, index).exists()

    def chunk_keys(self) -> list[tuple[str, int]]:
        """Every stored chunk, orphans included."""
        keys = []
        for d in sorted(p for p in self.chunk_dir.iterdir() if p.is_dir()):
            keys.extend((d.name, int(f.stem)) for f in sorted(d.glob("*.jsonl")))
        return keys

    def list_recordings(self) -> list[str]:
        """Recording ids that have a meta; chunks without one never show up here."""
        return sorted(self._metas)

    def orphan_chunks(self) -> list[tuple[str, int]]:
        return [k for k in self.chunk_keys() if k[0] not in self._metas]


def reassemble(store: Store, recording_id: str) -> Recording:
    meta = store.get_meta(recording_id)
    profile = store.get_user(meta.subject_id)
    parts = [store.get_chunk(recording_id, i).streams for i in meta.chunk_indexes]
    return Recording(meta, profile, Streams.concat(parts))


def list_recordings(store: Store) -> list[str]:
    return store.list_recordings()


def load_all(store: Store) -> list[Recording]:
    """Every complete recording in the store; the input set for preprocessing."""
    return [reassemble(store, rid) for rid in store.list_recordings()]
