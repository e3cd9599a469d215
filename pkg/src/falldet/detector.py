"""Live inference: 100 ms interval ingestion, scoring, debounce, and alert escalation.

Nothing here reads the wall clock.  Every input carries its own ``t_ms`` and
the replay driver orders inputs on a simulated timeline.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .domain import INTERVAL_MS, Recording, UserProfile
from .errors import NoContacts, SinkUnavailable
from .models import TrainedModel, score_sample
from .preprocess import N_FEATURES, ScalerParams, apply_scaler, to_intervals

REFRACTORY_MS = 10_000
ESCALATION_TIMEOUT_MS = 60_000


@dataclass(frozen=True)
class Location:
    latitude: float
    longitude: float
    address: str

    def to_json(self) -> dict:
        return {"latitude": self.latitude, "longitude": self.longitude, "address": self.address}

    @classmethod
    def from_json(cls, obj) -> "Location":
        return cls(float(obj["latitude"]), float(obj["longitude"]), str(obj["address"]))


DEFAULT_LOCATION = Location(55.9446, -3.1878, "10 Crichton St, Edinburgh")


@dataclass(frozen=True)
class DetectorConfig:
    w: int
    threshold: float
    refractory_ms: int = REFRACTORY_MS
    escalation_timeout_ms: int = ESCALATION_TIMEOUT_MS
    location: Location = DEFAULT_LOCATION
    model_path: str = ""
    scaler_path: str = ""

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if self.refractory_ms <= 0 or self.escalation_timeout_ms <= 0:
            raise ValueError("timeouts must be positive")
        if self.w < 1:
            raise ValueError("w must be >= 1")


# -- FSM inputs and actions ----------------------------------------------------

@dataclass(frozen=True)
class FallEvent:
    event_id: str
    t_ms: int
    score: float = float("nan")


@dataclass(frozen=True)
class UserOk:
    t_ms: int


@dataclass(frozen=True)
class SendHelp:
    t_ms: int


@dataclass(frozen=True)
class Tick:
    t_ms: int


@dataclass(frozen=True)
class AlertsDispatched:
    t_ms: int


FsmInput = Union[FallEvent, UserOk, SendHelp, Tick, AlertsDispatched]


@dataclass(frozen=True)
class NotifyUser:
    event_id: str
    t_ms: int


@dataclass(frozen=True)
class SendAlerts:
    event_id: str
    t_ms: int
    reason: str


class Mode(str, Enum):
    Idle = "Idle"
    FallDetected = "FallDetected"
    Escalated = "Escalated"


@dataclass(frozen=True)
class FsmState:
    mode: Mode = Mode.Idle
    deadline: int | None = None
    event_id: str | None = None


IDLE = FsmState()


def fsm_step(state: FsmState, inp: FsmInput, timeout_ms: int = ESCALATION_TIMEOUT_MS):
    """Pure transition function; returns ``(next_state, actions)``."""
    if state.mode == Mode.Idle and isinstance(inp, FallEvent):
        return FsmState(Mode.FallDetected, inp.t_ms + timeout_ms, inp.event_id), [NotifyUser(inp.event_id, inp.t_ms)]
    if state.mode == Mode.FallDetected:
        if isinstance(inp, UserOk):
            return IDLE, []
        if isinstance(inp, SendHelp):
            return FsmState(Mode.Escalated, None, state.event_id), [SendAlerts(state.event_id, inp.t_ms, "help")]
        if isinstance(inp, Tick) and inp.t_ms >= state.deadline:
            return FsmState(Mode.Escalated, None, state.event_id), [SendAlerts(state.event_id, inp.t_ms, "timeout")]
    if state.mode == Mode.Escalated and isinstance(inp, AlertsDispatched):
        return IDLE, []
    return state, []


# -- alerts ------------------------------------------------------------------------

@dataclass(frozen=True)
class AlertMessage:
    recipient: str
    contact_name: str
    body: str
    event_id: str = ""

    def to_json(self) -> dict:
        return {"recipient": self.recipient, "contact_name": self.contact_name, "body": self.body,
                "event_id": self.event_id}


def format_alert(profile: UserProfile, location: Location, event_id: str = "") -> list[AlertMessage]:
    if not profile.emergency_contacts:
        raise NoContacts(f"subject {profile.subject_id} has no emergency contacts")
    out = []
    for name, phone in profile.emergency_contacts:
        body = (f"{name}, a fall was detected for {profile.subject_id} and they have not responded. "
                f"Location: latitude {location.latitude:.6f}, longitude {location.longitude:.6f}. "
                f"Nearest address: {location.address}.")
        out.append(AlertMessage(phone, name, body, event_id))
    return out


@dataclass(frozen=True)
class DeliveryRecord:
    event_id: str
    recipient: str
    t_ms: int
    retry: bool
    duplicate: bool = False


class OutboxSink:
    """Append-only JSONL outbox; one record per (event id, recipient)."""

    def __init__(self, path):
        self.path = Path(path)
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        self._seen.add((obj["event_id"], obj["recipient"]))

    def dispatch(self, message: AlertMessage, t_ms: int, retry: bool = False) -> DeliveryRecord:
        key = (message.event_id, message.recipient)
        if key in self._seen:
            return DeliveryRecord(message.event_id, message.recipient, t_ms, retry, duplicate=True)
        rec = dict(message.to_json(), t_ms=int(t_ms), retry=retry)
        try:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise SinkUnavailable(str(exc)) from None
        self._seen.add(key)
        return DeliveryRecord(message.event_id, message.recipient, t_ms, retry)

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


class FlakySink:
    """Test double: fails the first ``failures`` dispatches, then forwards."""

    def __init__(self, inner, failures: int = 1):
        self.inner = inner
        self.remaining = failures

    def dispatch(self, message, t_ms, retry=False):
        if self.remaining > 0:
            self.remaining -= 1
            raise SinkUnavailable("sink offline")
        return self.inner.dispatch(message, t_ms, retry)


# -- runtime -----------------------------------------------------------------------

class DetectorRuntime:
    """Ring buffer of the last ``w`` intervals feeding the model once full."""

    def __init__(self, model: TrainedModel, scaler: ScalerParams, threshold: float,
                 refractory_ms: int = REFRACTORY_MS):
        if not np.isfinite(threshold):
            raise ValueError("threshold must be finite")
        self.model = model
        self.scaler = scaler
        self.threshold = float(threshold)
        self.refractory_ms = refractory_ms
        self.w = model.w
        self._ring = np.zeros((self.w, N_FEATURES), dtype=np.float32)
        self._head = 0
        self.seen = 0
        self.scores: list[float] = []
        self._last_event_t: int | None = None

    def window(self) -> np.ndarray:
        """Buffered intervals, oldest first."""
        return np.roll(self._ring, -self._head, axis=0)

    def on_interval(self, features, t_ms: int | None = None) -> FallEvent | None:
        x = np.asarray(features, dtype=np.float32)
        if x.shape != (N_FEATURES,):
            raise ValueError(f"interval must hold {N_FEATURES} features, got shape {x.shape}")
        self._ring[self._head] = x
        self._head = (self._head + 1) % self.w
        self.seen += 1
        if t_ms is None:
            t_ms = self.seen * INTERVAL_MS
        if self.seen < self.w:
            return None
        scaled = apply_scaler(self.scaler, self.window()).astype(np.float32)
        score = score_sample(self.model, scaled)
        self.scores.append(score)
        if score < self.threshold:
            return None
        if self._last_event_t is not None and t_ms - self._last_event_t < self.refractory_ms:
            return None
        self._last_event_t = t_ms
        return FallEvent(f"fall-{t_ms}", t_ms, score)


class AlertController:
    """Runs the FSM and turns its actions into notifications and sink dispatches."""

    def __init__(self, profile: UserProfile, location: Location, sink,
                 timeout_ms: int = ESCALATION_TIMEOUT_MS):
        self.profile = profile
        self.location = location
        self.sink = sink
        self.timeout_ms = timeout_ms
        self.state = IDLE
        self.actions: list = []
        self.deliveries: list[DeliveryRecord] = []
        self.failed: list[AlertMessage] = []
        self._retry: list[AlertMessage] = []

    def feed(self, inp: FsmInput) -> list:
        if isinstance(inp, Tick) and self._retry:
            pending, self._retry = self._retry, []
            for msg in pending:
                try:
                    self.deliveries.append(self.sink.dispatch(msg, inp.t_ms, retry=True))
                except SinkUnavailable:
                    self.failed.append(msg)
        self.state, actions = fsm_step(self.state, inp, self.timeout_ms)
        self.actions.extend(actions)
        for act in actions:
            if isinstance(act, SendAlerts):
                for msg in format_alert(self.profile, self.location, act.event_id):
                    try:
                        self.deliveries.append(self.sink.dispatch(msg, act.t_ms))
                    except SinkUnavailable:
                        self._retry.append(msg)
                self.state, _ = fsm_step(self.state, AlertsDispatched(act.t_ms), self.timeout_ms)
        return actions

    @property
    def alerts_sent(self) -> list[SendAlerts]:
        return [a for a in self.actions if isinstance(a, SendAlerts)]


# -- replay --------------------------------------------------------------------------

def parse_responses(text: str) -> list[UserOk | SendHelp]:
    """``<t_ms> ok|help`` per line; blank lines and ``#`` comments ignored."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1].lower() not in ("ok", "help"):
            raise ValueError(f"responses line {n}: expected '<t_ms> ok|help', got {line!r}")
        t = int(parts[0])
        out.append(UserOk(t) if parts[1].lower() == "ok" else SendHelp(t))
    return out


@dataclass
class ReplayResult:
    scores: list[float]
    events: list[FallEvent]
    alerts: list[SendAlerts]
    deliveries: list[DeliveryRecord]
    final_state: FsmState
    window_starts: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        return {"windows": len(self.scores), "fall_events": [e.t_ms for e in self.events],
                "alerts": [{"event_id": a.event_id, "t_ms": a.t_ms, "reason": a.reason} for a in self.alerts],
                "deliveries": len(self.deliveries), "final_state": self.final_state.mode.value}


def replay(recording: Recording, runtime: DetectorRuntime, controller: AlertController,
           responses: Sequence[UserOk | SendHelp] = ()) -> ReplayResult:
    """Drive the runtime from a recording's intervals on a simulated 100 ms clock.

    Interval ``i`` becomes available at ``(i + 1) * 100`` ms.  At equal times
    user responses go first, then the clock tick, then the sensor input.
    Ticks continue past the end of the data until any pending escalation resolves.
    """
    intervals = to_intervals(recording)
    pending = sorted(responses, key=lambda r: r.t_ms)
    ri = 0
    events: list[FallEvent] = []

    def respond_until(t):
        nonlocal ri
        while ri < len(pending) and pending[ri].t_ms <= t:
            controller.feed(pending[ri])
            ri += 1

    t = 0
    for i, row in enumerate(intervals):
        t = (i + 1) * INTERVAL_MS
        respond_until(t)
        controller.feed(Tick(t))
        ev = runtime.on_interval(row, t)
        if ev is not None:
            events.append(ev)
            controller.feed(ev)
    while controller.state.mode != Mode.Idle or controller._retry:
        t += INTERVAL_MS
        respond_until(t)
        controller.feed(Tick(t))
    respond_until(t)
    first = runtime.w - 1
    return ReplayResult(list(runtime.scores), events, controller.alerts_sent, controller.deliveries,
                        controller.state, list(range(0, len(intervals) - first)))
