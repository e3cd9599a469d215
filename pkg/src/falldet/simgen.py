"""Deterministic synthetic fall/ADL recordings.

Scenario scripts follow the recording protocol: the phone plays a sound
(FALL_SIGNAL) when the subject should fall and another (GETUP_SIGNAL) when
they should get up.  The subject reacts to each sound after an auditory
reaction latency, so the physical fall starts slightly after its label.

Accelerometer axes are those of a chest strap: gravity lies on +y when the
wearer is upright; lying down rotates it onto the x or z axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum

import numpy as np

from .domain import (
    ACCEL_PERIOD_MS,
    LabelEvent,
    Recording,
    RecordingMeta,
    SignalKind,
    Streams,
    UserProfile,
    accel_grid_ms,
    chunk_count,
    ecg_grid_ms,
)
from .errors import InfeasibleRatio


class ActivityKind(str, Enum):
    Walking = "Walking"
    Standing = "Standing"
    Sitting = "Sitting"
    Leaning = "Leaning"
    TyingShoelaces = "TyingShoelaces"
    WalkStop = "WalkStop"
    WalkTurn = "WalkTurn"
    JumpOver = "JumpOver"
    StepUp = "StepUp"
    StepDown = "StepDown"
    JumpOnto = "JumpOnto"
    KneelReach = "KneelReach"
    Stumble = "Stumble"
    Slip = "Slip"
    Faint = "Faint"
    FallFromHeight = "FallFromHeight"
    FallAfterJump = "FallAfterJump"

    @property
    def is_fall(self) -> bool:
        return self in FALLS


FALLS = frozenset({ActivityKind.Stumble, ActivityKind.Slip, ActivityKind.Faint,
                   ActivityKind.FallFromHeight, ActivityKind.FallAfterJump})
ADLS = tuple(k for k in ActivityKind if k not in FALLS)

# sampling weights for filler ADLs; calm activities dominate a typical session
ADL_WEIGHTS = {
    ActivityKind.Standing: 3.0, ActivityKind.Walking: 3.0, ActivityKind.Sitting: 2.0,
    ActivityKind.Leaning: 1.0, ActivityKind.TyingShoelaces: 1.0, ActivityKind.WalkStop: 1.0,
    ActivityKind.WalkTurn: 1.0, ActivityKind.JumpOver: 0.7, ActivityKind.StepUp: 0.7,
    ActivityKind.StepDown: 0.7, ActivityKind.JumpOnto: 0.7, ActivityKind.KneelReach: 1.0,
}


@dataclass(frozen=True)
class ScenarioScript:
    segments: tuple[tuple[ActivityKind, int], ...]
    seed: int

    def __post_init__(self):
        segs = tuple((ActivityKind(k), int(d)) for k, d in self.segments)
        if not segs:
            raise ValueError("script needs at least one segment")
        if any(d <= 0 for _, d in segs):
            raise ValueError("segment durations must be positive")
        object.__setattr__(self, "segments", segs)

    @property
    def duration_ms(self) -> int:
        return sum(d for _, d in self.segments)

    def boundaries(self) -> list[int]:
        out = [0]
        for _, d in self.segments:
            out.append(out[-1] + d)
        return out

    def fall_spans(self) -> list[tuple[int, int]]:
        b = self.boundaries()
        return [(b[i], b[i + 1]) for i, (k, _) in enumerate(self.segments) if k.is_fall]

    def events(self) -> tuple[LabelEvent, ...]:
        out = []
        for start, end in self.fall_spans():
            out.append(LabelEvent(start, SignalKind.FALL_SIGNAL))
            out.append(LabelEvent(end, SignalKind.GETUP_SIGNAL))
        return tuple(out)

    def to_json(self) -> dict:
        return {"seed": self.seed, "segments": [[k.value, d] for k, d in self.segments]}

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioScript":
        return cls(tuple((ActivityKind(k), int(d)) for k, d in obj["segments"]), int(obj["seed"]))


@dataclass(frozen=True)
class SignalModel:
    hr_baseline_bpm: float = 70.0
    hr_post_fall_bpm: float = 100.0
    gait_hz: float = 1.8
    gait_amp_mg: float = 150.0
    noise_sigma_mg: float = 20.0
    impact_peak_mg: tuple[float, float] = (2500.0, 4000.0)
    freefall_mg: float = 200.0
    reaction_mean_ms: float = 230.0
    reaction_sd_ms: float = 50.0
    adl_impact_max_mg: float = 1800.0
    ecg_r_amp_uv: float = 1000.0
    ecg_noise_uv: float = 15.0
    getup_ms: float = 1200.0
    lying_motion_mg: float = 450.0
    ecg_fall_shift_uv: float = 1000.0

    def __post_init__(self):
        lo, hi = self.impact_peak_mg
        scalars = [self.hr_baseline_bpm, self.hr_post_fall_bpm, self.gait_hz, self.gait_amp_mg,
                   self.noise_sigma_mg, self.freefall_mg, self.reaction_mean_ms, self.reaction_sd_ms,
                   self.adl_impact_max_mg, self.getup_ms, lo]
        if any(not v > 0 for v in scalars) or hi < lo:
            raise ValueError("signal model parameters must be positive")

    def reaction_latency(self, rng: np.random.Generator) -> float:
        return max(0.0, rng.normal(self.reaction_mean_ms, self.reaction_sd_ms))


@dataclass(frozen=True)
class ScenarioConfig:
    n_recordings: int = 20
    target_fall_ratio: float = 0.22
    mean_duration_ms: int = 117_000
    seed: int = 0
    w: int = 10
    fall_ms: tuple[int, int] = (3000, 6000)
    adl_segment_ms: tuple[int, int] = (2000, 8000)
    min_gap_ms: int = 3000

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        obj = dict(obj)
        for key in ("fall_ms", "adl_segment_ms"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


# ---------------------------------------------------------------------------
# scenario building


def _round100(x: float) -> int:
    return int(round(x / 100.0)) * 100


def windowed_fall_ratio(scripts, w: int, lag_ms: int = 0) -> float:
    """Fraction of existence-labelled windows (stride 1) that are falls.

    Computed straight from the scripts' signal spans, assuming each recording
    yields duration // 100 intervals.
    """
    pos = tot = 0
    for s in scripts:
        n = s.duration_ms // 100
        if n < w:
            continue
        y = np.zeros(n + lag_ms // 100, dtype=np.int64)
        for a, b in s.fall_spans():
            y[a // 100: -(-b // 100)] = 1
        y = y[lag_ms // 100:][:n]
        if len(y) < n:
            y = np.concatenate([y, np.zeros(n - len(y), np.int64)])
        c = np.concatenate([[0], np.cumsum(y)])
        hits = c[w:] - c[:-w]
        pos += int(np.count_nonzero(hits))
        tot += len(hits)
    return pos / tot if tot else 0.0


def _layout(rng: np.random.Generator, total: int, falls: list[int], cfg: ScenarioConfig):
    """Place falls with ADL gaps between them; returns segment list or None if it does not fit."""
    gaps_n = len(falls) + 1
    free = total - sum(falls) - gaps_n * cfg.min_gap_ms
    if free < 0:
        return None
    cum = [0] + [_round100(c) for c in np.cumsum(rng.dirichlet(np.ones(gaps_n)) * free)[:-1]] + [free]
    gaps = [cfg.min_gap_ms + cum[i + 1] - cum[i] for i in range(gaps_n)]
    kinds = list(ADL_WEIGHTS)
    p = np.array([ADL_WEIGHTS[k] for k in kinds])
    p /= p.sum()
    lo, hi = cfg.adl_segment_ms
    segs: list[tuple[ActivityKind, int]] = []
    for gi, gap in enumerate(gaps):
        remaining = gap
        while remaining > 0:
            d = _round100(rng.uniform(lo, hi))
            if remaining - d < lo:
                d = remaining
            segs.append((kinds[rng.choice(len(kinds), p=p)], d))
            remaining -= d
        if gi < len(falls):
            segs.append((FALL_KINDS[rng.integers(len(FALL_KINDS))], falls[gi]))
    return segs


FALL_KINDS = (ActivityKind.Stumble, ActivityKind.Slip, ActivityKind.Faint,
              ActivityKind.FallFromHeight, ActivityKind.FallAfterJump)


def build_scenario(config: ScenarioConfig) -> list[ScenarioScript]:
    """Scripts whose windowed fall ratio (at ``config.w``) matches the target.

    Fall counts per recording are chosen from the target, then a common scale on
    fall durations is bisected to bring the aggregate ratio onto the target.
    """
    cfg = config
    if cfg.n_recordings < 1:
        raise ValueError("n_recordings must be >= 1")
    if not 0 < cfg.target_fall_ratio < 1:
        raise ValueError("target_fall_ratio must be in (0, 1)")
    rng = np.random.default_rng(cfg.seed)
    fmin, fmax = cfg.fall_ms
    fmid = (fmin + fmax) / 2
    per_fall = fmid / 100 + cfg.w - 1

    plans = []
    for i in range(cfg.n_recordings):
        dur = max(_round100(cfg.mean_duration_ms * rng.uniform(0.92, 1.08)), 100 * cfg.w)
        n_windows = dur // 100 - cfg.w + 1
        want = cfg.target_fall_ratio * n_windows / per_fall + rng.uniform(-0.5, 0.5)
        n_falls = max(0, int(round(want)))
        cap = (dur - cfg.min_gap_ms) // (fmax + cfg.min_gap_ms)
        n_falls = min(n_falls, max(cap, 0))
        jitter = rng.uniform(0.8, 1.2, size=n_falls)
        plans.append((dur, jitter, int(rng.integers(2**31))))

    def scripts_for(scale: float):
        out = []
        for dur, jitter, sub_seed in plans:
            falls = [int(min(max(_round100(scale * j), fmin), fmax)) for j in jitter]
            sub = np.random.default_rng(sub_seed)
            segs = _layout(sub, dur, falls, cfg)
            if segs is None:
                return None
            out.append(ScenarioScript(tuple(segs), sub_seed))
        return out

    def ratio(scale):
        scripts = scripts_for(scale)
        return (windowed_fall_ratio(scripts, cfg.w) if scripts is not None else math.inf), scripts

    lo_s, hi_s = fmin / 1.2, fmax / 0.8
    r_lo, s_lo = ratio(lo_s)
    r_hi, s_hi = ratio(hi_s)
    target = cfg.target_fall_ratio
    tol = 0.01
    if r_lo > target + tol or (r_hi < target - tol):
        raise InfeasibleRatio(
            f"fall ratio {target:.3f} unreachable: achievable range [{r_lo:.3f}, {r_hi:.3f}]")
    best = min(((abs(r_lo - target), s_lo), (abs(r_hi - target), s_hi)), key=lambda p: p[0])
    for _ in range(40):
        mid = (lo_s + hi_s) / 2
        r, scripts = ratio(mid)
        if scripts is not None and abs(r - target) < best[0]:
            best = (abs(r - target), scripts)
        if r < target:
            lo_s = mid
        else:
            hi_s = mid
    if best[1] is None or best[0] > tol:
        raise InfeasibleRatio(f"could not reach fall ratio {target:.3f} (closest off by {best[0]:.3f})")
    return best[1]


# ---------------------------------------------------------------------------
# rendering

UP = np.array([0.0, 1.0, 0.0])
LYING_AXES = (np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]),
              np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]))


def _tilt(deg: float, axis: int = 2) -> np.ndarray:
    """Gravity direction after tilting the trunk forward (z) or sideways (x)."""
    r = math.radians(deg)
    v = np.array([0.0, math.cos(r), 0.0])
    v[axis] = math.sin(r)
    return v


def _pulse(t: np.ndarray, t0: float, width: float) -> np.ndarray:
    """Half-sine bump of unit height on [t0, t0 + width)."""
    x = (t - t0) / width
    return np.where((x >= 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


def _blend(t: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Smooth 0->1 ramp between t0 and t1."""
    x = np.clip((t - t0) / max(t1 - t0, 1e-9), 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _orient(a: np.ndarray, b: np.ndarray, s: np.ndarray) -> np.ndarray:
    v = (1 - s)[:, None] * a + s[:, None] * b
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _gait(t, m: SignalModel, rng, amp_scale=1.0):
    f = m.gait_hz * rng.uniform(0.9, 1.1)
    ph = rng.uniform(0, 2 * np.pi)
    w = 2 * np.pi * f * t / 1000.0
    a = m.gait_amp_mg * amp_scale
    out = np.zeros((len(t), 3))
    out[:, 1] = a * np.sin(w + ph) + 0.3 * a * np.sin(2 * w + ph)
    out[:, 2] = 0.4 * a * np.sin(w + ph + 0.8)
    out[:, 0] = 0.3 * a * np.sin(0.5 * w + ph)
    return out


def _landing(t, t0, peak, rng):
    """Jump landing: short flight dip followed by an impact bump along the vertical."""
    out = np.zeros((len(t), 3))
    flight = rng.uniform(180, 260)
    out[:, 1] += 450 * _pulse(t, t0 - flight - 150, 150)               # take-off push
    dip = ((t >= t0 - flight) & (t < t0)).astype(float)
    out[:, 1] -= 700 * dip
    out[:, 1] += (peak - 1000) * _pulse(t, t0, 70)
    out[:, 2] += 0.25 * (peak - 1000) * _pulse(t, t0 + 10, 60)
    return out


def _render_adl(kind: ActivityKind, t: np.ndarray, dur: float, m: SignalModel, rng) -> np.ndarray:
    g = 1000.0
    n = len(t)
    K = ActivityKind
    sway = np.zeros((n, 3))
    sway[:, 0] = 8 * np.sin(2 * np.pi * 0.3 * t / 1000 + rng.uniform(0, 6.3))
    sway[:, 2] = 8 * np.sin(2 * np.pi * 0.2 * t / 1000 + rng.uniform(0, 6.3))
    land_peak = rng.uniform(0.72, 1.0) * m.adl_impact_max_mg

    if kind == K.Standing:
        return g * np.tile(UP, (n, 1)) + sway
    if kind == K.Sitting:
        return g * np.tile(_tilt(-rng.uniform(8, 20)), (n, 1)) + 0.5 * sway
    if kind == K.Leaning:
        return g * np.tile(_tilt(rng.uniform(20, 35), axis=int(rng.choice([0, 2]))), (n, 1)) + sway
    if kind == K.TyingShoelaces:
        d = _tilt(rng.uniform(50, 65))
        s = _blend(t, 0, 600) * (1 - _blend(t, dur - 600, dur))
        base = g * _orient(UP, d, s)
        hands = np.zeros((n, 3))
        hands[:, 0] = 50 * np.sin(2 * np.pi * 3.0 * t / 1000) * s
        hands[:, 2] = 30 * np.sin(2 * np.pi * 2.2 * t / 1000) * s
        return base + hands
    if kind == K.KneelReach:
        d = _tilt(rng.uniform(35, 50))
        s = _blend(t, 0, 700) * (1 - _blend(t, dur - 700, dur))
        base = g * _orient(UP, d, s)
        base[:, 1] += 250 * _pulse(t, 500, 200)
        return base + sway
    if kind in (K.Walking, K.WalkTurn):
        out = g * np.tile(UP, (n, 1)) + _gait(t, m, rng)
        if kind == K.WalkTurn:
            out[:, 0] += 280 * _pulse(t, dur * rng.uniform(0.3, 0.6), 900)
        return out
    if kind == K.WalkStop:
        stop = dur * rng.uniform(0.4, 0.7)
        walking = (t < stop).astype(float)[:, None]
        out = g * np.tile(UP, (n, 1)) + walking * _gait(t, m, rng) + (1 - walking) * sway
        out[:, 2] -= 450 * _pulse(t, stop, 180)
        out[:, 1] += 200 * _pulse(t, stop, 150)
        return out
    if kind in (K.StepUp, K.StepDown):
        out = g * np.tile(UP, (n, 1)) + _gait(t, m, rng, 0.8)
        at = dur * rng.uniform(0.3, 0.7)
        peak = rng.uniform(0.6, 0.8) * m.adl_impact_max_mg
        sign = 1 if kind == K.StepDown else 0.7
        out[:, 1] += sign * (peak - 1150) * _pulse(t, at, 90)
        return out
    if kind in (K.JumpOver, K.JumpOnto):
        walk = _gait(t, m, rng) if kind == K.JumpOver else sway
        out = g * np.tile(UP, (n, 1)) + walk
        at = dur * rng.uniform(0.4, 0.7)
        out += _landing(t, at, land_peak, rng)
        return out
    raise ValueError(f"not an ADL: {kind}")


@dataclass
class _FallPlan:
    onset: float      # absolute ms
    impact: float     # absolute ms
    lying_end: float  # absolute ms (physical get-up starts)
    end: float        # absolute ms (upright again)


def _render_fall(kind: ActivityKind, t: np.ndarray, dur: float, lying_until: float,
                 m: SignalModel, rng) -> tuple[np.ndarray, float]:
    """Render one physical fall; ``t`` is relative to physical onset.

    Returns the accel trace and the impact time relative to onset.
    """
    g = 1000.0
    K = ActivityKind
    n = len(t)
    lying = LYING_AXES[rng.integers(len(LYING_AXES))]
    pre = {K.Stumble: 150, K.Slip: 100, K.Faint: 250, K.FallFromHeight: 120, K.FallAfterJump: 200}[kind]
    pre *= rng.uniform(0.8, 1.2)
    ff = rng.uniform(280, 420)
    if kind == K.FallFromHeight:
        ff *= 1.3
    t_imp = pre + ff
    peak = rng.uniform(*m.impact_peak_mg)
    ff_level = m.freefall_mg / g if kind != K.Faint else 2.5 * m.freefall_mg / g

    s = _blend(t, pre, t_imp)
    s_up = _blend(t, lying_until, lying_until + m.getup_ms)
    orient = _orient(_orient(np.tile(UP, (n, 1)), np.tile(lying, (n, 1)), s),
                     np.tile(UP, (n, 1)), s_up)
    mag = np.ones(n)
    in_ff = (t >= pre) & (t < t_imp)
    drop = _blend(t, pre, pre + 0.35 * ff)
    mag = np.where(in_ff, 1 - (1 - ff_level) * drop, mag)
    acc = g * orient * mag[:, None]

    # loss of balance
    if kind == K.Stumble:
        acc[:, 2] += 550 * _pulse(t, 20, 120)
    elif kind == K.Slip:
        acc[:, 2] -= 500 * _pulse(t, 10, 90)
        acc[:, 1] += 250 * _pulse(t, 10, 90)
    elif kind == K.FallFromHeight:
        acc[:, 1] += 300 * _pulse(t, 0, 120)
    elif kind == K.FallAfterJump:
        acc[:, 1] += 650 * _pulse(t, 0, 140)

    # impact and rebounds, directed between vertical and the lying axis
    idir = UP + lying
    idir = idir / np.linalg.norm(idir)
    acc += peak * _pulse(t, t_imp, 60)[:, None] * idir
    acc += 0.35 * peak * _pulse(t, t_imp + 110, 50)[:, None] * lying
    acc += 0.12 * peak * _pulse(t, t_imp + 240, 50)[:, None] * idir

    # shifting and trying to move while on the ground, then pushing back up
    tb = t_imp + rng.uniform(500, 900)
    while tb < lying_until - 150:
        amp = m.lying_motion_mg * rng.uniform(0.6, 1.0)
        acc += amp * _pulse(t, tb, 150)[:, None] * lying
        tb += rng.uniform(700, 1100)
    gu = m.getup_ms
    acc[:, 1] += 380 * _pulse(t, lying_until + 0.25 * gu, 0.25 * gu)
    acc[:, 2] += 300 * _pulse(t, lying_until + 0.55 * gu, 0.25 * gu)
    return acc, t_imp


def _heart_rate(t_ms: np.ndarray, m: SignalModel, falls: list[_FallPlan], active: np.ndarray, rng) -> np.ndarray:
    """Instantaneous heart rate (bpm) on a 1 ms grid."""
    hr = m.hr_baseline_bpm + 2.0 * np.sin(2 * np.pi * 0.1 * t_ms / 1000 + rng.uniform(0, 6.3))
    hr = hr + 8.0 * active
    bump = np.zeros_like(hr)
    for f in falls:
        r = np.clip((t_ms - f.impact) / 4000.0, 0.0, 1.0)
        decay = np.where(t_ms > f.end, np.exp(-(t_ms - f.end) / 20000.0), 1.0)
        bump = np.maximum(bump, r * decay)
    return hr * (1 - bump) + m.hr_post_fall_bpm * bump


def _ecg(t: np.ndarray, hr_ms: np.ndarray, m: SignalModel, falls: list[_FallPlan], rng) -> np.ndarray:
    phase = np.cumsum(hr_ms / 60000.0) + rng.uniform(0, 1)
    beats = np.flatnonzero(np.diff(np.floor(phase)) > 0) + 1
    peaks = beats.astype(float)
    out = 50.0 * np.sin(2 * np.pi * 0.3 * t / 1000 + rng.uniform(0, 6.3))
    if len(peaks):
        idx = np.searchsorted(peaks, t)
        for off in (-2, -1, 0):
            j = np.clip(idx + off, 0, len(peaks) - 1)
            dt = t - peaks[j]
            valid = (idx + off >= 0) & (idx + off < len(peaks))
            out += valid * (m.ecg_r_amp_uv * np.exp(-0.5 * (dt / 10.0) ** 2)
                            - 0.15 * m.ecg_r_amp_uv * np.exp(-0.5 * ((dt - 25) / 10.0) ** 2)
                            + 0.25 * m.ecg_r_amp_uv * np.exp(-0.5 * ((dt - 260) / 40.0) ** 2))
    for f in falls:
        burst = (t >= f.impact) & (t < f.impact + 300)
        out += burst * rng.normal(0, 200.0, size=len(t))
        # electrode pressure / thoracic posture shift while on the ground
        out += m.ecg_fall_shift_uv * _blend(t, f.impact, f.impact + 300) * (1 - _blend(t, f.lying_end, f.end))
    out += rng.normal(0, m.ecg_noise_uv, size=len(t))
    return out


def synth_recording(script: ScenarioScript, profile: UserProfile, model: SignalModel | None = None,
                    *, recording_id: str | None = None, created_at: str | None = None,
                    oracle_labels: bool = False) -> Recording:
    """Render a script into a labelled recording on the exact 130/200 Hz grids.

    With ``oracle_labels`` the signal events mark the physical fall onset and the
    start of the physical get-up instead of the played sounds.
    """
    m = model or SignalModel()
    rng = np.random.default_rng(script.seed)
    T = script.duration_ms
    b = script.boundaries()
    segs = script.segments

    # physical boundaries: shifted by a reaction latency wherever a fall starts or ends
    phys = [float(x) for x in b]
    for i in range(1, len(b) - 1):
        if segs[i - 1][0].is_fall or segs[i][0].is_fall:
            phys[i] = b[i] + m.reaction_latency(rng)

    acc_t = accel_grid_ms(np.arange((T + ACCEL_PERIOD_MS - 1) // ACCEL_PERIOD_MS))
    acc = np.zeros((len(acc_t), 3))
    active = np.zeros(T + 1)
    plans: list[_FallPlan] = []
    getup_until = 0.0
    for i, (kind, _) in enumerate(segs):
        p0 = phys[i]
        if kind.is_fall:
            lying_until = phys[i + 1]
            p1 = min(lying_until + m.getup_ms, T) if i + 1 < len(segs) else T
            mask = (acc_t >= p0) & (acc_t < p1)
            tr, t_imp = _render_fall(kind, acc_t[mask] - p0, p1 - p0, lying_until - p0, m, rng)
            acc[mask] = tr
            plans.append(_FallPlan(p0, p0 + t_imp, lying_until, p1))
            getup_until = p1
        else:
            p0 = max(p0, getup_until)
            p1 = phys[i + 1]
            mask = (acc_t >= p0) & (acc_t < p1)
            if mask.any():
                acc[mask] = _render_adl(kind, acc_t[mask] - p0, p1 - p0, m, rng)
            if kind not in (ActivityKind.Standing, ActivityKind.Sitting, ActivityKind.Leaning):
                active[int(p0):int(min(p1, T))] = 1.0
    acc += rng.normal(0.0, m.noise_sigma_mg, size=acc.shape)

    ecg_t = ecg_grid_ms(np.arange(int(np.ceil(T * 130 / 1000)) + 1))
    ecg_t = ecg_t[ecg_t < T]
    t_ms = np.arange(T + 1, dtype=float)
    hr = _heart_rate(t_ms, m, plans, active, rng)
    ecg = _ecg(ecg_t.astype(float), hr, m, plans, rng)

    if oracle_labels:
        events = []
        for p in plans:
            events.append(LabelEvent(int(p.onset), SignalKind.FALL_SIGNAL))
            events.append(LabelEvent(int(p.lying_end), SignalKind.GETUP_SIGNAL))
        events = tuple(events)
    else:
        events = script.events()

    streams = Streams(ecg_t, ecg.astype(np.float32), acc_t, acc.astype(np.float32), events)
    rid = recording_id or f"sim-{script.seed:010d}"
    created = created_at or (datetime(2023, 1, 1, tzinfo=timezone.utc)
                             + timedelta(seconds=script.seed % 10**8)).strftime("%Y-%m-%dT%H:%M:%SZ")
    meta = RecordingMeta(rid, profile.subject_id, tuple(range(chunk_count(streams))), created)
    return Recording(meta, profile, streams)


def make_profiles(n: int, seed: int = 0) -> list[UserProfile]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        contacts = tuple((f"Contact {i}-{j}", f"+44 7700 9{i:02d}{j:03d}")
                         for j in range(1 + int(rng.integers(2))))
        out.append(UserProfile(
            subject_id=f"subject-{i:02d}",
            age=int(rng.integers(19, 27)),
            height_cm=round(float(rng.normal(176.2, 6.0)), 1),
            weight_kg=round(float(rng.normal(74.4, 7.0)), 1),
            emergency_contacts=contacts,
        ))
    return out


def simulate_suite(config: ScenarioConfig, n_subjects: int = 5, model: SignalModel | None = None,
                   oracle_labels: bool = False) -> list[Recording]:
    """Scripts plus subjects rendered into recordings, subjects assigned round-robin."""
    scripts = build_scenario(config)
    profiles = make_profiles(n_subjects, config.seed)
    return [synth_recording(s, profiles[i % len(profiles)], model,
                            recording_id=f"rec-{config.seed}-{i:04d}", oracle_labels=oracle_labels)
            for i, s in enumerate(scripts)]
