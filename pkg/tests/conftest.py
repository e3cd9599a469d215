import numpy as np
import pytest

from falldet.domain import RecordingMeta, Recording, Streams, UserProfile
from falldet.preprocess import PreprocessConfig, build_dataset
from falldet.simgen import ScenarioConfig, simulate_suite

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_suite():
    return simulate_suite(ScenarioConfig(seed=0, w=20))


@pytest.fixture(scope="session")
def default_dataset(default_suite):
    return build_dataset(default_suite, PreprocessConfig(w=20, lag_ms=0, seed=0), "bench")


@pytest.fixture(scope="session")
def small_suite():
    return simulate_suite(ScenarioConfig(n_recordings=4, mean_duration_ms=40_000, seed=3, w=10), n_subjects=2)


@pytest.fixture
def profile():
    return UserProfile("subject-x", 22, 176.2, 74.4, (("Ann", "+44 1"), ("Bob", "+44 2")))


def make_recording(profile, ecg_t=(), ecg_uv=(), accel_t=(), accel_mg=(), events=(), rid="r1"):
    s = Streams(np.array(ecg_t, np.int64), np.array(ecg_uv, np.float32),
                np.array(accel_t, np.int64), np.array(accel_mg, np.float32).reshape(-1, 3), tuple(events))
    meta = RecordingMeta(rid, profile.subject_id, tuple(range(max(s.max_t, -1) // 5000 + 1)) if not s.is_empty else (),
                         "2023-01-01T00:00:00Z")
    return Recording(meta, profile, s)
