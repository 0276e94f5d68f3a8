"""Failure-event localization and frame-grid window extraction.

An LKA failure is either a disengagement (engaged -> off transition) or a
run of lane-centering deviation beyond a configurable threshold while the
system is engaged. Each event is expanded into a fixed 6-second window
(3.5 s before, 2.5 s after at defaults) sampled every 0.5 s, so the event
itself lands on the 8th of 13 frames.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from lkalert.canlog import TelemetrySeries
from lkalert.errors import LKAlertError


class WindowingError(LKAlertError):
    pass


class InvalidWindowConfig(WindowingError):
    pass


class InsufficientContext(WindowingError):
    """The window around an event would extend past the series bounds."""


class EventKind(str, enum.Enum):
    DISENGAGEMENT = "Disengagement"
    DEVIATION_EXCEEDED = "DeviationExceeded"
    NORMAL = "Normal"


@dataclass(frozen=True)
class WindowConfig:
    pre_seconds: float = 3.5
    post_seconds: float = 2.5
    frame_interval: float = 0.5
    deviation_threshold: float = 0.40  # meters; artifact default, tune per fleet
    event_frame_index: int = 8         # 1-based frame carrying the event

    def __post_init__(self) -> None:
        if self.pre_seconds <= 0 or self.post_seconds <= 0 or self.frame_interval <= 0:
            raise InvalidWindowConfig("pre/post/interval must all be positive")
        span_steps = (self.pre_seconds + self.post_seconds) / self.frame_interval
        if abs(span_steps - round(span_steps)) > 1e-9:
            raise InvalidWindowConfig("window span must be an integer number of frame intervals")
        pre_steps = self.pre_seconds / self.frame_interval
        if abs(pre_steps - round(pre_steps)) > 1e-9:
            raise InvalidWindowConfig("pre_seconds must be an integer number of frame intervals")
        if self.event_frame_index != round(pre_steps) + 1:
            raise InvalidWindowConfig(
                f"event_frame_index={self.event_frame_index} inconsistent with "
                f"pre_seconds/frame_interval (expected {round(pre_steps) + 1})"
            )

    @property
    def frame_count(self) -> int:
        return round((self.pre_seconds + self.post_seconds) / self.frame_interval) + 1


@dataclass(frozen=True)
class FailureEvent:
    timestamp: float
    kind: EventKind
    peak_offset: float


@dataclass(frozen=True)
class EventWindow:
    event: FailureEvent
    frame_times: tuple[float, ...]
    source_id: str

    @property
    def start(self) -> float:
        return self.frame_times[0]

    @property
    def end(self) -> float:
        return self.frame_times[-1]


def detect_events(series: TelemetrySeries, cfg: WindowConfig) -> list[FailureEvent]:
    """Find disengagements and over-threshold deviation runs, sorted by time.

    Disengagement: every engaged->off transition, stamped at the first
    off record. Deviation: every maximal run of engaged records with
    |lane_center_offset| above threshold, stamped at the run start with
    the largest-magnitude offset as peak. Deviation while disengaged is
    driver-controlled and ignored.
    """
    events: list[FailureEvent] = []
    run_start: float | None = None
    run_peak = 0.0
    prev_engaged: bool | None = None

    def close_run() -> None:
        nonlocal run_start, run_peak
        if run_start is not None:
            events.append(FailureEvent(run_start, EventKind.DEVIATION_EXCEEDED, run_peak))
            run_start = None
            run_peak = 0.0

    for rec in series.records:
        if prev_engaged is True and not rec.lka_engaged:
            events.append(FailureEvent(rec.timestamp, EventKind.DISENGAGEMENT, rec.lane_center_offset))
        deviating = rec.lka_engaged and abs(rec.lane_center_offset) > cfg.deviation_threshold
        if deviating:
            if run_start is None:
                run_start = rec.timestamp
                run_peak = rec.lane_center_offset
            elif abs(rec.lane_center_offset) > abs(run_peak):
                run_peak = rec.lane_center_offset
        else:
            close_run()
        prev_engaged = rec.lka_engaged
    close_run()

    events.sort(key=lambda e: (e.timestamp, e.kind.value))
    return events


def extract_window(series: TelemetrySeries, event: FailureEvent, cfg: WindowConfig) -> EventWindow:
    """Expand an event into its frame grid; the event time is frame anchor."""
    start = event.timestamp - cfg.pre_seconds
    end = event.timestamp + cfg.post_seconds
    ts = series.timestamps
    if start < ts[0] or end > ts[-1]:
        raise InsufficientContext(
            f"window [{start}, {end}] exceeds series range [{ts[0]}, {ts[-1]}]"
        )
    anchor = cfg.event_frame_index - 1
    frame_times = tuple(
        event.timestamp + (i - anchor) * cfg.frame_interval for i in range(cfg.frame_count)
    )
    return EventWindow(event=event, frame_times=frame_times, source_id=series.source_id)


def sample_normal_windows(
    series: TelemetrySeries,
    events: list[FailureEvent],
    cfg: WindowConfig,
    count: int,
    seed: int,
) -> list[EventWindow]:
    """Draw up to `count` windows of normal driving, clear of every event.

    A candidate window's whole span must lie at least pre+post seconds
    away from every failure-event timestamp. Anchors are snapped to the
    frame-interval grid so frame times stay on clean boundaries. Returns
    fewer than `count` when the series cannot host more; deterministic
    for a given seed.
    """
    if count <= 0:
        return []
    ts = series.timestamps
    span = cfg.pre_seconds + cfg.post_seconds
    lo = ts[0] + cfg.pre_seconds
    hi = ts[-1] - cfg.post_seconds
    if hi < lo:
        return []

    rng = np.random.default_rng(seed)
    windows: list[EventWindow] = []
    taken: set[float] = set()
    for _ in range(max(count * 64, 64)):
        if len(windows) >= count:
            break
        t0 = float(rng.uniform(lo, hi))
        t0 = round(t0 / cfg.frame_interval) * cfg.frame_interval
        if t0 < lo or t0 > hi or t0 in taken:
            continue
        a, b = t0 - cfg.pre_seconds, t0 + cfg.post_seconds
        if any(a - span < ev.timestamp < b + span for ev in events):
            continue
        in_span = [r.lane_center_offset for r in series.records if a <= r.timestamp <= b]
        peak = max(in_span, key=abs) if in_span else 0.0
        event = FailureEvent(timestamp=t0, kind=EventKind.NORMAL, peak_offset=peak)
        windows.append(extract_window(series, event, cfg))
        taken.add(t0)
    windows.sort(key=lambda w: w.event.timestamp)
    return windows


def window_span_seconds(window: EventWindow) -> float:
    return window.frame_times[-1] - window.frame_times[0]


def validate_window(window: EventWindow, cfg: WindowConfig) -> None:
    """Assert the frame-grid invariants; used by tests and the dataset builder."""
    n = cfg.frame_count
    if len(window.frame_times) != n:
        raise WindowingError(f"expected {n} frames, got {len(window.frame_times)}")
    if abs(window_span_seconds(window) - (cfg.pre_seconds + cfg.post_seconds)) > 1e-9:
        raise WindowingError("window span != pre+post")
    for a, b in zip(window.frame_times, window.frame_times[1:]):
        if abs((b - a) - cfg.frame_interval) > 1e-9:
            raise WindowingError("frame spacing != frame_interval")
    anchor = window.frame_times[cfg.event_frame_index - 1]
    if not math.isclose(anchor, window.event.timestamp, abs_tol=1e-12):
        raise WindowingError("event timestamp not on its configured frame")
