import numpy as np
import pytest

from lkalert import canlog, windowing
from lkalert.windowing import EventKind, WindowConfig


def series_from(timestamps, engaged, offsets, source="s"):
    records = tuple(
        canlog.TelemetryRecord(t, 10.0, 0.0, 0.0, bool(e), o)
        for t, e, o in zip(timestamps, engaged, offsets)
    )
    return canlog.TelemetrySeries(records=records, source_id=source)


class TestWindowConfig:
    def test_defaults(self):
        cfg = WindowConfig()
        assert cfg.frame_count == 13
        assert cfg.event_frame_index == 8

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(pre_seconds=-1.0),
            dict(frame_interval=0.7),                      # span not a multiple
            dict(event_frame_index=7),                     # inconsistent with 3.5/0.5
            dict(pre_seconds=3.0, post_seconds=3.0, event_frame_index=8),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(windowing.InvalidWindowConfig):
            WindowConfig(**kwargs)

    def test_centered_variant(self):
        cfg = WindowConfig(pre_seconds=3.0, post_seconds=3.0, event_frame_index=7)
        assert cfg.frame_count == 13


class TestDetectEvents:
    def test_disengagement_at_first_false(self):
        ts = [round(0.1 * i, 1) for i in range(5)]
        s = series_from(ts, [1, 1, 1, 0, 0], [0.0] * 5)
        events = windowing.detect_events(s, WindowConfig())
        assert len(events) == 1
        assert events[0].kind == EventKind.DISENGAGEMENT
        assert events[0].timestamp == pytest.approx(0.3)

    def test_deviation_run(self):
        ts = [0.0, 0.1, 0.2, 0.3]
        s = series_from(ts, [1, 1, 1, 1], [0.1, 0.5, 0.6, 0.2])
        events = windowing.detect_events(s, WindowConfig())
        assert len(events) == 1
        assert events[0].kind == EventKind.DEVIATION_EXCEEDED
        assert events[0].timestamp == 0.1
        assert events[0].peak_offset == 0.6

    def test_all_quiet(self):
        s = series_from([0.0, 0.1, 0.2], [1, 1, 1], [0.1, 0.2, 0.1])
        assert windowing.detect_events(s, WindowConfig()) == []

    def test_deviation_while_disengaged_ignored(self):
        s = series_from([0.0, 0.1, 0.2], [0, 0, 0], [0.9, 0.9, 0.9])
        assert windowing.detect_events(s, WindowConfig()) == []

    def test_idempotent_and_sorted(self, drive_csv):
        series = canlog.parse_log(drive_csv, "drive01")
        cfg = WindowConfig()
        first = windowing.detect_events(series, cfg)
        second = windowing.detect_events(series, cfg)
        assert first == second
        assert [e.timestamp for e in first] == sorted(e.timestamp for e in first)

    def test_seam_concatenation(self):
        cfg = WindowConfig()
        ts1 = [0.0, 0.1, 0.2]
        ts2 = [0.3, 0.4, 0.5]
        both = series_from(ts1 + ts2, [1, 1, 0, 0, 1, 0], [0.0] * 6)
        a = series_from(ts1, [1, 1, 0], [0.0] * 3)
        b = series_from(ts2, [0, 1, 0], [0.0] * 3)
        merged = windowing.detect_events(a, cfg) + windowing.detect_events(b, cfg)
        assert windowing.detect_events(both, cfg) == sorted(merged, key=lambda e: e.timestamp)


class TestExtractWindow:
    def test_default_grid(self):
        ts = [round(0.5 * i, 1) for i in range(400)]
        s = series_from(ts, [1] * 400, [0.0] * 400)
        event = windowing.FailureEvent(100.0, EventKind.DISENGAGEMENT, 0.0)
        window = windowing.extract_window(s, event, WindowConfig())
        assert window.frame_times == tuple(96.5 + 0.5 * i for i in range(13))
        assert window.frame_times[7] == 100.0
        windowing.validate_window(window, WindowConfig())

    def test_insufficient_context(self):
        s = series_from([0.0, 1.0, 2.0, 3.0], [1] * 4, [0.0] * 4)
        event = windowing.FailureEvent(2.0, EventKind.DISENGAGEMENT, 0.0)
        with pytest.raises(windowing.InsufficientContext):
            windowing.extract_window(s, event, WindowConfig())

    def test_small_window(self):
        cfg = WindowConfig(pre_seconds=1.0, post_seconds=1.0, frame_interval=0.5, event_frame_index=3)
        s = series_from([float(i) for i in range(20)], [1] * 20, [0.0] * 20)
        event = windowing.FailureEvent(10.0, EventKind.DISENGAGEMENT, 0.0)
        window = windowing.extract_window(s, event, cfg)
        assert window.frame_times == (9.0, 9.5, 10.0, 10.5, 11.0)


class TestNormalWindows:
    def make_series(self, seconds=60.0, hz=10):
        n = int(seconds * hz) + 1
        ts = [i / hz for i in range(n)]
        return series_from(ts, [1] * n, [0.01] * n)

    def test_deterministic(self):
        s = self.make_series()
        cfg = WindowConfig()
        a = windowing.sample_normal_windows(s, [], cfg, count=3, seed=7)
        b = windowing.sample_normal_windows(s, [], cfg, count=3, seed=7)
        assert a == b
        assert len(a) == 3

    def test_count_zero(self):
        s = self.make_series()
        assert windowing.sample_normal_windows(s, [], WindowConfig(), 0, 1) == []

    def test_short_series_yields_nothing(self):
        s = self.make_series(seconds=5.0)
        assert windowing.sample_normal_windows(s, [], WindowConfig(), 3, 1) == []

    def test_margin_from_events(self):
        s = self.make_series(seconds=120.0)
        cfg = WindowConfig()
        events = [windowing.FailureEvent(60.0, EventKind.DISENGAGEMENT, 0.0)]
        span = cfg.pre_seconds + cfg.post_seconds
        windows = windowing.sample_normal_windows(s, events, cfg, count=8, seed=3)
        assert windows
        for w in windows:
            windowing.validate_window(w, cfg)
            assert w.event.kind == EventKind.NORMAL
            assert min(abs(60.0 - w.start), abs(60.0 - w.end)) >= span or (
                60.0 < w.start or 60.0 > w.end
            )
            # no intersection with the failure window [56.5, 62.5]
            assert w.end < 56.5 or w.start > 62.5


class TestWindowInvariantsRandomized:
    def test_random_series_uphold_invariants(self):
        rng = np.random.default_rng(123)
        cfg = WindowConfig()
        for _ in range(60):
            n = int(rng.integers(50, 400))
            dt = float(rng.choice([0.05, 0.1, 0.2]))
            ts = [round(i * dt, 4) for i in range(n)]
            engaged = (rng.random(n) > 0.2).astype(int)
            offsets = rng.normal(0.0, 0.3, size=n).round(3)
            s = series_from(ts, engaged, offsets)
            events = windowing.detect_events(s, cfg)
            for e in events:
                if e.kind == EventKind.DEVIATION_EXCEEDED:
                    assert abs(e.peak_offset) > cfg.deviation_threshold
                try:
                    w = windowing.extract_window(s, e, cfg)
                except windowing.InsufficientContext:
                    continue
                windowing.validate_window(w, cfg)
                assert len(w.frame_times) == 13
                assert w.frame_times[-1] - w.frame_times[0] == pytest.approx(6.0, abs=1e-9)
