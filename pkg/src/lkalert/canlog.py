"""CAN-style telemetry logs: parsing, validation, and time synchronization.

The log format is plain CSV (UTF-8, LF) with the fixed header

    timestamp,speed,steering_angle,steering_torque,lka_engaged,lane_center_offset

where ``lka_engaged`` is 0/1 and every other column is a decimal numeral.
Timestamps must be strictly increasing so that point-in-time queries are
unambiguous; queries use zero-order hold (the last record at or before
the query time), which avoids interpolation artifacts on the boolean LKA
state.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from lkalert.errors import LKAlertError

HEADER = "timestamp,speed,steering_angle,steering_torque,lka_engaged,lane_center_offset"
_COLUMNS = tuple(HEADER.split(","))


class CanLogError(LKAlertError):
    """Base class for telemetry log errors."""


class MalformedHeader(CanLogError):
    pass


class EmptyLog(CanLogError):
    pass


class NonMonotonicTimestamp(CanLogError):
    def __init__(self, row: int):
        self.row = row  # 1-based data-row index of the offending row
        super().__init__(f"timestamp not strictly increasing at data row {row}")


class FieldOutOfRange(CanLogError):
    def __init__(self, row: int, field: str, detail: str = ""):
        self.row = row
        self.field = field
        msg = f"bad value for '{field}' at data row {row}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class OutOfRange(CanLogError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"query time {t} outside the series time range")


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: float          # seconds
    speed: float              # m/s
    steering_angle: float     # degrees
    steering_torque: float    # normalized [-1, 1]
    lka_engaged: bool
    lane_center_offset: float  # meters, + = right of lane center


@dataclass(frozen=True)
class TelemetrySeries:
    records: tuple[TelemetryRecord, ...]
    source_id: str

    def __post_init__(self) -> None:
        ts = [r.timestamp for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("records must have strictly increasing timestamps")

    @property
    def timestamps(self) -> list[float]:
        return [r.timestamp for r in self.records]


def _parse_float(text: str, row: int, field: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FieldOutOfRange(row, field, f"not a decimal numeral: {text!r}") from None
    if not math.isfinite(value):
        raise FieldOutOfRange(row, field, "not finite")
    return value


def parse_log(content: bytes | str, source_id: str = "log") -> TelemetrySeries:
    """Parse a CSV telemetry log into a validated TelemetrySeries.

    Raises MalformedHeader, EmptyLog, NonMonotonicTimestamp(row), or
    FieldOutOfRange(row, field). Row numbers are 1-based over data rows.
    A row with the wrong column count is reported as FieldOutOfRange with
    field="row".
    """
    text = content.decode("utf-8") if isinstance(content, bytes) else content
    lines = [ln for ln in text.split("\n") if ln.strip() != ""]
    if not lines or lines[0].strip() != HEADER:
        raise MalformedHeader(f"expected header {HEADER!r}")
    if len(lines) == 1:
        raise EmptyLog("log contains a header but no data rows")

    records: list[TelemetryRecord] = []
    prev_ts: float | None = None
    for row, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != len(_COLUMNS):
            raise FieldOutOfRange(row, "row", f"expected {len(_COLUMNS)} columns, got {len(parts)}")
        ts = _parse_float(parts[0], row, "timestamp")
        if ts < 0:
            raise FieldOutOfRange(row, "timestamp", "negative")
        speed = _parse_float(parts[1], row, "speed")
        if speed < 0:
            raise FieldOutOfRange(row, "speed", "negative")
        angle = _parse_float(parts[2], row, "steering_angle")
        torque = _parse_float(parts[3], row, "steering_torque")
        if not -1.0 <= torque <= 1.0:
            raise FieldOutOfRange(row, "steering_torque", "outside [-1, 1]")
        if parts[4] not in ("0", "1"):
            raise FieldOutOfRange(row, "lka_engaged", f"must be 0 or 1, got {parts[4]!r}")
        offset = _parse_float(parts[5], row, "lane_center_offset")

        if prev_ts is not None and ts <= prev_ts:
            raise NonMonotonicTimestamp(row)
        prev_ts = ts
        records.append(
            TelemetryRecord(
                timestamp=ts,
                speed=speed,
                steering_angle=angle,
                steering_torque=torque,
                lka_engaged=parts[4] == "1",
                lane_center_offset=offset,
            )
        )
    return TelemetrySeries(records=tuple(records), source_id=source_id)


def serialize_log(series: TelemetrySeries) -> str:
    """Render a series back to CSV text. Floats use shortest round-trip form."""
    rows = [HEADER]
    for r in series.records:
        rows.append(
            f"{r.timestamp!r},{r.speed!r},{r.steering_angle!r},"
            f"{r.steering_torque!r},{int(r.lka_engaged)},{r.lane_center_offset!r}"
        )
    return "\n".join(rows) + "\n"


def sample_at(series: TelemetrySeries, t: float) -> TelemetryRecord:
    """Zero-order hold: the record with the greatest timestamp <= t."""
    ts = series.timestamps
    if not ts or t < ts[0] or t > ts[-1]:
        raise OutOfRange(t)
    idx = bisect.bisect_right(ts, t) - 1
    return series.records[idx]


def snapshot_text(record: TelemetryRecord) -> str:
    """One-line deterministic rendering of a record, used as model text input.

    Precision is fixed (speed/angle one decimal, torque/offset two) so two
    records that agree at rendered precision produce identical text.
    """
    return (
        f"speed={record.speed:.1f};"
        f"steer_deg={record.steering_angle:.1f};"
        f"torque={record.steering_torque:.2f};"
        f"lka={int(record.lka_engaged)};"
        f"offset_m={record.lane_center_offset:.2f}"
    )
