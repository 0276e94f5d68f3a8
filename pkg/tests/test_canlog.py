import numpy as np
import pytest

from lkalert import canlog

HEADER = canlog.HEADER


def make_log(rows: list[str]) -> str:
    return "\n".join([HEADER] + rows) + "\n"


class TestParseLog:
    def test_three_valid_rows_field_by_field(self):
        text = make_log(
            [
                "0.0,25.0,-3.2,0.1,1,0.12",
                "0.5,25.5,-3.0,0.15,1,0.1",
                "1.0,26.0,-2.8,0.2,0,-0.05",
            ]
        )
        series = canlog.parse_log(text, source_id="d")
        assert len(series.records) == 3
        first = series.records[0]
        assert first.timestamp == 0.0
        assert first.speed == 25.0
        assert first.steering_angle == -3.2
        assert first.steering_torque == 0.1
        assert first.lka_engaged is True
        assert first.lane_center_offset == 0.12
        assert series.records[2].lka_engaged is False

    def test_empty_log(self):
        with pytest.raises(canlog.EmptyLog):
            canlog.parse_log(HEADER + "\n")

    def test_malformed_header(self):
        with pytest.raises(canlog.MalformedHeader):
            canlog.parse_log("time,speed\n1,2\n")

    def test_duplicate_timestamp_reports_row(self):
        text = make_log(["0.0,1.0,0.0,0.0,1,0.0", "0.1,1.0,0.0,0.0,1,0.0", "0.1,1.0,0.0,0.0,1,0.0"])
        with pytest.raises(canlog.NonMonotonicTimestamp) as exc:
            canlog.parse_log(text)
        assert exc.value.row == 3

    @pytest.mark.parametrize(
        "row, field",
        [
            ("-1.0,1.0,0.0,0.0,1,0.0", "timestamp"),
            ("0.0,-2.0,0.0,0.0,1,0.0", "speed"),
            ("0.0,1.0,0.0,1.5,1,0.0", "steering_torque"),
            ("0.0,1.0,0.0,0.0,2,0.0", "lka_engaged"),
            ("0.0,1.0,abc,0.0,1,0.0", "steering_angle"),
            ("0.0,1.0,0.0,0.0,1", "row"),
        ],
    )
    def test_field_out_of_range(self, row, field):
        with pytest.raises(canlog.FieldOutOfRange) as exc:
            canlog.parse_log(make_log([row]))
        assert exc.value.field == field
        assert exc.value.row == 1

    def test_round_trip_on_fixture(self, drive_csv):
        series = canlog.parse_log(drive_csv, source_id="drive01")
        assert canlog.serialize_log(series) == drive_csv.decode("utf-8")


class TestSampleAt:
    @pytest.fixture()
    def series(self):
        return canlog.parse_log(
            make_log(
                [
                    "0.0,1.0,0.0,0.0,1,0.0",
                    "0.5,2.0,0.0,0.0,1,0.0",
                    "1.0,3.0,0.0,0.0,1,0.0",
                ]
            )
        )

    def test_hold_between_records(self, series):
        assert canlog.sample_at(series, 0.7).timestamp == 0.5

    def test_exact_timestamp(self, series):
        assert canlog.sample_at(series, 0.5).timestamp == 0.5

    @pytest.mark.parametrize("t", [1.2, -0.1])
    def test_out_of_range(self, series, t):
        with pytest.raises(canlog.OutOfRange):
            canlog.sample_at(series, t)

    def test_monotone_in_query_time(self, drive_csv):
        series = canlog.parse_log(drive_csv, "drive01")
        rng = np.random.default_rng(0)
        queries = np.sort(rng.uniform(0.0, 120.0, size=200))
        stamps = [canlog.sample_at(series, float(t)).timestamp for t in queries]
        assert all(a <= b for a, b in zip(stamps, stamps[1:]))


class TestSnapshotText:
    def test_rendering(self):
        record = canlog.TelemetryRecord(0.0, 25.0, -3.2, 0.10, True, 0.12)
        assert canlog.snapshot_text(record) == "speed=25.0;steer_deg=-3.2;torque=0.10;lka=1;offset_m=0.12"

    def test_zero_record(self):
        record = canlog.TelemetryRecord(0.0, 0.0, 0.0, 0.0, False, 0.0)
        assert canlog.snapshot_text(record) == "speed=0.0;steer_deg=0.0;torque=0.00;lka=0;offset_m=0.00"

    def test_deterministic(self):
        record = canlog.TelemetryRecord(1.0, 13.37, 1.23, -0.5, True, -0.07)
        assert canlog.snapshot_text(record) == canlog.snapshot_text(record)

    def test_injective_at_rendered_precision(self):
        a = canlog.TelemetryRecord(0.0, 25.0, 0.0, 0.0, True, 0.12)
        b = canlog.TelemetryRecord(0.0, 25.1, 0.0, 0.0, True, 0.12)
        assert canlog.snapshot_text(a) != canlog.snapshot_text(b)
