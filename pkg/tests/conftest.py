import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sensorcast.timeseries import Chamber, GridSeries, PreparedDataset, SensorSeries  # noqa: E402

T0 = np.datetime64("2016-10-01T00:00", "m")


def series(minutes, values, sensor_id="T101", chamber="B100"):
    return SensorSeries(sensor_id, chamber, T0 + np.asarray(minutes, dtype=np.int64), values)


def grid(values, sensor_id="T101", chamber=Chamber.B100, origin=T0, step=15):
    return GridSeries(sensor_id, chamber, origin, np.timedelta64(step, "m"), np.asarray(values, float))


def dataset(columns: dict, chambers: dict | None = None, origin=T0):
    chambers = chambers or {}
    return PreparedDataset({sid: grid(v, sid, chambers.get(sid, "B100"), origin)
                            for sid, v in columns.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(20161031)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
