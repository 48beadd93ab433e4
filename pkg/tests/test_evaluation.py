import numpy as np
import pytest

from sensorcast.evaluation import (Metrics, PredictionTrace, ReportTable, coverage, export_trace, fmt, mae, mse,
                                   read_stamp, render_report)

T = np.datetime64("2016-11-01T00:15", "m") + np.arange(3) * np.timedelta64(15, "m")


def test_metric_examples():
    assert (mse([1, 2], [1, 2]), mae([1, 2], [1, 2])) == (0.0, 0.0)
    assert (mse([0, 0], [1, -1]), mae([0, 0], [1, -1])) == (1.0, 1.0)
    assert (mse([0, 0], [2, 0]), mae([0, 0], [2, 0])) == (2.0, 1.0)
    with pytest.raises(ValueError):
        mse([1, 2], [1])
    with pytest.raises(ValueError):
        mae([], [])


def test_metrics_match_brute_force(rng):
    for _ in range(50):
        n = int(rng.integers(1, 300))
        y, p = rng.normal(size=n) * 100, rng.normal(size=n) * 100
        se = sum((a - b) ** 2 for a, b in zip(y.tolist(), p.tolist())) / n
        ae = sum(abs(a - b) for a, b in zip(y.tolist(), p.tolist())) / n
        assert mse(y, p) == pytest.approx(se, rel=1e-12)
        assert mae(y, p) == pytest.approx(ae, rel=1e-12)


def test_chamber_mean_is_unweighted():
    m = Metrics.mean_of([Metrics(1.0, 1.0, 10), Metrics(3.0, 2.0, 1000)])
    assert (m.mse, m.mae, m.n) == (2.0, 1.5, 1010)


def test_coverage():
    assert coverage([1, 2, 3, 4], [0, 2.5, 3, 0], [2, 3, 3, 1]) == 0.5


def test_rounding_rule():
    assert fmt(16.90301) == "16.9030"
    assert fmt(0.123456) == "0.1235"


def test_report_csv_and_text():
    t = ReportTable(fingerprint="abc", seed=7)
    t.add("B100", 30, "last-value", Metrics(16.90301, 2.5, 10))
    t.add("B100", 30, "gbt", Metrics(12.0, 2.25, 10))
    t.add("B100", 60, "gbt", Metrics(13.0, 2.0, 10))
    text, csv = render_report(t)
    lines = csv.splitlines()
    assert lines[0] == "# fingerprint=abc seed=7"
    assert lines[1] == "chamber,horizon,model,mse,mae"
    assert lines[2] == "B100,30,last-value,16.9030,2.5000"
    assert "chamber B100" in text and "16.9030" in text
    back = ReportTable.from_csv(csv)
    assert back.fingerprint == "abc" and back.seed == 7
    assert back.get("B100", 60, "gbt").mse == 13.0
    with pytest.raises(ValueError):
        t.add("B100", 30, "gbt", Metrics(1, 1, 1))


def test_empty_report_is_header_only():
    _, csv = render_report(ReportTable(fingerprint="x", seed=1))
    assert csv.splitlines()[1:] == ["chamber,horizon,model,mse,mae"]


def test_point_trace_has_empty_quantiles(tmp_path):
    tr = PredictionTrace("T101", "B100", 30, "gbt", T, np.array([1.0, 2, 3]), np.array([1.5, 2, 2.5]))
    body = export_trace(tr, tmp_path / "t.csv", stamp="fingerprint=abc seed=7")
    lines = body.splitlines()
    assert lines[1] == "timestamp,truth,pred,p10,p90"
    assert lines[2] == "2016-11-01T00:15:00Z,1.0000,1.5000,,"
    assert (tmp_path / "t.csv").read_text() == body
    assert read_stamp(tmp_path / "t.csv") == {"fingerprint": "abc", "seed": "7"}


def test_quantile_trace_and_ordering():
    y = np.zeros(3)
    tr = PredictionTrace("T101", "B100", 30, "qnn-2h", T, y, y, y - 1, y + 1)
    assert tr.to_csv().splitlines()[1] == "2016-11-01T00:15:00Z,0.0000,0.0000,-1.0000,1.0000"
    with pytest.raises(ValueError):
        PredictionTrace("T101", "B100", 30, "gbt", T[::-1], y, y)
