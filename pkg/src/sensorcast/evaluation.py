"""Error metrics, report tables and prediction traces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qnn import count_parameters  # noqa: F401  re-exported
from .timeseries import format_ts

REPORT_COLUMNS = ("chamber", "horizon", "model", "mse", "mae")
TRACE_COLUMNS = ("timestamp", "truth", "pred", "p10", "p90")


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("metrics need at least one value")
    return truth, pred


def mse(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.mean((truth - pred) ** 2))


def mae(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.mean(np.abs(truth - pred)))


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    n: int

    @classmethod
    def of(cls, truth, pred) -> "Metrics":
        return cls(mse(truth, pred), mae(truth, pred), int(np.size(truth)))

    @classmethod
    def mean_of(cls, parts: Sequence["Metrics"]) -> "Metrics":
        """Unweighted mean over sensors."""
        return cls(float(np.mean([p.mse for p in parts])), float(np.mean([p.mae for p in parts])),
                   int(sum(p.n for p in parts)))


def coverage(truth, lower, upper) -> float:
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((truth >= np.asarray(lower)) & (truth <= np.asarray(upper))))


def fmt(x: float) -> str:
    return f"{x:.4f}"


@dataclass(frozen=True)
class ReportRow:
    chamber: str
    horizon: int
    model: str
    mse: float
    mae: float


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)
    fingerprint: str = ""
    seed: int | None = None

    def add(self, chamber, horizon, model, metrics: Metrics):
        if any(r.chamber == chamber and r.horizon == horizon and r.model == model for r in self.rows):
            raise ValueError(f"duplicate report row {(chamber, horizon, model)}")
        self.rows.append(ReportRow(chamber, int(horizon), model, metrics.mse, metrics.mae))

    def get(self, chamber, horizon, model) -> ReportRow:
        for r in self.rows:
            if (r.chamber, r.horizon, r.model) == (chamber, horizon, model):
                return r
        raise KeyError((chamber, horizon, model))

    def stamp(self) -> str:
        return f"fingerprint={self.fingerprint} seed={self.seed}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.stamp()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.chamber, r.horizon, r.model, fmt(r.mse), fmt(r.mae)])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table, one block per chamber, horizons side by side."""
        lines = [f"# {self.stamp()}"]
        chambers = sorted({r.chamber for r in self.rows})
        horizons = sorted({r.horizon for r in self.rows})
        for ch in chambers:
            models = list(dict.fromkeys(r.model for r in self.rows if r.chamber == ch))
            width = max([len(m) for m in models] + [5])
            head = " " * width + "".join(f" | {'h=' + str(h) + 'min':^21}" for h in horizons)
            sub = " " * width + "".join(f" | {'MSE':>10} {'MAE':>10}" for _ in horizons)
            lines += ["", f"chamber {ch}", head, sub, "-" * len(sub)]
            for m in models:
                cells = []
                for h in horizons:
                    try:
                        r = self.get(ch, h, m)
                        cells.append(f" | {fmt(r.mse):>10} {fmt(r.mae):>10}")
                    except KeyError:
                        cells.append(f" | {'':>10} {'':>10}")
                lines.append(f"{m:<{width}}" + "".join(cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ReportTable":
        lines = text.splitlines()
        stamp = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split()) if lines and lines[0].startswith("#") else {}
        body = [ln for ln in lines if not ln.startswith("#")]
        reader = csv.DictReader(body)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError("report CSV has an unexpected header")
        rows = [ReportRow(r["chamber"], int(r["horizon"]), r["model"], float(r["mse"]), float(r["mae"]))
                for r in reader]
        seed = stamp.get("seed")
        return cls(rows, stamp.get("fingerprint", ""), int(seed) if seed not in (None, "None") else None)


@dataclass
class PredictionTrace:
    """Truth and prediction stamped at the forecast target time."""

    sensor_id: str
    chamber: str
    horizon: int
    model: str
    timestamps: np.ndarray
    truth: np.ndarray
    pred: np.ndarray
    p10: np.ndarray | None = None
    p90: np.ndarray | None = None

    def __post_init__(self):
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps.astype(np.int64)) > 0):
            raise ValueError("trace timestamps must be strictly increasing")

    @property
    def name(self) -> str:
        return f"{self.chamber}_{self.sensor_id}_h{self.horizon}_{self.model}"

    def to_csv(self, stamp: str = "") -> str:
        buf = io.StringIO()
        if stamp:
            buf.write(f"# {stamp}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        has_q = self.p10 is not None
        for i, t in enumerate(self.timestamps):
            w.writerow([format_ts(t), fmt(self.truth[i]), fmt(self.pred[i]),
                        fmt(self.p10[i]) if has_q else "", fmt(self.p90[i]) if has_q else ""])
        return buf.getvalue()


def read_stamp(path) -> dict:
    """``key=value`` pairs from an artifact's leading comment line."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(kv.split("=", 1) for kv in first[1:].split() if "=" in kv)


def render_report(table: ReportTable, csv_path=None, text_path=None) -> tuple[str, str]:
    """Aligned text and CSV for ``table``; each is also written when a path is given."""
    text, csv_text = table.to_text(), table.to_csv()
    for path, body in ((text_path, text), (csv_path, csv_text)):
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(body)
    return text, csv_text


def export_trace(trace: PredictionTrace, path=None, stamp: str = "") -> str:
    body = trace.to_csv(stamp)
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(body)
    return body
