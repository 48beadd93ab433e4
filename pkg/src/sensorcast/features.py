"""Multi-window trend features over a sensor's recent history.

For every window length the layout is ``mean, peak_fraction, pct_change,
slope, simple_prediction, slope_ratio``; three global features taken from the
largest window follow: ``last_value, max_value, last_over_max``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .timeseries import MINUTE, GridSeries, PreparedDataset, format_ts

EPS = 1e-9
PCT_CLIP = 1e6
PER_WINDOW = ("mean", "peak_fraction", "pct_change", "slope", "simple_prediction", "slope_ratio")
GLOBAL = ("last_value", "max_value", "last_over_max")
LAYOUT_VERSION = "sensorcast-features-v1"


class AlignmentError(ValueError):
    pass


class DegenerateWindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    window_minutes: tuple[int, ...] = (30, 45, 75, 120, 180, 240, 300)
    step_minutes: int = 15

    def __post_init__(self):
        w = tuple(int(m) for m in self.window_minutes)
        object.__setattr__(self, "window_minutes", w)
        if not w:
            raise ValueError("at least one window is required")
        if any(b <= a for a, b in zip(w, w[1:])):
            raise ValueError("window lengths must be strictly increasing")
        if any(m <= 0 or m % self.step_minutes for m in w):
            raise ValueError(f"every window must be a positive multiple of {self.step_minutes} min")
        if w[0] < 2 * self.step_minutes:
            raise ValueError("every window must span at least two cells to fit a slope")

    @property
    def cells(self) -> tuple[int, ...]:
        return tuple(m // self.step_minutes for m in self.window_minutes)

    @property
    def history(self) -> int:
        return self.cells[-1]

    @property
    def n_features(self) -> int:
        return 6 * len(self.window_minutes) + 3

    @property
    def last_value_index(self) -> int:
        return 6 * len(self.window_minutes)

    def feature_names(self) -> list[str]:
        names = [f"w{m}_{f}" for m in self.window_minutes for f in PER_WINDOW]
        return names + list(GLOBAL)


def window_points(series: GridSeries, anchor, window) -> list[tuple[float, float]] | None:
    """Cells in ``(anchor - window, anchor]`` as ``(minutes relative to anchor, value)``.

    Returns ``None`` when any cell in range is missing or lies before the grid.
    """
    try:
        i = series.index_of(anchor)
    except ValueError as exc:
        raise AlignmentError(str(exc)) from None
    step_min = int(series.step / MINUTE)
    window = int(window / MINUTE) if isinstance(window, np.timedelta64) else int(window)
    n = window // step_min
    if i - n + 1 < 0:
        return None
    vals = series.values[i - n + 1:i + 1]
    if np.isnan(vals).any():
        return None
    xs = step_min * np.arange(-(n - 1), 1)
    return [(float(x), float(v)) for x, v in zip(xs, vals)]


def fit_line(points) -> tuple[float, float]:
    """Least-squares ``(intercept, slope)`` of ``value = a + b*x``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise DegenerateWindowError("need at least two points to fit a line")
    x, y = pts[:, 0], pts[:, 1]
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx == 0:
        raise DegenerateWindowError("need at least two distinct x values")
    b = (xc @ (y - y.mean())) / sxx
    return float(y.mean() - b * x.mean()), float(b)


def fraction_of_peaks(values: Sequence[float]) -> float:
    """Share of entries that are strict interior local maxima."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        return 0.0
    peaks = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
    return float(peaks.sum() / len(v))


def window_features(history: np.ndarray, horizon_minutes: float, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Feature rows for a batch of complete histories.

    ``history`` has shape ``(n, spec.history)``, oldest cell first and the
    anchor cell last.
    """
    H = np.asarray(history, dtype=float)
    n = H.shape[0]
    out = np.empty((n, spec.n_features))
    step = float(spec.step_minutes)
    slopes = []
    for j, L in enumerate(spec.cells):
        W = H[:, -L:]
        x = step * np.arange(-(L - 1), 1)
        mean = W.mean(axis=1)
        if L >= 3:
            mid = W[:, 1:-1]
            peaks = ((mid > W[:, :-2]) & (mid > W[:, 2:])).sum(axis=1) / L
        else:
            peaks = np.zeros(n)
        first, last = W[:, 0], W[:, -1]
        pct = np.clip((last - first) / np.maximum(np.abs(first), EPS), -PCT_CLIP, PCT_CLIP)
        xc = x - x.mean()
        b = ((W - mean[:, None]) * xc).sum(axis=1) / (xc @ xc)
        a = mean - b * x.mean()
        out[:, 6 * j:6 * j + 5] = np.column_stack([mean, peaks, pct, b, a + b * horizon_minutes])
        slopes.append(b)
    ref = slopes[-1]
    big = np.abs(ref) >= EPS
    safe = np.where(big, ref, 1.0)
    for j, b in enumerate(slopes):
        out[:, 6 * j + 5] = np.where(big, b / safe, 0.0)
    W = H[:, -spec.cells[-1]:]
    last, mx = W[:, -1], W.max(axis=1)
    g = spec.last_value_index
    out[:, g] = last
    out[:, g + 1] = mx
    nz = mx != 0
    out[:, g + 2] = np.where(nz, last / np.where(nz, mx, 1.0), 0.0)
    return out


def compute_features(series: GridSeries, anchor, horizon, spec: WindowSpec = WindowSpec()) -> np.ndarray | None:
    """Feature vector at ``anchor``, or ``None`` (skip) if any window has a gap."""
    pts = window_points(series, anchor, spec.window_minutes[-1])
    if pts is None:
        return None
    horizon = int(horizon / MINUTE) if isinstance(horizon, np.timedelta64) else int(horizon)
    hist = np.array([[v for _, v in pts]])
    return window_features(hist, horizon, spec)[0]


class WindowFeatures(TransformerMixin, BaseEstimator):
    """Transformer from raw history windows ``(n, history)`` to feature rows.

    Parameters
    ----------
    horizon : int
        Forecast horizon in minutes, used by the line-extension features.
    window_minutes : tuple of int
    step_minutes : int
    """

    def __init__(self, horizon=30, window_minutes=(30, 45, 75, 120, 180, 240, 300), step_minutes=15):
        self.horizon = horizon
        self.window_minutes = window_minutes
        self.step_minutes = step_minutes

    def fit(self, X, y=None):
        self.spec_ = WindowSpec(tuple(self.window_minutes), self.step_minutes)
        X = check_array(X)
        if X.shape[1] != self.spec_.history:
            raise ValueError(f"expected {self.spec_.history} history cells, got {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        spec = WindowSpec(tuple(self.window_minutes), self.step_minutes)
        X = check_array(X)
        if X.shape[1] != spec.history:
            raise ValueError(f"expected {spec.history} history cells, got {X.shape[1]}")
        return window_features(X, self.horizon, spec)

    def get_feature_names_out(self, input_features=None):
        return np.array(WindowSpec(tuple(self.window_minutes), self.step_minutes).feature_names(), dtype=object)


class Sample(NamedTuple):
    sensor_id: str
    anchor_time: np.datetime64
    horizon: int
    features: np.ndarray
    target: float


@dataclass(frozen=True)
class SampleSet:
    """Supervised samples of one sensor at one horizon, ordered by anchor."""

    sensor_id: str
    horizon: int
    anchors: np.ndarray
    X: np.ndarray
    y: np.ndarray
    spec: WindowSpec = field(default_factory=WindowSpec)

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[Sample]:
        for t, x, y in zip(self.anchors, self.X, self.y):
            yield Sample(self.sensor_id, t, self.horizon, x, float(y))

    @property
    def last_values(self) -> np.ndarray:
        return self.X[:, self.spec.last_value_index]


def build_samples(ds: PreparedDataset, sensor_id: str, horizon: int,
                  spec: WindowSpec = WindowSpec()) -> SampleSet:
    """Every anchor with complete history windows and a present target cell."""
    if sensor_id not in ds.grids:
        raise KeyError(f"unknown sensor {sensor_id!r}")
    g = ds.grids[sensor_id]
    step_min = int(g.step / MINUTE)
    if step_min != spec.step_minutes:
        raise ValueError("grid step does not match the window spec")
    if horizon <= 0 or horizon % step_min:
        raise ValueError(f"horizon must be a positive multiple of {step_min} minutes")
    L, h = spec.history, horizon // step_min
    v = g.values
    n_anchor = len(v) - (L - 1) - h
    if n_anchor <= 0:
        return _empty(sensor_id, horizon, spec)
    hist = sliding_window_view(v, L)[:n_anchor]
    target = v[L - 1 + h:L - 1 + h + n_anchor]
    ok = ~np.isnan(hist).any(axis=1) & ~np.isnan(target)
    idx = np.flatnonzero(ok)
    if not len(idx):
        return _empty(sensor_id, horizon, spec)
    X = window_features(hist[idx], horizon, spec)
    anchors = g.timestamps[idx + L - 1]
    return SampleSet(sensor_id, horizon, anchors, X, target[idx].copy(), spec)


def _empty(sensor_id, horizon, spec) -> SampleSet:
    return SampleSet(sensor_id, horizon, np.array([], dtype="datetime64[m]"),
                     np.empty((0, spec.n_features)), np.empty(0), spec)


def column_names(spec: WindowSpec = WindowSpec()) -> list[str]:
    width = max(2, len(str(spec.n_features)))
    return [f"f{i + 1:0{width}d}" for i in range(spec.n_features)]


def column_mapping(spec: WindowSpec = WindowSpec()) -> dict[str, str]:
    """CSV column (``f01`` ...) to feature name."""
    return dict(zip(column_names(spec), spec.feature_names()))


def samples_frame(sets: Sequence[SampleSet]) -> pd.DataFrame:
    frames = []
    for s in sets:
        cols = column_names(s.spec)
        f = pd.DataFrame(s.X, columns=cols)
        f.insert(0, "horizon", s.horizon)
        f.insert(0, "anchor", [format_ts(t) for t in s.anchors])
        f.insert(0, "sensor_id", s.sensor_id)
        f["target"] = s.y
        frames.append(f)
    if not frames:
        return pd.DataFrame(columns=["sensor_id", "anchor", "horizon", *column_names(), "target"])
    return pd.concat(frames, ignore_index=True)


def write_samples(sets: Sequence[SampleSet], path, header_comment: str | None = None) -> None:
    """CSV ``sensor_id,anchor,horizon,f01..f45,target``."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        samples_frame(sets).to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


def read_samples(path, spec: WindowSpec = WindowSpec()) -> dict[tuple[str, int], SampleSet]:
    frame = pd.read_csv(path, comment="#", dtype={"sensor_id": str}, float_precision="round_trip")
    cols = column_names(spec)
    out = {}
    for (sid, h), g in frame.groupby(["sensor_id", "horizon"], sort=True):
        anchors = (pd.to_datetime(g["anchor"], utc=True).dt.tz_localize(None)
                   .to_numpy().astype("datetime64[m]"))
        out[(sid, int(h))] = SampleSet(sid, int(h), anchors, g[cols].to_numpy(dtype=float),
                                       g["target"].to_numpy(dtype=float), spec)
    return out
