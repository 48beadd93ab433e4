"""Raw sensor ingestion, cleaning, grid resampling and time-based splitting.

Timestamps are handled as ``numpy.datetime64`` values at minute precision and
are always UTC. Grid cells are stamped at the *end* of their half-open
interval ``[start, end)``; missing cells are ``NaN``.
"""
from __future__ import annotations

import enum
import io
import json
import os
from dataclasses import dataclass, field, replace
from typing import IO, Iterator, Mapping, NamedTuple

import numpy as np
import pandas as pd

MINUTE = np.timedelta64(1, "m")
DEFAULT_STEP = np.timedelta64(15, "m")


class IngestError(OSError):
    """Raw data source could not be read."""


class FormatError(ValueError):
    """Raw data source is readable but not in the expected layout."""


class EmptySeriesError(ValueError):
    pass


class SplitError(ValueError):
    pass


class Chamber(str, enum.Enum):
    B100 = "B100"
    B200 = "B200"


class Reading(NamedTuple):
    timestamp: np.datetime64
    value: float


def to_minute(ts) -> np.datetime64:
    """Coerce a timestamp-like value (str, datetime, datetime64) to UTC minutes."""
    if isinstance(ts, str):
        t = pd.Timestamp(ts)
        if t.tzinfo is not None:
            t = t.tz_convert("UTC").tz_localize(None)
        return np.datetime64(t.floor("min").to_datetime64(), "m")
    if isinstance(ts, pd.Timestamp):
        if ts.tzinfo is not None:
            ts = ts.tz_convert("UTC").tz_localize(None)
        return np.datetime64(ts.floor("min").to_datetime64(), "m")
    return np.datetime64(ts, "m")


def format_ts(ts: np.datetime64) -> str:
    return f"{np.datetime_as_string(np.datetime64(ts, 'm'), unit='s')}Z"


@dataclass(frozen=True)
class SensorSeries:
    """Raw readings of one sensor, strictly increasing in time."""

    sensor_id: str
    chamber: Chamber
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[m]")
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(times) > 1 and not np.all(times[1:] > times[:-1]):
            raise ValueError(f"readings of {self.sensor_id} are not strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite reading in {self.sensor_id}")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "chamber", Chamber(self.chamber))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def readings(self) -> Iterator[Reading]:
        return (Reading(t, float(v)) for t, v in zip(self.times, self.values))

    @classmethod
    def from_readings(cls, sensor_id, chamber, readings) -> "SensorSeries":
        readings = sorted(readings, key=lambda r: r[0])
        times = np.array([to_minute(r[0]) for r in readings], dtype="datetime64[m]")
        values = np.array([r[1] for r in readings], dtype=float)
        return cls(sensor_id, chamber, times, values)


@dataclass(frozen=True)
class GridSeries:
    """Regular-grid form of a sensor. Cell ``k`` is stamped ``origin + (k+1)*step``."""

    sensor_id: str
    chamber: Chamber
    origin: np.datetime64
    step: np.timedelta64
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(np.isinf(values)):
            raise ValueError("grid values must be finite or NaN")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", np.datetime64(self.origin, "m"))
        object.__setattr__(self, "step", np.timedelta64(self.step, "m"))
        object.__setattr__(self, "chamber", Chamber(self.chamber))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def timestamps(self) -> np.ndarray:
        return self.origin + self.step * np.arange(1, len(self.values) + 1)

    @property
    def cells(self) -> list[tuple[np.datetime64, float | None]]:
        return [
            (t, None if np.isnan(v) else float(v))
            for t, v in zip(self.timestamps, self.values)
        ]

    def index_of(self, timestamp) -> int:
        """Cell index stamped at ``timestamp``; raises ``ValueError`` off the grid."""
        delta = to_minute(timestamp) - self.origin
        k, rem = divmod(int(delta / MINUTE), int(self.step / MINUTE))
        if rem or k < 1 or k > len(self.values):
            raise ValueError(f"{timestamp} is not a cell timestamp of this grid")
        return k - 1

    def to_series(self) -> SensorSeries:
        """Present cells as raw readings at the last minute of their interval."""
        keep = ~np.isnan(self.values)
        times = self.timestamps[keep] - MINUTE
        return SensorSeries(self.sensor_id, self.chamber, times, self.values[keep])


@dataclass(frozen=True)
class SplitSpec:
    boundary: np.datetime64

    def __post_init__(self):
        object.__setattr__(self, "boundary", to_minute(self.boundary))


@dataclass(frozen=True)
class PreparedDataset:
    grids: Mapping[str, GridSeries]
    boundary: np.datetime64 | None = None
    counters: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        grids = dict(sorted(self.grids.items()))
        shapes = {(g.origin, g.step, len(g)) for g in grids.values()}
        if len(shapes) > 1:
            raise ValueError("all grid series must share origin, step and length")
        object.__setattr__(self, "grids", grids)

    @property
    def origin(self) -> np.datetime64:
        return next(iter(self.grids.values())).origin

    @property
    def step(self) -> np.timedelta64:
        return next(iter(self.grids.values())).step

    @property
    def n_cells(self) -> int:
        return len(next(iter(self.grids.values()))) if self.grids else 0

    def sensors(self, chamber: Chamber | str | None = None) -> list[str]:
        if chamber is None:
            return list(self.grids)
        chamber = Chamber(chamber)
        return [s for s, g in self.grids.items() if g.chamber is chamber]

    def chambers(self) -> list[Chamber]:
        return sorted({g.chamber for g in self.grids.values()}, key=lambda c: c.value)


@dataclass(frozen=True)
class IngestStats:
    rows_parsed: int = 0
    rows_retained: int = 0
    invalid: int = 0
    unknown_sensor: int = 0
    duplicates: int = 0

    @property
    def rows_skipped(self) -> int:
        return self.invalid + self.unknown_sensor + self.duplicates


def read_chamber_map(source) -> dict[str, Chamber]:
    """Read a ``sensor_id,chamber`` CSV."""
    frame = _read_csv(source, ["sensor_id", "chamber"])
    return {str(s).strip(): Chamber(str(c).strip()) for s, c in zip(frame.sensor_id, frame.chamber)}


def _read_csv(source, header: list[str]) -> pd.DataFrame:
    try:
        if isinstance(source, (bytes, bytearray)):
            source = io.BytesIO(source)
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, comment="#",
                            encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read data source: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise FormatError("data source is empty; expected header " + ",".join(header)) from exc
    cols = [c.strip() for c in frame.columns]
    if cols != header:
        raise FormatError(f"expected header {','.join(header)!r}, got {','.join(cols)!r}")
    frame.columns = header
    return frame


def ingest_csv(source: str | os.PathLike | IO | bytes,
               chamber_map: Mapping[str, Chamber | str]) -> tuple[dict[str, SensorSeries], IngestStats]:
    """Parse ``timestamp,sensor_id,value`` rows into per-sensor series.

    Rows with an unparseable timestamp or a non-finite value, and rows of
    sensors absent from ``chamber_map``, are skipped and counted. For a
    repeated (sensor, minute) the last occurrence in file order wins.
    """
    frame = _read_csv(source, ["timestamp", "sensor_id", "value"])
    n = len(frame)
    ts = pd.to_datetime(frame["timestamp"], errors="coerce", utc=True, format="ISO8601")
    vals = pd.to_numeric(frame["value"].str.strip(), errors="coerce").to_numpy(dtype=float)
    valid = ts.notna().to_numpy() & np.isfinite(vals)
    sensor = frame["sensor_id"].str.strip()
    known = sensor.isin(list(chamber_map)).to_numpy()
    invalid = int((~valid).sum())
    unknown = int((valid & ~known).sum())
    keep = valid & known

    clean = pd.DataFrame({
        "sensor_id": sensor[keep].to_numpy(),
        "t": ts[keep].dt.tz_localize(None).dt.floor("min").to_numpy().astype("datetime64[m]"),
        "value": vals[keep],
    })
    clean["row"] = np.arange(len(clean))
    before = len(clean)
    clean = clean.drop_duplicates(["sensor_id", "t"], keep="last")
    duplicates = before - len(clean)
    clean = clean.sort_values(["sensor_id", "t"], kind="stable")

    out: dict[str, SensorSeries] = {}
    for sid, group in clean.groupby("sensor_id", sort=True):
        out[sid] = SensorSeries(sid, Chamber(chamber_map[sid]), group["t"].to_numpy(),
                                group["value"].to_numpy())
    stats = IngestStats(rows_parsed=n, rows_retained=len(clean), invalid=invalid,
                        unknown_sensor=unknown, duplicates=duplicates)
    return out, stats


def filter_low_count(series_set: Mapping[str, SensorSeries], min_points: int = 6000) -> dict[str, SensorSeries]:
    """Drop sensors with strictly fewer than ``min_points`` readings."""
    if min_points < 0:
        raise ValueError("min_points must be >= 0")
    return {sid: s for sid, s in series_set.items() if len(s) >= min_points}


def inactive_mask(values: np.ndarray, run_len: int, low_value: float) -> np.ndarray:
    """Boolean mask of readings inside maximal constant low runs of length >= run_len."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    starts = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
    ends = np.r_[starts[1:], n]
    for s, e in zip(starts, ends):
        if e - s >= run_len and values[s] <= low_value:
            mask[s:e] = True
    return mask


def remove_inactive_runs(series: SensorSeries, run_len: int = 60, low_value: float = -np.inf) -> SensorSeries:
    """Remove plant-idle stretches: long runs of one identical value at or below ``low_value``."""
    if run_len < 2:
        raise ValueError("run_len must be >= 2")
    drop = inactive_mask(series.values, run_len, low_value)
    if not drop.any():
        return series
    return replace(series, times=series.times[~drop], values=series.values[~drop])


def resample_last(series: SensorSeries, step=DEFAULT_STEP, origin=None,
                  n_cells: int | None = None) -> GridSeries:
    """Last reading of each ``[origin + k*step, origin + (k+1)*step)``, stamped at the interval end.

    ``origin`` defaults to the first reading floored to the step. ``n_cells``
    extends (with missing cells) or truncates the grid.
    """
    if len(series) == 0:
        raise EmptySeriesError(f"cannot resample empty series {series.sensor_id}")
    step = np.timedelta64(step, "m")
    step_min = int(step / MINUTE)
    minutes = series.times.astype(np.int64)
    if origin is None:
        origin_min = (int(minutes[0]) // step_min) * step_min
    else:
        origin_min = int(to_minute(origin).astype(np.int64))
        if origin_min % step_min:
            raise ValueError("origin must be aligned to the step")
    if minutes[0] < origin_min:
        raise ValueError("origin is later than the first reading")
    k = (minutes - origin_min) // step_min
    if n_cells is None:
        n_cells = int(k[-1]) + 1
    grid = np.full(n_cells, np.nan)
    # times are strictly increasing, so the last index per interval is where k changes
    last = np.flatnonzero(np.r_[k[1:] != k[:-1], True])
    sel = last[k[last] < n_cells]
    grid[k[sel]] = series.values[sel]
    return GridSeries(series.sensor_id, series.chamber,
                      np.datetime64(origin_min, "m"), step, grid)


def split_by_time(ds: PreparedDataset, spec: SplitSpec) -> tuple[PreparedDataset, PreparedDataset]:
    """Partition every grid: cells stamped at or before the boundary go to train."""
    if not ds.grids:
        raise SplitError("cannot split an empty dataset")
    stamps = next(iter(ds.grids.values())).timestamps
    b = spec.boundary
    if b < stamps[0] or b >= stamps[-1]:
        raise SplitError(
            f"split boundary {format_ts(b)} outside data range "
            f"[{format_ts(stamps[0])}, {format_ts(stamps[-1])})")
    n_train = int(np.searchsorted(stamps, b, side="right"))
    train, test = {}, {}
    for sid, g in ds.grids.items():
        train[sid] = replace(g, values=g.values[:n_train])
        test[sid] = replace(g, origin=g.origin + n_train * g.step, values=g.values[n_train:])
    return (PreparedDataset(train, b, dict(ds.counters)),
            PreparedDataset(test, b, dict(ds.counters)))


@dataclass(frozen=True)
class CleaningParams:
    min_points: int = 6000
    run_len: int = 60
    low_value: float = -np.inf
    low_values: Mapping[str, float] = field(default_factory=dict)
    step_minutes: int = 15

    def low_for(self, sensor_id: str) -> float:
        return float(self.low_values.get(sensor_id, self.low_value))


def prepare(series_set: Mapping[str, SensorSeries], params: CleaningParams = CleaningParams(),
            boundary=None, stats: IngestStats | None = None) -> PreparedDataset:
    """Filter, de-idle and resample every sensor onto one shared grid."""
    kept = filter_low_count(series_set, params.min_points)
    cleaned = {sid: remove_inactive_runs(s, params.run_len, params.low_for(sid))
               for sid, s in kept.items()}
    cleaned = {sid: s for sid, s in cleaned.items() if len(s)}
    counters = {}
    if stats is not None:
        counters.update(rows_parsed=stats.rows_parsed, rows_skipped=stats.rows_skipped,
                        rows_retained=stats.rows_retained, duplicates=stats.duplicates)
    counters["sensors_in"] = len(series_set)
    counters["sensors_dropped_low_count"] = len(series_set) - len(kept)
    counters["readings_inactive_removed"] = sum(len(kept[s]) - len(c) for s, c in cleaned.items())
    if not cleaned:
        return PreparedDataset({}, boundary, counters)
    step = np.timedelta64(params.step_minutes, "m")
    step_min = params.step_minutes
    first = min(int(s.times[0].astype(np.int64)) for s in cleaned.values())
    last = max(int(s.times[-1].astype(np.int64)) for s in cleaned.values())
    origin = np.datetime64((first // step_min) * step_min, "m")
    n_cells = (last - (first // step_min) * step_min) // step_min + 1
    grids = {sid: resample_last(s, step, origin, n_cells) for sid, s in cleaned.items()}
    counters["cells_resampled"] = int(n_cells) * len(grids)
    counters["cells_present"] = int(sum(np.isfinite(g.values).sum() for g in grids.values()))
    return PreparedDataset(grids, to_minute(boundary) if boundary is not None else None, counters)


def write_prepared(ds: PreparedDataset, csv_path, meta_path, extra_meta: Mapping | None = None,
                   header_comment: str | None = None) -> None:
    """Persist present grid cells as ``timestamp,sensor_id,value`` plus a JSON sidecar."""
    rows = []
    for sid, g in ds.grids.items():
        keep = ~np.isnan(g.values)
        stamps = g.timestamps[keep]
        rows.append(pd.DataFrame({"timestamp": [format_ts(t) for t in stamps],
                                  "sensor_id": sid, "value": g.values[keep]}))
    frame = pd.concat(rows) if rows else pd.DataFrame(columns=["timestamp", "sensor_id", "value"])
    with open(csv_path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")
    meta = {
        "origin": format_ts(ds.origin) if ds.grids else None,
        "step_minutes": int(ds.step / MINUTE) if ds.grids else None,
        "n_cells": ds.n_cells,
        "boundary": format_ts(ds.boundary) if ds.boundary is not None else None,
        "chambers": {sid: g.chamber.value for sid, g in ds.grids.items()},
        "counters": dict(ds.counters),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_prepared(csv_path, meta_path) -> PreparedDataset:
    with open(meta_path) as fh:
        meta = json.load(fh)
    frame = pd.read_csv(csv_path, comment="#", dtype={"sensor_id": str},
                        float_precision="round_trip")
    origin = to_minute(meta["origin"])
    step = np.timedelta64(int(meta["step_minutes"]), "m")
    n = int(meta["n_cells"])
    step_min = int(meta["step_minutes"])
    grids = {}
    stamps = pd.to_datetime(frame["timestamp"], utc=True).dt.tz_localize(None)
    minutes = stamps.to_numpy().astype("datetime64[m]").astype(np.int64)
    k = (minutes - int(origin.astype(np.int64))) // step_min - 1
    for sid, chamber in meta["chambers"].items():
        sel = (frame["sensor_id"] == sid).to_numpy()
        values = np.full(n, np.nan)
        values[k[sel]] = frame["value"].to_numpy(dtype=float)[sel]
        grids[sid] = GridSeries(sid, Chamber(chamber), origin, step, values)
    boundary = to_minute(meta["boundary"]) if meta.get("boundary") else None
    return PreparedDataset(grids, boundary, meta.get("counters", {}))
