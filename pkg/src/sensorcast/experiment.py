"""Pipeline stages and the end-to-end experiment runner.

Per-sensor feature models (last value, linear, boosted trees) are trained for
every horizon; quantile networks are trained per chamber and horizon on the
joint lag matrix of all the chamber's sensors. Chamber rows in the report are
the unweighted mean of per-sensor test metrics; for the networks the median
head is the point prediction.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features as fe
from . import timeseries as ts
from .config import RunConfig
from .evaluation import (Metrics, fmt, PredictionTrace, ReportTable, coverage, export_trace, read_stamp,
                         render_report)
from .gbt import GBTRegressor
from .linear import LastValueRegressor, LinearRegressor
from .qnn import LagMatrixSpec, QuantileNetRegressor, lag_matrix, predict_window

log = logging.getLogger(__name__)

POINT_MODELS = ("last_value", "linear", "gbt")
DISPLAY = {"last_value": "last-value", "linear": "linear", "gbt": "gbt"}


class DataError(ValueError):
    pass


def qnn_name(window_minutes: int) -> str:
    return f"qnn-{window_minutes // 60}h" if window_minutes % 60 == 0 else f"qnn-{window_minutes}m"


def model_names(cfg: RunConfig) -> list[str]:
    names = []
    for kind in cfg.roster:
        if kind == "qnn":
            names += [qnn_name(w) for w in cfg.qnn["windows"]]
        else:
            names.append(DISPLAY[kind])
    return names


def _seed(cfg: RunConfig, *keys) -> int:
    words = [cfg.seed] + [int(hashlib.sha256(str(k).encode()).hexdigest()[:8], 16) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# ---------------------------------------------------------------- stages


def load_raw(cfg: RunConfig):
    for p in (cfg.raw_data, cfg.chamber_map):
        if not Path(p).exists():
            raise DataError(f"missing input file: {p}")
    chamber_map = ts.read_chamber_map(cfg.chamber_map)
    series, stats = ts.ingest_csv(cfg.raw_data, chamber_map)
    digest = hashlib.sha256(Path(cfg.raw_data).read_bytes()).hexdigest()
    return series, stats, digest


def prepare_stage(cfg: RunConfig) -> tuple[ts.PreparedDataset, str]:
    series, stats, digest = load_raw(cfg)
    ds = ts.prepare(series, cfg.cleaning, boundary=cfg.boundary, stats=stats)
    if not ds.grids:
        raise DataError("no sensor survived cleaning")
    log.info("prepared %d sensors, %d cells each", len(ds.grids), ds.n_cells)
    return ds, digest


def split_stage(cfg: RunConfig, ds: ts.PreparedDataset):
    return ts.split_by_time(ds, ts.SplitSpec(cfg.boundary))


def featurize_stage(cfg: RunConfig, part: ts.PreparedDataset) -> dict[tuple[str, int], fe.SampleSet]:
    return {(sid, h): fe.build_samples(part, sid, h, cfg.windows)
            for sid in part.sensors() for h in cfg.horizons}


@dataclass
class TrainedModels:
    point: dict = field(default_factory=dict)  # (kind, sensor_id, horizon) -> estimator
    nets: dict = field(default_factory=dict)   # (name, chamber, horizon) -> (LagMatrixSpec, estimator)


def train_stage(cfg: RunConfig, train: ts.PreparedDataset,
                train_sets: dict[tuple[str, int], fe.SampleSet]) -> TrainedModels:
    models = TrainedModels()
    for (sid, h), s in sorted(train_sets.items()):
        if len(s) == 0:
            raise DataError(f"no complete training samples for {sid} at horizon {h}")
        for kind in cfg.roster:
            if kind == "last_value":
                est = LastValueRegressor(cfg.windows.last_value_index).fit(s.X, s.y)
            elif kind == "linear":
                est = LinearRegressor(ridge=cfg.linear["ridge"]).fit(s.X, s.y)
            elif kind == "gbt":
                g = cfg.gbt
                est = GBTRegressor(g["n_trees"], g["max_depth"], g["learning_rate"],
                                   g["min_samples_leaf"]).fit(s.X, s.y)
            else:
                continue
            models.point[(kind, sid, h)] = est
    if "qnn" in cfg.roster:
        for chamber in train.chambers():
            sensors = tuple(train.sensors(chamber))
            for w in cfg.qnn["windows"]:
                spec = LagMatrixSpec(w, sensors, cfg.cleaning.step_minutes)
                for h in cfg.horizons:
                    _, X, Y = lag_matrix(train, spec, h)
                    if not len(X):
                        raise DataError(f"no complete lag rows for {chamber} window {w} horizon {h}")
                    q = cfg.qnn
                    est = QuantileNetRegressor(q["epochs"], q["batch_size"], q["step_size"],
                                               random_state=_seed(cfg, chamber.value, w, h))
                    models.nets[(qnn_name(w), chamber.value, h)] = (spec, est.fit(X, Y))
                    log.info("trained %s %s h=%d on %d rows", qnn_name(w), chamber.value, h, len(X))
    return models


@dataclass
class ExperimentResult:
    table: ReportTable
    traces: list[PredictionTrace]
    coverage: dict  # (name, chamber, horizon) -> fraction inside [p10, p90]
    loss_traces: dict  # (name, chamber, horizon) -> per-epoch training loss
    counters: dict = field(default_factory=dict)
    data_fingerprint: str = ""


def evaluate_stage(cfg: RunConfig, models: TrainedModels, test: ts.PreparedDataset,
                   test_sets: dict[tuple[str, int], fe.SampleSet]) -> ExperimentResult:
    table = ReportTable(fingerprint=cfg.fingerprint, seed=cfg.seed)
    traces, cover, losses = [], {}, {}
    for chamber in test.chambers():
        sensors = test.sensors(chamber)
        for h in cfg.horizons:
            shift = np.timedelta64(h, "m")
            for kind in cfg.roster:
                if kind == "qnn":
                    for w in cfg.qnn["windows"]:
                        name = qnn_name(w)
                        spec, est = models.nets[(name, chamber.value, h)]
                        anchors, X, Y = lag_matrix(test, spec, h)
                        if not len(X):
                            raise DataError(f"no complete test lag rows for {chamber.value} {name} h={h}")
                        Q = est.predict_quantiles(X)
                        per = [Metrics.of(Y[:, j], Q[:, 1, j]) for j in range(len(spec.sensors))]
                        table.add(chamber.value, h, name, Metrics.mean_of(per))
                        cover[(name, chamber.value, h)] = coverage(Y, Q[:, 0], Q[:, 2])
                        losses[(name, chamber.value, h)] = est.loss_trace_
                        for j, sid in enumerate(spec.sensors):
                            traces.append(PredictionTrace(sid, chamber.value, h, name, anchors + shift,
                                                          Y[:, j], Q[:, 1, j], Q[:, 0, j], Q[:, 2, j]))
                    continue
                per = []
                for sid in sensors:
                    s = test_sets[(sid, h)]
                    if len(s) == 0:
                        raise DataError(f"no complete test samples for {sid} at horizon {h}")
                    pred = models.point[(kind, sid, h)].predict(s.X)
                    per.append(Metrics.of(s.y, pred))
                    traces.append(PredictionTrace(sid, chamber.value, h, DISPLAY[kind],
                                                  s.anchors + shift, s.y, pred))
                table.add(chamber.value, h, DISPLAY[kind], Metrics.mean_of(per))
    return ExperimentResult(table, traces, cover, losses, dict(test.counters))


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    """Prepare, split, featurize, train and evaluate in memory."""
    ds, digest = prepare_stage(cfg)
    train, test = split_stage(cfg, ds)
    models = train_stage(cfg, train, featurize_stage(cfg, train))
    result = evaluate_stage(cfg, models, test, featurize_stage(cfg, test))
    result.data_fingerprint = digest
    return result


# ---------------------------------------------------------------- artifacts


def write_outputs(cfg: RunConfig, result: ExperimentResult, workdir: Path) -> None:
    """Report (CSV and text), per-sensor traces, coverage, loss curves and the run manifest."""
    workdir = Path(workdir)
    (workdir / "traces").mkdir(parents=True, exist_ok=True)
    stamp = cfg.stamp()
    render_report(result.table, workdir / "report.csv", workdir / "report.txt")
    for tr in result.traces:
        export_trace(tr, workdir / "traces" / f"{tr.name}.csv", stamp)
    lines = [f"# {stamp}", "chamber,horizon,model,coverage"]
    lines += [f"{ch},{h},{name},{c:.4f}" for (name, ch, h), c in sorted(result.coverage.items())]
    (workdir / "coverage.csv").write_text("\n".join(lines) + "\n")
    lines = [f"# {stamp}", "chamber,horizon,model,epoch,loss"]
    for (name, ch, h), trace in sorted(result.loss_traces.items()):
        lines += [f"{ch},{h},{name},{i},{v!r}" for i, v in enumerate(trace)]
    (workdir / "loss_traces.csv").write_text("\n".join(lines) + "\n")
    manifest = {
        "fingerprint": cfg.fingerprint,
        "seed": cfg.seed,
        "data_sha256": result.data_fingerprint,
        "config": cfg.normalized,
        "models": model_names(cfg),
        "counters": result.counters,
        "notes": ["quantile-network scalers fitted on the training split only",
                  "chamber metrics are unweighted means of per-sensor metrics"],
    }
    (workdir / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


PREPARED = "prepared.csv"
PREPARED_META = "prepared.meta.json"
SAMPLES = {"train": "samples_train.csv", "test": "samples_test.csv"}
MODELS = "models"
PREDICTIONS = "predictions.csv"
_LOADERS = {"last_value": LastValueRegressor, "linear": LinearRegressor, "gbt": GBTRegressor}


def _stamped(stamp: str, body: str, extra: list[str] = ()) -> str:
    return "".join(f"# {line}\n" for line in (stamp, *extra)) + body


def _unstamp(text: str) -> tuple[list[str], str]:
    head = []
    lines = text.splitlines(keepends=True)
    while lines and lines[0].startswith("#"):
        head.append(lines.pop(0)[1:].strip())
    return head, "".join(lines)


def save_models(cfg: RunConfig, models: TrainedModels, workdir: Path) -> list[Path]:
    """One stamped text file per fitted model under ``workdir/models``."""
    out = Path(workdir) / MODELS
    out.mkdir(parents=True, exist_ok=True)
    stamp = cfg.stamp()
    written = []
    for (kind, sid, h), est in sorted(models.point.items()):
        p = out / f"{kind}__{sid}__h{h}.txt"
        p.write_text(_stamped(stamp, est.dumps() + "\n", [f"model kind={kind} sensor={sid} horizon={h}"]))
        written.append(p)
    for (name, chamber, h), (spec, est) in sorted(models.nets.items()):
        p = out / f"{name}__{chamber}__h{h}.txt"
        extra = [f"model kind=qnn name={name} chamber={chamber} horizon={h}",
                 f"lags window={spec.window_minutes} step={spec.step_minutes} sensors={','.join(spec.sensors)}"]
        p.write_text(_stamped(stamp, est.dumps(), extra))
        written.append(p)
    return written


def load_models(workdir: Path) -> TrainedModels:
    models = TrainedModels()
    files = sorted((Path(workdir) / MODELS).glob("*.txt"))
    if not files:
        raise DataError(f"no trained models in {Path(workdir) / MODELS}; run train first")
    for p in files:
        head, body = _unstamp(p.read_text())
        info = {}
        for line in head[1:]:
            info.update(kv.split("=", 1) for kv in line.split()[1:])
        h = int(info["horizon"])
        if info["kind"] == "qnn":
            spec = LagMatrixSpec(int(info["window"]), tuple(info["sensors"].split(",")), int(info["step"]))
            models.nets[(info["name"], info["chamber"], h)] = (spec, QuantileNetRegressor.loads(body))
        else:
            models.point[(info["kind"], info["sensor"], h)] = _LOADERS[info["kind"]].loads(body)
    return models


def latest_predictions(cfg: RunConfig, models: TrainedModels, ds: ts.PreparedDataset) -> list[dict]:
    """Forecasts from the most recent anchor with complete history, per sensor, model and horizon."""
    rows = []
    for (kind, sid, h), est in sorted(models.point.items()):
        g = ds.grids.get(sid)
        if g is None:
            raise DataError(f"model for unknown sensor {sid}")
        L = cfg.windows.history
        for end in range(len(g) - 1, L - 2, -1):
            hist = g.values[end - L + 1:end + 1]
            if not np.isnan(hist).any():
                x = fe.window_features(hist[None], h, cfg.windows)
                anchor = g.timestamps[end]
                rows.append({"sensor_id": sid, "model": DISPLAY[kind], "horizon": h, "anchor": anchor,
                             "target_time": anchor + np.timedelta64(h, "m"),
                             "pred": float(est.predict(x)[0]), "p10": None, "p90": None})
                break
    for (name, chamber, h), (spec, est) in sorted(models.nets.items()):
        grids = [ds.grids[s] for s in spec.sensors]
        for end in range(ds.n_cells - 1, spec.lags - 2, -1):
            window = np.array([g.values[end - spec.lags + 1:end + 1] for g in grids])
            if not np.isnan(window).any():
                q = predict_window(est, window)
                anchor = grids[0].timestamps[end]
                for j, sid in enumerate(spec.sensors):
                    rows.append({"sensor_id": sid, "model": name, "horizon": h, "anchor": anchor,
                                 "target_time": anchor + np.timedelta64(h, "m"), "pred": float(q[j, 1]),
                                 "p10": float(q[j, 0]), "p90": float(q[j, 2])})
                break
    return rows


def predictions_csv(rows: list[dict], stamp: str) -> str:
    lines = [f"# {stamp}", "sensor_id,model,horizon,anchor,target_time,pred,p10,p90"]
    for r in rows:
        q = [fmt(r[k]) if r[k] is not None else "" for k in ("p10", "p90")]
        lines.append(",".join([r["sensor_id"], r["model"], str(r["horizon"]), ts.format_ts(r["anchor"]),
                               ts.format_ts(r["target_time"]), fmt(r["pred"]), *q]))
    return "\n".join(lines) + "\n"


def check_fingerprints(workdir: Path, expected: str | None = None) -> str:
    """Fingerprint shared by every stamped artifact; raises ``DataError`` on a mix."""
    workdir = Path(workdir)
    seen = {}
    for p in sorted(workdir.rglob("*")):
        if p.suffix not in (".csv", ".txt"):
            continue
        fp = read_stamp(p).get("fingerprint")
        if fp is not None:
            seen.setdefault(fp, []).append(str(p.relative_to(workdir)))
    for name in ("run_manifest.json", PREPARED_META):
        p = workdir / name
        if p.exists():
            fp = json.loads(p.read_text()).get("fingerprint")
            if fp is not None:
                seen.setdefault(fp, []).append(name)
    if expected is not None:
        seen.setdefault(expected, []).append("<config>")
    if len(seen) > 1:
        detail = "; ".join(f"{fp}: {', '.join(files[:3])}" for fp, files in seen.items())
        raise DataError(f"artifacts from different configurations are mixed: {detail}")
    if not seen:
        raise DataError(f"no stamped artifacts in {workdir}")
    return next(iter(seen))
