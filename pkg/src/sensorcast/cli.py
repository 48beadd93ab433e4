"""Command-line entry point.

Stages communicate through plain files in the work directory::

    sensorcast synth --seed 7 --out data/raw.csv
    sensorcast prepare --config run.yaml
    sensorcast featurize --config run.yaml
    sensorcast train --config run.yaml
    sensorcast evaluate --config run.yaml
    sensorcast predict --config run.yaml
    sensorcast report --config run.yaml

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from . import features as fe
from . import synth
from . import timeseries as ts
from .config import ConfigError, load_config
from .evaluation import ReportTable, read_stamp

log = logging.getLogger("sensorcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (ConfigError, ex.DataError, ts.FormatError, ts.EmptySeriesError, ts.SplitError,
               ts.IngestError, fe.AlignmentError, synth.SynthConfigError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sensorcast", description="Sensor forecasting pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    s = sub.add_parser("synth", help="generate a synthetic raw data file")
    s.add_argument("--config", help="take synth settings and output path from a run config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output CSV (sidecars are written next to it)")
    for name, text in [("prepare", "clean and resample raw readings"),
                       ("featurize", "split and build window-feature samples"),
                       ("train", "fit every model in the roster"),
                       ("evaluate", "score models on the test split and write the report"),
                       ("predict", "forecast from the most recent complete window"),
                       ("report", "print the report after checking artifact fingerprints")]:
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True)
    return p


def _stamp_meta(cfg, **extra):
    return {"fingerprint": cfg.fingerprint, "seed": cfg.seed, **extra}


def _require(cfg, path: Path, stage: str) -> Path:
    """``path`` must exist and carry this config's fingerprint."""
    if not path.exists():
        raise ex.DataError(f"{path} not found; run {stage} first")
    if path.suffix == ".json":
        fp = json.loads(path.read_text()).get("fingerprint")
    else:
        fp = read_stamp(path).get("fingerprint")
    if fp != cfg.fingerprint:
        raise ex.DataError(f"{path} was written with config fingerprint {fp}, "
                           f"current config is {cfg.fingerprint}; rerun {stage}")
    return path


def _load_prepared(cfg):
    wd = cfg.workdir
    _require(cfg, wd / ex.PREPARED_META, "prepare")
    ds = ts.read_prepared(_require(cfg, wd / ex.PREPARED, "prepare"), wd / ex.PREPARED_META)
    meta = json.loads((wd / ex.PREPARED_META).read_text())
    return ds, meta.get("data_sha256", "")


def _load_models(cfg):
    d = cfg.workdir / ex.MODELS
    for p in sorted(d.glob("*.txt")):
        _require(cfg, p, "train")
    return ex.load_models(cfg.workdir)


def cmd_synth(args) -> str:
    if args.config:
        cfg = load_config(args.config)
        conf = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
        out = Path(args.out) if args.out else cfg.raw_data
    else:
        if args.seed is None or not args.out:
            raise UsageError("synth needs --seed and --out (or --config)")
        conf, out = synth.SynthConfig(seed=args.seed), Path(args.out)
    manifest = synth.write(conf, out)
    n = sum(s["readings"] for s in manifest["sensors"].values())
    return f"synth: wrote {n} readings for {len(manifest['sensors'])} sensors to {out}"


def cmd_prepare(cfg) -> str:
    ds, digest = ex.prepare_stage(cfg)
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    for p in [cfg.workdir / ex.PREPARED, cfg.workdir / ex.PREPARED_META]:
        p.unlink(missing_ok=True)
    ts.write_prepared(ds, cfg.workdir / ex.PREPARED, cfg.workdir / ex.PREPARED_META,
                      extra_meta=_stamp_meta(cfg, data_sha256=digest), header_comment=cfg.stamp())
    c = ds.counters
    return (f"prepare: {len(ds.grids)} sensors x {ds.n_cells} cells; "
            f"dropped {c.get('sensors_dropped_low_count', 0)} sparse sensors, "
            f"{c.get('readings_inactive_removed', 0)} inactive readings")


def cmd_featurize(cfg) -> str:
    ds, _ = _load_prepared(cfg)
    parts = dict(zip(("train", "test"), ex.split_stage(cfg, ds)))
    counts = {}
    for name, part in parts.items():
        sets = ex.featurize_stage(cfg, part)
        fe.write_samples([sets[k] for k in sorted(sets)], cfg.workdir / ex.SAMPLES[name], cfg.stamp())
        counts[name] = sum(len(s) for s in sets.values())
    return f"featurize: {counts['train']} train and {counts['test']} test samples"


def _samples(cfg, name):
    p = _require(cfg, cfg.workdir / ex.SAMPLES[name], "featurize")
    sets = fe.read_samples(p, cfg.windows)
    ds, digest = _load_prepared(cfg)
    train, test = ex.split_stage(cfg, ds)
    part = train if name == "train" else test
    # sensor/horizon pairs without a single complete sample are absent from the CSV
    for sid in part.sensors():
        for h in cfg.horizons:
            sets.setdefault((sid, h), fe._empty(sid, h, cfg.windows))
    return sets, part, digest


def cmd_train(cfg) -> str:
    sets, train, _ = _samples(cfg, "train")
    models = ex.train_stage(cfg, train, sets)
    models_dir = cfg.workdir / ex.MODELS
    if models_dir.exists():
        for p in models_dir.glob("*.txt"):
            p.unlink()
    written = ex.save_models(cfg, models, cfg.workdir)
    return f"train: {len(written)} models written to {models_dir}"


def cmd_evaluate(cfg) -> str:
    sets, test, digest = _samples(cfg, "test")
    models = _load_models(cfg)
    result = ex.evaluate_stage(cfg, models, test, sets)
    result.data_fingerprint = digest
    ex.write_outputs(cfg, result, cfg.workdir)
    return f"evaluate: {len(result.table.rows)} report rows written to {cfg.workdir / 'report.csv'}"


def cmd_predict(cfg) -> str:
    ds, _ = _load_prepared(cfg)
    models = _load_models(cfg)
    rows = ex.latest_predictions(cfg, models, ds)
    (cfg.workdir / ex.PREDICTIONS).write_text(ex.predictions_csv(rows, cfg.stamp()))
    return f"predict: {len(rows)} forecasts written to {cfg.workdir / ex.PREDICTIONS}"


def cmd_report(cfg) -> str:
    p = cfg.workdir / "report.csv"
    if not p.exists():
        raise ex.DataError(f"{p} not found; run evaluate first")
    fp = ex.check_fingerprints(cfg.workdir, cfg.fingerprint)
    table = ReportTable.from_csv(p.read_text())
    sys.stdout.write(table.to_text())
    return f"report: {len(table.rows)} rows, fingerprint {fp}"


COMMANDS = {"prepare": cmd_prepare, "featurize": cmd_featurize, "train": cmd_train,
            "evaluate": cmd_evaluate, "predict": cmd_predict, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("sensorcast: a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(build_parser().format_usage(), end="", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            summary = cmd_synth(args)
        else:
            if not Path(args.config).is_file():
                raise ex.DataError(f"config file not found: {args.config}")
            summary = COMMANDS[args.command](load_config(args.config))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
