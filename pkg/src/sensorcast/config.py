"""Run configuration: YAML in, validated ``RunConfig`` out.

Example::

    seed: 7
    paths:
      raw_data: data/raw.csv
      chamber_map: data/raw.chambers.csv
      workdir: work
    cleaning: {min_points: 6000, run_len: 60, low_value: 25.0}
    horizons: [30, 60]
    split: {boundary: "2016-10-31T00:00:00Z"}
    models:
      roster: [last_value, linear, gbt, qnn]
      gbt: {n_trees: 300, max_depth: 6, learning_rate: 0.05, min_samples_leaf: 5}
      qnn: {windows: [120, 180, 300], epochs: 200}

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .features import WindowSpec
from .synth import SynthConfig
from .timeseries import CleaningParams, to_minute

WORKDIR_ENV = "SENSORCAST_WORKDIR"
MODEL_KINDS = ("last_value", "linear", "gbt", "qnn")
FREEFORM = ("low_values", "synth")
FLOAT_KEYS = ("low_value", "ridge", "learning_rate", "step_size")

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "paths": {"raw_data": "raw.csv", "chamber_map": None, "workdir": "work"},
    "cleaning": {"min_points": 6000, "run_len": 60, "low_value": 25.0, "low_values": {},
                 "step_minutes": 15},
    "features": {"windows": [30, 45, 75, 120, 180, 240, 300]},
    "horizons": [30, 60],
    "split": {"boundary": "2016-10-31T00:00:00Z"},
    "models": {
        "roster": list(MODEL_KINDS),
        "linear": {"ridge": 1e-8},
        "gbt": {"n_trees": 300, "max_depth": 6, "learning_rate": 0.05, "min_samples_leaf": 5},
        "qnn": {"windows": [120, 180, 300], "epochs": 200, "batch_size": 64, "step_size": 1e-3},
    },
    "synth": {},
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    seed: int
    raw_data: Path
    chamber_map: Path
    workdir: Path
    cleaning: CleaningParams
    windows: WindowSpec
    horizons: tuple[int, ...]
    boundary: np.datetime64
    roster: tuple[str, ...]
    linear: dict
    gbt: dict
    qnn: dict
    synth: SynthConfig
    normalized: dict = field(repr=False)
    fingerprint: str = ""

    def stamp(self) -> str:
        return f"fingerprint={self.fingerprint} seed={self.seed}"


def _merge(defaults: dict, given: dict, prefix: str, problems: list) -> dict:
    out = {}
    for key in given:
        if key not in defaults:
            problems.append(f"unknown key {prefix}{key}")
    for key, dv in defaults.items():
        gv = given.get(key, dv)
        if isinstance(dv, dict) and key not in FREEFORM:
            if not isinstance(gv, dict):
                problems.append(f"{prefix}{key} must be a mapping")
                gv = {}
            out[key] = _merge(dv, gv, f"{prefix}{key}.", problems)
        else:
            out[key] = _coerce_float(gv) if key in FLOAT_KEYS else gv
    return out


def _coerce_float(v):
    # PyYAML reads exponent literals without a dot (1e-8) as strings
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def validate_config(text: str, base_dir: str | os.PathLike | None = None) -> RunConfig:
    """Parse, default and validate; every violation is reported at once."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    problems: list[str] = []
    cfg = _merge(DEFAULTS, raw, "", problems)
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    seed = cfg["seed"]
    if seed is None:
        problems.append("seed is required")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append("seed must be a non-negative integer")

    c = cfg["cleaning"]
    for key in ("min_points", "step_minutes", "run_len"):
        if not isinstance(c[key], int) or c[key] < 0:
            problems.append(f"cleaning.{key} must be a non-negative integer")
    if isinstance(c["run_len"], int) and c["run_len"] < 2:
        problems.append("cleaning.run_len must be >= 2")
    if not isinstance(c["step_minutes"], int) or c["step_minutes"] <= 0:
        problems.append("cleaning.step_minutes must be positive")
    if not isinstance(c["low_values"], dict):
        problems.append("cleaning.low_values must map sensor ids to numbers")
    for key, val in [("low_value", c["low_value"]), *((f"low_values.{k}", v) for k, v in
                                                       (c["low_values"] or {}).items())]:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            problems.append(f"cleaning.{key} must be a number")

    step = c["step_minutes"] if isinstance(c["step_minutes"], int) and c["step_minutes"] > 0 else 15
    windows = None
    try:
        windows = WindowSpec(tuple(cfg["features"]["windows"]), step)
    except (TypeError, ValueError) as exc:
        problems.append(f"features.windows: {exc}")

    horizons = cfg["horizons"]
    if (not isinstance(horizons, list) or not horizons
            or any(not isinstance(h, int) or h <= 0 or h % step for h in horizons)):
        problems.append(f"horizons must be a non-empty list of positive multiples of {step}")
        horizons = []

    boundary = None
    try:
        boundary = to_minute(str(cfg["split"]["boundary"]))
    except (ValueError, TypeError) as exc:
        problems.append(f"split.boundary: {exc}")

    m = cfg["models"]
    roster = m["roster"]
    if not isinstance(roster, list) or any(r not in MODEL_KINDS for r in roster):
        problems.append(f"models.roster entries must be among {list(MODEL_KINDS)}")
        roster = []
    elif len(set(roster)) != len(roster):
        problems.append("models.roster has duplicates")
    if not _pos_num(m["linear"]["ridge"], allow_zero=True):
        problems.append("models.linear.ridge must be >= 0")
    g = m["gbt"]
    for key in ("n_trees", "max_depth", "min_samples_leaf"):
        if not _pos_int(g[key], allow_zero=key != "min_samples_leaf"):
            problems.append(f"models.gbt.{key} must be a {'positive' if key == 'min_samples_leaf' else 'non-negative'} integer")
    if not _pos_num(g["learning_rate"]) or g["learning_rate"] > 1:
        problems.append("models.gbt.learning_rate must lie in (0, 1]")
    q = m["qnn"]
    if (not isinstance(q["windows"], list) or not q["windows"]
            or any(not _pos_int(w) or w % step for w in q["windows"])):
        problems.append(f"models.qnn.windows must be positive multiples of {step}")
    for key in ("epochs", "batch_size"):
        if not _pos_int(q[key]):
            problems.append(f"models.qnn.{key} must be a positive integer")
    if not _pos_num(q["step_size"]):
        problems.append("models.qnn.step_size must be positive")

    synth = SynthConfig()
    try:
        synth_kw = dict(cfg["synth"] or {})
        if "level_range" in synth_kw:
            synth_kw["level_range"] = tuple(synth_kw["level_range"])
        synth = SynthConfig(**{"seed": seed if isinstance(seed, int) else 0, **synth_kw}).validate()
    except TypeError as exc:
        problems.append(f"synth: {exc}")
    except ValueError as exc:
        problems.append(f"synth: {exc}")

    if problems:
        raise ConfigError(problems)

    paths = cfg["paths"]
    workdir = Path(os.environ.get(WORKDIR_ENV) or paths["workdir"])
    raw_data = _resolve(base, paths["raw_data"])
    chamber_map = (_resolve(base, paths["chamber_map"]) if paths["chamber_map"]
                   else raw_data.with_name(raw_data.name.removesuffix(".csv") + ".chambers.csv"))
    normalized = {k: v for k, v in cfg.items() if k != "paths"}
    normalized["synth"] = synth.to_dict()
    fingerprint = hashlib.sha256(json.dumps(normalized, sort_keys=True).encode()).hexdigest()[:16]
    return RunConfig(
        seed=seed, raw_data=raw_data, chamber_map=chamber_map, workdir=_resolve(base, workdir),
        cleaning=CleaningParams(c["min_points"], c["run_len"], float(c["low_value"]),
                                {str(k): float(v) for k, v in c["low_values"].items()}, step),
        windows=windows, horizons=tuple(horizons), boundary=boundary, roster=tuple(roster),
        linear=dict(m["linear"]), gbt=dict(g), qnn=dict(q), synth=synth,
        normalized=normalized, fingerprint=fingerprint)


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    return validate_config(path.read_text(), base_dir=path.parent)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _pos_int(v, allow_zero=False) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and (v >= 0 if allow_zero else v > 0)


def _pos_num(v, allow_zero=False) -> bool:
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)
    return ok and (v >= 0 if allow_zero else v > 0)
