"""Deterministic synthetic plant data with the usual field pathologies.

Each sensor is a level plus its own mean-reverting (Ornstein-Uhlenbeck)
deviation, a loading on chamber-wide latent factors, white measurement noise
and occasional one-minute upward spikes. On top of that the generator deletes
readings at random, inserts stretches of constant low readings (an idle
plant), moves levels at regime changes, and adds one sparsely reporting sensor
per chamber. A manifest records every injection so cleaning can be checked
against it.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .timeseries import Chamber, format_ts, to_minute


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    sensors_per_chamber: dict = field(default_factory=lambda: {"B100": 3, "B200": 4})
    start: str = "2016-09-14T00:00:00Z"
    days: float = 60.0
    level_range: tuple = (120.0, 320.0)
    deviation_sd: float = 4.0
    mean_reversion: float = 1 / 90  # per minute
    n_latent: int = 2
    latent_sd: float = 2.5
    latent_reversion: float = 1 / 360
    noise_sd: float = 1.0
    spike_rate: float = 0.01
    spike_magnitude: float = 15.0
    gap_rate: float = 0.05
    inactivity_runs: int = 2
    inactivity_minutes: int = 90
    inactivity_level: float = 20.0
    regime_changes: int = 1
    regime_magnitude: float = 3.0
    sparse_sensors: int = 1
    sparse_keep_rate: float = 0.05

    # documented ranges; outside them the lag-15 autocorrelation guarantee is void
    MEAN_REVERSION_RANGE = (1 / 1440, 1 / 5)

    def validate(self) -> "SynthConfig":
        errors = []
        if self.days <= 0:
            errors.append("days must be > 0")
        if not 0 <= self.gap_rate < 1:
            errors.append("gap_rate must lie in [0, 1)")
        if not 0 <= self.spike_rate < 1:
            errors.append("spike_rate must lie in [0, 1)")
        if not 0 < self.sparse_keep_rate <= 1:
            errors.append("sparse_keep_rate must lie in (0, 1]")
        lo, hi = self.MEAN_REVERSION_RANGE
        for key in ("mean_reversion", "latent_reversion"):
            if not lo <= getattr(self, key) <= hi:
                errors.append(f"{key} must lie in [{lo:.6g}, {hi:.6g}] per minute")
        for key in ("deviation_sd", "latent_sd", "noise_sd", "regime_magnitude", "spike_magnitude"):
            if getattr(self, key) < 0:
                errors.append(f"{key} must be >= 0")
        for key in ("n_latent", "inactivity_runs", "regime_changes", "sparse_sensors"):
            if getattr(self, key) < 0:
                errors.append(f"{key} must be >= 0")
        if self.inactivity_minutes < 2:
            errors.append("inactivity_minutes must be >= 2")
        if self.level_range[0] <= self.inactivity_level:
            errors.append("inactivity_level must lie below level_range")
        for ch, n in self.sensors_per_chamber.items():
            if ch not in Chamber.__members__:
                errors.append(f"unknown chamber {ch!r}")
            elif int(n) < 1:
                errors.append(f"sensors_per_chamber.{ch} must be >= 1")
        if errors:
            raise SynthConfigError("; ".join(errors))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_range"] = list(self.level_range)
        return d


def _ar1(rng, n, phi, sd):
    """Stationary AR(1) path with marginal standard deviation ``sd``."""
    e = rng.standard_normal(n) * sd * np.sqrt(1 - phi * phi)
    e[0] = rng.standard_normal() * sd
    return lfilter([1.0], [1.0, -phi], e)


def sensor_ids(config: SynthConfig) -> list[tuple[str, str, bool]]:
    """``(sensor_id, chamber, sparse)`` in generation order."""
    out = []
    for ch in sorted(config.sensors_per_chamber):
        digit = ch[1]
        for i in range(int(config.sensors_per_chamber[ch])):
            out.append((f"T{digit}{i + 1:02d}", ch, False))
        for i in range(config.sparse_sensors):
            out.append((f"X{digit}{90 + i:02d}", ch, True))
    return out


def generate(config: SynthConfig) -> tuple[str, dict]:
    """Raw ``timestamp,sensor_id,value`` CSV text and the ground-truth manifest."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = int(round(config.days * 1440))
    t0 = to_minute(config.start)
    stamps = np.array([s + "Z" for s in np.datetime_as_string(t0 + np.arange(n), unit="s")])
    phi = np.exp(-config.mean_reversion)
    phi_lat = np.exp(-config.latent_reversion)

    latents = {ch: np.array([_ar1(rng, n, phi_lat, 1.0) for _ in range(config.n_latent)])
               for ch in sorted(config.sensors_per_chamber)}
    manifest = {"seed": config.seed, "config": config.to_dict(), "start": format_ts(t0),
                "minutes": n, "sensors": {}, "inactivity_runs": [], "regime_changes": []}
    frames = []
    for sid, ch, sparse in sensor_ids(config):
        level = rng.uniform(*config.level_range)
        loadings = rng.standard_normal(config.n_latent) * config.latent_sd / max(1, np.sqrt(config.n_latent))
        x = level + _ar1(rng, n, phi, config.deviation_sd) + loadings @ latents[ch]
        x = x + rng.standard_normal(n) * config.noise_sd
        spikes = rng.random(n) < config.spike_rate
        x[spikes] += config.spike_magnitude * (0.5 + rng.random(int(spikes.sum())))

        offset = np.zeros(n)
        for k, at in enumerate(np.sort(rng.choice(np.arange(1, n), config.regime_changes, replace=False))):
            new = rng.uniform(-config.regime_magnitude, config.regime_magnitude)
            offset[at:] = new
            manifest["regime_changes"].append({"sensor_id": sid, "time": format_ts(t0 + int(at)),
                                               "offset": round(float(new), 6)})
        x = x + offset

        idle = np.zeros(n, dtype=bool)
        runs = config.inactivity_runs if not sparse else 0
        if runs:
            slot = n // runs
            for k in range(runs):
                lo = k * slot + 1
                hi = (k + 1) * slot - config.inactivity_minutes - 1
                if hi <= lo:
                    break
                start = int(rng.integers(lo, hi))
                idle[start:start + config.inactivity_minutes] = True
                manifest["inactivity_runs"].append({
                    "sensor_id": sid, "start": format_ts(t0 + start),
                    "minutes": config.inactivity_minutes, "level": config.inactivity_level})
        x = np.round(x, 4)
        x[idle] = config.inactivity_level

        rate = 1 - config.sparse_keep_rate if sparse else config.gap_rate
        drop = (rng.random(n) < rate) & ~idle
        keep = ~drop
        manifest["sensors"][sid] = {"chamber": ch, "level": round(float(level), 6), "sparse": sparse,
                                    "readings": int(keep.sum()), "gaps": int(drop.sum())}
        frames.append(pd.DataFrame({"timestamp": stamps[keep], "sensor_id": sid, "value": x[keep]}))

    buf = io.StringIO()
    pd.concat(frames, ignore_index=True).to_csv(buf, index=False, float_format="%.4f", lineterminator="\n")
    return buf.getvalue(), manifest


def chamber_map_csv(manifest: dict) -> str:
    lines = ["sensor_id,chamber"]
    lines += [f"{sid},{info['chamber']}" for sid, info in sorted(manifest["sensors"].items())]
    return "\n".join(lines) + "\n"


def write(config: SynthConfig, out_path) -> dict:
    """Write ``out_path`` plus ``<stem>.manifest.json`` and ``<stem>.chambers.csv``."""
    from pathlib import Path

    out = Path(out_path)
    text, manifest = generate(config)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    sidecar_paths(out)[0].write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    sidecar_paths(out)[1].write_text(chamber_map_csv(manifest))
    return manifest


def sidecar_paths(out_path):
    from pathlib import Path

    out = Path(out_path)
    stem = out.name[:-4] if out.name.endswith(".csv") else out.name
    return out.with_name(stem + ".manifest.json"), out.with_name(stem + ".chambers.csv")
