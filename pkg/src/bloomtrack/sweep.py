"""Sensor-noise sensitivity sweep: estimators x noise grid x replicates.

Each cell runs a full mission from a shared template with one estimator and
one sensor noise level. Replicate seeds are derived from (base_seed,
noise index, replicate) only, never from the estimator, so the competing
estimators consume byte-identical noise streams; the per-mission sensor
checksums land in the result to prove it. Following the comparison
protocol, the measurement moving average is disabled during sweeps (the
gradient low-pass stays on), so sensor noise reaches the whole loop.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BloomtrackError, ValidationError
from .gp import NoiseModel
from .mission import metrics, run

DEFAULT_SIGMA_GRID = tuple(float(s) for s in np.logspace(-3, -1, 9))


@dataclass
class SweepConfig:
    """Mission template plus the grid to sweep it over."""

    base: object
    sigma_grid: tuple = DEFAULT_SIGMA_GRID
    estimators: tuple = ("gp", "lsq")
    replicates: int = 5
    base_seed: int = 0
    disable_measurement_filter: bool = True
    match_gp_noise: bool = True

    def __post_init__(self):
        if len(self.sigma_grid) == 0 or any(s <= 0 or not math.isfinite(s) for s in self.sigma_grid):
            raise ValidationError(f"sigma_grid must be positive and finite, got {self.sigma_grid}")
        bad = [e for e in self.estimators if e not in ("gp", "lsq")]
        if bad or not self.estimators:
            raise ValidationError(f"estimators must be drawn from ('gp', 'lsq'), got {self.estimators}")
        if self.replicates < 1:
            raise ValidationError(f"replicates must be >= 1, got {self.replicates}")


@dataclass
class ReplicateOutcome:
    replicate: int
    status: str  # "ok" | "failed"
    reason: str
    rms_tracking: object  # float, or None when failed
    mean_angle: object
    sensor_checksum: str

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SweepCell:
    sigma: float
    estimator: str
    outcomes: list

    def ok_values(self, name):
        return [getattr(o, name) for o in self.outcomes if o.status == "ok"]

    @property
    def n_ok(self):
        return sum(1 for o in self.outcomes if o.status == "ok")

    def aggregate(self, name):
        vals = self.ok_values(name)
        if not vals:
            return None, None
        arr = np.asarray(vals, dtype=float)
        return float(arr.mean()), float(arr.std())

    def as_dict(self):
        rms_mean, rms_std = self.aggregate("rms_tracking")
        ang_mean, ang_std = self.aggregate("mean_angle")
        return {
            "sigma": self.sigma,
            "estimator": self.estimator,
            "n_ok": self.n_ok,
            "rms_tracking_mean": rms_mean,
            "rms_tracking_std": rms_std,
            "mean_angle_mean": ang_mean,
            "mean_angle_std": ang_std,
            "outcomes": [o.as_dict() for o in self.outcomes],
        }


@dataclass
class SweepResult:
    sigma_grid: tuple
    estimators: tuple
    replicates: int
    base_seed: int
    cells: list

    def cell(self, sigma, estimator):
        for c in self.cells:
            if c.estimator == estimator and math.isclose(c.sigma, sigma, rel_tol=1e-12):
                return c
        raise KeyError(f"no cell for sigma={sigma}, estimator={estimator}")

    def series(self, estimator, name="mean_angle"):
        """Replicate-mean metric per grid sigma, in grid order."""
        out = []
        for s in self.sigma_grid:
            mean, _ = self.cell(s, estimator).aggregate(name)
            out.append(mean)
        return out

    def as_dict(self):
        return {
            "sigma_grid": list(self.sigma_grid),
            "estimators": list(self.estimators),
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "cells": [c.as_dict() for c in self.cells],
        }


def replicate_seeds(base_seed, sigma_idx, replicate):
    """Deterministic seeds shared by every estimator at this grid point."""
    root = base_seed * 1_000_003 + sigma_idx * 10_007 + replicate * 101
    return root, root + 499


def _run_cell_replicate(config, sigma_idx, estimator, replicate):
    sigma = config.sigma_grid[sigma_idx]
    sensor_seed, position_seed = replicate_seeds(config.base_seed, sigma_idx, replicate)
    mission_cfg = dataclasses.replace(
        config.base,
        estimator=estimator,
        sensor_sigma=sigma,
        sensor_seed=sensor_seed,
        position_seed=position_seed,
        use_measurement_filter=config.base.use_measurement_filter
        and not config.disable_measurement_filter,
        gp_noise=NoiseModel(sigma)
        if (config.match_gp_noise and estimator == "gp")
        else config.base.gp_noise,
    )
    try:
        log = run(mission_cfg)
    except BloomtrackError as err:
        return ReplicateOutcome(replicate, "failed", str(err), None, None, "")
    if log.end_reason == "aborted":
        return ReplicateOutcome(
            replicate, "failed", "mission aborted after repeated estimator failures",
            None, None, log.sensor_checksum,
        )
    try:
        report = metrics(log, mission_cfg.field)
    except BloomtrackError as err:
        return ReplicateOutcome(replicate, "failed", str(err), None, None, log.sensor_checksum)
    if math.isnan(report.angle_error.mean):
        return ReplicateOutcome(
            replicate, "failed", "no successful gradient estimates while tracking",
            None, None, log.sensor_checksum,
        )
    return ReplicateOutcome(
        replicate,
        "ok",
        "",
        report.tracking_error.rms,
        report.angle_error.mean,
        log.sensor_checksum,
    )


def _run_cell(config, sigma_idx, estimator):
    outcomes = [
        _run_cell_replicate(config, sigma_idx, estimator, rep)
        for rep in range(config.replicates)
    ]
    return SweepCell(
        sigma=float(config.sigma_grid[sigma_idx]), estimator=estimator, outcomes=outcomes
    )


class DirectoryCellStore:
    """Per-cell JSON files under one directory, for interrupt-and-resume.

    A stored cell is reused only when its sigma, estimator and replicate
    count still match the requesting sweep; anything stale is recomputed.
    """

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, sigma_idx, estimator):
        return os.path.join(self.root, f"cell_{sigma_idx:02d}_{estimator}.json")

    def load(self, sigma_idx, estimator, sigma, replicates):
        path = self._path(sigma_idx, estimator)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            doc = json.load(fh)
        if doc["estimator"] != estimator or not math.isclose(doc["sigma"], sigma, rel_tol=1e-12):
            return None
        if len(doc["outcomes"]) != replicates:
            return None
        return SweepCell(
            sigma=doc["sigma"],
            estimator=doc["estimator"],
            outcomes=[ReplicateOutcome(**o) for o in doc["outcomes"]],
        )

    def save(self, sigma_idx, estimator, cell):
        with open(self._path(sigma_idx, estimator), "w") as fh:
            json.dump(cell.as_dict() | {"sigma_idx": sigma_idx}, fh, allow_nan=False)
            fh.write("\n")


def run_sweep(config, threads=1, cell_store=None):
    """Run every (sigma, estimator) cell; order- and thread-count-independent.

    Cells may execute on a thread pool but each carries its own derived
    seeds and the result is assembled in grid order, so the thread count
    cannot change a single byte of it. With a ``cell_store``, finished
    cells are persisted as they complete and matching stored cells are
    reused instead of recomputed.
    """
    keys = [
        (si, est) for si in range(len(config.sigma_grid)) for est in config.estimators
    ]
    done = {}
    pending = []
    for si, est in keys:
        cached = (
            cell_store.load(si, est, float(config.sigma_grid[si]), config.replicates)
            if cell_store is not None
            else None
        )
        if cached is not None:
            done[(si, est)] = cached
        else:
            pending.append((si, est))
    if threads > 1 and pending:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fresh = list(pool.map(lambda k: _run_cell(config, *k), pending))
    else:
        fresh = [_run_cell(config, *k) for k in pending]
    for key, cell in zip(pending, fresh):
        done[key] = cell
        if cell_store is not None:
            cell_store.save(key[0], key[1], cell)
    return SweepResult(
        sigma_grid=tuple(float(s) for s in config.sigma_grid),
        estimators=tuple(config.estimators),
        replicates=config.replicates,
        base_seed=config.base_seed,
        cells=[done[k] for k in keys],
    )


# --- serialization ---------------------------------------------------------

_CSV_HEADER = [
    "sigma",
    "estimator",
    "n_ok",
    "rms_tracking_mean",
    "rms_tracking_std",
    "mean_angle_mean",
    "mean_angle_std",
    "rms_tracking_values",
    "mean_angle_values",
    "statuses",
    "reasons",
    "checksums",
]


def _num(x):
    return "" if x is None else repr(float(x))


def _pack(items):
    return ";".join(items)


def export_sweep_csv(result, path):
    """One aggregate row per grid cell; replicate values packed alongside."""
    with open(path, "w") as fh:
        fh.write(f"# sigma_grid {_pack(repr(float(s)) for s in result.sigma_grid)}\n")
        fh.write(f"# estimators {_pack(result.estimators)}\n")
        fh.write(f"# replicates {result.replicates}\n")
        fh.write(f"# base_seed {result.base_seed}\n")
        fh.write(",".join(_CSV_HEADER) + "\n")
        for c in result.cells:
            d = c.as_dict()
            row = [
                repr(float(c.sigma)),
                c.estimator,
                str(c.n_ok),
                _num(d["rms_tracking_mean"]),
                _num(d["rms_tracking_std"]),
                _num(d["mean_angle_mean"]),
                _num(d["mean_angle_std"]),
                _pack(_num(o.rms_tracking) for o in c.outcomes),
                _pack(_num(o.mean_angle) for o in c.outcomes),
                _pack(o.status for o in c.outcomes),
                _pack(o.reason.replace(",", " ").replace(";", " ") for o in c.outcomes),
                _pack(o.sensor_checksum for o in c.outcomes),
            ]
            fh.write(",".join(row) + "\n")


def read_sweep_csv(path):
    meta = {}
    cells = []
    with open(path) as fh:
        header_seen = False
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition(" ")
                meta[key] = value
                continue
            if not header_seen:
                header_seen = True
                continue
            parts = line.split(",")
            sigma = float(parts[0])
            estimator = parts[1]
            rms_vals = parts[7].split(";")
            ang_vals = parts[8].split(";")
            statuses = parts[9].split(";")
            reasons = parts[10].split(";")
            checksums = parts[11].split(";")
            outcomes = [
                ReplicateOutcome(
                    replicate=i,
                    status=statuses[i],
                    reason=reasons[i],
                    rms_tracking=float(rms_vals[i]) if rms_vals[i] else None,
                    mean_angle=float(ang_vals[i]) if ang_vals[i] else None,
                    sensor_checksum=checksums[i],
                )
                for i in range(len(statuses))
            ]
            cells.append(SweepCell(sigma=sigma, estimator=estimator, outcomes=outcomes))
    return SweepResult(
        sigma_grid=tuple(float(s) for s in meta["sigma_grid"].split(";")),
        estimators=tuple(meta["estimators"].split(";")),
        replicates=int(meta["replicates"]),
        base_seed=int(meta["base_seed"]),
        cells=cells,
    )


def export_sweep_json(result, path):
    with open(path, "w") as fh:
        json.dump(result.as_dict(), fh, allow_nan=False, indent=1)
        fh.write("\n")


def read_sweep_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    cells = [
        SweepCell(
            sigma=c["sigma"],
            estimator=c["estimator"],
            outcomes=[ReplicateOutcome(**o) for o in c["outcomes"]],
        )
        for c in doc["cells"]
    ]
    return SweepResult(
        sigma_grid=tuple(doc["sigma_grid"]),
        estimators=tuple(doc["estimators"]),
        replicates=doc["replicates"],
        base_seed=doc["base_seed"],
        cells=cells,
    )
