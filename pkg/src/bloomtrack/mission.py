"""Closed-loop tracking mission: transit to the front, then ride it.

The loop runs at the vehicle's tick rate. Every tick the vehicle senses the
field at its true position, pushes the raw measurement (at its *reported*
position) into the estimator window, and, once tracking, estimates the
local gradient, low-passes it, and steers by the seek/follow law. Transit
simply holds the initial heading until the filtered measurement comes
within ``trigger_band`` of the reference and the window has warmed up.

Estimator hiccups are fail-operational: the tick logs the failure and the
command falls back to the last filtered gradient (seeded at the mode switch
with ``initial_gradient``, by default a unit vector along the initial
heading). Only a run of ``max_consecutive_failures`` failures aborts the
mission. Leaving the field's bounding box ends it too; both outcomes leave
a valid partial log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .control import (
    ControlCommand,
    ControlParams,
    GradientFilter,
    MeasurementFilter,
    compute_command,
)
from .errors import (
    CoincidentPointError,
    ConfigError,
    DegenerateGeometryError,
    DegenerateGradientError,
    DomainError,
    IllConditionedError,
    InsufficientDataError,
    MaskedRegionError,
)
from .estimators import MeasurementWindow, estimate_gp, estimate_lsq
from .vehicle import (
    PositionNoise,
    SensorModel,
    VehicleParams,
    VehicleState,
    report_position,
    sense,
    step,
)

ESTIMATOR_FAILURES = (
    InsufficientDataError,
    DegenerateGeometryError,
    IllConditionedError,
    CoincidentPointError,
)

CSV_COLUMNS = [
    "t",
    "x",
    "y",
    "x_rep",
    "y_rep",
    "value_raw",
    "value_filt",
    "grad_est_x",
    "grad_est_y",
    "grad_filt_x",
    "grad_filt_y",
    "grad_true_x",
    "grad_true_y",
    "seek_x",
    "seek_y",
    "follow_x",
    "follow_y",
    "heading_cmd",
    "mode",
]


@dataclass
class MissionConfig:
    """Everything a mission run needs. ``field`` is a constructed field object."""

    field: object
    control: ControlParams
    vehicle: VehicleParams
    start: tuple
    initial_heading: float
    duration: float
    estimator: str = "gp"
    kernel: object = None
    gp_noise: object = None
    sensor_sigma: float = 1e-3
    sensor_seed: int = 0
    position_sigma: float = 0.0
    position_seed: int = 1
    trigger_band: float = 0.5
    window_capacity: int = 200
    n_min: int = 5
    mean_offset: object = "ref"
    initial_gradient: object = None
    gradient_smoothing: float = 0.97
    use_measurement_filter: bool = True
    max_consecutive_failures: int = 60

    def __post_init__(self):
        if self.estimator not in ("gp", "lsq"):
            raise ConfigError(f"estimator must be 'gp' or 'lsq', got {self.estimator!r}")
        if self.estimator == "gp" and (self.kernel is None or self.gp_noise is None):
            raise ConfigError("gp estimator needs kernel params and a noise model")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if not (math.isfinite(self.trigger_band) and self.trigger_band > 0):
            raise ConfigError(f"trigger_band must be positive, got {self.trigger_band}")
        if self.n_min < 1:
            raise ConfigError(f"n_min must be >= 1, got {self.n_min}")
        if self.mean_offset != "ref" and not math.isfinite(float(self.mean_offset)):
            raise ConfigError(f"mean_offset must be 'ref' or a finite number, got {self.mean_offset!r}")
        if self.initial_gradient is not None:
            g = np.asarray(self.initial_gradient, dtype=float)
            if g.shape != (2,) or not np.all(np.isfinite(g)) or float(g @ g) == 0.0:
                raise ConfigError(f"initial_gradient must be a finite nonzero 2-vector, got {g}")
        if self.max_consecutive_failures < 1:
            raise ConfigError("max_consecutive_failures must be >= 1")


@dataclass
class TickRecord:
    t: float
    p_true: np.ndarray
    p_rep: np.ndarray
    value_raw: float
    value_filt: float
    grad_est: np.ndarray
    grad_filt: np.ndarray
    grad_true: np.ndarray
    seek: np.ndarray
    follow: np.ndarray
    heading_cmd: float
    mode: str


@dataclass
class MissionLog:
    """Per-tick records plus run metadata; serializes to CSV and JSONL."""

    records: list
    ref_value: float
    estimator: str
    end_reason: str
    mode_switch_t: object = None
    estimator_failures: int = 0
    sensor_checksum: str = ""
    position_checksum: str = ""

    def __len__(self):
        return len(self.records)

    def modes(self):
        return [r.mode for r in self.records]

    def tracking_records(self):
        return [r for r in self.records if r.mode == "tracking"]

    def _meta_items(self):
        return [
            ("ref_value", repr(float(self.ref_value))),
            ("estimator", self.estimator),
            ("end_reason", self.end_reason),
            ("mode_switch_t", "none" if self.mode_switch_t is None else repr(float(self.mode_switch_t))),
            ("estimator_failures", str(self.estimator_failures)),
            ("sensor_checksum", self.sensor_checksum),
            ("position_checksum", self.position_checksum),
        ]

    def to_csv(self, path):
        with open(path, "w") as fh:
            for key, value in self._meta_items():
                fh.write(f"# {key} {value}\n")
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.records:
                row = [
                    r.t,
                    r.p_true[0],
                    r.p_true[1],
                    r.p_rep[0],
                    r.p_rep[1],
                    r.value_raw,
                    r.value_filt,
                    r.grad_est[0],
                    r.grad_est[1],
                    r.grad_filt[0],
                    r.grad_filt[1],
                    r.grad_true[0],
                    r.grad_true[1],
                    r.seek[0],
                    r.seek[1],
                    r.follow[0],
                    r.follow[1],
                    r.heading_cmd,
                ]
                fh.write(",".join(repr(float(v)) for v in row) + f",{r.mode}\n")

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": dict(self._meta_items())}) + "\n")
            for r in self.records:
                doc = {
                    "t": r.t,
                    "p_true": [r.p_true[0], r.p_true[1]],
                    "p_rep": [r.p_rep[0], r.p_rep[1]],
                    "value_raw": r.value_raw,
                    "value_filt": r.value_filt,
                    "grad_est": [r.grad_est[0], r.grad_est[1]],
                    "grad_filt": [r.grad_filt[0], r.grad_filt[1]],
                    "grad_true": [r.grad_true[0], r.grad_true[1]],
                    "seek": [r.seek[0], r.seek[1]],
                    "follow": [r.follow[0], r.follow[1]],
                    "heading_cmd": r.heading_cmd,
                    "mode": r.mode,
                }
                fh.write(json.dumps(doc) + "\n")


def read_mission_csv(path):
    """Load a mission log written by MissionLog.to_csv."""
    meta = {}
    records = []
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
                header_seen = True  # column header line
                continue
            parts = line.split(",")
            vals = [float(v) for v in parts[:-1]]
            records.append(
                TickRecord(
                    t=vals[0],
                    p_true=np.array(vals[1:3]),
                    p_rep=np.array(vals[3:5]),
                    value_raw=vals[5],
                    value_filt=vals[6],
                    grad_est=np.array(vals[7:9]),
                    grad_filt=np.array(vals[9:11]),
                    grad_true=np.array(vals[11:13]),
                    seek=np.array(vals[13:15]),
                    follow=np.array(vals[15:17]),
                    heading_cmd=vals[17],
                    mode=parts[-1],
                )
            )
    switch = meta.get("mode_switch_t", "none")
    return MissionLog(
        records=records,
        ref_value=float(meta["ref_value"]),
        estimator=meta["estimator"],
        end_reason=meta["end_reason"],
        mode_switch_t=None if switch == "none" else float(switch),
        estimator_failures=int(meta["estimator_failures"]),
        sensor_checksum=meta.get("sensor_checksum", ""),
        position_checksum=meta.get("position_checksum", ""),
    )


def _hold_heading(heading, speed):
    v = speed * np.array([math.cos(heading), math.sin(heading)])
    return ControlCommand(velocity=v, seek=np.full(2, np.nan), follow=np.full(2, np.nan))


def run(config):
    """Execute a mission and return its log."""
    fld = config.field
    control = config.control
    sensor = SensorModel(config.sensor_sigma, config.sensor_seed)
    pos_noise = PositionNoise(config.position_sigma, config.position_seed)
    meas_filter = MeasurementFilter() if config.use_measurement_filter else None
    grad_filter = GradientFilter(config.gradient_smoothing)
    window = MeasurementWindow(config.window_capacity)
    state = VehicleState(p=config.start, heading=config.initial_heading)
    if config.mean_offset == "ref":
        mean_offset = control.ref_value
    else:
        mean_offset = float(config.mean_offset)
    if config.initial_gradient is not None:
        seed_gradient = np.asarray(config.initial_gradient, dtype=float)
    else:
        seed_gradient = np.array(
            [math.cos(config.initial_heading), math.sin(config.initial_heading)]
        )

    nan2 = np.full(2, np.nan)
    records = []
    mode = "transit"
    mode_switch_t = None
    filter_seeded = False
    consecutive = 0
    total_failures = 0
    end_reason = "completed"
    n_ticks = int(round(config.duration / config.vehicle.dt))

    for k in range(n_ticks):
        t = k * config.vehicle.dt
        try:
            raw = sense(fld, state, sensor)
        except (DomainError, MaskedRegionError):
            end_reason = "exited_domain"
            break
        filtered = meas_filter.update(raw) if meas_filter else raw
        p_rep = report_position(state, pos_noise)
        window.push(t, p_rep, raw)

        if (
            mode == "transit"
            and abs(filtered - control.ref_value) < config.trigger_band
            and len(window) >= config.n_min
        ):
            mode = "tracking"
            mode_switch_t = t
            # the seed steers only until the estimator first delivers; the
            # first real estimate re-initializes the filter so the seed's
            # arbitrary magnitude never lingers in the low-pass state
            grad_filter.update(seed_gradient)
            filter_seeded = True

        grad_est = nan2
        abort_now = False
        if mode == "tracking":
            try:
                if config.estimator == "gp":
                    est = estimate_gp(
                        window,
                        config.kernel,
                        config.gp_noise,
                        p_rep,
                        n_min=config.n_min,
                        mean_offset=mean_offset,
                    )
                else:
                    est = estimate_lsq(window, p_rep, n_min=config.n_min)
                grad_est = est.gradient
                if filter_seeded:
                    grad_filter.state = None
                    filter_seeded = False
                grad_filter.update(grad_est)
                consecutive = 0
            except ESTIMATOR_FAILURES:
                total_failures += 1
                consecutive += 1
                if consecutive >= config.max_consecutive_failures:
                    abort_now = True
            try:
                cmd = compute_command(control, filtered, grad_filter.state)
            except DegenerateGradientError:
                cmd = _hold_heading(state.heading, control.speed)
            grad_filt = grad_filter.state.copy()
        else:
            cmd = _hold_heading(config.initial_heading, control.speed)
            grad_filt = nan2

        try:
            grad_true = fld.true_gradient(state.p)
        except (DomainError, MaskedRegionError):
            grad_true = nan2

        records.append(
            TickRecord(
                t=t,
                p_true=state.p.copy(),
                p_rep=np.asarray(p_rep, dtype=float),
                value_raw=raw,
                value_filt=filtered,
                grad_est=grad_est,
                grad_filt=grad_filt,
                grad_true=grad_true,
                seek=cmd.seek,
                follow=cmd.follow,
                heading_cmd=cmd.heading,
                mode=mode,
            )
        )
        if abort_now:
            end_reason = "aborted"
            break
        state = step(state, cmd, config.vehicle)

    return MissionLog(
        records=records,
        ref_value=control.ref_value,
        estimator=config.estimator,
        end_reason=end_reason,
        mode_switch_t=mode_switch_t,
        estimator_failures=total_failures,
        sensor_checksum=sensor.checksum(),
        position_checksum=pos_noise.checksum(),
    )


@dataclass
class Stats:
    mean: float
    rms: float
    max: float
    p95: float

    @classmethod
    def of(cls, series):
        x = np.asarray(series, dtype=float)
        return cls(
            mean=float(x.mean()),
            rms=float(math.sqrt(np.mean(x * x))),
            max=float(x.max()),
            p95=float(np.percentile(x, 95)),
        )

    def as_dict(self):
        return {"mean": self.mean, "rms": self.rms, "max": self.max, "p95": self.p95}


@dataclass
class MetricsReport:
    n_tracking: int
    n_failures: int
    tracking_error: Stats
    angle_error: Stats
    angle_error_filtered: Stats

    def as_dict(self):
        return {
            "n_tracking": self.n_tracking,
            "n_failures": self.n_failures,
            "tracking_error": self.tracking_error.as_dict(),
            "angle_error": self.angle_error.as_dict(),
            "angle_error_filtered": self.angle_error_filtered.as_dict(),
        }


def angle_between(a, b):
    """Unsigned angle between two vectors, in [0, pi]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0 or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return float("nan")
    return float(math.acos(min(max(float(a @ b) / (na * nb), -1.0), 1.0)))


def metrics(log, field=None):
    """Tracking and gradient-angle error statistics over the tracking phase.

    Tracking error compares the raw measured value against the reference.
    Angle errors compare the estimated (and low-pass-filtered) gradients to
    the true field gradient at the true position, recomputed from ``field``
    when one is supplied, otherwise taken from the log.
    """
    tracked = log.tracking_records()
    if not tracked:
        raise InsufficientDataError("log has no tracking-mode ticks")
    tracking_error = [abs(r.value_raw - log.ref_value) for r in tracked]
    angles = []
    angles_filtered = []
    for r in tracked:
        g_true = r.grad_true
        if field is not None:
            try:
                g_true = field.true_gradient(r.p_true)
            except (DomainError, MaskedRegionError):
                g_true = r.grad_true
        a = angle_between(r.grad_est, g_true)
        if not math.isnan(a):
            angles.append(a)
        af = angle_between(r.grad_filt, g_true)
        if not math.isnan(af):
            angles_filtered.append(af)
    return MetricsReport(
        n_tracking=len(tracked),
        n_failures=log.estimator_failures,
        tracking_error=Stats.of(tracking_error),
        angle_error=Stats.of(angles) if angles else Stats(math.nan, math.nan, math.nan, math.nan),
        angle_error_filtered=Stats.of(angles_filtered)
        if angles_filtered
        else Stats(math.nan, math.nan, math.nan, math.nan),
    )
