"""Task handlers shared by the HTTP routes and the in-process CLI path.

Each handler takes a validated request model and returns a response model,
so the CLI gets byte-identical results whether it calls these directly or
through a server.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np
from pydantic import ValidationError as SchemaError

from ..control import ControlParams
from ..errors import InsufficientDataError, ValidationError
from ..fields import GridField, load_grid, make_synthetic, rasterize, save_grid, scale_field
from ..gp import KernelParams, NoiseModel, TrainingSet, fit_hyperparameters
from ..mission import MissionConfig, metrics, run
from ..sweep import SweepConfig, export_sweep_csv, run_sweep
from ..vehicle import VehicleParams
from .schemas import (
    FitRequest,
    FitResponse,
    GenFieldRequest,
    GenFieldResponse,
    HyperparametersOut,
    MetricsOut,
    MissionRequest,
    MissionResponse,
    SweepRequest,
    SweepResponse,
    SyntheticFieldSpec,
    TASK_MODELS,
    ValidateRequest,
    ValidateResponse,
)


def build_field(spec):
    if isinstance(spec, SyntheticFieldSpec):
        return make_synthetic(spec.kind, spec.params, spec.bounds)
    field = load_grid(spec.path, spec.format)
    if spec.scale != 1.0:
        field = scale_field(field, spec.scale)
    return field


def mission_config(req: MissionRequest) -> MissionConfig:
    noise_sigma = req.noise_sigma if req.noise_sigma is not None else req.sensor.sigma
    c = req.control
    v = req.vehicle
    return MissionConfig(
        field=build_field(req.field),
        control=ControlParams(
            ref_value=c.ref_value,
            seek_gain=c.seek_gain,
            follow_gain=c.follow_gain,
            speed=c.speed,
            rotation_sense=c.rotation_sense,
        ),
        vehicle=VehicleParams(max_turn_rate=v.max_turn_rate, dt=v.dt, unit_scale=v.unit_scale),
        start=tuple(req.start),
        initial_heading=req.initial_heading,
        duration=req.duration,
        estimator=req.estimator,
        kernel=KernelParams(req.kernel.sigma2_k, req.kernel.l0, req.kernel.l1)
        if req.kernel is not None
        else None,
        gp_noise=NoiseModel(noise_sigma),
        sensor_sigma=req.sensor.sigma,
        sensor_seed=req.sensor.seed,
        position_sigma=req.position.sigma,
        position_seed=req.position.seed,
        trigger_band=req.trigger_band,
        window_capacity=req.window_capacity,
        n_min=req.n_min,
        mean_offset=req.mean_offset,
        initial_gradient=tuple(req.initial_gradient) if req.initial_gradient else None,
        gradient_smoothing=req.gradient_smoothing,
        use_measurement_filter=req.use_measurement_filter,
        max_consecutive_failures=req.max_consecutive_failures,
    )


def _file_text(write, name):
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, name)
        write(path)
        with open(path) as fh:
            return fh.read()


def _without_nan(metrics_dict):
    out = {}
    for key, value in metrics_dict.items():
        if isinstance(value, dict):
            out[key] = {
                k: None if isinstance(v, float) and math.isnan(v) else v
                for k, v in value.items()
            }
        else:
            out[key] = value
    return out


def handle_simulate(req: MissionRequest) -> MissionResponse:
    cfg = mission_config(req)
    log = run(cfg)
    try:
        report = MetricsOut(**_without_nan(metrics(log, cfg.field).as_dict()))
    except InsufficientDataError:
        report = None
    return MissionResponse(
        end_reason=log.end_reason,
        mode_switch_t=log.mode_switch_t,
        n_ticks=len(log),
        estimator_failures=log.estimator_failures,
        sensor_checksum=log.sensor_checksum,
        position_checksum=log.position_checksum,
        metrics=report,
        csv_log=_file_text(log.to_csv, "mission.csv"),
    )


def handle_sweep(req: SweepRequest, cell_store=None) -> SweepResponse:
    cfg = SweepConfig(
        base=mission_config(req.mission),
        **(
            {"sigma_grid": tuple(float(s) for s in req.sigma_grid)}
            if req.sigma_grid is not None
            else {}
        ),
        estimators=tuple(req.estimators),
        replicates=req.replicates,
        base_seed=req.base_seed,
        disable_measurement_filter=req.disable_measurement_filter,
        match_gp_noise=req.match_gp_noise,
    )
    result = run_sweep(cfg, threads=req.threads, cell_store=cell_store)
    return SweepResponse(
        result=result.as_dict(),
        csv_text=_file_text(lambda p: export_sweep_csv(result, p), "sweep.csv"),
    )


def _training_from_field(field, n, rng):
    if isinstance(field, GridField):
        valid = np.argwhere(field.mask)
        if len(valid) < n:
            raise ValidationError(f"grid has {len(valid)} valid cells, need {n}")
        ij = valid[rng.choice(len(valid), size=n, replace=False)]
        positions = np.column_stack(
            [
                field.origin[0] + ij[:, 1] * field.spacing[0],
                field.origin[1] + ij[:, 0] * field.spacing[1],
            ]
        )
        return TrainingSet(positions, field.values[ij[:, 0], ij[:, 1]])
    xmin, xmax, ymin, ymax = field.bounds
    positions = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])
    values = np.array([field.value_at(p) for p in positions])
    return TrainingSet(positions, values)


def handle_fit(req: FitRequest) -> FitResponse:
    days = []
    n_train = 0
    for di, spec in enumerate(req.days):
        rng = np.random.default_rng((req.seed, di))
        day = _training_from_field(build_field(spec), req.subset_size, rng)
        days.append(day)
        n_train += len(day.values)
    result = fit_hyperparameters(
        days,
        NoiseModel(req.noise_sigma),
        KernelParams(req.init.sigma2_k, req.init.l0, req.init.l1),
        budget=req.budget,
        n_starts=req.n_starts,
        seed=req.seed,
        log_span=req.log_span,
    )
    return FitResponse(
        hyperparameters=HyperparametersOut(
            sigma2_k=result.params.sigma2,
            l0=result.params.l0,
            l1=result.params.l1,
            noise_sigma=req.noise_sigma,
            lml=result.lml,
            n_train=n_train,
        ),
        init_lml=result.init_lml,
        n_evaluations=result.n_evaluations,
        n_days=len(days),
        summary=result.summary(),
    )


def handle_gen_field(req: GenFieldRequest) -> GenFieldResponse:
    grid = rasterize(build_field(req.field), req.origin, req.spacing, req.shape)
    return GenFieldResponse(
        text=_file_text(lambda p: save_grid(grid, p, req.format), "field"),
        format=req.format,
        shape=tuple(req.shape),
    )


def handle_validate(req: ValidateRequest) -> ValidateResponse:
    doc = dict(req.config)
    task = doc.pop("task", None)
    if task not in TASK_MODELS:
        known = ", ".join(sorted(TASK_MODELS))
        return ValidateResponse(
            valid=False, task=task, errors=[f"config needs a 'task' key, one of: {known}"]
        )
    try:
        TASK_MODELS[task].model_validate(doc)
    except SchemaError as err:
        msgs = [
            ".".join(str(part) for part in e["loc"]) + ": " + e["msg"] for e in err.errors()
        ]
        return ValidateResponse(valid=False, task=task, errors=msgs)
    return ValidateResponse(valid=True, task=task, errors=[])
