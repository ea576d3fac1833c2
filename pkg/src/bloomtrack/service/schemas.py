"""Wire models for the service and the CLI config files.

Every model forbids unknown keys, so a typo in a config file fails loudly
at validation time instead of silently falling back to a default.
"""

from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticFieldSpec(StrictModel):
    kind: Literal["radial-blob", "sinusoidal-front", "linear-ramp"]
    params: Dict[str, Any]
    bounds: Tuple[float, float, float, float]


class GridFieldSpec(StrictModel):
    path: str
    format: Optional[Literal["csv-grid", "json-grid"]] = None
    scale: float = Field(default=1.0, gt=0)


FieldSpec = Union[SyntheticFieldSpec, GridFieldSpec]


class KernelSpec(StrictModel):
    sigma2_k: float = Field(gt=0)
    l0: float = Field(gt=0)
    l1: float = Field(gt=0)


class ControlSpec(StrictModel):
    ref_value: float
    seek_gain: float = Field(default=10.0, gt=0)
    follow_gain: float = Field(default=1.0, gt=0)
    speed: float = Field(default=1.0, gt=0)
    rotation_sense: Literal["ccw", "cw"] = "ccw"


class VehicleSpec(StrictModel):
    max_turn_rate: float = Field(default=0.1, gt=0)
    dt: float = Field(default=1.0, gt=0)
    unit_scale: float = Field(default=1.0, gt=0)


class SensorSpec(StrictModel):
    sigma: float = Field(default=1e-3, ge=0)
    seed: int = 0


class PositionSpec(StrictModel):
    sigma: float = Field(default=0.0, ge=0)
    seed: int = 1


class MissionRequest(StrictModel):
    """One closed-loop tracking run.

    ``noise_sigma`` is the noise level the gradient estimator assumes;
    when omitted it defaults to the simulated sensor's sigma.
    """

    field: FieldSpec
    control: ControlSpec
    start: Tuple[float, float]
    initial_heading: float
    duration: float = Field(gt=0)
    vehicle: VehicleSpec = VehicleSpec()
    estimator: Literal["gp", "lsq"] = "gp"
    kernel: Optional[KernelSpec] = None
    noise_sigma: Optional[float] = Field(default=None, ge=0)
    sensor: SensorSpec = SensorSpec()
    position: PositionSpec = PositionSpec()
    trigger_band: float = Field(default=0.5, gt=0)
    window_capacity: int = Field(default=200, ge=1)
    n_min: int = Field(default=5, ge=1)
    mean_offset: Union[Literal["ref"], float] = "ref"
    initial_gradient: Optional[Tuple[float, float]] = None
    gradient_smoothing: float = Field(default=0.97, ge=0, lt=1)
    use_measurement_filter: bool = True
    max_consecutive_failures: int = Field(default=60, ge=1)


class StatsOut(StrictModel):
    # null means the statistic had no usable samples (e.g. every gradient
    # estimate in the tracking phase failed)
    mean: Optional[float]
    rms: Optional[float]
    max: Optional[float]
    p95: Optional[float]


class MetricsOut(StrictModel):
    n_tracking: int
    n_failures: int
    tracking_error: StatsOut
    angle_error: StatsOut
    angle_error_filtered: StatsOut


class MissionResponse(StrictModel):
    end_reason: str
    mode_switch_t: Optional[float]
    n_ticks: int
    estimator_failures: int
    sensor_checksum: str
    position_checksum: str
    metrics: Optional[MetricsOut]
    csv_log: str


class SweepRequest(StrictModel):
    """Noise grid x estimators x replicates around a mission template."""

    mission: MissionRequest
    sigma_grid: Optional[List[float]] = None
    estimators: List[Literal["gp", "lsq"]] = ["gp", "lsq"]
    replicates: int = Field(default=5, ge=1)
    base_seed: int = 0
    disable_measurement_filter: bool = True
    match_gp_noise: bool = True
    threads: int = Field(default=1, ge=1)


class SweepResponse(StrictModel):
    result: Dict[str, Any]
    csv_text: str


class FitRequest(StrictModel):
    """Hyperparameter fit over one training subset per survey day."""

    days: List[FieldSpec]
    init: KernelSpec
    noise_sigma: float = Field(gt=0)
    subset_size: int = Field(default=500, ge=4)
    seed: int = 0
    budget: int = Field(default=2000, ge=1)
    n_starts: int = Field(default=5, ge=1)
    log_span: float = Field(default=8.0, gt=0)


class HyperparametersOut(StrictModel):
    sigma2_k: float
    l0: float
    l1: float
    noise_sigma: float
    lml: float
    n_train: int


class FitResponse(StrictModel):
    hyperparameters: HyperparametersOut
    init_lml: float
    n_evaluations: int
    n_days: int
    summary: str


class GenFieldRequest(StrictModel):
    field: FieldSpec
    origin: Tuple[float, float]
    spacing: Tuple[float, float]
    shape: Tuple[int, int]
    format: Literal["csv-grid", "json-grid"] = "csv-grid"


class GenFieldResponse(StrictModel):
    text: str
    format: str
    shape: Tuple[int, int]


class ValidateRequest(StrictModel):
    config: Dict[str, Any]


class ValidateResponse(StrictModel):
    valid: bool
    task: Optional[str]
    errors: List[str]


TASK_MODELS = {
    "simulate": MissionRequest,
    "sweep": SweepRequest,
    "fit": FitRequest,
    "gen-field": GenFieldRequest,
}
