"""Seek/follow steering on a scalar front, plus the two signal filters.

The command blends two pulls: a seek component pushing the measured value
toward the reference level (down the gradient when above it, up when
below), and a follow component running perpendicular to the gradient, i.e.
along the level set. Only the direction of the blend is used; the vehicle
is commanded at constant speed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradientError, ValidationError

MEASUREMENT_WEIGHTS = (0.2, 0.3, 0.5)  # oldest to newest
GRADIENT_SMOOTHING = 0.97


@dataclass(frozen=True)
class ControlParams:
    """Gains and reference level of the seek/follow law."""

    ref_value: float = 7.45
    seek_gain: float = 10.0
    follow_gain: float = 1.0
    speed: float = 1.0
    rotation_sense: str = "ccw"

    def __post_init__(self):
        if not math.isfinite(self.ref_value):
            raise ValidationError(f"ref_value must be finite, got {self.ref_value}")
        for name in ("seek_gain", "follow_gain", "speed"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"ControlParams.{name} must be positive, got {v}")
        if self.rotation_sense not in ("ccw", "cw"):
            raise ValidationError(
                f"rotation_sense must be 'ccw' or 'cw', got {self.rotation_sense!r}"
            )


def rotation_matrix(sense):
    """Quarter-turn matrix selecting which way the vehicle circles the front."""
    if sense == "ccw":
        return np.array([[0.0, -1.0], [1.0, 0.0]])
    if sense == "cw":
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    raise ValidationError(f"rotation sense must be 'ccw' or 'cw', got {sense!r}")


class MeasurementFilter:
    """Weighted moving average over the last three raw measurements.

    Weights are (0.2, 0.3, 0.5), oldest to newest. During warm-up the
    available weights are renormalized: the first sample passes through,
    the second pair is averaged with (0.375, 0.625).
    """

    def __init__(self, weights=MEASUREMENT_WEIGHTS):
        if len(weights) < 1 or any(w <= 0 for w in weights):
            raise ValidationError(f"weights must be positive, got {weights}")
        self.weights = tuple(float(w) for w in weights)
        self._recent = deque(maxlen=len(self.weights))

    def update(self, value):
        self._recent.append(float(value))
        w = np.array(self.weights[-len(self._recent) :])
        return float(np.dot(w, self._recent) / w.sum())


class GradientFilter:
    """First-order low-pass on gradient vectors: heavily smoothed, slow."""

    def __init__(self, smoothing=GRADIENT_SMOOTHING):
        if not (0.0 <= smoothing < 1.0):
            raise ValidationError(f"smoothing must be in [0, 1), got {smoothing}")
        self.smoothing = float(smoothing)
        self.state = None

    def update(self, gradient):
        g = np.asarray(gradient, dtype=float)
        if self.state is None:
            self.state = g.copy()
        else:
            self.state = self.smoothing * self.state + (1.0 - self.smoothing) * g
        return self.state.copy()


@dataclass
class ControlCommand:
    """Constant-speed velocity command with its raw law components."""

    velocity: np.ndarray
    seek: np.ndarray
    follow: np.ndarray

    @property
    def heading(self):
        return math.atan2(self.velocity[1], self.velocity[0])

    @property
    def speed(self):
        return float(np.linalg.norm(self.velocity))


def compute_command(params, value, gradient):
    """Blend seek and follow pulls into a constant-speed velocity command.

    Raises DegenerateGradientError when the gradient carries no direction;
    the caller decides what holding course means.
    """
    g = np.asarray(gradient, dtype=float)
    if not (np.all(np.isfinite(g)) and math.isfinite(value)):
        raise ValidationError(f"non-finite control inputs: value={value}, gradient={g}")
    if float(g @ g) == 0.0:
        raise DegenerateGradientError("zero gradient, no direction to follow")
    seek = -params.seek_gain * (value - params.ref_value) * g
    follow = params.follow_gain * (rotation_matrix(params.rotation_sense) @ g)
    blend = seek + follow
    norm = float(np.linalg.norm(blend))
    if norm == 0.0 or not math.isfinite(norm):
        raise DegenerateGradientError("seek and follow components cancelled")
    return ControlCommand(
        velocity=params.speed * blend / norm, seek=seek, follow=follow
    )
