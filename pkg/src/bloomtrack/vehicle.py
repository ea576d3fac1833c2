"""Turn-rate-limited unicycle kinematics, sensing, and reported position.

The vehicle chases a commanded heading: per step the heading moves toward
the command by at most max_turn_rate * dt, then the position advances
speed * dt along the new heading (divided by unit_scale when the field's
coordinates are not meters). Measurement and reported-position noise come
from independent seeded streams so reruns are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


@dataclass(frozen=True)
class VehicleParams:
    max_turn_rate: float = 0.1  # rad/s
    dt: float = 1.0  # s
    unit_scale: float = 1.0  # meters per field unit

    def __post_init__(self):
        for name in ("max_turn_rate", "dt", "unit_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"VehicleParams.{name} must be positive, got {v}")


@dataclass
class VehicleState:
    p: np.ndarray
    heading: float
    speed: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (2,) or not np.all(np.isfinite(self.p)):
            raise ValidationError(f"state position must be a finite 2-vector, got {self.p}")
        self.heading = wrap_angle(float(self.heading))


def step(state, command, params):
    """Advance one tick toward the commanded velocity."""
    desired = math.atan2(command.velocity[1], command.velocity[0])
    err = wrap_angle(desired - state.heading)
    limit = params.max_turn_rate * params.dt
    heading = wrap_angle(state.heading + min(max(err, -limit), limit))
    speed = float(np.linalg.norm(command.velocity))
    dist = speed * params.dt / params.unit_scale
    p = state.p + dist * np.array([math.cos(heading), math.sin(heading)])
    return VehicleState(p=p, heading=heading, speed=speed)


class _NoisyStream:
    """Seeded Gaussian noise with a running checksum of everything drawn."""

    def __init__(self, sigma, seed):
        if not (math.isfinite(sigma) and sigma >= 0):
            raise ValidationError(f"noise sigma must be >= 0, got {sigma}")
        self.sigma = float(sigma)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._hash = hashlib.sha256()
        self.draws = 0

    def _draw(self, n):
        noise = self.sigma * self._rng.standard_normal(n)
        self._hash.update(np.ascontiguousarray(noise).tobytes())
        self.draws += n
        return noise

    def checksum(self):
        return self._hash.hexdigest()


class SensorModel(_NoisyStream):
    """Point sensor: true field value plus Gaussian noise."""

    def measure(self, true_value):
        return float(true_value + self._draw(1)[0])


class PositionNoise(_NoisyStream):
    """GPS-like report: true position plus isotropic Gaussian noise."""

    def report(self, p):
        return np.asarray(p, dtype=float) + self._draw(2)


def sense(field, state, sensor):
    """Measure the field at the vehicle's true position."""
    return sensor.measure(field.value_at(state.p))


def report_position(state, noise):
    """Position as the vehicle would report it (noisy when sigma_xy > 0)."""
    return noise.report(state.p)
