"""Gradient estimators fed by a rolling window of in-situ measurements.

Two routes to the same quantity: a GP posterior-mean gradient (the primary
estimator) and a centroid-centered planar least-squares fit (the baseline).
Both consume a MeasurementWindow and return a GradientEstimate, so missions
can swap them by name.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import gp
from .errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    OrderingError,
    ValidationError,
)

COINCIDENT_TOL = 1e-12
DEFAULT_CAPACITY = 200
DEFAULT_N_MIN = 5


class MeasurementWindow:
    """FIFO ring of (t, position, value) samples, newest last.

    Holds at most ``capacity`` entries; pushing beyond that drops the oldest.
    Timestamps must be strictly increasing.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._entries = deque(maxlen=self.capacity)

    def push(self, t, p, value):
        t = float(t)
        if self._entries and t <= self._entries[-1][0]:
            raise OrderingError(
                f"timestamp {t} not after previous {self._entries[-1][0]}"
            )
        x, y = float(p[0]), float(p[1])
        self._entries.append((t, x, y, float(value)))

    def __len__(self):
        return len(self._entries)

    def times(self):
        return np.array([e[0] for e in self._entries])

    def positions(self):
        return np.array([[e[1], e[2]] for e in self._entries]).reshape(-1, 2)

    def values(self):
        return np.array([e[3] for e in self._entries])

    def latest_time(self):
        if not self._entries:
            raise InsufficientDataError("window is empty")
        return self._entries[-1][0]


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    at: np.ndarray
    t: float
    method: str


def estimate_gp(window, params, noise, p_star, n_min=DEFAULT_N_MIN, mean_offset=0.0):
    """GP posterior-mean gradient at ``p_star`` from the window contents.

    Entries coinciding with ``p_star`` (within 1e-12) are dropped from the
    conditioning set, so pushing the current sample before estimating is
    safe. ``mean_offset`` is subtracted from the values before conditioning
    (the GP prior mean is zero; centering on a reference level keeps the
    posterior from reverting toward zero concentration at the window edge).
    """
    if len(window) == 0:
        raise InsufficientDataError("window is empty")
    p_star = np.asarray(p_star, dtype=float)
    positions = window.positions()
    values = window.values()
    keep = np.sum((positions - p_star) ** 2, axis=1) > COINCIDENT_TOL**2
    if keep.sum() < n_min:
        raise InsufficientDataError(
            f"{int(keep.sum())} usable samples after coincident exclusion, need {n_min}"
        )
    post = gp.condition(params, noise, positions[keep], values[keep] - mean_offset)
    g = post.predict_mean_gradient(p_star)
    return GradientEstimate(gradient=g, at=p_star, t=window.latest_time(), method="gp")


def estimate_lsq(window, p_star, n_min=DEFAULT_N_MIN):
    """Planar least-squares gradient: slope of value ~ a + b . (p - centroid).

    The design matrix is centered on the window centroid, which makes the
    slope invariant to translating all positions. Collinear sample positions
    leave the plane underdetermined and raise DegenerateGeometryError.
    """
    if len(window) < max(3, n_min):
        raise InsufficientDataError(f"{len(window)} samples, need {max(3, n_min)}")
    p_star = np.asarray(p_star, dtype=float)
    positions = window.positions()
    values = window.values()
    centered = positions - positions.mean(axis=0)
    design = np.column_stack([np.ones(len(centered)), centered])
    coef, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < 3:
        raise DegenerateGeometryError(
            f"sample positions are collinear (design rank {rank} < 3)"
        )
    return GradientEstimate(
        gradient=coef[1:3], at=p_star, t=window.latest_time(), method="lsq"
    )


ESTIMATORS = {"gp": "estimate_gp", "lsq": "estimate_lsq"}
