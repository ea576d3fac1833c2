"""Scalar fields a vehicle can sample: gridded rasters, synthetic shapes, rescaling.

A field exposes three things: ``value_at(p)``, ``true_gradient(p)``, and a
rectangular ``bounds`` box ``(xmin, xmax, ymin, ymax)``. Positions are 2-D,
``p = (x, y)``, in the field's own spatial units.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import (
    DomainError,
    GridParseError,
    MaskedRegionError,
    ValidationError,
)

SYNTHETIC_KINDS = ("radial-blob", "sinusoidal-front", "linear-ramp")


def _as_point(p):
    q = np.asarray(p, dtype=float)
    if q.shape != (2,):
        raise ValidationError(f"expected a 2-D point, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValidationError(f"non-finite query point {q}")
    return q


class GridField:
    """Raster field on a regular grid with bilinear interpolation.

    Parameters
    ----------
    origin : (x0, y0)
        Position of the cell at ``values[0, 0]``.
    spacing : (dx, dy)
        Grid step along x (columns) and y (rows). Both must be positive.
    values : (ny, nx) array
        Row-major samples; row i sits at ``y0 + i*dy``. NaN marks a masked
        cell unless an explicit ``mask`` is given.
    mask : (ny, nx) bool array, optional
        True where the cell is valid. Defaults to ``~isnan(values)``.

    Queries outside the bounding box raise DomainError. Interpolation uses
    the four surrounding cells; if any of them is masked the query raises
    MaskedRegionError, so values never bleed across data gaps.
    """

    def __init__(self, origin, spacing, values, mask=None):
        self.origin = (float(origin[0]), float(origin[1]))
        self.spacing = (float(spacing[0]), float(spacing[1]))
        self.values = np.array(values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValidationError(
                f"values must be 2-D with at least 2 cells per axis, got shape {self.values.shape}"
            )
        if not all(math.isfinite(v) for v in self.origin):
            raise ValidationError(f"non-finite origin {self.origin}")
        if not all(math.isfinite(s) and s > 0 for s in self.spacing):
            raise ValidationError(f"spacing must be positive and finite, got {self.spacing}")
        if mask is None:
            self.mask = ~np.isnan(self.values)
        else:
            self.mask = np.array(mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValidationError(
                    f"mask shape {self.mask.shape} != values shape {self.values.shape}"
                )
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValidationError("valid cells must hold finite values")

    @property
    def shape(self):
        return self.values.shape

    @property
    def bounds(self):
        ny, nx = self.values.shape
        x0, y0 = self.origin
        dx, dy = self.spacing
        return (x0, x0 + (nx - 1) * dx, y0, y0 + (ny - 1) * dy)

    def _locate(self, p):
        x, y = p
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            raise DomainError(f"point ({x}, {y}) outside field bounds {self.bounds}")
        ny, nx = self.values.shape
        u = (x - self.origin[0]) / self.spacing[0]
        v = (y - self.origin[1]) / self.spacing[1]
        j = min(int(math.floor(u)), nx - 2)
        i = min(int(math.floor(v)), ny - 2)
        return i, j, u - j, v - i

    def value_at(self, p):
        p = _as_point(p)
        i, j, fu, fv = self._locate(p)
        stencil = self.mask[i : i + 2, j : j + 2]
        if not stencil.all():
            raise MaskedRegionError(
                f"stencil at cell ({i}, {j}) touches a masked cell for point {tuple(p)}"
            )
        z = self.values[i : i + 2, j : j + 2]
        return float(
            z[0, 0] * (1 - fu) * (1 - fv)
            + z[0, 1] * fu * (1 - fv)
            + z[1, 0] * (1 - fu) * fv
            + z[1, 1] * fu * fv
        )

    def true_gradient(self, p):
        """Central-difference gradient of the interpolated surface.

        Step is half the smaller grid spacing; at the bounding box the
        stencil is clipped to the box and divided by the actual separation.
        """
        p = _as_point(p)
        x, y = p
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            raise DomainError(f"point ({x}, {y}) outside field bounds {self.bounds}")
        h = min(self.spacing) / 2.0
        xp, xm = min(x + h, xmax), max(x - h, xmin)
        yp, ym = min(y + h, ymax), max(y - h, ymin)
        gx = (self.value_at((xp, y)) - self.value_at((xm, y))) / (xp - xm)
        gy = (self.value_at((x, yp)) - self.value_at((x, ym))) / (yp - ym)
        return np.array([gx, gy])


class SyntheticField:
    """Analytic field with an exact gradient, for tests and simulations.

    Kinds and their parameters (all floats unless noted):

    - ``radial-blob``: ``center`` (2-seq), ``amplitude``, ``width``,
      optional ``base``. A Gaussian bump,
      ``base + amplitude * exp(-|p - center|^2 / (2 width^2))``.
    - ``sinusoidal-front``: ``wavelength``, ``amplitude``, ``slope``,
      optional ``offset``. A graded front whose level sets are sinusoids:
      ``offset + slope * (y - amplitude * sin(2 pi x / wavelength))``.
    - ``linear-ramp``: ``slope`` (scalar along x, or 2-seq), optional
      ``offset``. ``slope . p + offset``.

    ``bounds`` declares the domain box; queries outside it raise DomainError.
    """

    def __init__(self, kind, params, bounds):
        if kind not in SYNTHETIC_KINDS:
            raise ValidationError(f"unknown synthetic kind {kind!r}, expected one of {SYNTHETIC_KINDS}")
        self.kind = kind
        self.params = dict(params)
        self.bounds = tuple(float(b) for b in bounds)
        if len(self.bounds) != 4 or not all(math.isfinite(b) for b in self.bounds):
            raise ValidationError(f"bounds must be (xmin, xmax, ymin, ymax), got {bounds}")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValidationError(f"empty bounds box {self.bounds}")
        try:
            if kind == "radial-blob":
                self._center = np.array([float(c) for c in self.params["center"]])
                self._amplitude = float(self.params["amplitude"])
                self._width = float(self.params["width"])
                self._base = float(self.params.get("base", 0.0))
                if self._width <= 0:
                    raise ValidationError("radial-blob width must be positive")
            elif kind == "sinusoidal-front":
                self._wavelength = float(self.params["wavelength"])
                self._amplitude = float(self.params["amplitude"])
                self._slope = float(self.params["slope"])
                self._offset = float(self.params.get("offset", 0.0))
                if self._wavelength <= 0:
                    raise ValidationError("sinusoidal-front wavelength must be positive")
            else:
                slope = self.params["slope"]
                if np.isscalar(slope):
                    self._slope = np.array([float(slope), 0.0])
                else:
                    self._slope = np.array([float(s) for s in slope])
                    if self._slope.shape != (2,):
                        raise ValidationError("linear-ramp slope must be a scalar or 2-seq")
                self._offset = float(self.params.get("offset", 0.0))
        except KeyError as err:
            raise ValidationError(f"{kind} is missing parameter {err.args[0]!r}") from None

    def _check_domain(self, p):
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
            raise DomainError(f"point {tuple(p)} outside field bounds {self.bounds}")

    def value_at(self, p):
        p = _as_point(p)
        self._check_domain(p)
        if self.kind == "radial-blob":
            d2 = float(np.sum((p - self._center) ** 2))
            return self._base + self._amplitude * math.exp(-d2 / (2 * self._width**2))
        if self.kind == "sinusoidal-front":
            wiggle = self._amplitude * math.sin(2 * math.pi * p[0] / self._wavelength)
            return self._offset + self._slope * (p[1] - wiggle)
        return float(self._slope @ p) + self._offset

    def true_gradient(self, p):
        p = _as_point(p)
        self._check_domain(p)
        if self.kind == "radial-blob":
            d = p - self._center
            d2 = float(np.sum(d**2))
            val = self._amplitude * math.exp(-d2 / (2 * self._width**2))
            return -val / self._width**2 * d
        if self.kind == "sinusoidal-front":
            ddx = -self._slope * self._amplitude * (2 * math.pi / self._wavelength) * math.cos(
                2 * math.pi * p[0] / self._wavelength
            )
            return np.array([ddx, self._slope])
        return self._slope.copy()


class ScaledField:
    """View of another field with spatial coordinates shrunk by ``factor``.

    ``value_at(p)`` equals the base field's value at ``p * factor``, so a
    factor of 100 squeezes kilometre-scale structure into a playground a
    hundredth the size; gradients steepen by the same factor (chain rule).
    """

    def __init__(self, base, factor):
        factor = float(factor)
        if not (math.isfinite(factor) and factor > 0):
            raise ValidationError(f"scale factor must be positive and finite, got {factor}")
        self.base = base
        self.factor = factor

    @property
    def bounds(self):
        xmin, xmax, ymin, ymax = self.base.bounds
        s = self.factor
        return (xmin / s, xmax / s, ymin / s, ymax / s)

    def value_at(self, p):
        p = _as_point(p)
        return self.base.value_at(p * self.factor)

    def true_gradient(self, p):
        p = _as_point(p)
        return self.factor * self.base.true_gradient(p * self.factor)


def scale_field(field, factor):
    """Shrink a field's spatial coordinates by ``factor`` (values unchanged)."""
    return ScaledField(field, factor)


def make_synthetic(kind, params, bounds):
    return SyntheticField(kind, params, bounds)


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv-grid", "json-grid"):
            raise ValidationError(f"unknown grid format {fmt!r}")
        return fmt
    s = str(path)
    if s.endswith(".json"):
        return "json-grid"
    return "csv-grid"


def _parse_header_line(text, lineno):
    parts = text[1:].split()
    if len(parts) != 3:
        raise GridParseError(f"line {lineno}: malformed header {text!r}")
    key = parts[0]
    if key == "shape":
        try:
            a, b = int(parts[1]), int(parts[2])
        except ValueError:
            raise GridParseError(f"line {lineno}: shape wants two integers, got {text!r}") from None
    else:
        try:
            a, b = float(parts[1]), float(parts[2])
        except ValueError:
            raise GridParseError(f"line {lineno}: {key} wants two numbers, got {text!r}") from None
    return key, (a, b)


def _load_csv_grid(path):
    header = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise GridParseError(f"line {lineno}: header after data rows")
                key, vals = _parse_header_line(line, lineno)
                if key not in ("origin", "spacing", "shape"):
                    raise GridParseError(f"line {lineno}: unknown header key {key!r}")
                if key in header:
                    raise GridParseError(f"line {lineno}: duplicate header {key!r}")
                header[key] = vals
                continue
            missing = {"origin", "spacing", "shape"} - set(header)
            if missing:
                raise GridParseError(
                    f"line {lineno}: data before header(s) {sorted(missing)}"
                )
            fields = line.split(",")
            try:
                row = [float(f) for f in fields]
            except ValueError as err:
                raise GridParseError(f"line {lineno}: bad value ({err})") from None
            ny, nx = header["shape"]
            if len(row) != nx:
                raise GridParseError(f"line {lineno}: expected {nx} values, got {len(row)}")
            if len(rows) >= ny:
                raise GridParseError(f"line {lineno}: more than {ny} data rows")
            rows.append(row)
    missing = {"origin", "spacing", "shape"} - set(header)
    if missing:
        raise GridParseError(f"missing header(s) {sorted(missing)} in {path}")
    ny, nx = header["shape"]
    if len(rows) != ny:
        raise GridParseError(f"expected {ny} data rows, found {len(rows)} in {path}")
    return GridField(header["origin"], header["spacing"], np.array(rows))


def _load_json_grid(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise GridParseError(f"line {err.lineno}, column {err.colno}: {err.msg}") from None
    for key in ("origin", "spacing", "shape", "values"):
        if key not in doc:
            raise GridParseError(f"missing key {key!r} in {path}")
    ny, nx = doc["shape"]
    rows = doc["values"]
    if len(rows) != ny:
        raise GridParseError(f"expected {ny} value rows, found {len(rows)} in {path}")
    values = np.full((ny, nx), np.nan)
    for i, row in enumerate(rows):
        if len(row) != nx:
            raise GridParseError(f"value row {i}: expected {nx} entries, got {len(row)}")
        for j, cell in enumerate(row):
            if cell is None or (isinstance(cell, str) and cell.lower() == "nan"):
                continue
            values[i, j] = float(cell)
    return GridField(doc["origin"], doc["spacing"], values)


def load_grid(path, fmt=None):
    """Read a grid file (``csv-grid`` or ``json-grid``; inferred from suffix)."""
    fmt = _infer_format(path, fmt)
    if fmt == "csv-grid":
        return _load_csv_grid(path)
    return _load_json_grid(path)


def save_grid(field, path, fmt=None):
    """Write a GridField to disk in the given format. Masked cells become nan/null."""
    fmt = _infer_format(path, fmt)
    values = np.where(field.mask, field.values, np.nan)
    ny, nx = values.shape
    if fmt == "csv-grid":
        with open(path, "w") as fh:
            fh.write(f"# origin {field.origin[0]!r} {field.origin[1]!r}\n")
            fh.write(f"# spacing {field.spacing[0]!r} {field.spacing[1]!r}\n")
            fh.write(f"# shape {ny} {nx}\n")
            for row in values:
                fh.write(",".join("nan" if math.isnan(v) else repr(float(v)) for v in row) + "\n")
    else:
        doc = {
            "origin": list(field.origin),
            "spacing": list(field.spacing),
            "shape": [ny, nx],
            "values": [[None if math.isnan(v) else float(v) for v in row] for row in values],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, allow_nan=False)
            fh.write("\n")


def rasterize(field, origin, spacing, shape):
    """Sample any field onto a GridField (used by the field generator)."""
    ny, nx = shape
    values = np.empty((ny, nx))
    for i in range(ny):
        for j in range(nx):
            p = (origin[0] + j * spacing[0], origin[1] + i * spacing[1])
            try:
                values[i, j] = field.value_at(p)
            except (DomainError, MaskedRegionError):
                values[i, j] = np.nan
    return GridField(origin, spacing, values)
