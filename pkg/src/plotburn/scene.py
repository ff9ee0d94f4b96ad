"""Raster/plot data model: observations, scene cubes, plot rasterization, masks, gaps.

The common grid is a north-up raster addressed by (row, col) with row 0 at the
top. Cell centers sit at x = xll + (col + 0.5) * cellsize and
y = yll + (nrows - row - 0.5) * cellsize. All reflectance is unit scale [0, 1];
masked cells hold MASKED_FILL and must only ever be touched through valid_mask.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

# Fill value written under invalid pixels. Every consumer must select values
# through valid_mask, never by testing against this constant; tests poison it
# to a large finite number to prove no masked value leaks into features.
MASKED_FILL = np.nan

SENSOR_BANDS = {
    "A": ("Blue", "Green", "Red", "NIR"),
    "B": ("Blue", "Green", "Red", "RedEdge1", "RedEdge2", "RedEdge3",
          "NIR", "SWIR1", "SWIR2"),
}

LABELS = ("burned", "not_burned", "unlabeled")
GROUPS = ("treatment", "control", "none")

# Fraction of a plot's pixels that must be valid for the plot to count as
# observed on a given date (gap statistics and plot-mean time series).
PLOT_VALID_FRACTION = 0.5


class SceneError(ValueError):
    """Malformed scene data (geometry, bands, ordering)."""


class EmptyPlotError(SceneError):
    """Polygon covers no cell center."""


class AlignmentError(SceneError):
    """Grids that should share a geometry do not."""


@dataclass(frozen=True)
class GridGeometry:
    """Raster frame shared by every grid of a cube."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1 or self.cellsize <= 0:
            raise SceneError("grid geometry must have positive dimensions")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def cell_center(self, row, col):
        x = self.xll + (np.asarray(col) + 0.5) * self.cellsize
        y = self.yll + (self.nrows - np.asarray(row) - 0.5) * self.cellsize
        return x, y

    def cell_bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the cell footprint."""
        x0 = self.xll + col * self.cellsize
        y0 = self.yll + (self.nrows - row - 1) * self.cellsize
        return (x0, y0, x0 + self.cellsize, y0 + self.cellsize)


@dataclass
class BandObservation:
    """One sensor pass: per-band reflectance grids plus a shared validity mask."""

    sensor: str
    date: dt.date
    bands: dict[str, np.ndarray]
    valid: np.ndarray
    geom: GridGeometry

    def __post_init__(self):
        if self.sensor not in SENSOR_BANDS:
            raise SceneError(f"unknown sensor {self.sensor!r}")
        expected = SENSOR_BANDS[self.sensor]
        missing = [b for b in expected if b not in self.bands]
        if missing:
            raise SceneError(f"sensor {self.sensor} observation missing bands {missing}")
        for name, grid in self.bands.items():
            if grid.shape != self.geom.shape:
                raise AlignmentError(f"band {name} shape {grid.shape} != {self.geom.shape}")
        if self.valid.shape != self.geom.shape:
            raise AlignmentError("valid mask shape mismatch")
        if self.valid.dtype != bool:
            raise SceneError("valid mask must be boolean")

    def values(self, band: str, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Band values at pixel indices, MASKED_FILL where invalid."""
        out = np.where(self.valid[rows, cols], self.bands[band][rows, cols], MASKED_FILL)
        return out.astype(float)


@dataclass
class SceneCube:
    """Time-ordered observation stack for one sensor on a common grid."""

    observations: list[BandObservation]
    geom: GridGeometry
    resolution: float = 3.0

    def __post_init__(self):
        dates = [o.date for o in self.observations]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise SceneError("observation dates must be strictly increasing")
        for o in self.observations:
            if o.geom != self.geom:
                raise AlignmentError("observation geometry differs from cube geometry")

    @property
    def sensor(self) -> str:
        return self.observations[0].sensor if self.observations else "?"

    @property
    def dates(self) -> list[dt.date]:
        return [o.date for o in self.observations]


@dataclass
class Plot:
    """A field polygon rasterized onto the common grid."""

    plot_id: str
    polygon: list[tuple[float, float]]
    rows: np.ndarray
    cols: np.ndarray
    border: np.ndarray  # bool per pixel, True when footprint touches boundary
    label: str = "unlabeled"
    group: str = "none"

    def __post_init__(self):
        if self.label not in LABELS:
            raise SceneError(f"bad label {self.label!r}")
        if self.group not in GROUPS:
            raise SceneError(f"bad group {self.group!r}")
        if self.label != "unlabeled" and self.rows.size == 0:
            raise EmptyPlotError(f"labeled plot {self.plot_id} has no pixels")

    @property
    def n_pixels(self) -> int:
        return int(self.rows.size)


def make_plot(plot_id, polygon, geom, label="unlabeled", group="none") -> Plot:
    rows, cols, border = rasterize_plot(polygon, geom)
    return Plot(plot_id, list(polygon), rows, cols, border, label, group)


def _polygon_area(polygon) -> float:
    xs = np.array([p[0] for p in polygon], dtype=float)
    ys = np.array([p[1] for p in polygon], dtype=float)
    return 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))


def _points_in_polygon(px: np.ndarray, py: np.ndarray, polygon) -> np.ndarray:
    """Even-odd ray casting; points exactly on an edge may land either side."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _segment_hits_rect(x1, y1, x2, y2, xmin, ymin, xmax, ymax) -> np.ndarray:
    """Vectorized segment vs axis-aligned rectangle test; touching counts.

    Rect bounds are arrays (one rect per pixel); the segment is a scalar pair.
    Uses the separating-axis test for a segment against a box.
    """
    # Quick reject on bounding boxes.
    sxmin, sxmax = min(x1, x2), max(x1, x2)
    symin, symax = min(y1, y2), max(y1, y2)
    overlap = (sxmax >= xmin) & (sxmin <= xmax) & (symax >= ymin) & (symin <= ymax)
    if not overlap.any():
        return overlap
    # Separating axis along the segment normal: all four rect corners on one
    # strict side of the segment line means no intersection.
    dx, dy = x2 - x1, y2 - y1
    s1 = dy * (xmin - x1) - dx * (ymin - y1)
    s2 = dy * (xmin - x1) - dx * (ymax - y1)
    s3 = dy * (xmax - x1) - dx * (ymin - y1)
    s4 = dy * (xmax - x1) - dx * (ymax - y1)
    all_pos = (s1 > 0) & (s2 > 0) & (s3 > 0) & (s4 > 0)
    all_neg = (s1 < 0) & (s2 < 0) & (s3 < 0) & (s4 < 0)
    return overlap & ~(all_pos | all_neg)


def rasterize_plot(polygon, geom: GridGeometry):
    """Rasterize a simple polygon: cell-center membership plus a border flag.

    Returns (rows, cols, border) where border marks member pixels whose cell
    footprint intersects the polygon boundary. Raises EmptyPlotError when no
    cell center falls inside the polygon.
    """
    if len(polygon) < 3:
        raise SceneError("polygon needs at least 3 vertices")
    if _polygon_area(polygon) <= 0.0:
        raise EmptyPlotError("degenerate polygon with zero area")

    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    cell = geom.cellsize
    c0 = max(0, int(math.floor((min(xs) - geom.xll) / cell)) - 1)
    c1 = min(geom.ncols - 1, int(math.ceil((max(xs) - geom.xll) / cell)) + 1)
    r1 = min(geom.nrows - 1, int(math.floor(geom.nrows - (min(ys) - geom.yll) / cell)) + 1)
    r0 = max(0, int(math.floor(geom.nrows - (max(ys) - geom.yll) / cell)) - 1)
    if c0 > c1 or r0 > r1:
        raise EmptyPlotError("polygon lies outside the grid extent")

    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    rr = rr.ravel()
    cc = cc.ravel()
    px, py = geom.cell_center(rr, cc)
    inside = _points_in_polygon(px, py, polygon)
    rows, cols = rr[inside], cc[inside]
    if rows.size == 0:
        raise EmptyPlotError("polygon covers no cell center")

    xmin = geom.xll + cols * cell
    xmax = xmin + cell
    ymin = geom.yll + (geom.nrows - rows - 1) * cell
    ymax = ymin + cell
    border = np.zeros(rows.shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        border |= _segment_hits_rect(x1, y1, x2, y2, xmin, ymin, xmax, ymax)

    order = np.lexsort((cols, rows))
    return rows[order], cols[order], border[order]


def apply_mask(obs: BandObservation, cloud_probability: np.ndarray,
               threshold: float = 0.5) -> BandObservation:
    """New observation with pixels at cloud probability >= threshold invalidated."""
    if cloud_probability.shape != obs.geom.shape:
        raise AlignmentError(
            f"probability grid {cloud_probability.shape} does not align with {obs.geom.shape}")
    valid = obs.valid & (cloud_probability < threshold)
    bands = {name: np.where(valid, grid, MASKED_FILL) for name, grid in obs.bands.items()}
    return BandObservation(obs.sensor, obs.date, bands, valid, obs.geom)


def plot_valid_fraction(obs: BandObservation, plot: Plot) -> float:
    if plot.n_pixels == 0:
        return 0.0
    return float(obs.valid[plot.rows, plot.cols].mean())


def plot_observation_dates(cube: SceneCube, plot: Plot,
                           min_fraction: float = PLOT_VALID_FRACTION) -> list[dt.date]:
    """Dates on which at least min_fraction of the plot's pixels are valid."""
    return [o.date for o in cube.observations
            if plot_valid_fraction(o, plot) >= min_fraction]


@dataclass
class GapReport:
    """Per-plot and cross-plot windows between valid observations, in days."""

    # plot_id -> sensor -> (n_obs, mean_gap, max_gap); entry absent when the
    # plot has fewer than two valid observations for that sensor.
    per_plot: dict[str, dict[str, tuple[int, float, float]]] = field(default_factory=dict)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    flagged: list[tuple[str, str]] = field(default_factory=list)


def gap_statistics(cubes: dict[str, SceneCube], plots: list[Plot]) -> GapReport:
    """Observation-window report per plot and sensor.

    A plot counts as observed on a date when at least half its pixels are
    valid. Plots with fewer than two such dates for a sensor are flagged and
    excluded from that sensor's summary rows.
    """
    report = GapReport()
    for plot in plots:
        report.per_plot[plot.plot_id] = {}
        for sensor, cube in cubes.items():
            dates = plot_observation_dates(cube, plot)
            if len(dates) < 2:
                report.flagged.append((plot.plot_id, sensor))
                continue
            gaps = [(b - a).days for a, b in zip(dates, dates[1:])]
            report.per_plot[plot.plot_id][sensor] = (
                len(dates), float(np.mean(gaps)), float(max(gaps)))
    for sensor in cubes:
        means = [v[sensor][1] for v in report.per_plot.values() if sensor in v]
        maxes = [v[sensor][2] for v in report.per_plot.values() if sensor in v]
        if means:
            report.summary[sensor] = {
                "mean_of_means": float(np.mean(means)),
                "mean_of_maxes": float(np.mean(maxes)),
                "max_of_means": float(max(means)),
                "max_of_maxes": float(max(maxes)),
            }
    return report
