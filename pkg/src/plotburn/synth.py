"""Synthetic two-sensor scene cubes with known burn/till dates and cloud gaps.

The signal model is a per-band two-level step (pre-event stubble, post-till
bare soil) plus an additive char excursion for burned plots that decays
exponentially, fast in the visible bands and slower in the infrared. Visible
levels barely move at tilling, so char indices converge back to the tilled
baseline within days, which is the detection difficulty the generator exists
to reproduce. Everything is deterministic for a given seed.
"""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, field

import numpy as np

from .gridio import (write_endmembers_csv, write_events_csv, write_grid,
                     write_plots_csv, write_rows_csv, write_scene_manifest)
from .indices import EndmemberSet
from .scene import (MASKED_FILL, SENSOR_BANDS, BandObservation, GridGeometry,
                    Plot, SceneCube, SceneError, make_plot)

HA_IN_M2 = 10000.0

# Band levels before any event (rice stubble) and after tilling (bare soil).
PRE_LEVELS = {"Blue": 0.10, "Green": 0.15, "Red": 0.18, "RedEdge1": 0.20,
              "RedEdge2": 0.24, "RedEdge3": 0.27, "NIR": 0.30,
              "SWIR1": 0.30, "SWIR2": 0.25}
TILL_LEVELS = {"Blue": 0.10, "Green": 0.15, "Red": 0.18, "RedEdge1": 0.19,
               "RedEdge2": 0.21, "RedEdge3": 0.22, "NIR": 0.22,
               "SWIR1": 0.24, "SWIR2": 0.20}
# Additive excursion while char is visible, relative to the tilled level.
CHAR_DELTAS = {"Blue": -0.045, "Green": -0.065, "Red": -0.085,
               "RedEdge1": -0.05, "RedEdge2": -0.06, "RedEdge3": -0.06,
               "NIR": -0.08, "SWIR1": -0.10, "SWIR2": -0.07}
VISIBLE_BANDS = ("Blue", "Green", "Red")


@dataclass(frozen=True)
class ScenarioConfig:
    n_plots: int = 320
    resolution: float = 3.0
    plot_area_mean_ha: float = 1.4
    plot_area_median_ha: float = 0.9
    burn_probability: float = 0.68
    season_start: dt.date = dt.date(2019, 10, 10)
    season_end: dt.date = dt.date(2019, 12, 15)
    burn_window_start: dt.date = dt.date(2019, 10, 18)
    burn_window_end: dt.date = dt.date(2019, 12, 2)
    till_lag_max_days: int = 2
    char_half_life_vis: float = 1.5
    char_half_life_ir: float = 3.0
    revisit_a: float = 1.8          # mean days between generated passes
    revisit_b: float = 5.0
    cloud_dropout_a: float = 0.08   # per plot-observation loss probability
    cloud_dropout_b: float = 0.15
    n_cloud_events: int = 3
    cloud_event_min_days: int = 3
    cloud_event_max_days: int = 5
    cloud_event_coverage: float = 0.5
    noise_sd_a: float = 0.02        # pixel noise, sensor A is the noisier one
    noise_sd_b: float = 0.01
    plot_jitter_common_sd: float = 0.03   # shared brightness offset per plot
    plot_jitter_band_sd: float = 0.005    # independent per-band offset
    char_amp_range: tuple[float, float] = (0.85, 1.15)
    # Per-band signal levels; None falls back to the module defaults.
    pre_levels: dict | None = None
    till_levels: dict | None = None
    char_deltas: dict | None = None
    unlabeled_fraction: float = 0.0
    treatment_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.burn_probability <= 1.0):
            raise SceneError("burn probability must be in [0, 1]")
        if self.char_half_life_vis <= 0 or self.char_half_life_ir <= 0:
            raise SceneError("char half-life must be positive")
        if self.revisit_a <= 0 or self.revisit_b <= 0:
            raise SceneError("sensor cadences must be positive")


@dataclass
class GroundTruth:
    burned: dict[str, bool] = field(default_factory=dict)
    burn_date: dict[str, dt.date | None] = field(default_factory=dict)
    till_date: dict[str, dt.date] = field(default_factory=dict)
    # sensor -> plot_id -> dates at which the plot is validly observed
    valid_obs: dict[str, dict[str, list[dt.date]]] = field(default_factory=dict)

    def gap_table(self) -> dict[str, dict[str, tuple[int, float, float]]]:
        """plot_id -> sensor -> (n_obs, mean_gap, max_gap); <2 obs omitted."""
        table: dict[str, dict[str, tuple[int, float, float]]] = {}
        for sensor, per_plot in self.valid_obs.items():
            for plot_id, dates in per_plot.items():
                if len(dates) < 2:
                    continue
                gaps = [(b - a).days for a, b in zip(dates, dates[1:])]
                table.setdefault(plot_id, {})[sensor] = (
                    len(dates), float(np.mean(gaps)), float(max(gaps)))
        return table

    def events(self) -> list[tuple[str, str, dt.date]]:
        """Burn events for burned plots, till events for unburned ones."""
        out = []
        for plot_id in sorted(self.burned):
            if self.burned[plot_id]:
                out.append((plot_id, "burn", self.burn_date[plot_id]))
            else:
                out.append((plot_id, "till", self.till_date[plot_id]))
        return out


@dataclass
class Scenario:
    cube_a: SceneCube
    cube_b: SceneCube
    plots: list[Plot]
    truth: GroundTruth
    config: ScenarioConfig
    endmembers: EndmemberSet

    def labels(self) -> dict[str, str]:
        return {p.plot_id: p.label for p in self.plots}

    def groups(self) -> dict[str, str]:
        return {p.plot_id: p.group for p in self.plots}


def default_endmembers() -> EndmemberSet:
    bands = SENSOR_BANDS["B"]
    veg = np.array([0.06, 0.10, 0.08, 0.20, 0.30, 0.35, 0.38, 0.22, 0.12])
    soil = np.array([TILL_LEVELS[b] for b in bands])
    char = np.array([TILL_LEVELS[b] + CHAR_DELTAS[b] for b in bands])
    return EndmemberSet(veg, soil, char)


def _sample_plot_dims(cfg: ScenarioConfig, rng) -> list[tuple[int, int]]:
    px_area = cfg.resolution ** 2
    median_px = cfg.plot_area_median_ha * HA_IN_M2 / px_area
    ratio = cfg.plot_area_mean_ha / cfg.plot_area_median_ha
    sigma = float(np.sqrt(max(2.0 * np.log(ratio), 1e-6)))
    areas = np.exp(rng.normal(np.log(median_px), sigma, size=cfg.n_plots))
    areas = np.clip(areas, 16, 2.6 * median_px)
    dims = []
    for area in areas:
        aspect = rng.uniform(0.7, 1.4)
        w = max(3, int(round(np.sqrt(area * aspect))))
        h = max(3, int(round(area / w)))
        dims.append((w, h))
    return dims


def _pack_plots(dims: list[tuple[int, int]], margin: int = 3):
    """Shelf packing: (col0, row0) origins and the resulting grid shape."""
    total = sum(w * h for w, h in dims)
    target_w = int(np.ceil(np.sqrt(total * 1.9))) + max(w for w, _ in dims)
    order = sorted(range(len(dims)), key=lambda i: (-dims[i][1], i))
    origins = [None] * len(dims)
    x = margin
    y = margin
    shelf_h = 0
    used_w = target_w
    for i in order:
        w, h = dims[i]
        if x + w + margin > target_w:
            x = margin
            y += shelf_h + margin
            shelf_h = 0
        origins[i] = (x, y)
        x += w + margin
        shelf_h = max(shelf_h, h)
    height = y + shelf_h + margin
    return origins, (height, used_w)


def _rect_polygon(col0, row0, w, h, geom: GridGeometry):
    x0 = geom.xll + col0 * geom.cellsize
    x1 = geom.xll + (col0 + w) * geom.cellsize
    y_top = geom.yll + (geom.nrows - row0) * geom.cellsize
    y_bot = geom.yll + (geom.nrows - row0 - h) * geom.cellsize
    return [(x0, y_bot), (x1, y_bot), (x1, y_top), (x0, y_top)]


def _obs_days(rng, n_days: int, revisit: float, regular: bool) -> list[int]:
    """Observation day offsets for one sensor.

    Irregular constellations pass on any day with probability 1/revisit;
    orbital sensors revisit on a fixed cycle of round(revisit) days.
    """
    if regular:
        step = max(1, int(round(revisit)))
        days = list(range(0, n_days, step))
    else:
        p = min(1.0, 1.0 / revisit)
        days = [0] + [d for d in range(1, n_days) if rng.random() < p]
    if len(days) < 2:
        days = [0, n_days - 1]
    return days


def _half_life(band: str, cfg: ScenarioConfig) -> float:
    return cfg.char_half_life_vis if band in VISIBLE_BANDS else cfg.char_half_life_ir


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build both sensor cubes, the plot set, and the ground truth tables."""
    pre_levels = cfg.pre_levels or PRE_LEVELS
    till_levels = cfg.till_levels or TILL_LEVELS
    char_deltas = cfg.char_deltas or CHAR_DELTAS
    master = np.random.SeedSequence(cfg.seed)
    (ss_geom, ss_assign, ss_jitter, ss_days_a, ss_days_b,
     ss_drop_a, ss_drop_b, ss_events, ss_noise) = master.spawn(9)
    rng_geom = np.random.Generator(np.random.PCG64(ss_geom))
    rng_assign = np.random.Generator(np.random.PCG64(ss_assign))
    rng_jitter = np.random.Generator(np.random.PCG64(ss_jitter))

    dims = _sample_plot_dims(cfg, rng_geom)
    origins, (nrows, ncols) = _pack_plots(dims)
    geom = GridGeometry(ncols, nrows, 0.0, 0.0, cfg.resolution)
    n_days = (cfg.season_end - cfg.season_start).days + 1

    truth = GroundTruth()
    plot_specs = []
    burn_days = {}
    win0 = (cfg.burn_window_start - cfg.season_start).days
    win1 = (cfg.burn_window_end - cfg.season_start).days
    for i in range(cfg.n_plots):
        plot_id = f"p{i:04d}"
        burned = bool(rng_assign.random() < cfg.burn_probability)
        event_day = int(rng_assign.integers(win0, win1 + 1))
        lag = int(rng_assign.integers(0, cfg.till_lag_max_days + 1))
        unlabeled = bool(rng_assign.random() < cfg.unlabeled_fraction)
        group = "treatment" if rng_assign.random() < cfg.treatment_fraction else "control"
        truth.burned[plot_id] = burned
        if burned:
            burn_date = cfg.season_start + dt.timedelta(days=event_day)
            truth.burn_date[plot_id] = burn_date
            truth.till_date[plot_id] = burn_date + dt.timedelta(days=lag)
            burn_days[plot_id] = event_day
            label = "unlabeled" if unlabeled else "burned"
            base_day = event_day        # tilling level steps in at the burn
        else:
            truth.burn_date[plot_id] = None
            truth.till_date[plot_id] = cfg.season_start + dt.timedelta(days=event_day + lag)
            label = "unlabeled" if unlabeled else "not_burned"
            base_day = event_day + lag
        jitter_common = rng_jitter.normal(0.0, cfg.plot_jitter_common_sd)
        jitter_band = {b: jitter_common + rng_jitter.normal(0.0, cfg.plot_jitter_band_sd)
                       for b in SENSOR_BANDS["B"]}
        amp = rng_jitter.uniform(*cfg.char_amp_range)
        plot_specs.append({
            "plot_id": plot_id, "burned": burned, "base_day": base_day,
            "burn_day": event_day if burned else None,
            "label": label, "group": group, "jitter": jitter_band, "amp": amp,
        })

    plots = []
    for spec, (w, h), (col0, row0) in zip(plot_specs, dims, origins):
        polygon = _rect_polygon(col0, row0, w, h, geom)
        plots.append(make_plot(spec["plot_id"], polygon, geom,
                               spec["label"], spec["group"]))

    days_a = _obs_days(np.random.Generator(np.random.PCG64(ss_days_a)), n_days,
                       cfg.revisit_a, regular=False)
    days_b = _obs_days(np.random.Generator(np.random.PCG64(ss_days_b)), n_days,
                       cfg.revisit_b, regular=True)

    rng_events = np.random.Generator(np.random.PCG64(ss_events))
    event_windows = []
    for _ in range(cfg.n_cloud_events):
        start = int(rng_events.integers(0, max(1, n_days - cfg.cloud_event_max_days)))
        length = int(rng_events.integers(cfg.cloud_event_min_days,
                                         cfg.cloud_event_max_days + 1))
        covered = rng_events.random(cfg.n_plots) < cfg.cloud_event_coverage
        event_windows.append((start, start + length, covered))

    def masked_plots(sensor, day, rng_drop):
        dropout = cfg.cloud_dropout_a if sensor == "A" else cfg.cloud_dropout_b
        lost = rng_drop.random(cfg.n_plots) < dropout
        for start, end, covered in event_windows:
            if start <= day < end:
                lost |= covered
        return lost

    cube_by_sensor = {}
    for sensor, days, drop_ss in (("A", days_a, ss_drop_a), ("B", days_b, ss_drop_b)):
        rng_drop = np.random.Generator(np.random.PCG64(drop_ss))
        bands = SENSOR_BANDS[sensor]
        noise_sd = cfg.noise_sd_a if sensor == "A" else cfg.noise_sd_b
        observations = []
        truth.valid_obs[sensor] = {p.plot_id: [] for p in plots}
        for obs_i, day in enumerate(days):
            date = cfg.season_start + dt.timedelta(days=day)
            lost = masked_plots(sensor, day, rng_drop)
            rng_noise = np.random.Generator(np.random.PCG64(ss_noise.spawn(1)[0]))
            grids = {}
            valid = np.ones(geom.shape, dtype=bool)
            for band in bands:
                grid = till_levels[band] + noise_sd * rng_noise.standard_normal(geom.shape)
                for plot, spec in zip(plots, plot_specs):
                    level = pre_levels[band] if day < spec["base_day"] else till_levels[band]
                    if spec["burned"] and day >= spec["burn_day"]:
                        tau = _half_life(band, cfg)
                        decay = 0.5 ** ((day - spec["burn_day"]) / tau)
                        level += spec["amp"] * char_deltas[band] * decay
                    level += spec["jitter"][band]
                    grid[plot.rows, plot.cols] += level - till_levels[band]
                grids[band] = np.clip(grid, 0.0, 1.0).astype(np.float32)
            for plot, is_lost in zip(plots, lost):
                if is_lost:
                    valid[plot.rows, plot.cols] = False
                else:
                    truth.valid_obs[sensor][plot.plot_id].append(date)
            for band in bands:
                grids[band][~valid] = MASKED_FILL
            observations.append(BandObservation(sensor, date, grids, valid, geom))
        cube_by_sensor[sensor] = SceneCube(observations, geom, cfg.resolution)

    return Scenario(cube_by_sensor["A"], cube_by_sensor["B"], plots, truth,
                    cfg, default_endmembers())


def inject_gaps(cube: SceneCube, schedule, plots: list[Plot],
                truth: GroundTruth | None = None) -> tuple[SceneCube, GroundTruth | None]:
    """Invalidate per-plot regions (or whole observations) over date ranges.

    schedule entries are (plot_id | None, start_date, end_date) with the end
    exclusive; None hits every plot. Returns a new cube and, when a truth
    table is given, a copy updated to match.
    """
    by_id = {p.plot_id: p for p in plots}
    observations = []
    newly_masked: dict[dt.date, set[str]] = {}
    for obs in cube.observations:
        relevant = [(pid, start, end) for pid, start, end in schedule
                    if start <= obs.date < end]
        if not relevant:
            observations.append(obs)
            continue
        valid = obs.valid.copy()
        touched = set()
        for pid, _, _ in relevant:
            targets = [by_id[pid]] if pid is not None else plots
            for plot in targets:
                valid[plot.rows, plot.cols] = False
                touched.add(plot.plot_id)
        bands = {name: np.where(valid, grid, MASKED_FILL)
                 for name, grid in obs.bands.items()}
        observations.append(BandObservation(obs.sensor, obs.date, bands, valid, obs.geom))
        newly_masked[obs.date] = touched
    new_cube = SceneCube(observations, cube.geom, cube.resolution)

    if truth is None:
        return new_cube, None
    new_truth = GroundTruth(dict(truth.burned), dict(truth.burn_date),
                            dict(truth.till_date),
                            {s: {p: list(ds) for p, ds in per.items()}
                             for s, per in truth.valid_obs.items()})
    sensor = cube.sensor
    for date, touched in newly_masked.items():
        for plot_id in touched:
            dates = new_truth.valid_obs[sensor].get(plot_id)
            if dates and date in dates:
                dates.remove(date)
    return new_cube, new_truth


def post_burn_gap_schedule(truth: GroundTruth, days: int):
    """Schedule masking every observation within `days` after each burn."""
    out = []
    for plot_id, burned in truth.burned.items():
        if burned:
            start = truth.burn_date[plot_id]
            out.append((plot_id, start, start + dt.timedelta(days=days + 1)))
    return out


TRUTH_CSV_HEADER = ["plot_id", "burned", "burn_date", "till_date"]


def write_truth_csv(path, truth: GroundTruth) -> None:
    rows = []
    for plot_id in sorted(truth.burned):
        rows.append([plot_id, int(truth.burned[plot_id]),
                     truth.burn_date[plot_id].isoformat() if truth.burn_date[plot_id] else "",
                     truth.till_date[plot_id].isoformat()])
    write_rows_csv(path, TRUTH_CSV_HEADER, rows)


def write_scenario(out_dir, scenario: Scenario) -> dict[str, str]:
    """Emit the manifest/grid/plot/truth/event/endmember files for ingestion."""
    os.makedirs(out_dir, exist_ok=True)
    grids_dir = os.path.join(out_dir, "grids")
    os.makedirs(grids_dir, exist_ok=True)
    entries = []
    for cube in (scenario.cube_a, scenario.cube_b):
        for obs in cube.observations:
            for band, grid in obs.bands.items():
                name = f"{obs.sensor}_{obs.date.isoformat()}_{band}.grid"
                write_grid(os.path.join(grids_dir, name),
                           np.asarray(grid, dtype=float), obs.geom, obs.valid)
                entries.append({"sensor": obs.sensor, "date": obs.date.isoformat(),
                                "band": band, "grid": f"grids/{name}", "mask": None})
    paths = {
        "manifest": os.path.join(out_dir, "scene_manifest.json"),
        "plots": os.path.join(out_dir, "plots.csv"),
        "truth": os.path.join(out_dir, "truth.csv"),
        "events": os.path.join(out_dir, "events.csv"),
        "endmembers": os.path.join(out_dir, "endmembers.csv"),
    }
    write_scene_manifest(paths["manifest"], entries, scale=1.0)
    write_plots_csv(paths["plots"], scenario.plots)
    write_truth_csv(paths["truth"], scenario.truth)
    write_events_csv(paths["events"], scenario.truth.events())
    write_endmembers_csv(paths["endmembers"], scenario.endmembers)
    return paths

