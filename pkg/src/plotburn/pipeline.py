"""End-to-end pipeline with reproducible, self-describing run directories.

Every run lands in its own directory named after a hash of the configuration;
reruns with the same configuration produce byte-identical CSV artifacts. CSV
and model files carry full-precision floats, and all orderings are explicit,
so determinism only depends on the seed in the configuration.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import features as feats
from . import synth as synthmod
from .cv import LABEL_TO_CLASS, loocv_plot, sequential_select, stratified_plot_split
from .forest import (ForestParams, apply_impute, fit_impute_medians, predict_scores,
                     save_forest, top_k_features, train_forest)
from .gridio import (read_endmembers_csv, read_events_csv, read_plots_csv,
                     read_rows_csv, read_scene_manifest, write_rows_csv)
from .scene import gap_statistics
from .separability import CURVE_CSV_HEADER, separability_curve
from .thresholds import (aggregate_plot, balanced_accuracy_threshold,
                         cohens_kappa, make_predictions, max_accuracy_threshold,
                         prediction_summary)

SENSOR_MODES = ("combined", "A_only", "B_only")

ARTIFACTS = ("features.csv", "importance.csv", "cv_scores.csv", "predictions.csv",
             "confusion_max.csv", "confusion_balanced.csv", "gaps.csv",
             "run_manifest.json")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    out_root: str
    name: str = "run"
    # Data source: a synthetic scenario, or manifest/plot files.
    scenario: synthmod.ScenarioConfig | None = None
    manifest_path: str | None = None
    plots_path: str | None = None
    events_path: str | None = None
    endmembers_path: str | None = None
    sensor_mode: str = "combined"
    include_border: bool = True
    bsi_exponent: float = 1.0
    top_k_features: int = 50
    selection: str = "importance"     # "importance", "sequential:<k>", "none"
    cv_mode: str = "auto"
    n_trees: int = 300
    max_features: str | int = "sqrt"
    min_leaf: int = 5
    max_offset: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.sensor_mode not in SENSOR_MODES:
            raise ValueError(f"sensor_mode must be one of {SENSOR_MODES}")
        if self.scenario is None and not (self.manifest_path and self.plots_path):
            raise ValueError("need either a scenario or manifest/plot paths")

    def forest_params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.max_features, self.min_leaf,
                            None, self.seed)

    def to_jsonable(self) -> dict:
        doc = dataclasses.asdict(self)
        if self.scenario is not None:
            sc = doc["scenario"]
            for key, value in list(sc.items()):
                if isinstance(value, dt.date):
                    sc[key] = value.isoformat()
                if isinstance(value, tuple):
                    sc[key] = list(value)
        return doc

    def config_hash(self) -> str:
        text = json.dumps(self.to_jsonable(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    if doc.get("scenario"):
        sc = dict(doc["scenario"])
        for key, value in list(sc.items()):
            if key in ("season_start", "season_end", "burn_window_start",
                       "burn_window_end") and isinstance(value, str):
                sc[key] = dt.date.fromisoformat(value)
            if key == "char_amp_range":
                sc[key] = tuple(value)
        doc["scenario"] = synthmod.ScenarioConfig(**sc)
    return RunConfig(**doc)


def allocate_run_dir(config: RunConfig) -> str:
    base = f"{config.name}-{config.config_hash()}"
    candidate = os.path.join(config.out_root, base)
    suffix = 1
    while os.path.exists(candidate):
        suffix += 1
        candidate = os.path.join(config.out_root, f"{base}-{suffix}")
    os.makedirs(candidate)
    return candidate


@dataclass
class RunState:
    config: RunConfig
    run_dir: str
    cubes: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)
    truth: synthmod.GroundTruth | None = None
    events: list = field(default_factory=list)
    endmembers: object = None
    rows: list = field(default_factory=list)
    schema: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    cv_result: object = None
    model: object = None
    plot_scores: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)
    choice_max: object = None
    choice_balanced: object = None
    predictions: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def _confusion_rows(choice, kappa: float):
    c = choice.counts
    return [["threshold", choice.threshold],
            ["threshold_percentile", choice.percentile],
            ["false_burn", c.false_burn],
            ["false_no_burn", c.false_no_burn],
            ["true_burn", c.true_burn],
            ["true_no_burn", c.true_no_burn],
            ["no_burn_accuracy", c.no_burn_accuracy],
            ["burn_accuracy", c.burn_accuracy],
            ["mean_accuracy", c.mean_accuracy],
            ["cohens_kappa", kappa]]


def stage_ingest(state: RunState) -> None:
    cfg = state.config
    if cfg.scenario is not None:
        scenario = synthmod.generate(cfg.scenario)
        state.cubes = {"A": scenario.cube_a, "B": scenario.cube_b}
        state.plots = scenario.plots
        state.truth = scenario.truth
        state.events = scenario.truth.events()
        state.endmembers = scenario.endmembers
    else:
        cubes = read_scene_manifest(cfg.manifest_path)
        geoms = {c.geom for c in cubes.values()}
        finest = min(geoms, key=lambda g: g.cellsize)
        if len(geoms) > 1:
            cubes = read_scene_manifest(cfg.manifest_path, target_geom=finest)
        state.cubes = cubes
        state.plots = read_plots_csv(cfg.plots_path, finest)
        if cfg.events_path:
            state.events = read_events_csv(cfg.events_path)
        state.endmembers = (read_endmembers_csv(cfg.endmembers_path)
                            if cfg.endmembers_path else synthmod.default_endmembers())
    if cfg.sensor_mode == "A_only":
        state.cubes.pop("B", None)
    elif cfg.sensor_mode == "B_only":
        state.cubes.pop("A", None)
    state.labels = {p.plot_id: p.label for p in state.plots}
    state.groups = {p.plot_id: p.group for p in state.plots}


def stage_gaps(state: RunState) -> None:
    report = gap_statistics(state.cubes, state.plots)
    rows = []
    for plot_id in sorted(report.per_plot):
        for sensor in sorted(state.cubes):
            entry = report.per_plot[plot_id].get(sensor)
            if entry:
                rows.append([plot_id, sensor, entry[0], entry[1], entry[2]])
            else:
                rows.append([plot_id, sensor, 0, None, None])
    for sensor in sorted(report.summary):
        for key in ("mean_of_means", "mean_of_maxes", "max_of_means", "max_of_maxes"):
            rows.append([f"summary_{key}", sensor, "", report.summary[sensor][key], ""])
    write_rows_csv(os.path.join(state.run_dir, "gaps.csv"),
                   ["plot_id", "sensor", "n_obs", "mean_gap", "max_gap"], rows)
    state.manifest["gap_summary"] = report.summary


def stage_features(state: RunState) -> None:
    cfg = state.config
    from .indices import ALL_INDICES

    state.rows = feats.build_feature_table(
        state.cubes.get("A"), state.cubes.get("B"), state.plots,
        list(ALL_INDICES), include_border=cfg.include_border,
        endmembers=state.endmembers, bsi_exponent=cfg.bsi_exponent)
    feats.write_feature_csv(os.path.join(state.run_dir, "features.csv"), state.rows)
    state.schema = feats.table_schema(state.rows)


DEFAULT_CURVE_SOURCES = (("A", "CI"), ("A", "NIR"), ("B", "MIRBI"),
                         ("B", "NBR"), ("B", "BASMA"))


def stage_separability(state: RunState) -> None:
    burn_events = [(pid, date) for pid, kind, date in state.events if kind == "burn"]
    if not burn_events:
        state.manifest["separability"] = "skipped: no burn events supplied"
        return
    by_id = {p.plot_id: p for p in state.plots}
    events = [(by_id[pid], date) for pid, date in burn_events if pid in by_id]
    rows = []
    for sensor, source in DEFAULT_CURVE_SOURCES:
        cube = state.cubes.get(sensor)
        if cube is None:
            continue
        curve = separability_curve(events, cube, source, state.config.max_offset,
                                   endmembers=state.endmembers,
                                   bsi_exponent=state.config.bsi_exponent)
        for row in curve.rows():
            rows.append([f"{sensor}_{source}", *row[1:]])
    write_rows_csv(os.path.join(state.run_dir, "separability.csv"),
                   CURVE_CSV_HEADER, rows)


def stage_train(state: RunState) -> None:
    cfg = state.config
    params = cfg.forest_params()
    X = feats.table_matrix(state.rows, state.schema)
    labeled_idx = np.asarray([i for i, r in enumerate(state.rows)
                              if state.labels.get(r.plot_id) in LABEL_TO_CLASS],
                             dtype=np.int64)
    if labeled_idx.size == 0:
        raise ValueError("no labeled plots with feature rows")
    y = np.asarray([LABEL_TO_CLASS[state.labels[state.rows[i].plot_id]]
                    for i in labeled_idx], dtype=np.int64)

    medians = fit_impute_medians(X[labeled_idx])
    X_lab = apply_impute(X[labeled_idx], medians)
    ranking = train_forest(X_lab, y, state.schema, params)
    write_rows_csv(os.path.join(state.run_dir, "importance_full.csv"),
                   ["feature", "gini_importance"],
                   sorted(zip(ranking.schema, map(float, ranking.importance)),
                          key=lambda kv: (-kv[1], kv[0])))

    if cfg.selection == "none":
        state.selected = list(state.schema)
    elif cfg.selection == "importance":
        state.selected = sorted(top_k_features(ranking, cfg.top_k_features))
    elif cfg.selection.startswith("sequential:"):
        k = int(cfg.selection.split(":")[1])
        train_plots, val_plots = stratified_plot_split(
            {p: state.labels[p] for p in state.labels
             if state.labels[p] in LABEL_TO_CLASS}, 0.3, cfg.seed)
        tr = np.asarray([j for j, i in enumerate(labeled_idx)
                         if state.rows[i].plot_id in set(train_plots)])
        va = np.asarray([j for j, i in enumerate(labeled_idx)
                         if state.rows[i].plot_id in set(val_plots)])
        sel_params = ForestParams(25, params.max_features, params.min_leaf,
                                  None, params.seed)
        names, _ = sequential_select(X_lab, y, state.schema, k, [(tr, va)], sel_params)
        state.selected = sorted(names)
    else:
        raise ValueError(f"unknown selection mode {cfg.selection!r}")

    state.cv_result = loocv_plot(state.rows, state.labels, params,
                                 mode=cfg.cv_mode, schema=state.selected)
    rows_of: dict[str, list] = {}
    for r in state.rows:
        rows_of.setdefault(r.plot_id, []).append(r)
    cv_rows = []
    for plot_id in sorted(state.cv_result.pixel_scores):
        scores = state.cv_result.pixel_scores[plot_id]
        for row, score in zip(rows_of[plot_id], scores):
            cv_rows.append([plot_id, row.pixel_id, int(row.border), float(score)])
    write_rows_csv(os.path.join(state.run_dir, "cv_scores.csv"),
                   ["plot_id", "pixel_id", "border", "score"], cv_rows)

    sel_cols = [state.schema.index(n) for n in state.selected]
    medians_sel = medians[sel_cols]
    state.model = train_forest(apply_impute(X[labeled_idx][:, sel_cols], medians_sel),
                               y, state.selected, params)
    save_forest(os.path.join(state.run_dir, "model.txt"), state.model)
    write_rows_csv(os.path.join(state.run_dir, "importance.csv"),
                   ["feature", "gini_importance"],
                   sorted(zip(state.model.schema, map(float, state.model.importance)),
                          key=lambda kv: (-kv[1], kv[0])))

    # Plot-level scores: out-of-fold means for labeled plots, final-model
    # scores elsewhere; border pixels are excluded from the aggregation.
    border_by_plot: dict[str, list[bool]] = {}
    for r in state.rows:
        border_by_plot.setdefault(r.plot_id, []).append(r.border)
    state.plot_scores = {}
    state.manifest.setdefault("flagged_plots", [])
    all_scores = predict_scores(
        state.model, apply_impute(X[:, sel_cols], medians_sel))
    rows_by_plot: dict[str, list[int]] = {}
    for i, r in enumerate(state.rows):
        rows_by_plot.setdefault(r.plot_id, []).append(i)
    for plot in state.plots:
        pid = plot.plot_id
        if pid in state.cv_result.pixel_scores:
            scores = np.asarray(state.cv_result.pixel_scores[pid])
            border = np.asarray(border_by_plot[pid], dtype=bool)
        elif pid in rows_by_plot:
            idx = rows_by_plot[pid]
            scores = all_scores[idx]
            border = np.asarray([state.rows[i].border for i in idx], dtype=bool)
        else:
            state.manifest["flagged_plots"].append(pid)
            continue
        keep = scores[~border] if (~border).any() else scores
        state.plot_scores[pid] = aggregate_plot(keep)


def stage_threshold(state: RunState) -> None:
    labeled = [(state.plot_scores[p], LABEL_TO_CLASS[state.labels[p]])
               for p in sorted(state.plot_scores)
               if state.labels.get(p) in LABEL_TO_CLASS]
    state.choice_max = max_accuracy_threshold(labeled)
    state.choice_balanced = balanced_accuracy_threshold(labeled)
    for name, choice in (("max", state.choice_max), ("balanced", state.choice_balanced)):
        kappa = cohens_kappa(choice.counts)
        write_rows_csv(os.path.join(state.run_dir, f"confusion_{name}.csv"),
                       ["measure", "value"], _confusion_rows(choice, kappa))
    state.manifest["thresholds"] = {
        "max": {"score": state.choice_max.threshold,
                "percentile": state.choice_max.percentile},
        "balanced": {"score": state.choice_balanced.threshold,
                     "percentile": state.choice_balanced.percentile},
    }


def stage_report(state: RunState) -> None:
    state.predictions = make_predictions(state.plot_scores, state.choice_max,
                                         state.choice_balanced, state.labels,
                                         state.groups)
    write_rows_csv(os.path.join(state.run_dir, "predictions.csv"),
                   ["plot_id", "mean_score", "call_max", "call_balanced",
                    "label", "group"],
                   [[p.plot_id, p.mean_score, p.call_max, p.call_balanced,
                     p.label, p.group] for p in state.predictions])
    unlabeled = [p for p in state.predictions if p.label == "unlabeled"]
    subset = unlabeled if unlabeled else state.predictions
    tables = prediction_summary(subset)
    write_rows_csv(os.path.join(state.run_dir, "summary.csv"),
                   ["measure", "n", "mean", "sd", "max", "min"], tables["summary"])
    write_rows_csv(os.path.join(state.run_dir, "crosstab.csv"),
                   ["balanced_call", "max_call", "n_plots"],
                   [[b, m, tables["crosstab"][(b, m)]] for b in (0, 1) for m in (0, 1)])
    write_rows_csv(os.path.join(state.run_dir, "density.csv"),
                   ["policy", "call", "group", "bin_left", "bin_right",
                    "count", "density"], tables["density"])


STAGES = (("ingest", stage_ingest), ("gaps", stage_gaps),
          ("features", stage_features), ("separability", stage_separability),
          ("train", stage_train), ("threshold", stage_threshold),
          ("report", stage_report))


def run_pipeline(config: RunConfig) -> str:
    """Execute every stage into a fresh run directory; returns its path."""
    run_dir = allocate_run_dir(config)
    state = RunState(config, run_dir)
    state.manifest = {"config": config.to_jsonable(),
                      "config_hash": config.config_hash(),
                      "seed": config.seed, "stages": {}, "incomplete": True}
    try:
        for name, fn in STAGES:
            try:
                fn(state)
            except Exception as exc:
                state.manifest["stages"][name] = f"failed: {exc}"
                raise PipelineError(name, exc) from exc
            state.manifest["stages"][name] = "ok"
        state.manifest["incomplete"] = False
        state.manifest["artifacts"] = sorted(os.listdir(run_dir) + ["run_manifest.json"])
    finally:
        with open(os.path.join(run_dir, "run_manifest.json"), "w") as fh:
            json.dump(state.manifest, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")
    return run_dir


class AblationError(ValueError):
    pass


def _read_confusion(run_dir: str, policy: str) -> dict[str, float]:
    _, rows = read_rows_csv(os.path.join(run_dir, f"confusion_{policy}.csv"))
    return {name: float(value) for name, value in rows}


def compare_ablations(runs: dict[str, str]) -> list[list]:
    """Side-by-side accuracy table for completed runs over identical plots.

    runs maps labels (e.g. combined, A_only, B_only) to run directories.
    Raises AblationError when the runs cover different plot sets.
    """
    plot_sets = {}
    for label, run_dir in runs.items():
        _, rows = read_rows_csv(os.path.join(run_dir, "predictions.csv"))
        plot_sets[label] = {r[0] for r in rows}
    reference = next(iter(plot_sets.values()))
    for label, ids in plot_sets.items():
        if ids != reference:
            raise AblationError(f"run {label!r} covers a different plot set")
    table = []
    for label in sorted(runs):
        for policy in ("max", "balanced"):
            stats = _read_confusion(runs[label], policy)
            table.append([label, policy, stats["threshold"],
                          int(stats["false_burn"]), int(stats["false_no_burn"]),
                          int(stats["true_burn"]), int(stats["true_no_burn"]),
                          stats["no_burn_accuracy"], stats["burn_accuracy"],
                          stats["mean_accuracy"]])
    return table


ABLATION_HEADER = ["run", "policy", "threshold", "false_burn", "false_no_burn",
                   "true_burn", "true_no_burn", "no_burn_accuracy",
                   "burn_accuracy", "mean_accuracy"]
