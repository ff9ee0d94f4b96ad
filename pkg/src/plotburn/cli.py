"""Command-line driver for the burn-detection pipeline.

Subcommands mirror the pipeline stages so each step can run on its own
artifacts; `run` executes everything into a fresh run directory. A JSON config
file supplies RunConfig fields, individual flags override it, and the
PLOTBURN_OUT environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import features as feats
from . import pipeline as pipe
from . import synth as synthmod
from .cv import LABEL_TO_CLASS, loocv_plot
from .forest import apply_impute, fit_impute_medians, save_forest, top_k_features, train_forest
from .gridio import (read_endmembers_csv, read_events_csv, read_plots_csv,
                     read_rows_csv, read_scene_manifest, write_rows_csv)
from .scene import gap_statistics
from .separability import CURVE_CSV_HEADER, separability_curve
from .thresholds import (aggregate_plot, balanced_accuracy_threshold, cohens_kappa,
                         make_predictions, max_accuracy_threshold, prediction_summary)

DEFAULT_OUT = os.environ.get("PLOTBURN_OUT", "runs")


def _load_run_config(args) -> pipe.RunConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    doc.setdefault("out_root", DEFAULT_OUT)
    for key in ("out_root", "name", "sensor_mode", "cv_mode", "selection",
                "manifest_path", "plots_path", "events_path", "endmembers_path"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    for key in ("seed", "n_trees", "top_k_features", "min_leaf"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "synth", False) and not doc.get("scenario"):
        doc["scenario"] = {}
    if getattr(args, "no_border", False):
        doc["include_border"] = False
    return pipe.config_from_dict(doc)


def _scenario_from_args(args) -> synthmod.ScenarioConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        doc = loaded.get("scenario", loaded)
    cfg = pipe.config_from_dict({"out_root": ".", "scenario": doc}).scenario
    overrides = {}
    if args.n_plots is not None:
        overrides["n_plots"] = args.n_plots
    if args.seed is not None:
        overrides["seed"] = args.seed
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_synth(args) -> int:
    cfg = _scenario_from_args(args)
    scenario = synthmod.generate(cfg)
    paths = synthmod.write_scenario(args.out, scenario)
    print(f"wrote scenario ({cfg.n_plots} plots) under {args.out}")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 0


def _load_cubes_and_plots(args):
    cubes = read_scene_manifest(args.manifest)
    geoms = {c.geom for c in cubes.values()}
    finest = min(geoms, key=lambda g: g.cellsize)
    if len(geoms) > 1:
        cubes = read_scene_manifest(args.manifest, target_geom=finest)
    plots = read_plots_csv(args.plots, finest)
    return cubes, plots


def cmd_ingest(args) -> int:
    cubes, plots = _load_cubes_and_plots(args)
    report = gap_statistics(cubes, plots)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for plot_id in sorted(report.per_plot):
        for sensor in sorted(cubes):
            entry = report.per_plot[plot_id].get(sensor)
            rows.append([plot_id, sensor, *(entry if entry else (0, None, None))])
    for sensor in sorted(report.summary):
        for key, value in report.summary[sensor].items():
            rows.append([f"summary_{key}", sensor, "", value, ""])
    path = os.path.join(args.out, "gaps.csv")
    write_rows_csv(path, ["plot_id", "sensor", "n_obs", "mean_gap", "max_gap"], rows)
    n_obs = {s: len(c.observations) for s, c in cubes.items()}
    print(f"ingested {len(plots)} plots; observations per sensor: {n_obs}")
    print(f"gap report: {path}")
    return 0


def cmd_features(args) -> int:
    from .indices import ALL_INDICES

    cubes, plots = _load_cubes_and_plots(args)
    if args.sensor_mode == "A_only":
        cubes.pop("B", None)
    elif args.sensor_mode == "B_only":
        cubes.pop("A", None)
    endmembers = (read_endmembers_csv(args.endmembers) if args.endmembers
                  else synthmod.default_endmembers())
    rows = feats.build_feature_table(cubes.get("A"), cubes.get("B"), plots,
                                     list(ALL_INDICES),
                                     include_border=not args.no_border,
                                     endmembers=endmembers)
    feats.write_feature_csv(args.out, rows)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return 0


def cmd_separability(args) -> int:
    cubes, plots = _load_cubes_and_plots(args)
    events = read_events_csv(args.events)
    by_id = {p.plot_id: p for p in plots}
    burn_events = [(by_id[pid], date) for pid, kind, date in events
                   if kind == "burn" and pid in by_id]
    endmembers = (read_endmembers_csv(args.endmembers) if args.endmembers
                  else synthmod.default_endmembers())
    sensor, source = args.source.split("_", 1)
    curve = separability_curve(burn_events, cubes[sensor], source,
                               args.max_offset, endmembers=endmembers)
    write_rows_csv(args.out, CURVE_CSV_HEADER,
                   [[args.source, *row[1:]] for row in curve.rows()])
    print(f"wrote separability curve for {args.source} to {args.out}")
    return 0


def cmd_train(args) -> int:
    rows = feats.read_feature_csv(args.features)
    plots_header, plot_rows = read_rows_csv(args.plots)
    cols = {name: i for i, name in enumerate(plots_header)}
    labels = {r[cols["plot_id"]]: r[cols["label"]] for r in plot_rows}
    groups = {r[cols["plot_id"]]: r[cols["group"]] for r in plot_rows}

    schema = feats.table_schema(rows)
    X = feats.table_matrix(rows, schema)
    labeled_idx = np.asarray([i for i, r in enumerate(rows)
                              if labels.get(r.plot_id) in LABEL_TO_CLASS])
    y = np.asarray([LABEL_TO_CLASS[labels[rows[i].plot_id]] for i in labeled_idx])
    from .forest import ForestParams

    params = ForestParams(n_trees=args.n_trees, seed=args.seed)
    medians = fit_impute_medians(X[labeled_idx])
    ranking = train_forest(apply_impute(X[labeled_idx], medians), y, schema, params)
    selected = sorted(top_k_features(ranking, args.top_k_features))
    cv = loocv_plot(rows, labels, params, mode=args.cv_mode, schema=selected)

    os.makedirs(args.out, exist_ok=True)
    sel_cols = [schema.index(n) for n in selected]
    model = train_forest(apply_impute(X[labeled_idx][:, sel_cols], medians[sel_cols]),
                         y, selected, params)
    save_forest(os.path.join(args.out, "model.txt"), model)
    write_rows_csv(os.path.join(args.out, "importance.csv"),
                   ["feature", "gini_importance"],
                   sorted(zip(model.schema, map(float, model.importance)),
                          key=lambda kv: (-kv[1], kv[0])))

    from .forest import predict_scores

    all_scores = predict_scores(model, apply_impute(X[:, sel_cols], medians[sel_cols]))
    rows_by_plot = {}
    for i, r in enumerate(rows):
        rows_by_plot.setdefault(r.plot_id, []).append(i)
    score_rows = []
    for plot_id in sorted(rows_by_plot):
        idx = rows_by_plot[plot_id]
        border = np.asarray([rows[i].border for i in idx], dtype=bool)
        if plot_id in cv.pixel_scores:
            scores = np.asarray(cv.pixel_scores[plot_id])
        else:
            scores = all_scores[idx]
        keep = scores[~border] if (~border).any() else scores
        score_rows.append([plot_id, aggregate_plot(keep),
                           labels.get(plot_id, "unlabeled"),
                           groups.get(plot_id, "none")])
    write_rows_csv(os.path.join(args.out, "scores.csv"),
                   ["plot_id", "mean_score", "label", "group"], score_rows)
    print(f"trained on {labeled_idx.size} rows from "
          f"{len(cv.pixel_scores)} labeled plots; artifacts in {args.out}")
    return 0


def cmd_threshold(args) -> int:
    _, rows = read_rows_csv(args.scores)
    scores = {r[0]: float(r[1]) for r in rows}
    labels = {r[0]: r[2] for r in rows}
    groups = {r[0]: r[3] for r in rows}
    labeled = [(scores[p], LABEL_TO_CLASS[labels[p]])
               for p in sorted(scores) if labels[p] in LABEL_TO_CLASS]
    choice_max = max_accuracy_threshold(labeled)
    choice_bal = balanced_accuracy_threshold(labeled)
    os.makedirs(args.out, exist_ok=True)
    for name, choice in (("max", choice_max), ("balanced", choice_bal)):
        write_rows_csv(os.path.join(args.out, f"confusion_{name}.csv"),
                       ["measure", "value"],
                       pipe._confusion_rows(choice, cohens_kappa(choice.counts)))
    preds = make_predictions(scores, choice_max, choice_bal, labels, groups)
    write_rows_csv(os.path.join(args.out, "predictions.csv"),
                   ["plot_id", "mean_score", "call_max", "call_balanced",
                    "label", "group"],
                   [[p.plot_id, p.mean_score, p.call_max, p.call_balanced,
                     p.label, p.group] for p in preds])
    print(f"thresholds: max={choice_max.threshold!r} "
          f"(percentile {choice_max.percentile}), "
          f"balanced={choice_bal.threshold!r} "
          f"(percentile {choice_bal.percentile}); artifacts in {args.out}")
    return 0


def cmd_report(args) -> int:
    from .thresholds import PlotPrediction

    _, rows = read_rows_csv(args.predictions)
    preds = [PlotPrediction(r[0], float(r[1]), int(r[2]), int(r[3]), r[4], r[5])
             for r in rows]
    unlabeled = [p for p in preds if p.label == "unlabeled"]
    tables = prediction_summary(unlabeled if unlabeled else preds)
    os.makedirs(args.out, exist_ok=True)
    write_rows_csv(os.path.join(args.out, "summary.csv"),
                   ["measure", "n", "mean", "sd", "max", "min"], tables["summary"])
    write_rows_csv(os.path.join(args.out, "crosstab.csv"),
                   ["balanced_call", "max_call", "n_plots"],
                   [[b, m, tables["crosstab"][(b, m)]] for b in (0, 1) for m in (0, 1)])
    write_rows_csv(os.path.join(args.out, "density.csv"),
                   ["policy", "call", "group", "bin_left", "bin_right",
                    "count", "density"], tables["density"])
    print(f"report tables in {args.out}")
    return 0


def cmd_run(args) -> int:
    config = _load_run_config(args)
    run_dir = pipe.run_pipeline(config)
    print(f"run complete: {run_dir}")
    return 0


def cmd_ablate(args) -> int:
    runs = {}
    for spec in args.run:
        label, _, path = spec.partition("=")
        if not path:
            raise SystemExit(f"--run expects label=dir, got {spec!r}")
        runs[label] = path
    table = pipe.compare_ablations(runs)
    write_rows_csv(args.out, pipe.ABLATION_HEADER, table)
    print(f"ablation comparison in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plotburn",
                                 description="Plot-level burn detection pipeline")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario to files")
    p.add_argument("--config", help="JSON file with scenario fields")
    p.add_argument("--n-plots", type=int, dest="n_plots")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="validate inputs and emit the gap report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plots", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("features", help="build the pixel feature table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plots", required=True)
    p.add_argument("--endmembers")
    p.add_argument("--sensor-mode", default="combined", choices=pipe.SENSOR_MODES,
                   dest="sensor_mode")
    p.add_argument("--no-border", action="store_true", dest="no_border")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("separability", help="emit an M-value decay curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plots", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--endmembers")
    p.add_argument("--source", default="A_CI",
                   help="sensor_source, e.g. A_CI or B_MIRBI")
    p.add_argument("--max-offset", type=int, default=8, dest="max_offset")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_separability)

    p = sub.add_parser("train", help="train the forest with plot-holdout CV")
    p.add_argument("--features", required=True)
    p.add_argument("--plots", required=True)
    p.add_argument("--n-trees", type=int, default=300, dest="n_trees")
    p.add_argument("--top-k-features", type=int, default=50, dest="top_k_features")
    p.add_argument("--cv-mode", default="auto", dest="cv_mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("threshold", help="select thresholds and emit predictions")
    p.add_argument("--scores", required=True,
                   help="CSV of plot_id, mean_score, label, group")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_threshold)

    p = sub.add_parser("report", help="summaries, cross-tab and score densities")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run", help="full pipeline into a fresh run directory")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--synth", action="store_true",
                   help="use the default synthetic scenario as input")
    p.add_argument("--out-root", dest="out_root")
    p.add_argument("--name")
    p.add_argument("--manifest", dest="manifest_path")
    p.add_argument("--plots", dest="plots_path")
    p.add_argument("--events", dest="events_path")
    p.add_argument("--endmembers", dest="endmembers_path")
    p.add_argument("--sensor-mode", choices=pipe.SENSOR_MODES, dest="sensor_mode")
    p.add_argument("--cv-mode", dest="cv_mode")
    p.add_argument("--selection")
    p.add_argument("--no-border", action="store_true", dest="no_border")
    p.add_argument("--n-trees", type=int, dest="n_trees")
    p.add_argument("--top-k-features", type=int, dest="top_k_features")
    p.add_argument("--min-leaf", type=int, dest="min_leaf")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ablate", help="compare completed runs side by side")
    p.add_argument("--run", action="append", required=True,
                   help="label=run_dir; repeat for each run")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except pipe.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
