"""Plot-holdout cross-validation and greedy forward feature selection.

Labels live at the plot level and pixels within a plot are strongly
correlated, so every fold holds out whole plots. A leakage guard re-derives
the training rows' plot ids per fold and refuses any overlap with the holdout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureRow, table_matrix, table_schema
from .forest import (ForestParams, apply_impute, fit_impute_medians,
                     predict_scores, train_forest)

LABEL_TO_CLASS = {"not_burned": 0, "burned": 1}

# True leave-one-plot-out up to this many plots; grouped folds beyond.
LOOCV_PLOT_LIMIT = 200
DEFAULT_GROUPS = 20


class LeakageError(AssertionError):
    """A fold's training set shares a plot with its holdout."""


@dataclass
class CvResult:
    pixel_scores: dict[str, np.ndarray] = field(default_factory=dict)
    plot_means: dict[str, float] = field(default_factory=dict)
    folds: list[tuple[tuple[str, ...], int]] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)


def check_fold_leakage(train_plot_ids, holdout_plot_ids) -> None:
    overlap = set(train_plot_ids) & set(holdout_plot_ids)
    if overlap:
        raise LeakageError(f"holdout plot(s) {sorted(overlap)} appear in training rows")


def grouped_plot_folds(plot_ids: list[str], n_groups: int, seed: int) -> list[tuple[str, ...]]:
    """Deterministic partition of plots into n_groups holdout groups."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order = list(np.asarray(sorted(plot_ids))[rng.permutation(len(plot_ids))])
    n_groups = min(n_groups, len(order))
    groups = [tuple(order[g::n_groups]) for g in range(n_groups)]
    return [g for g in groups if g]


def loocv_plot(rows: list[FeatureRow], labels: dict[str, str],
               params: ForestParams = ForestParams(), *,
               mode: str = "auto",
               folds: list[tuple[tuple[str, ...], np.ndarray]] | None = None,
               schema: list[str] | None = None) -> CvResult:
    """Out-of-fold pixel scores with whole plots held out.

    mode is "loocv", "grouped:<k>" or "auto" (leave-one-plot-out for small
    plot sets, grouped otherwise). Custom folds may be supplied as
    (holdout_plot_ids, train_row_indices) pairs; the leakage guard always
    re-checks the actual training rows. Imputation medians are fit on each
    fold's training rows only.
    """
    plot_rows: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        plot_rows.setdefault(row.plot_id, []).append(i)

    labeled_plots = sorted(p for p, lab in labels.items() if lab in LABEL_TO_CLASS)
    result = CvResult()
    usable = []
    for p in labeled_plots:
        if plot_rows.get(p):
            usable.append(p)
        else:
            result.excluded.append(p)
            warnings.warn(f"labeled plot {p} has no feature rows; excluded from CV")

    if schema is None:
        schema = table_schema(rows)
    X_all = table_matrix(rows, schema)
    classes = {p: LABEL_TO_CLASS[labels[p]] for p in usable}

    if folds is None:
        if mode == "auto":
            mode = "loocv" if len(usable) <= LOOCV_PLOT_LIMIT else f"grouped:{DEFAULT_GROUPS}"
        if mode == "loocv":
            holdout_groups = [(p,) for p in usable]
        elif mode.startswith("grouped:"):
            holdout_groups = grouped_plot_folds(usable, int(mode.split(":")[1]), params.seed)
        else:
            raise ValueError(f"unknown cv mode {mode!r}")
        folds = []
        for holdout in holdout_groups:
            hold = set(holdout)
            train_idx = np.asarray([i for p in usable if p not in hold
                                    for i in plot_rows[p]], dtype=np.int64)
            folds.append((holdout, train_idx))

    scored = set()
    for holdout, train_idx in folds:
        train_plot_ids = [rows[i].plot_id for i in train_idx]
        check_fold_leakage(train_plot_ids, holdout)
        y_train = np.asarray([classes[p] for p in train_plot_ids], dtype=np.int64)
        medians = fit_impute_medians(X_all[train_idx])
        X_train = apply_impute(X_all[train_idx], medians)
        model = train_forest(X_train, y_train, schema, params)
        for p in holdout:
            if p not in plot_rows or not plot_rows[p]:
                continue
            hold_idx = np.asarray(plot_rows[p], dtype=np.int64)
            X_hold = apply_impute(X_all[hold_idx], medians)
            scores = predict_scores(model, X_hold)
            result.pixel_scores[p] = scores
            result.plot_means[p] = float(scores.mean())
            scored.add(p)
        result.folds.append((tuple(holdout), int(train_idx.size)))

    missing = [p for p in usable if p not in scored]
    if missing:
        raise ValueError(f"plots never scored by any fold: {missing}")
    return result


def stratified_plot_split(labels: dict[str, str], test_fraction: float,
                          seed: int) -> tuple[list[str], list[str]]:
    """Single label-stratified split of labeled plots into (train, validation)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    train, test = [], []
    for cls in sorted(LABEL_TO_CLASS):
        plots = sorted(p for p, lab in labels.items() if lab == cls)
        plots = list(np.asarray(plots)[rng.permutation(len(plots))])
        n_test = max(1, int(round(test_fraction * len(plots)))) if plots else 0
        test.extend(plots[:n_test])
        train.extend(plots[n_test:])
    return sorted(train), sorted(test)


def sequential_select(X: np.ndarray, y: np.ndarray, names: list[str],
                      target_k: int,
                      folds: list[tuple[np.ndarray, np.ndarray]],
                      params: ForestParams = ForestParams(n_trees=25)):
    """Greedy forward selection maximizing cross-validated accuracy.

    folds are (train_idx, test_idx) row-index pairs, typically one stratified
    split; accuracy is row-level at the majority-vote cutoff. Returns the
    selected names in order plus the accuracy trajectory.
    """
    if target_k <= 0:
        raise ValueError("target_k must be positive")
    if target_k > len(names):
        raise ValueError("target_k exceeds the number of features")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)

    def cv_accuracy(cols: list[int]) -> float:
        accs = []
        for train_idx, test_idx in folds:
            sub = X[:, cols]
            medians = fit_impute_medians(sub[train_idx])
            model = train_forest(apply_impute(sub[train_idx], medians),
                                 y[train_idx], [names[c] for c in cols], params)
            scores = predict_scores(model, apply_impute(sub[test_idx], medians))
            accs.append(float(((scores > 0.5).astype(int) == y[test_idx]).mean()))
        return float(np.mean(accs))

    selected: list[int] = []
    trajectory: list[float] = []
    remaining = list(range(len(names)))
    while len(selected) < target_k:
        best_score, best_col = -1.0, None
        for col in remaining:
            score = cv_accuracy(selected + [col])
            if score > best_score + 1e-12:
                best_score, best_col = score, col
        selected.append(best_col)
        remaining.remove(best_col)
        trajectory.append(best_score)
    return [names[c] for c in selected], trajectory
