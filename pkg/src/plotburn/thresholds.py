"""Plot-level aggregation, threshold policies, kappa, and prediction summaries.

Plots score above a threshold are called burned. Candidate thresholds are the
empirical score percentiles 0..100 in half-percent steps; accuracy is
piecewise constant between observed scores, so the sweep works on ranks and
both policies are invariant under any strictly increasing rescoring.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

PERCENTILE_GRID = np.arange(0.0, 100.5, 0.5)


class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    false_burn: int      # called burned, labeled not burned
    false_no_burn: int   # called not burned, labeled burned
    true_burn: int
    true_no_burn: int

    @property
    def total(self) -> int:
        return self.false_burn + self.false_no_burn + self.true_burn + self.true_no_burn

    @property
    def burn_accuracy(self) -> float:
        n = self.true_burn + self.false_no_burn
        return self.true_burn / n if n else math.nan

    @property
    def no_burn_accuracy(self) -> float:
        n = self.true_no_burn + self.false_burn
        return self.true_no_burn / n if n else math.nan

    @property
    def mean_accuracy(self) -> float:
        return (self.true_burn + self.true_no_burn) / self.total


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float      # score units
    percentile: float     # grid position, recorded alongside the score value
    counts: ConfusionCounts


@dataclass
class PlotPrediction:
    plot_id: str
    mean_score: float
    call_max: int
    call_balanced: int
    label: str = "unlabeled"
    group: str = "none"


AGG_STATS = ("mean", "median", "p25", "p50", "p75", "p90")


def aggregate_plot(pixel_scores, stat: str = "mean") -> float:
    """Plot-level score, the arithmetic mean by default.

    The alternatives exist for diagnostics only; calls are always made from
    the mean. Empty input raises so callers can flag the plot as missing.
    """
    arr = np.asarray(pixel_scores, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        raise ThresholdError("no valid pixel scores to aggregate")
    if stat == "mean":
        return float(arr.mean())
    if stat == "median" or stat == "p50":
        return float(np.percentile(arr, 50))
    if stat in ("p25", "p75", "p90"):
        return float(np.percentile(arr, int(stat[1:])))
    raise ThresholdError(f"unknown aggregation statistic {stat!r}")


def _as_arrays(preds):
    scores = np.asarray([p[0] for p in preds], dtype=float)
    labels = np.asarray([p[1] for p in preds], dtype=np.int64)
    if scores.size == 0:
        raise ThresholdError("empty prediction set")
    if np.unique(labels).size < 2:
        raise ThresholdError("both labels must be present to choose a threshold")
    return scores, labels


def confusion_at(scores: np.ndarray, labels: np.ndarray, threshold: float) -> ConfusionCounts:
    called = scores > threshold
    return ConfusionCounts(
        false_burn=int((called & (labels == 0)).sum()),
        false_no_burn=int((~called & (labels == 1)).sum()),
        true_burn=int((called & (labels == 1)).sum()),
        true_no_burn=int((~called & (labels == 0)).sum()),
    )


def max_accuracy_threshold(preds) -> ThresholdChoice:
    """Threshold maximizing overall accuracy over the percentile grid.

    preds is a sequence of (mean_score, label) with label 1 = burned. Ties go
    to the lower threshold, which favors burn calls.
    """
    scores, labels = _as_arrays(preds)
    grid = np.percentile(scores, PERCENTILE_GRID)
    # The percentile grid cannot express "call everything" (score > t is
    # strict), so prepend a candidate strictly below the minimum.
    candidates = [(-1.0, float(scores.min()) - 1.0)]
    candidates += [(float(q), float(t)) for q, t in zip(PERCENTILE_GRID, grid)]
    best = None
    for q, t in candidates:
        counts = confusion_at(scores, labels, t)
        acc = counts.mean_accuracy
        if best is None or acc > best[0] + 1e-12:
            best = (acc, t, q, counts)
    return ThresholdChoice(best[1], best[2], best[3])


def balanced_accuracy_threshold(preds) -> ThresholdChoice:
    """Threshold where burn accuracy and no-burn accuracy cross.

    Both accuracy curves are sampled on the percentile grid and interpolated
    piecewise linearly in percentile space; the crossing percentile maps back
    to a score threshold. Among the crossing point and its bracketing grid
    points, the realized accuracy gap decides (the step curves can jump inside
    the bracket); without a crossing the gap-minimizing grid point is used
    with a warning.
    """
    scores, labels = _as_arrays(preds)
    grid = np.percentile(scores, PERCENTILE_GRID)
    diffs = []
    for t in grid:
        c = confusion_at(scores, labels, t)
        diffs.append(c.burn_accuracy - c.no_burn_accuracy)
    diffs = np.asarray(diffs)

    cross = None
    for k in range(len(grid)):
        if diffs[k] == 0.0:
            # Zero-gap run: take its midpoint in percentile space (the run
            # ends where the gap first goes negative, or at the grid end).
            end = k
            while end < len(grid) and diffs[end] == 0.0:
                end += 1
            q_hi = float(PERCENTILE_GRID[end]) if end < len(grid) else 100.0
            cross = ((float(PERCENTILE_GRID[k]) + q_hi) / 2.0,)
            break
        if k + 1 < len(grid) and diffs[k] > 0.0 and diffs[k + 1] < 0.0:
            frac = diffs[k] / (diffs[k] - diffs[k + 1])
            q_c = float(PERCENTILE_GRID[k] + frac * (PERCENTILE_GRID[k + 1] - PERCENTILE_GRID[k]))
            cross = (q_c, float(PERCENTILE_GRID[k]), float(PERCENTILE_GRID[k + 1]))
            break
    if cross is None:
        warnings.warn("accuracy curves never cross; falling back to the "
                      "gap-minimizing grid threshold")
        k = int(np.argmin(np.abs(diffs)))
        cross = (float(PERCENTILE_GRID[k]),)

    best = None
    for rank, q in enumerate(cross):
        t = float(np.percentile(scores, q))
        c = confusion_at(scores, labels, t)
        gap = abs(c.burn_accuracy - c.no_burn_accuracy)
        key = (gap, rank, q)
        if best is None or key < best[0]:
            best = (key, t, q, c)
    return ThresholdChoice(best[1], best[2], best[3])


def cohens_kappa(counts: ConfusionCounts) -> float:
    """Agreement beyond chance from the confusion marginals."""
    n = counts.total
    if n == 0:
        raise ThresholdError("empty confusion counts")
    p_o = counts.mean_accuracy
    pred_burn = (counts.true_burn + counts.false_burn) / n
    label_burn = (counts.true_burn + counts.false_no_burn) / n
    p_e = pred_burn * label_burn + (1 - pred_burn) * (1 - label_burn)
    if p_e == 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def make_predictions(plot_means: dict[str, float], choice_max: ThresholdChoice,
                     choice_balanced: ThresholdChoice,
                     labels: dict[str, str] | None = None,
                     groups: dict[str, str] | None = None) -> list[PlotPrediction]:
    labels = labels or {}
    groups = groups or {}
    preds = []
    for plot_id in sorted(plot_means):
        score = plot_means[plot_id]
        preds.append(PlotPrediction(
            plot_id, score,
            int(score > choice_max.threshold),
            int(score > choice_balanced.threshold),
            labels.get(plot_id, "unlabeled"),
            groups.get(plot_id, "none")))
    return preds


def _summary_row(values: np.ndarray):
    if values.size == 0:
        return [0, math.nan, math.nan, math.nan, math.nan]
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return [int(values.size), float(values.mean()), sd,
            float(values.max()), float(values.min())]


def prediction_summary(preds: list[PlotPrediction], n_bins: int = 40):
    """Summary tables: per-measure statistics, policy cross-tab, score densities.

    Returns a dict with "summary" rows (measure, n, mean, sd, max, min),
    "crosstab" counts over (balanced call, max call), and "density" histogram
    rows (policy, call, group, bin_left, bin_right, count, density) of the
    continuous scores.
    """
    call_max = np.asarray([p.call_max for p in preds], dtype=float)
    call_bal = np.asarray([p.call_balanced for p in preds], dtype=float)
    cont = np.asarray([p.mean_score for p in preds], dtype=float)
    summary = [
        ["max_accuracy", *_summary_row(call_max)],
        ["balanced_accuracy", *_summary_row(call_bal)],
        ["continuous", *_summary_row(cont)],
    ]
    crosstab = {(b, m): 0 for b in (0, 1) for m in (0, 1)}
    for p in preds:
        crosstab[(p.call_balanced, p.call_max)] += 1

    edges = np.linspace(0.0, 1.0, n_bins + 1)
    density = []
    for policy, calls in (("max_accuracy", call_max), ("balanced_accuracy", call_bal)):
        for call in (0, 1):
            group_names = sorted({p.group for p in preds})
            for group in group_names:
                sel = np.asarray([p.mean_score for p, c in zip(preds, calls)
                                  if int(c) == call and p.group == group])
                if sel.size == 0:
                    continue
                hist, _ = np.histogram(sel, bins=edges)
                dens = hist / (sel.size * (edges[1] - edges[0]))
                for b in range(n_bins):
                    if hist[b]:
                        density.append([policy, call, group,
                                        float(edges[b]), float(edges[b + 1]),
                                        int(hist[b]), float(dens[b])])
    return {"summary": summary, "crosstab": crosstab, "density": density}
