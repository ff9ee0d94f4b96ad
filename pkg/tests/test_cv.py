import numpy as np
import pytest

from plotburn.cv import (LeakageError, check_fold_leakage, grouped_plot_folds,
                         loocv_plot, sequential_select, stratified_plot_split)
from plotburn.features import FeatureRow
from plotburn.forest import ForestParams


def toy_rows(n_plots=10, px_per_plot=6, n_features=4, signal=3.0, seed=0):
    """Plot-structured rows where feature s0 carries the class signal."""
    rng = np.random.default_rng(seed)
    rows, labels = [], {}
    for p in range(n_plots):
        plot_id = f"plot{p:03d}"
        cls = p % 2
        labels[plot_id] = "burned" if cls else "not_burned"
        level = cls * signal + rng.normal(0, 0.3)
        for px in range(px_per_plot):
            features = {"s0": level + rng.normal(0, 0.5)}
            for f in range(1, n_features):
                features[f"s{f}"] = rng.normal(0, 1)
            rows.append(FeatureRow(plot_id, f"{plot_id}_{px}", px == 0,
                                   features, 5, 3))
    return rows, labels


PARAMS = ForestParams(n_trees=20, min_leaf=2, seed=0)


class TestLoocv:
    def test_every_labeled_plot_held_out_once(self):
        rows, labels = toy_rows(n_plots=10)
        result = loocv_plot(rows, labels, PARAMS, mode="loocv")
        assert len(result.folds) == 10
        held = [p for holdout, _ in result.folds for p in holdout]
        assert sorted(held) == sorted(labels)
        assert sorted(result.plot_means) == sorted(labels)

    def test_scores_recover_plot_labels(self):
        rows, labels = toy_rows(n_plots=12, signal=6.0)
        result = loocv_plot(rows, labels, PARAMS, mode="loocv")
        for plot_id, mean in result.plot_means.items():
            if labels[plot_id] == "burned":
                assert mean > 0.5
            else:
                assert mean < 0.5

    def test_grouped_five_fold_scores_each_plot_once(self):
        rows, labels = toy_rows(n_plots=10)
        result = loocv_plot(rows, labels, PARAMS, mode="grouped:5")
        assert len(result.folds) == 5
        held = [p for holdout, _ in result.folds for p in holdout]
        assert sorted(held) == sorted(labels)

    def test_leakage_probe_trips_assertion(self):
        rows, labels = toy_rows(n_plots=10)
        plot_rows = {}
        for i, r in enumerate(rows):
            plot_rows.setdefault(r.plot_id, []).append(i)
        plots = sorted(labels)
        holdout = plots[0]
        train_idx = [i for p in plots[1:] for i in plot_rows[p]]
        # Duplicate one holdout pixel into training with a flipped label.
        leaked = FeatureRow(holdout, "leaked_px", False,
                            dict(rows[plot_rows[holdout][0]].features), 5, 3)
        bad_rows = rows + [leaked]
        bad_train = train_idx + [len(bad_rows) - 1]
        folds = [((holdout,), np.asarray(bad_train))]
        with pytest.raises(LeakageError):
            loocv_plot(bad_rows, labels, PARAMS, folds=folds)

    def test_fold_guard_direct(self):
        with pytest.raises(LeakageError):
            check_fold_leakage(["a", "b", "c"], ["c"])
        check_fold_leakage(["a", "b"], ["c"])

    def test_plot_without_rows_excluded_with_warning(self):
        rows, labels = toy_rows(n_plots=6)
        labels["ghost"] = "burned"
        with pytest.warns(UserWarning, match="ghost"):
            result = loocv_plot(rows, labels, PARAMS, mode="loocv")
        assert "ghost" in result.excluded
        assert "ghost" not in result.plot_means

    def test_auto_mode_uses_loocv_for_small_sets(self):
        rows, labels = toy_rows(n_plots=8)
        result = loocv_plot(rows, labels, PARAMS, mode="auto")
        assert len(result.folds) == 8


class TestGroupedFolds:
    def test_partition_properties(self):
        plots = [f"p{i}" for i in range(17)]
        folds = grouped_plot_folds(plots, 5, seed=3)
        assert len(folds) == 5
        flat = [p for fold in folds for p in fold]
        assert sorted(flat) == sorted(plots)

    def test_more_groups_than_plots(self):
        folds = grouped_plot_folds(["a", "b"], 10, seed=0)
        assert len(folds) == 2


class TestStratifiedSplit:
    def test_both_labels_in_both_sides(self):
        labels = {f"b{i}": "burned" for i in range(10)}
        labels.update({f"n{i}": "not_burned" for i in range(6)})
        train, test = stratified_plot_split(labels, 0.3, seed=1)
        assert set(train) | set(test) == set(labels)
        assert not set(train) & set(test)
        for side in (train, test):
            got = {labels[p] for p in side}
            assert got == {"burned", "not_burned"}


class TestSequentialSelect:
    def _data(self, n=120, n_features=5, seed=4, duplicate=False):
        rng = np.random.default_rng(seed)
        y = (rng.random(n) < 0.5).astype(np.int64)
        X = rng.normal(0, 1, size=(n, n_features))
        X[:, 2] = y * 4.0 + rng.normal(0, 1, n)  # only s2 is informative
        if duplicate:
            X = np.column_stack([X, X[:, 2]])
        names = [f"s{i}" for i in range(X.shape[1])]
        split = int(0.7 * n)
        folds = [(np.arange(split), np.arange(split, n))]
        return X, y, names, folds

    def test_informative_feature_selected_first(self):
        X, y, names, folds = self._data()
        selected, trajectory = sequential_select(X, y, names, 3, folds,
                                                 ForestParams(15, min_leaf=2, seed=0))
        assert selected[0] == "s2"
        assert trajectory[0] > 0.9

    def test_target_k_all_features_has_flat_tail(self):
        X, y, names, folds = self._data()
        selected, trajectory = sequential_select(X, y, names, len(names), folds,
                                                 ForestParams(15, min_leaf=2, seed=0))
        assert sorted(selected) == sorted(names)
        assert max(trajectory) >= trajectory[0] - 1e-9
        assert trajectory[-1] >= trajectory[0] - 0.08

    def test_duplicated_feature_adds_nothing(self):
        X, y, names, folds = self._data(duplicate=True)
        selected, trajectory = sequential_select(X, y, names, 3, folds,
                                                 ForestParams(15, min_leaf=2, seed=0))
        first_pos = selected.index("s2") if "s2" in selected else 99
        dup_pos = selected.index("s5") if "s5" in selected else 99
        assert min(first_pos, dup_pos) == 0
        if max(first_pos, dup_pos) < 3:
            k = max(first_pos, dup_pos)
            assert abs(trajectory[k] - trajectory[k - 1]) <= 0.05

    def test_bad_target_k(self):
        X, y, names, folds = self._data()
        with pytest.raises(ValueError):
            sequential_select(X, y, names, 0, folds)
        with pytest.raises(ValueError):
            sequential_select(X, y, names, 99, folds)
