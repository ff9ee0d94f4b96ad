import json
import os
import subprocess
import sys

import pytest

from plotburn.cli import main
from plotburn.gridio import read_rows_csv

SCENARIO_DOC = {"n_plots": 12, "plot_area_mean_ha": 0.02,
                "plot_area_median_ha": 0.018, "seed": 5,
                "burn_probability": 0.5}


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = tmp / "scenario.json"
    cfg.write_text(json.dumps(SCENARIO_DOC))
    out = tmp / "scene"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestStageCommands:
    def test_ingest_writes_gap_report(self, scene_dir, tmp_path):
        rc = main(["ingest", "--manifest", str(scene_dir / "scene_manifest.json"),
                   "--plots", str(scene_dir / "plots.csv"), "--out", str(tmp_path)])
        assert rc == 0
        header, rows = read_rows_csv(tmp_path / "gaps.csv")
        assert header == ["plot_id", "sensor", "n_obs", "mean_gap", "max_gap"]
        assert any(r[0].startswith("summary_") for r in rows)

    def test_feature_and_model_chain(self, scene_dir, tmp_path):
        features = tmp_path / "features.csv"
        rc = main(["features", "--manifest", str(scene_dir / "scene_manifest.json"),
                   "--plots", str(scene_dir / "plots.csv"),
                   "--endmembers", str(scene_dir / "endmembers.csv"),
                   "--out", str(features)])
        assert rc == 0 and features.exists()

        train_out = tmp_path / "model"
        rc = main(["train", "--features", str(features),
                   "--plots", str(scene_dir / "plots.csv"),
                   "--n-trees", "15", "--cv-mode", "grouped:4",
                   "--out", str(train_out)])
        assert rc == 0
        assert (train_out / "model.txt").exists()
        assert (train_out / "importance.csv").exists()

        thr_out = tmp_path / "thr"
        rc = main(["threshold", "--scores", str(train_out / "scores.csv"),
                   "--out", str(thr_out)])
        assert rc == 0
        assert (thr_out / "confusion_max.csv").exists()
        assert (thr_out / "confusion_balanced.csv").exists()

        rep_out = tmp_path / "rep"
        rc = main(["report", "--predictions", str(thr_out / "predictions.csv"),
                   "--out", str(rep_out)])
        assert rc == 0
        for name in ("summary.csv", "crosstab.csv", "density.csv"):
            assert (rep_out / name).exists()

    def test_separability_command(self, scene_dir, tmp_path):
        out = tmp_path / "curve.csv"
        rc = main(["separability",
                   "--manifest", str(scene_dir / "scene_manifest.json"),
                   "--plots", str(scene_dir / "plots.csv"),
                   "--events", str(scene_dir / "events.csv"),
                   "--source", "A_CI", "--max-offset", "4", "--out", str(out)])
        assert rc == 0
        header, rows = read_rows_csv(out)
        assert header == ["index", "offset_days", "m_value", "n_burn", "n_unburn"]
        assert len(rows) == 5


class TestRunCommand:
    def test_full_run_from_config_file(self, tmp_path):
        cfg = {"scenario": SCENARIO_DOC, "n_trees": 15, "cv_mode": "grouped:4",
               "min_leaf": 2, "name": "clitest"}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["run", "--config", str(cfg_path), "--out-root", str(tmp_path)])
        assert rc == 0
        run_dirs = [d for d in os.listdir(tmp_path) if d.startswith("clitest-")]
        assert len(run_dirs) == 1
        assert (tmp_path / run_dirs[0] / "predictions.csv").exists()

    def test_ablate_against_self(self, tmp_path):
        cfg = {"scenario": SCENARIO_DOC, "n_trees": 10, "cv_mode": "grouped:4",
               "min_leaf": 2, "name": "ab"}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(cfg_path),
                     "--out-root", str(tmp_path)]) == 0
        run_dir = next(tmp_path / d for d in os.listdir(tmp_path)
                       if d.startswith("ab-"))
        out = tmp_path / "ablation.csv"
        rc = main(["ablate", "--run", f"one={run_dir}", "--run", f"two={run_dir}",
                   "--out", str(out)])
        assert rc == 0
        _, rows = read_rows_csv(out)
        assert len(rows) == 4

    def test_missing_input_gives_nonzero_exit(self, tmp_path):
        rc = main(["ingest", "--manifest", str(tmp_path / "nope.json"),
                   "--plots", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert rc == 1

    def test_stage_failure_gives_nonzero_exit(self, tmp_path):
        cfg = {"scenario": SCENARIO_DOC, "selection": "bogus", "n_trees": 5,
               "cv_mode": "grouped:3", "min_leaf": 2}
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["run", "--config", str(cfg_path), "--out-root", str(tmp_path)])
        assert rc == 1


class TestEntryPoint:
    def test_module_invocation_exit_codes(self, tmp_path):
        env = dict(os.environ, PLOTBURN_OUT=str(tmp_path))
        proc = subprocess.run(
            [sys.executable, "-m", "plotburn.cli", "ingest", "--manifest",
             "missing.json", "--plots", "missing.csv", "--out", str(tmp_path)],
            capture_output=True, text=True, env=env)
        assert proc.returncode == 1
        assert "error" in proc.stderr.lower()
        proc = subprocess.run([sys.executable, "-m", "plotburn.cli", "--help"],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        for sub in ("synth", "ingest", "features", "separability", "train",
                    "threshold", "report", "run", "ablate"):
            assert sub in proc.stdout
