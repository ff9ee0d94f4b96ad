import dataclasses
import datetime as dt

import numpy as np
import pytest

from plotburn.scene import gap_statistics
from plotburn.separability import plot_source_series
from plotburn.synth import (ScenarioConfig, generate, inject_gaps,
                            post_burn_gap_schedule)

SMALL = ScenarioConfig(n_plots=30, plot_area_mean_ha=0.05,
                       plot_area_median_ha=0.04, seed=1)


@pytest.fixture(scope="module")
def small_scenario():
    return generate(SMALL)


class TestGenerate:
    def test_same_seed_bit_identical(self):
        a = generate(dataclasses.replace(SMALL, n_plots=8))
        b = generate(dataclasses.replace(SMALL, n_plots=8))
        assert a.truth.burn_date == b.truth.burn_date
        assert a.truth.valid_obs == b.truth.valid_obs
        for oa, ob in zip(a.cube_a.observations, b.cube_a.observations):
            assert oa.date == ob.date
            assert np.array_equal(oa.valid, ob.valid)
            for band in oa.bands:
                assert np.array_equal(oa.bands[band], ob.bands[band],
                                      equal_nan=True)

    def test_reflectance_bounds_and_mask_fill(self, small_scenario):
        for cube in (small_scenario.cube_a, small_scenario.cube_b):
            for obs in cube.observations:
                for grid in obs.bands.values():
                    valid_vals = grid[obs.valid]
                    assert np.isfinite(valid_vals).all()
                    assert valid_vals.min() >= 0.0 and valid_vals.max() <= 1.0
                    assert np.isnan(grid[~obs.valid]).all()

    def test_zero_burn_probability(self):
        scenario = generate(dataclasses.replace(SMALL, burn_probability=0.0))
        assert not any(scenario.truth.burned.values())
        assert all(d is None for d in scenario.truth.burn_date.values())
        assert all(p.label == "not_burned" for p in scenario.plots)

    def test_certain_burns_observed_within_a_day(self):
        cfg = dataclasses.replace(SMALL, burn_probability=1.0, revisit_a=1.0,
                                  cloud_dropout_a=0.0, cloud_dropout_b=0.0,
                                  n_cloud_events=0, char_half_life_vis=5.0)
        scenario = generate(cfg)
        for plot_id, burn_date in scenario.truth.burn_date.items():
            dates = scenario.truth.valid_obs["A"][plot_id]
            assert any(0 <= (d - burn_date).days <= 1 for d in dates)

    def test_till_after_burn_ordering(self, small_scenario):
        truth = small_scenario.truth
        for plot_id, burned in truth.burned.items():
            if burned:
                assert truth.till_date[plot_id] >= truth.burn_date[plot_id]
                assert (SMALL.burn_window_start <= truth.burn_date[plot_id]
                        <= SMALL.burn_window_end)

    def test_signal_levels_configurable(self):
        from plotburn.synth import PRE_LEVELS

        custom = dict(PRE_LEVELS, NIR=0.55)
        cfg = dataclasses.replace(SMALL, n_plots=4, burn_probability=0.0,
                                  noise_sd_a=0.0, plot_jitter_common_sd=0.0,
                                  plot_jitter_band_sd=0.0, pre_levels=custom)
        scenario = generate(cfg)
        plot = scenario.plots[0]
        till = scenario.truth.till_date[plot.plot_id]
        for obs in scenario.cube_a.observations:
            if obs.date < till and obs.valid[plot.rows, plot.cols].all():
                assert obs.bands["NIR"][plot.rows, plot.cols].max() == \
                    pytest.approx(0.55, abs=1e-6)
                break
        else:
            pytest.skip("no clear pre-till observation in this draw")

    def test_plot_geometry_disjoint(self, small_scenario):
        seen = set()
        for plot in small_scenario.plots:
            cells = set(zip(plot.rows.tolist(), plot.cols.tolist()))
            assert not cells & seen
            seen |= cells


class TestGapTruth:
    def test_gap_statistics_matches_truth_exactly(self, small_scenario):
        cubes = {"A": small_scenario.cube_a, "B": small_scenario.cube_b}
        report = gap_statistics(cubes, small_scenario.plots)
        table = small_scenario.truth.gap_table()
        for plot in small_scenario.plots:
            for sensor in ("A", "B"):
                got = report.per_plot[plot.plot_id].get(sensor)
                want = table.get(plot.plot_id, {}).get(sensor)
                assert got == want

    def test_default_cloud_model_hits_gap_targets(self):
        scenario = generate(dataclasses.replace(SMALL, n_plots=40, seed=0))
        table = scenario.truth.gap_table()
        targets = {"A": (2.2, 8.4), "B": (6.8, 12.2)}
        for sensor, (t_mean, t_max) in targets.items():
            means = [v[sensor][1] for v in table.values() if sensor in v]
            maxes = [v[sensor][2] for v in table.values() if sensor in v]
            assert abs(np.mean(means) / t_mean - 1) < 0.15
            assert abs(np.mean(maxes) / t_max - 1) < 0.15


class TestSignalModel:
    def test_char_excursion_decays_to_till_levels(self):
        # Well past five infrared half-lives the burned and tilled-unburned
        # NIR distributions must be indistinguishable. Needs enough plots for
        # the group means to beat per-plot brightness jitter.
        scenario = generate(dataclasses.replace(SMALL, n_plots=200))
        truth = scenario.truth
        late_b, late_u = [], []
        for plot in scenario.plots:
            event = (truth.burn_date[plot.plot_id] if truth.burned[plot.plot_id]
                     else truth.till_date[plot.plot_id])
            dates, values = plot_source_series(scenario.cube_a, plot, "NIR")
            for d, v in zip(dates, values):
                if np.isfinite(v) and (d - event).days > 16:
                    (late_b if truth.burned[plot.plot_id] else late_u).append(v)
        assert len(late_b) > 50 and len(late_u) > 50
        pooled_sd = np.sqrt((np.var(late_b) + np.var(late_u)) / 2)
        assert abs(np.mean(late_b) - np.mean(late_u)) < 0.5 * pooled_sd

    def test_fresh_burn_depresses_char_index(self, small_scenario):
        truth = small_scenario.truth
        fresh, tilled = [], []
        for plot in small_scenario.plots:
            dates, values = plot_source_series(small_scenario.cube_a, plot, "CI")
            if truth.burned[plot.plot_id]:
                burn = truth.burn_date[plot.plot_id]
                fresh += [v for d, v in zip(dates, values)
                          if np.isfinite(v) and 0 <= (d - burn).days <= 1]
            else:
                till = truth.till_date[plot.plot_id]
                tilled += [v for d, v in zip(dates, values)
                           if np.isfinite(v) and (d - till).days >= 0]
        assert np.mean(fresh) < np.mean(tilled) - 0.4


class TestInjectGaps:
    def test_empty_schedule_is_identity(self, small_scenario):
        cube, truth = inject_gaps(small_scenario.cube_a, [], small_scenario.plots,
                                  small_scenario.truth)
        for a, b in zip(cube.observations, small_scenario.cube_a.observations):
            assert np.array_equal(a.valid, b.valid)
        assert truth.valid_obs == small_scenario.truth.valid_obs

    def test_plot_region_masked_and_truth_updated(self, small_scenario):
        plot = small_scenario.plots[0]
        dates = small_scenario.truth.valid_obs["A"][plot.plot_id]
        assert len(dates) >= 2
        start, end = dates[0], dates[1] + dt.timedelta(days=1)
        schedule = [(plot.plot_id, start, end)]
        cube, truth = inject_gaps(small_scenario.cube_a, schedule,
                                  small_scenario.plots, small_scenario.truth)
        removed = [d for d in dates if start <= d < end]
        kept = truth.valid_obs["A"][plot.plot_id]
        assert all(d not in kept for d in removed)
        hit = [o for o in cube.observations if start <= o.date < end]
        for obs in hit:
            assert not obs.valid[plot.rows, plot.cols].any()
        other = small_scenario.plots[1]
        assert truth.valid_obs["A"][other.plot_id] == \
            small_scenario.truth.valid_obs["A"][other.plot_id]

    def test_whole_observation_masking_counts(self, small_scenario):
        target = small_scenario.cube_a.observations[2].date
        schedule = [(None, target, target + dt.timedelta(days=1))]
        cube, truth = inject_gaps(small_scenario.cube_a, schedule,
                                  small_scenario.plots, small_scenario.truth)
        for plot_id, dates in truth.valid_obs["A"].items():
            assert target not in dates

    def test_post_burn_schedule_shape(self, small_scenario):
        schedule = post_burn_gap_schedule(small_scenario.truth, 5)
        burned = [p for p, b in small_scenario.truth.burned.items() if b]
        assert len(schedule) == len(burned)
        for plot_id, start, end in schedule:
            assert (end - start).days == 6
            assert start == small_scenario.truth.burn_date[plot_id]
