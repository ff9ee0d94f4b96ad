"""Class separability of bands and indices, and its decay with time since burning."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .indices import INDEX_REGISTRY, EndmemberSet, compute_index
from .scene import PLOT_VALID_FRACTION, Plot, SceneCube


@dataclass(frozen=True)
class SampleStats:
    n: int
    mean: float
    sd: float

    @classmethod
    def from_values(cls, values) -> "SampleStats":
        arr = np.asarray(values, dtype=float)
        arr = arr[np.isfinite(arr)]
        if arr.size < 2:
            raise ValueError("need at least 2 values for a sample sd")
        return cls(int(arr.size), float(arr.mean()), float(arr.std(ddof=1)))


def m_statistic(burned: SampleStats, unburned: SampleStats) -> float:
    """|mean difference| over the sum of the two standard deviations.

    Values above 1 indicate usable separation; values near 2 indicate
    excellent separation. Zero spread with equal means gives 0; zero spread
    with unequal means flags infinite separability.
    """
    spread = burned.sd + unburned.sd
    diff = abs(burned.mean - unburned.mean)
    if spread == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / spread


@dataclass
class SeparabilityCurve:
    source: str
    offsets: list[int]
    m_values: list[float]          # NaN where a bucket lacks samples
    n_per_offset: list[int]

    def rows(self):
        for off, m, n in zip(self.offsets, self.m_values, self.n_per_offset):
            yield [self.source, off, m, n, n]


CURVE_CSV_HEADER = ["index", "offset_days", "m_value", "n_burn", "n_unburn"]


def _plot_mean_source(obs, plot: Plot, source: str, endmembers: EndmemberSet | None,
                      bsi_exponent: float):
    """Plot-mean band or index value at one observation, NaN when under-observed."""
    ok = obs.valid[plot.rows, plot.cols]
    if ok.mean() < PLOT_VALID_FRACTION:
        return np.nan
    if source in obs.bands:
        vals = obs.bands[source][plot.rows, plot.cols][ok]
    elif source in INDEX_REGISTRY:
        bands = {b: obs.bands[b][plot.rows, plot.cols][ok] for b in obs.bands}
        vals = compute_index(source, bands, endmembers=endmembers,
                             bsi_exponent=bsi_exponent)
    else:
        raise ValueError(f"unknown band or index {source!r}")
    vals = np.asarray(vals, dtype=float)
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else np.nan


def plot_source_series(cube: SceneCube, plot: Plot, source: str, *,
                       endmembers: EndmemberSet | None = None,
                       bsi_exponent: float = 1.0):
    """(dates, plot-mean values) across the cube; NaN marks missing entries."""
    dates = cube.dates
    values = np.array([_plot_mean_source(obs, plot, source, endmembers, bsi_exponent)
                       for obs in cube.observations])
    return dates, values


MIN_BUCKET_N = 3


def separability_curve(events: list[tuple[Plot, dt.date]], cube: SceneCube,
                       source: str, max_offset: int, *,
                       endmembers: EndmemberSet | None = None,
                       bsi_exponent: float = 1.0) -> SeparabilityCurve:
    """M between post-burn values at each day offset and matched pre-burn values.

    Each event contributes its nearest valid pre-burn observation as the
    unburned reference and at most one value per integer offset after the burn
    date. Buckets with fewer than MIN_BUCKET_N events on either side report NaN.
    """
    post_by_offset: dict[int, list[float]] = {d: [] for d in range(max_offset + 1)}
    pre_by_offset: dict[int, list[float]] = {d: [] for d in range(max_offset + 1)}
    for plot, burn_date in events:
        dates, values = plot_source_series(cube, plot, source,
                                           endmembers=endmembers,
                                           bsi_exponent=bsi_exponent)
        pre = [(d, v) for d, v in zip(dates, values)
               if d < burn_date and np.isfinite(v)]
        if not pre:
            continue
        pre_value = pre[-1][1]  # nearest valid observation before the event
        seen = {}
        for d, v in zip(dates, values):
            off = (d - burn_date).days
            if 0 <= off <= max_offset and np.isfinite(v) and off not in seen:
                seen[off] = v
        for off, v in seen.items():
            post_by_offset[off].append(v)
            pre_by_offset[off].append(pre_value)

    offsets, m_values, counts = [], [], []
    for off in range(max_offset + 1):
        post, pre = post_by_offset[off], pre_by_offset[off]
        offsets.append(off)
        counts.append(len(post))
        if len(post) < MIN_BUCKET_N or len(pre) < MIN_BUCKET_N:
            m_values.append(np.nan)
            continue
        m_values.append(m_statistic(SampleStats.from_values(post),
                                    SampleStats.from_values(pre)))
    return SeparabilityCurve(source, offsets, m_values, counts)


@dataclass
class SignatureProfile:
    """Time-aligned mean/sd series of a band around burn and till events."""

    band: str
    offsets: list[int]
    burned: dict[int, tuple[float, float, int]] = field(default_factory=dict)
    tilled: dict[int, tuple[float, float, int]] = field(default_factory=dict)


def signature_profile(events: list[tuple[Plot, str, dt.date]], cube: SceneCube,
                      band: str, window: int) -> SignatureProfile:
    """Mean +/- sd of plot-mean band values by day offset for burned vs tilled plots.

    Events are (plot, kind, event_date) with kind in {burn, till}; offsets run
    from -window to +window relative to the event date. Empty buckets are left
    out of the group maps.
    """
    groups = {"burn": {}, "till": {}}
    for plot, kind, event_date in events:
        if kind not in groups:
            raise ValueError(f"unknown event kind {kind!r}")
        dates, values = plot_source_series(cube, plot, band)
        for d, v in zip(dates, values):
            off = (d - event_date).days
            if -window <= off <= window and np.isfinite(v):
                groups[kind].setdefault(off, []).append(v)
    profile = SignatureProfile(band, list(range(-window, window + 1)))
    for kind, out in (("burn", profile.burned), ("till", profile.tilled)):
        for off, vals in groups[kind].items():
            arr = np.asarray(vals)
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            out[off] = (float(arr.mean()), sd, int(arr.size))
    return profile
