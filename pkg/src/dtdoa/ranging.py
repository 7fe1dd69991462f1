"""Differential-range estimation from paired reception timestamps.

The pipeline per reference anchor / other anchor pair ("quadruplet"):

1. estimate the ratio of the two anchors' actual clock rates as the OLS
   slope of the reference anchor's pivot timestamps against the other
   anchor's (``estimate_gamma``);
2. for every blind/pivot packet pair form the rate-corrected double
   difference ``(pivot - blind at ref) - gamma * (pivot - blind at k)``,
   which cancels transmission times, clock offsets and, with the rate
   correction, relative clock skew (``double_difference``);
3. average the double differences over the block (``average_block``);
4. convert to metres and add the known pivot differential range to obtain
   the blind node's differential range for that anchor pair
   (``differential_ranges``).

Double differences are kept in ticks until the final conversion, and the
element-wise operations are plain arithmetic so they preserve whatever
numeric type the timestamps carry (float, extended precision, Fraction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import NodeTable, PairedObservation
from .geometry import diff_range, distance, ticks_to_meters


class EstimationError(RuntimeError):
    """The estimation pipeline cannot produce a result from this input."""


@dataclass(frozen=True)
class GammaEstimate:
    """Estimated clock-rate ratio between the reference anchor and anchor k."""

    anchor_id: str
    gamma_hat: float
    sample_count: int
    residual_rms_ticks: float


@dataclass(frozen=True)
class DoubleDifference:
    pair_index: int
    anchor_id: str
    s_hat_ticks: float


@dataclass(frozen=True)
class DifferentialRange:
    anchor_id: str
    delta_m: float
    s_bar_ticks: float
    sample_count: int


@dataclass(frozen=True)
class DifferentialRangeSet:
    """Differential ranges of the blind node w.r.t. one reference anchor."""

    ref_anchor_id: str
    ranges: tuple[DifferentialRange, ...]

    def anchor_ids(self) -> tuple[str, ...]:
        return tuple(r.anchor_id for r in self.ranges)

    def deltas(self) -> dict[str, float]:
        return {r.anchor_id: r.delta_m for r in self.ranges}


def estimate_gamma(
    observations: Sequence[PairedObservation],
    ref_anchor: str,
    anchor_k: str,
    use_blind_packets: bool = False,
) -> GammaEstimate:
    """Clock-rate ratio between ``ref_anchor`` and ``anchor_k`` clocks.

    Regresses the reference anchor's timestamps on anchor k's over the
    packets of the known-position transmitter (the pivot; blind packets
    would carry the same slope but are kept out so the estimate never
    depends on the unknown node). Timestamps are re-based to the block
    start before regressing to keep the normal equations well conditioned.
    """
    col = 0 if use_blind_packets else 1
    xs, ys = [], []
    for obs in observations:
        if obs.has(ref_anchor, anchor_k):
            xs.append(obs.entries[anchor_k][col])
            ys.append(obs.entries[ref_anchor][col])
    if len(xs) < 2:
        raise EstimationError(
            f"clock-rate regression for ({ref_anchor!r}, {anchor_k!r}) needs >= 2 "
            f"observations, got {len(xs)}"
        )
    x = np.asarray(xs)
    y = np.asarray(ys)
    x = x - x[0]
    y = y - y[0]
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    if sxx == 0:
        raise EstimationError("zero variance in regressor timestamps")
    slope = np.dot(xc, yc) / sxx
    resid = yc - slope * xc
    rms = float(np.sqrt(float(np.dot(resid, resid)) / len(xs)))
    return GammaEstimate(
        anchor_id=anchor_k, gamma_hat=slope, sample_count=len(xs), residual_rms_ticks=rms
    )


def double_difference(
    obs: PairedObservation, ref_anchor: str, anchor_k: str, gamma_hat
) -> DoubleDifference:
    """Rate-corrected double difference of one packet pair over one quadruplet."""
    if not obs.has(ref_anchor, anchor_k):
        raise EstimationError(
            f"observation {obs.pair_index} lacks anchors {ref_anchor!r}/{anchor_k!r}"
        )
    blind_ref, pivot_ref = obs.entries[ref_anchor]
    blind_k, pivot_k = obs.entries[anchor_k]
    s_hat = (pivot_ref - blind_ref) - gamma_hat * (pivot_k - blind_k)
    return DoubleDifference(pair_index=obs.pair_index, anchor_id=anchor_k, s_hat_ticks=s_hat)


def average_block(dds: Sequence[DoubleDifference]):
    """Arithmetic mean of double differences; returns ``(mean_ticks, count)``."""
    if not dds:
        raise EstimationError("cannot average an empty block of double differences")
    total = dds[0].s_hat_ticks
    for dd in dds[1:]:
        total = total + dd.s_hat_ticks
    return total / len(dds), len(dds)


def differential_ranges(
    observations: Sequence[PairedObservation],
    nodes: NodeTable,
    ref_anchor: str,
    anchors: Iterable[str] | None = None,
    gammas: float | Mapping[str, float] | None = None,
    pivot_id: str | None = None,
) -> DifferentialRangeSet:
    """Estimate the blind node's differential range for every anchor pair.

    ``gammas`` overrides the clock-rate regression: a scalar applies to all
    anchors (1.0 disables skew correction altogether, for ablation runs), a
    mapping supplies precomputed per-anchor estimates. Observations missing
    one of the two anchors of a quadruplet are skipped for that quadruplet
    only.
    """
    pivot = pivot_id or nodes.pivot_id
    if pivot is None:
        raise EstimationError("differential ranging requires a pivot node")
    pivot_pos = nodes.position(pivot)
    anchor_list = list(anchors) if anchors is not None else list(nodes.anchor_ids)
    if ref_anchor not in anchor_list:
        raise EstimationError(f"reference anchor {ref_anchor!r} not among anchors")
    others = [a for a in anchor_list if a != ref_anchor]
    if len(others) < 2:
        raise EstimationError("need at least 2 anchors besides the reference")
    ref_pos = nodes.position(ref_anchor)
    tick_rate = nodes.tick_rate_hz

    ranges = []
    for anchor_k in others:
        usable = [o for o in observations if o.has(ref_anchor, anchor_k)]
        if gammas is None:
            gamma = estimate_gamma(usable, ref_anchor, anchor_k).gamma_hat
        elif isinstance(gammas, Mapping):
            gamma = gammas[anchor_k]
        else:
            gamma = gammas
        dds = [double_difference(o, ref_anchor, anchor_k, gamma) for o in usable]
        s_bar, count = average_block(dds)
        pos_k = nodes.position(anchor_k)
        delta_pivot = diff_range(pivot_pos, pos_k, ref_pos)
        delta = float(delta_pivot + ticks_to_meters(s_bar, tick_rate))
        baseline = distance(pos_k, ref_pos)
        slack = max(1.0, 5.0 * ticks_to_meters(1.0, tick_rate) / np.sqrt(count))
        if abs(delta) > baseline + slack:
            warnings.warn(
                f"differential range for anchor {anchor_k!r} ({delta:.2f} m) exceeds "
                f"the {baseline:.2f} m baseline; measurements may be inconsistent",
                stacklevel=2,
            )
        ranges.append(
            DifferentialRange(
                anchor_id=anchor_k,
                delta_m=delta,
                s_bar_ticks=float(s_bar),
                sample_count=count,
            )
        )
    return DifferentialRangeSet(ref_anchor_id=ref_anchor, ranges=tuple(ranges))
