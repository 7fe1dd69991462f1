"""Fusion strategies: reference-anchor choice, one-shot estimation,
slice & prune, and the active-anchor overlay.

One-shot runs the ranging pipeline and a solver once over all measurements.
Slice & prune partitions the measurements along any of three dimensions --
time (blocks of packet pairs), space (anchor subsets) and frequency
(channels) -- solves every slice independently, then iteratively discards
the point farthest from the running mean until a configured fraction
survives, returning the survivors' mean. Slices whose solve fails or does
not converge simply drop out.

With active anchors (anchors that also transmit) the problem decomposes
into one sub-instance per anchor, that anchor playing the pivot role and
the remaining ones receiving; blind packets are shared. Slice & prune then
fuses the points of all sub-instances, or a compact variant averages one
one-shot point per sub-instance.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import NodeTable, PairedObservation, pair_all_channels
from .geometry import Position, distance
from .ranging import (
    DifferentialRangeSet,
    EstimationError,
    differential_ranges,
    estimate_gamma,
)
from .simulate import TimestampLog
from .solvers import SolveOutcome, SolverConfig, SolverError, solve, solve_robust

REF_STRATEGIES = ("near", "far", "mean")


@dataclass(frozen=True)
class PruneConfig:
    """Stop pruning when ``ceil(l_min_fraction * L)`` points survive."""

    l_min_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.l_min_fraction <= 1.0:
            raise ValueError("l_min_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SliceSpec:
    """How to partition measurements into slices.

    temporal_blocks   number of contiguous blocks each channel's packet
                      pairs are split into.
    spatial_subsets   "none", "all" (every anchor subset with at least
                      ``spatial_min_size`` members, capped by
                      ``spatial_max_size``), or an explicit sequence of
                      anchor-id collections.
    split_channels    solve each channel separately instead of jointly.
    """

    temporal_blocks: int = 1
    spatial_subsets: str | Sequence[Sequence[str]] = "none"
    spatial_min_size: int = 3
    spatial_max_size: int | None = None
    split_channels: bool = False

    def __post_init__(self) -> None:
        if self.temporal_blocks < 1:
            raise ValueError("temporal_blocks must be >= 1")
        if self.spatial_min_size < 3:
            raise ValueError("spatial subsets need at least 3 anchors")
        if isinstance(self.spatial_subsets, str):
            if self.spatial_subsets not in ("none", "all"):
                raise ValueError(f"unknown spatial_subsets {self.spatial_subsets!r}")
        else:
            subsets = tuple(tuple(s) for s in self.spatial_subsets)
            for s in subsets:
                if len(s) < 3:
                    raise ValueError(f"spatial subset {s!r} has fewer than 3 anchors")
            object.__setattr__(self, "spatial_subsets", subsets)


@dataclass(frozen=True)
class SliceData:
    """One slice: which observations and which anchors to solve with."""

    index: int
    temporal_index: int
    channels: tuple[int, ...]
    anchors: tuple[str, ...]
    observations: tuple[PairedObservation, ...]

    def label(self) -> str:
        chans = ",".join(str(c) for c in self.channels)
        return f"t{self.temporal_index}/ch{chans}/a[{','.join(self.anchors)}]"


@dataclass(frozen=True)
class EstimationResult:
    """Blind-position estimate with per-solve and per-slice diagnostics."""

    position: Position
    converged: bool
    method: str
    ranges: tuple[DifferentialRangeSet, ...] = ()
    outcomes: tuple[SolveOutcome, ...] = ()
    slice_labels: tuple[str, ...] = ()
    slice_points: tuple[Position, ...] = ()
    survivor_indices: tuple[int, ...] = ()


def _as_obs_map(observations) -> dict[int, list[PairedObservation]]:
    if isinstance(observations, Mapping):
        return {ch: list(v) for ch, v in observations.items()}
    obs = list(observations)
    by_channel: dict[int, list[PairedObservation]] = {}
    for o in obs:
        by_channel.setdefault(o.channel, []).append(o)
    return by_channel


def _flatten(obs_map: Mapping[int, Sequence[PairedObservation]]) -> list[PairedObservation]:
    out: list[PairedObservation] = []
    for ch in sorted(obs_map):
        out.extend(obs_map[ch])
    return out


def choose_ref_anchor(
    nodes: NodeTable,
    strategy: str,
    anchors: Sequence[str] | None = None,
    pivot_id: str | None = None,
) -> str:
    """Pick the reference anchor nearest to / farthest from the pivot."""
    if strategy not in ("near", "far"):
        raise ValueError(f"no single reference anchor for strategy {strategy!r}")
    pivot = pivot_id or nodes.pivot_id
    if pivot is None:
        raise EstimationError("reference-anchor choice needs a pivot")
    pivot_pos = nodes.position(pivot)
    candidates = list(anchors) if anchors is not None else list(nodes.anchor_ids)
    keyed = [(distance(nodes.position(a), pivot_pos), i, a) for i, a in enumerate(candidates)]
    keyed.sort()
    return keyed[0][2] if strategy == "near" else keyed[-1][2]


def _anchor_positions(nodes: NodeTable, anchors: Iterable[str]) -> dict[str, Position]:
    return {a: nodes.position(a) for a in anchors}


def _solve_once(
    observations: Sequence[PairedObservation],
    nodes: NodeTable,
    ref_anchor: str,
    anchors: Sequence[str],
    solver_config: SolverConfig,
    gammas: float | None,
    pivot_id: str | None,
) -> tuple[DifferentialRangeSet, SolveOutcome]:
    ranges = differential_ranges(
        observations,
        nodes,
        ref_anchor,
        anchors=anchors,
        gammas=gammas,
        pivot_id=pivot_id,
    )
    outcome = solve_robust(ranges, _anchor_positions(nodes, anchors), solver_config)
    return ranges, outcome


def estimate_one_shot(
    observations,
    nodes: NodeTable,
    strategy: str = "near",
    solver_config: SolverConfig = SolverConfig(),
    anchors: Sequence[str] | None = None,
    skew_correction: bool = True,
    pivot_id: str | None = None,
) -> EstimationResult:
    """Full pipeline on the whole measurement block.

    ``observations`` may be a flat sequence or a channel -> observations
    mapping; multi-channel data is processed jointly. The "mean" strategy
    solves once per possible reference anchor and averages the positions
    of the converged solves.
    """
    if strategy not in REF_STRATEGIES:
        raise ValueError(f"unknown reference strategy {strategy!r}")
    obs = _flatten(_as_obs_map(observations))
    anchor_list = list(anchors) if anchors is not None else list(nodes.anchor_ids)
    gammas = None if skew_correction else 1.0

    refs = anchor_list if strategy == "mean" else [
        choose_ref_anchor(nodes, strategy, anchor_list, pivot_id)
    ]
    all_ranges, outcomes = [], []
    for ref in refs:
        ranges, outcome = _solve_once(
            obs, nodes, ref, anchor_list, solver_config, gammas, pivot_id
        )
        all_ranges.append(ranges)
        outcomes.append(outcome)
    good = [o for o in outcomes if o.converged]
    if strategy == "mean":
        if not good:
            raise EstimationError("no reference-anchor solve converged")
        xs = np.mean([o.position.x for o in good])
        ys = np.mean([o.position.y for o in good])
        position = Position(float(xs), float(ys))
        converged = True
    else:
        position = outcomes[0].position
        converged = outcomes[0].converged
    return EstimationResult(
        position=position,
        converged=converged,
        method="oneshot",
        ranges=tuple(all_ranges),
        outcomes=tuple(outcomes),
    )


def enumerate_slices(
    spec: SliceSpec,
    observations,
    anchors: Sequence[str],
    channels: Sequence[int] | None = None,
) -> list[SliceData]:
    """Cross product of temporal x spatial x frequency slices.

    Slice count is ``temporal_blocks * n_subsets * n_channels`` (the last
    factor only when channels are split). Slices are indexed in that
    nesting order, deterministically.
    """
    obs_map = _as_obs_map(observations)
    chans = sorted(obs_map) if channels is None else list(channels)
    if not chans:
        raise EstimationError("no channels to slice")

    blocks_by_channel: dict[int, list[list[PairedObservation]]] = {}
    for ch in chans:
        ordered = sorted(obs_map.get(ch, []), key=lambda o: o.pair_index)
        parts = [list(part) for part in np.array_split(np.array(ordered, dtype=object), spec.temporal_blocks)]
        blocks_by_channel[ch] = parts

    if isinstance(spec.spatial_subsets, str):
        if spec.spatial_subsets == "none":
            subsets = [tuple(anchors)]
        else:
            max_size = spec.spatial_max_size or len(anchors)
            subsets = [
                combo
                for size in range(spec.spatial_min_size, min(max_size, len(anchors)) + 1)
                for combo in itertools.combinations(anchors, size)
            ]
    else:
        subsets = [tuple(s) for s in spec.spatial_subsets]

    channel_groups = [(ch,) for ch in chans] if spec.split_channels else [tuple(chans)]

    slices = []
    index = 0
    for t in range(spec.temporal_blocks):
        for subset in subsets:
            for group in channel_groups:
                block_obs: list[PairedObservation] = []
                for ch in group:
                    block_obs.extend(blocks_by_channel[ch][t])
                slices.append(
                    SliceData(
                        index=index,
                        temporal_index=t,
                        channels=group,
                        anchors=tuple(subset),
                        observations=tuple(block_obs),
                    )
                )
                index += 1
    if not slices:
        raise EstimationError("slicing produced no slices")
    return slices


def prune(points: Sequence[Position], config: PruneConfig = PruneConfig()) -> Position:
    """Iteratively drop the point farthest from the running mean.

    Stops when ``ceil(L * l_min_fraction)`` points remain and returns the
    survivors' mean. Ties on the farthest point are broken toward the
    lowest index so results are independent of floating-point quirks.
    """
    position, _ = prune_with_survivors(points, config)
    return position


def prune_with_survivors(
    points: Sequence[Position], config: PruneConfig = PruneConfig()
) -> tuple[Position, tuple[int, ...]]:
    if not points:
        raise EstimationError("cannot prune an empty point set")
    coords = np.array([[p.x, p.y] for p in points])
    keep = np.ones(len(points), dtype=bool)
    target = math.ceil(len(points) * config.l_min_fraction)
    while keep.sum() > target:
        mean = coords[keep].mean(axis=0)
        dists = np.linalg.norm(coords - mean, axis=1)
        dists[~keep] = -np.inf
        keep[int(np.argmax(dists))] = False
    mean = coords[keep].mean(axis=0)
    return Position(float(mean[0]), float(mean[1])), tuple(int(i) for i in np.nonzero(keep)[0])


@dataclass(frozen=True)
class _SliceTask:
    """Prepared solver input for one slice (picklable for executors)."""

    label: str
    ranges: DifferentialRangeSet
    anchors: dict[str, Position]
    config: SolverConfig


def _run_slice_task(task: _SliceTask) -> SolveOutcome | None:
    try:
        return solve(task.ranges, task.anchors, task.config)
    except (SolverError, EstimationError):
        return None


def _prepare_slice_tasks(
    slices: Sequence[SliceData],
    nodes: NodeTable,
    strategy: str,
    solver_config: SolverConfig,
    skew_correction: bool,
    pivot_id: str | None,
) -> list[_SliceTask]:
    """Build per-slice ranging outputs; failed slices yield no task.

    Clock-rate regressions are re-estimated per slice but cached per
    (temporal block, channel group, anchor pair): spatial subsets share the
    same underlying observations, so the slope is identical.
    """
    gamma_cache: dict[tuple, float] = {}

    def gammas_for(sl: SliceData, ref: str) -> dict[str, float]:
        out = {}
        for anchor_k in sl.anchors:
            if anchor_k == ref:
                continue
            key = (sl.temporal_index, sl.channels, ref, anchor_k)
            if key not in gamma_cache:
                usable = [o for o in sl.observations if o.has(ref, anchor_k)]
                gamma_cache[key] = estimate_gamma(usable, ref, anchor_k).gamma_hat
            out[anchor_k] = gamma_cache[key]
        return out

    tasks: list[_SliceTask] = []
    for sl in slices:
        if strategy == "mean":
            refs = list(sl.anchors)
        else:
            try:
                refs = [choose_ref_anchor(nodes, strategy, sl.anchors, pivot_id)]
            except EstimationError:
                continue
        for ref in refs:
            try:
                gammas = 1.0 if not skew_correction else gammas_for(sl, ref)
                ranges = differential_ranges(
                    sl.observations,
                    nodes,
                    ref,
                    anchors=sl.anchors,
                    gammas=gammas,
                    pivot_id=pivot_id,
                )
            except (SolverError, EstimationError):
                continue
            tasks.append(
                _SliceTask(
                    label=sl.label() + (f"/ref={ref}" if strategy == "mean" else ""),
                    ranges=ranges,
                    anchors=_anchor_positions(nodes, sl.anchors),
                    config=solver_config,
                )
            )
    return tasks


def _gather_points(
    tasks: Sequence[_SliceTask], executor: Executor | None
) -> tuple[list[Position], list[str]]:
    if executor is None:
        results = [_run_slice_task(t) for t in tasks]
    else:
        results = list(executor.map(_run_slice_task, tasks))
    points, labels = [], []
    for task, outcome in zip(tasks, results):
        if outcome is not None and outcome.converged:
            points.append(outcome.position)
            labels.append(task.label)
    return points, labels


def _min_points_required(planned: int) -> int:
    # A handful of survivors is required for the pruned mean to be
    # meaningful, except in deliberately degenerate single-slice runs.
    return min(4, planned)


def estimate_snp(
    observations,
    nodes: NodeTable,
    slice_spec: SliceSpec,
    strategy: str = "near",
    solver_config: SolverConfig = SolverConfig(),
    prune_config: PruneConfig = PruneConfig(),
    skew_correction: bool = True,
    pivot_id: str | None = None,
    executor: Executor | None = None,
) -> EstimationResult:
    """Slice & prune over one single-pivot instance.

    Slices are solved independently (optionally on an executor; results are
    gathered in slice order so the outcome never depends on scheduling),
    non-converged or failed slices are discarded, the remaining points are
    pruned and their mean returned.
    """
    obs_map = _as_obs_map(observations)
    slices = enumerate_slices(slice_spec, obs_map, list(nodes.anchor_ids))
    tasks = _prepare_slice_tasks(
        slices, nodes, strategy, solver_config, skew_correction, pivot_id
    )
    points, labels = _gather_points(tasks, executor)
    if len(points) < _min_points_required(len(slices)):
        raise EstimationError(
            f"only {len(points)} of {len(slices)} slices produced a converged "
            "solve; not enough for pruning"
        )
    position, survivors = prune_with_survivors(points, prune_config)
    return EstimationResult(
        position=position,
        converged=True,
        method="snp",
        slice_labels=tuple(labels),
        slice_points=tuple(points),
        survivor_indices=survivors,
    )


@dataclass(frozen=True)
class SubInstance:
    """A single-pivot view of an active-anchor deployment."""

    pivot_id: str
    nodes: NodeTable
    observations: Mapping[int, tuple[PairedObservation, ...]]


def active_anchor_decompose(log: TimestampLog, nodes: NodeTable) -> list[SubInstance]:
    """Split an active-anchor problem into one sub-instance per anchor.

    In sub-instance n, active anchor n plays the pivot and the other
    anchors receive; blind packets are shared across sub-instances.
    """
    active = nodes.active_anchor_ids
    if len(active) < 2:
        raise EstimationError(
            f"active-anchor decomposition needs >= 2 active anchors, got {len(active)}"
        )
    instances = []
    for pid in active:
        sub_nodes = nodes.with_pivot(pid)
        obs = pair_all_channels(log, sub_nodes, pivot_id=pid)
        instances.append(
            SubInstance(
                pivot_id=pid,
                nodes=sub_nodes,
                observations={ch: tuple(v) for ch, v in obs.items()},
            )
        )
    return instances


def estimate_active_compact(
    log: TimestampLog,
    nodes: NodeTable,
    strategy: str = "near",
    solver_config: SolverConfig = SolverConfig(),
    skew_correction: bool = True,
) -> EstimationResult:
    """Baseline active-anchor fusion: one one-shot point per sub-instance,
    plain mean, no pruning."""
    points, outcomes, all_ranges = [], [], []
    for inst in active_anchor_decompose(log, nodes):
        try:
            result = estimate_one_shot(
                inst.observations,
                inst.nodes,
                strategy=strategy,
                solver_config=solver_config,
                skew_correction=skew_correction,
                pivot_id=inst.pivot_id,
            )
        except (SolverError, EstimationError):
            continue
        if result.converged:
            points.append(result.position)
            outcomes.extend(result.outcomes)
            all_ranges.extend(result.ranges)
    if not points:
        raise EstimationError("no sub-instance produced a converged estimate")
    mean = np.array([[p.x, p.y] for p in points]).mean(axis=0)
    return EstimationResult(
        position=Position(float(mean[0]), float(mean[1])),
        converged=True,
        method="active-compact",
        ranges=tuple(all_ranges),
        outcomes=tuple(outcomes),
        slice_points=tuple(points),
        survivor_indices=tuple(range(len(points))),
    )


def estimate_active_snp(
    log: TimestampLog,
    nodes: NodeTable,
    slice_spec: SliceSpec,
    strategy: str = "near",
    solver_config: SolverConfig = SolverConfig(),
    prune_config: PruneConfig = PruneConfig(),
    skew_correction: bool = True,
    executor: Executor | None = None,
) -> EstimationResult:
    """Slice & prune across all sub-instances of an active-anchor problem."""
    all_tasks: list[_SliceTask] = []
    planned = 0
    for inst in active_anchor_decompose(log, nodes):
        slices = enumerate_slices(
            slice_spec, inst.observations, list(inst.nodes.anchor_ids)
        )
        planned += len(slices)
        tasks = _prepare_slice_tasks(
            slices, inst.nodes, strategy, solver_config, skew_correction, inst.pivot_id
        )
        all_tasks.extend(
            _SliceTask(f"pivot={inst.pivot_id}/{t.label}", t.ranges, t.anchors, t.config)
            for t in tasks
        )
    points, labels = _gather_points(all_tasks, executor)
    if len(points) < _min_points_required(planned):
        raise EstimationError(
            f"only {len(points)} of {planned} slices produced a converged solve"
        )
    position, survivors = prune_with_survivors(points, prune_config)
    return EstimationResult(
        position=position,
        converged=True,
        method="active-snp",
        slice_labels=tuple(labels),
        slice_points=tuple(points),
        survivor_indices=survivors,
    )
