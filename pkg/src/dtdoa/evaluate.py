"""Experiment runner, error metrics and report files.

A run takes a scenario and a trial count; every trial re-seeds the
simulator deterministically (and optionally re-draws the blind position
inside the anchor bounding box), runs the configured estimator and records
the distance between estimated and true position. Failed trials are
recorded, not fatal. Reports are written as CSV (per-trial errors, ECDF
samples) plus a JSON summary, and are byte-identical for identical
configurations and seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import DataError, NodeTable, node_table_from_scenario, pair_all_channels
from .fusion import (
    EstimationError,
    EstimationResult,
    PruneConfig,
    SliceSpec,
    estimate_active_compact,
    estimate_active_snp,
    estimate_one_shot,
    estimate_snp,
)
from .geometry import Position, distance
from .simulate import Scenario, TimestampLog, simulate, unwrap_timestamps, with_seed
from .solvers import SolverConfig

TRIALS_CSV_HEADER = "trial,true_x,true_y,est_x,est_y,err_m"
ECDF_CSV_HEADER = "err_m,cum_frac"


def position_error(estimate: Position, truth: Position) -> float:
    """Absolute positioning error: the distance between the two points."""
    return distance(estimate, truth)


def ecdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF sample points of a nonempty error collection."""
    if len(errors) == 0:
        raise ValueError("cannot build an ECDF from no samples")
    values = np.sort(np.asarray(errors, dtype=float))
    n = len(values)
    return [(float(v), (i + 1) / n) for i, v in enumerate(values)]


@dataclass(frozen=True)
class TrialResult:
    trial: int
    true_position: Position
    est_position: Position | None
    error_m: float | None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.error_m is not None


@dataclass(frozen=True)
class ErrorReport:
    trials: tuple[TrialResult, ...]

    def errors(self) -> np.ndarray:
        return np.array([t.error_m for t in self.trials if t.ok], dtype=float)

    @property
    def n_failed(self) -> int:
        return sum(not t.ok for t in self.trials)

    @property
    def median_m(self) -> float | None:
        errs = self.errors()
        return float(np.median(errs)) if len(errs) else None

    @property
    def max_m(self) -> float | None:
        errs = self.errors()
        return float(np.max(errs)) if len(errs) else None

    def ecdf(self) -> list[tuple[float, float]]:
        return ecdf(self.errors())


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment run depends on."""

    scenario: Scenario
    trials: int = 100
    method: str = "oneshot"  # "oneshot" | "snp"
    solver: str = "ils"
    strategy: str = "near"
    temporal_blocks: int = 1
    spatial: str | Sequence = "none"
    spatial_min_size: int = 3
    spatial_max_size: int | None = None
    split_channels: bool = False
    lmin_fraction: float = 0.5
    channels: tuple[int, ...] | None = None
    seed: int = 0
    skew_correction: bool = True
    randomize_blind: bool = False

    def __post_init__(self) -> None:
        if self.method not in ("oneshot", "snp"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.strategy not in ("near", "far", "mean"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(method=self.solver)

    def slice_spec(self) -> SliceSpec:
        return SliceSpec(
            temporal_blocks=self.temporal_blocks,
            spatial_subsets=self.spatial,
            spatial_min_size=self.spatial_min_size,
            spatial_max_size=self.spatial_max_size,
            split_channels=self.split_channels,
        )

    def prune_config(self) -> PruneConfig:
        return PruneConfig(l_min_fraction=self.lmin_fraction)


def trial_seed(base_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([base_seed, trial]).generate_state(1, np.uint64)[0])


def _randomized_blind(scenario: Scenario, rng: np.random.Generator) -> Position:
    fixed = [n.position for n in scenario.nodes if n.role != "blind"]
    xs = [p.x for p in fixed]
    ys = [p.y for p in fixed]
    margin = 1.0

    def band(lo: float, hi: float) -> tuple[float, float]:
        return (lo + margin, hi - margin) if hi - lo > 2 * margin else (lo, hi)

    bx = band(min(xs), max(xs))
    by = band(min(ys), max(ys))
    return Position(float(rng.uniform(*bx)), float(rng.uniform(*by)))


def with_blind_position(scenario: Scenario, position: Position) -> Scenario:
    nodes = tuple(
        replace(n, position=position) if n.role == "blind" else n for n in scenario.nodes
    )
    return replace(scenario, nodes=nodes)


def _filter_channels(log: TimestampLog, channels: Sequence[int]) -> TimestampLog:
    mask = np.isin(log.channel, list(channels))
    return TimestampLog(
        log.rx_id[mask],
        log.tx_id[mask],
        log.seq[mask],
        log.channel[mask],
        log.ticks[mask],
        wrapped=log.wrapped,
    )


def estimate_from_log(log: TimestampLog, nodes: NodeTable, config: RunConfig) -> EstimationResult:
    """Dispatch to the right estimator for the deployment and method.

    Active-anchor deployments (two or more transmitting anchors, no
    dedicated pivot) use the overlay decomposition; otherwise the
    single-pivot pipeline runs.
    """
    if config.channels is not None:
        log = _filter_channels(log, config.channels)
    active = len(nodes.active_anchor_ids) >= 2 and nodes.pivot_id is None
    if active:
        if config.method == "snp":
            return estimate_active_snp(
                log,
                nodes,
                config.slice_spec(),
                strategy=config.strategy,
                solver_config=config.solver_config(),
                prune_config=config.prune_config(),
                skew_correction=config.skew_correction,
            )
        return estimate_active_compact(
            log,
            nodes,
            strategy=config.strategy,
            solver_config=config.solver_config(),
            skew_correction=config.skew_correction,
        )
    observations = pair_all_channels(log, nodes)
    if config.method == "snp":
        return estimate_snp(
            observations,
            nodes,
            config.slice_spec(),
            strategy=config.strategy,
            solver_config=config.solver_config(),
            prune_config=config.prune_config(),
            skew_correction=config.skew_correction,
        )
    return estimate_one_shot(
        observations,
        nodes,
        strategy=config.strategy,
        solver_config=config.solver_config(),
        skew_correction=config.skew_correction,
    )


def run_trial(config: RunConfig, trial: int) -> TrialResult:
    seed = trial_seed(config.seed, trial)
    scenario = with_seed(config.scenario, seed)
    if config.randomize_blind:
        rng = np.random.default_rng([seed, 0xB11D])
        scenario = with_blind_position(scenario, _randomized_blind(scenario, rng))
    truth = scenario.blind().position
    log = simulate(scenario)
    if log.wrapped:
        log = unwrap_timestamps(log)
    nodes = node_table_from_scenario(scenario)
    try:
        result = estimate_from_log(log, nodes, config)
    except (EstimationError, DataError) as exc:
        return TrialResult(trial, truth, None, None, detail=str(exc))
    if not result.converged:
        return TrialResult(trial, truth, result.position, None, detail="did not converge")
    return TrialResult(
        trial, truth, result.position, position_error(result.position, truth)
    )


def run_experiment(config: RunConfig) -> ErrorReport:
    """Run all trials; deterministic for a fixed (config, seed)."""
    return ErrorReport(tuple(run_trial(config, t) for t in range(config.trials)))


# --- report files -----------------------------------------------------------


def write_trials_csv(report: ErrorReport, path) -> None:
    lines = [TRIALS_CSV_HEADER]
    for t in report.trials:
        est_x = repr(t.est_position.x) if t.est_position else ""
        est_y = repr(t.est_position.y) if t.est_position else ""
        err = repr(t.error_m) if t.ok else ""
        lines.append(
            f"{t.trial},{t.true_position.x!r},{t.true_position.y!r},{est_x},{est_y},{err}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_ecdf_csv(report: ErrorReport, path) -> None:
    lines = [ECDF_CSV_HEADER]
    for value, frac in report.ecdf():
        lines.append(f"{value!r},{frac!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def summary_dict(report: ErrorReport, config: RunConfig) -> dict:
    return {
        "trials": config.trials,
        "failed": report.n_failed,
        "median_m": report.median_m,
        "max_m": report.max_m,
        "method": config.method,
        "solver": config.solver,
        "strategy": config.strategy,
        "seed": config.seed,
        "skew_correction": config.skew_correction,
    }


def write_summary_json(report: ErrorReport, config: RunConfig, path) -> None:
    Path(path).write_text(
        json.dumps(summary_dict(report, config), indent=2, sort_keys=True) + "\n"
    )


def write_report(report: ErrorReport, config: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trials_csv(report, out / "trials.csv")
    if len(report.errors()):
        write_ecdf_csv(report, out / "ecdf.csv")
    write_summary_json(report, config, out / "summary.json")
