"""Localisation of a transmitter from unsynchronised reception timestamps.

Anchors in known positions timestamp packets from the blind node and from
at least one reference transmitter with their own free-running clocks.
Double differences over node quadruplets cancel transmission times and
clock offsets, a per-anchor-pair regression cancels relative clock skew,
and the resulting differential ranges feed a hyperbolic or pseudo-range
least-squares solver. A deterministic simulator provides ground truth for
verification, and slice & prune fusion adds robustness to occasional bad
measurements and mild NLOS propagation.
"""

from .clocks import ClockModel, DriftSpec, NoiseSpec, local_timestamp
from .dataio import (
    DataError,
    NodeEntry,
    NodeTable,
    PairedObservation,
    load,
    load_nodes,
    node_table_from_scenario,
    pair_all_channels,
    pair_packets,
    save_nodes,
)
from .evaluate import (
    ErrorReport,
    RunConfig,
    TrialResult,
    ecdf,
    position_error,
    run_experiment,
    write_report,
)
from .fusion import (
    EstimationResult,
    PruneConfig,
    SliceSpec,
    SubInstance,
    active_anchor_decompose,
    choose_ref_anchor,
    enumerate_slices,
    estimate_active_compact,
    estimate_active_snp,
    estimate_one_shot,
    estimate_snp,
    prune,
)
from .geometry import (
    SPEED_OF_LIGHT,
    Position,
    QuadrupletGeometry,
    diff_range,
    distance,
    ticks_to_meters,
)
from .ranging import (
    DifferentialRange,
    DifferentialRangeSet,
    DoubleDifference,
    EstimationError,
    GammaEstimate,
    average_block,
    differential_ranges,
    double_difference,
    estimate_gamma,
)
from .simulate import (
    JitterSpec,
    NodeSpec,
    Scenario,
    ScenarioError,
    TimestampLog,
    TxSchedule,
    UnwrapError,
    load_scenario,
    save_scenario,
    simulate,
    unwrap_timestamps,
    with_seed,
)
from .solvers import SolveOutcome, SolverConfig, SolverError, solve, solve_hyp, solve_ils

__version__ = "0.1.0"

__all__ = [
    "ClockModel",
    "DataError",
    "DifferentialRange",
    "DifferentialRangeSet",
    "DoubleDifference",
    "DriftSpec",
    "ErrorReport",
    "EstimationError",
    "EstimationResult",
    "GammaEstimate",
    "JitterSpec",
    "NodeEntry",
    "NodeSpec",
    "NodeTable",
    "NoiseSpec",
    "PairedObservation",
    "Position",
    "PruneConfig",
    "QuadrupletGeometry",
    "RunConfig",
    "SPEED_OF_LIGHT",
    "Scenario",
    "ScenarioError",
    "SliceSpec",
    "SolveOutcome",
    "SolverConfig",
    "SolverError",
    "SubInstance",
    "TimestampLog",
    "TrialResult",
    "TxSchedule",
    "UnwrapError",
    "active_anchor_decompose",
    "average_block",
    "choose_ref_anchor",
    "diff_range",
    "differential_ranges",
    "distance",
    "double_difference",
    "ecdf",
    "enumerate_slices",
    "estimate_active_compact",
    "estimate_active_snp",
    "estimate_gamma",
    "estimate_one_shot",
    "estimate_snp",
    "load",
    "load_nodes",
    "load_scenario",
    "local_timestamp",
    "node_table_from_scenario",
    "pair_all_channels",
    "pair_packets",
    "position_error",
    "prune",
    "run_experiment",
    "save_nodes",
    "save_scenario",
    "simulate",
    "solve",
    "solve_hyp",
    "solve_ils",
    "ticks_to_meters",
    "unwrap_timestamps",
    "with_seed",
    "write_report",
]
