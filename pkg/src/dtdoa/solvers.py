"""Position solvers on differential ranges.

Two ways of turning a set of differential ranges into a blind position:

HYP  damped Gauss-Newton directly on the hyperbolic residuals
     ``|p - p_k| - |p - p_ref| - delta_k``.

ILS  the GPS-style pseudo-range formulation: substitute the unknown
     distance to the reference anchor with a bias variable ``d`` so every
     anchor contributes a pseudo-range ``delta_k + d``, then damped
     Gauss-Newton on ``(x, y, d)``.

Both start from the centroid of the anchors in use unless told otherwise,
and both halve a step that would increase the residual norm (up to 20
times) before declaring non-convergence. Non-convergence is reported in
the outcome, not raised; degenerate geometry (collinear anchors) raises.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .geometry import Position
from .ranging import DifferentialRangeSet, EstimationError


class SolverError(EstimationError):
    """The solve cannot be set up or the linearised system is degenerate."""


MAX_STEP_HALVINGS = 20
# An iterate this close to an anchor makes the residual non-differentiable;
# it is nudged toward the anchor centroid instead.
ANCHOR_EXCLUSION_M = 1e-9
ANCHOR_NUDGE_M = 1e-6
ILL_CONDITIONED = 1e12


@dataclass(frozen=True)
class SolverConfig:
    method: str = "ils"
    max_iterations: int = 50
    step_tolerance_m: float = 1e-6
    initial_guess: Position | None = None

    def __post_init__(self) -> None:
        if self.method not in ("hyp", "ils"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.max_iterations < 1 or self.step_tolerance_m <= 0:
            raise ValueError("need a positive iteration cap and step tolerance")


@dataclass(frozen=True)
class SolveOutcome:
    position: Position
    converged: bool
    iterations: int
    residual_norm_m: float
    bias_m: float | None = None  # ILS only: recovered distance to the reference anchor


def solve(
    ranges: DifferentialRangeSet,
    anchors: Mapping[str, Position],
    config: SolverConfig = SolverConfig(),
) -> SolveOutcome:
    if config.method == "hyp":
        return solve_hyp(ranges, anchors, config)
    return solve_ils(ranges, anchors, config)


def solve_robust(
    ranges: DifferentialRangeSet,
    anchors: Mapping[str, Position],
    config: SolverConfig = SolverConfig(),
) -> SolveOutcome:
    """Solve with deterministic fallback starts.

    The hyperbolic least-squares surface can trap a descent from the
    centroid in a local minimum even on exact data. When the primary solve
    does not converge, or converges with a clearly nonzero residual, the
    solve is repeated from every anchor position and the converged outcome
    with the smallest residual wins (ties go to the earliest start). Used
    by the one-shot estimators, where a single solve is the final answer;
    slice & prune instead dilutes trapped slices by pruning.
    """
    outcomes = []
    primary = None
    try:
        primary = solve(ranges, anchors, config)
        outcomes.append(primary)
    except SolverError:
        pass
    if primary is not None and primary.converged and (
        primary.residual_norm_m < 10.0 * config.step_tolerance_m
    ):
        return primary
    for anchor_id in sorted(anchors):
        alt = replace(config, initial_guess=anchors[anchor_id])
        try:
            outcomes.append(solve(ranges, anchors, alt))
        except SolverError:
            continue
    converged = [o for o in outcomes if o.converged]
    if converged:
        return min(converged, key=lambda o: o.residual_norm_m)
    if outcomes:
        return min(outcomes, key=lambda o: o.residual_norm_m)
    raise SolverError("no start produced a solvable system")


def _setup(ranges: DifferentialRangeSet, anchors: Mapping[str, Position]):
    ref = ranges.ref_anchor_id
    if ref not in anchors:
        raise SolverError(f"reference anchor {ref!r} missing from anchor positions")
    others = [r.anchor_id for r in ranges.ranges]
    missing = [a for a in others if a not in anchors]
    if missing:
        raise SolverError(f"anchor positions missing for {missing}")
    p_ref = np.array([anchors[ref].x, anchors[ref].y])
    p_others = np.array([[anchors[a].x, anchors[a].y] for a in others])
    deltas = np.array([r.delta_m for r in ranges.ranges])
    all_pos = np.vstack([p_ref[np.newaxis, :], p_others])
    centroid = all_pos.mean(axis=0)
    return p_ref, p_others, deltas, all_pos, centroid


def _start(config: SolverConfig, centroid: np.ndarray) -> np.ndarray:
    if config.initial_guess is not None:
        return np.array([config.initial_guess.x, config.initial_guess.y])
    return centroid.copy()


def _nudged(p: np.ndarray, all_pos: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(all_pos - p, axis=1)
    if np.min(d) >= ANCHOR_EXCLUSION_M:
        return p
    direction = centroid - p
    norm = np.linalg.norm(direction)
    if norm < ANCHOR_EXCLUSION_M:  # centroid sits on the anchor: any direction works
        direction, norm = np.array([1.0, 1.0]), np.sqrt(2.0)
    return p + direction / norm * ANCHOR_NUDGE_M


def _gauss_newton(residual_jacobian, x0, config: SolverConfig) -> tuple[np.ndarray, bool, int, float]:
    x = x0
    res = residual_jacobian(x)[0]
    res_norm = np.linalg.norm(res)
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        res, jac = residual_jacobian(x)
        if not np.all(np.isfinite(jac)):
            raise SolverError("non-finite Jacobian")
        _, sv, _ = np.linalg.svd(jac, full_matrices=False)
        if sv[0] == 0 or sv[0] / max(sv[-1], np.finfo(float).tiny) > ILL_CONDITIONED:
            raise SolverError(
                "singular or ill-conditioned Jacobian (collinear anchors or degenerate geometry)"
            )
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        # Halve steps that would increase the residual norm.
        accepted = False
        for _ in range(MAX_STEP_HALVINGS + 1):
            trial = x + step
            trial_res = residual_jacobian(trial)[0]
            trial_norm = np.linalg.norm(trial_res)
            if trial_norm <= res_norm:
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            break
        x = trial
        res_norm = trial_norm
        if np.linalg.norm(step) < config.step_tolerance_m:
            converged = True
            break
    return x, converged, iterations, float(res_norm)


def solve_hyp(
    ranges: DifferentialRangeSet,
    anchors: Mapping[str, Position],
    config: SolverConfig = SolverConfig(method="hyp"),
) -> SolveOutcome:
    """Gauss-Newton on the hyperbolic differential-range residuals."""
    p_ref, p_others, deltas, all_pos, centroid = _setup(ranges, anchors)
    if len(p_others) < 2:
        raise SolverError("HYP needs at least 3 anchors (2 differential ranges)")

    def residual_jacobian(p):
        p = _nudged(p, all_pos, centroid)
        to_ref = p - p_ref
        d_ref = np.linalg.norm(to_ref)
        to_k = p - p_others
        d_k = np.linalg.norm(to_k, axis=1)
        res = d_k - d_ref - deltas
        jac = to_k / d_k[:, np.newaxis] - to_ref / d_ref
        return res, jac

    x0 = _start(config, centroid)
    x, converged, iterations, res_norm = _gauss_newton(residual_jacobian, x0, config)
    return SolveOutcome(
        position=Position(float(x[0]), float(x[1])),
        converged=converged,
        iterations=iterations,
        residual_norm_m=res_norm,
    )


def solve_ils(
    ranges: DifferentialRangeSet,
    anchors: Mapping[str, Position],
    config: SolverConfig = SolverConfig(method="ils"),
) -> SolveOutcome:
    """Iterative least squares on pseudo-ranges with a common bias unknown.

    Every anchor, the reference included, contributes one pseudo-range
    equation ``|p - p_k| = delta_k + d`` (``delta_ref = 0``), giving K
    equations in the 3 unknowns (x, y, d). K = 3 is accepted but warned
    about: the system is exactly determined, with no redundancy to absorb
    noise. K < 3 is underdetermined and rejected.
    """
    p_ref, p_others, deltas, all_pos, centroid = _setup(ranges, anchors)
    n_anchors = len(all_pos)
    if n_anchors < 3:
        raise SolverError(
            f"ILS with {n_anchors} anchors is underdetermined (3 unknowns); need >= 3"
        )
    if n_anchors == 3:
        warnings.warn(
            "ILS with exactly 3 anchors has no redundancy; the solution is "
            "exactly determined and sensitive to noise",
            stacklevel=2,
        )
    all_deltas = np.concatenate(([0.0], deltas))

    def residual_jacobian(x):
        p = _nudged(x[:2], all_pos, centroid)
        bias = x[2]
        to_k = p - all_pos
        d_k = np.linalg.norm(to_k, axis=1)
        res = d_k - bias - all_deltas
        jac = np.empty((n_anchors, 3))
        jac[:, :2] = to_k / d_k[:, np.newaxis]
        jac[:, 2] = -1.0
        return res, jac

    p0 = _start(config, centroid)
    x0 = np.array([p0[0], p0[1], np.linalg.norm(p0 - p_ref)])
    x, converged, iterations, res_norm = _gauss_newton(residual_jacobian, x0, config)
    return SolveOutcome(
        position=Position(float(x[0]), float(x[1])),
        converged=converged,
        iterations=iterations,
        residual_norm_m=res_norm,
        bias_m=float(x[2]),
    )
