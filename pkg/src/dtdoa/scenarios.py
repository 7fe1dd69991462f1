"""Ready-made topologies and scenario builders.

The fixed layouts mirror the kind of deployments the method targets: a
garden-sized outdoor rectangle with six fixed nodes, an indoor hall with
nine infrastructure nodes two of which sit behind walls (mild NLOS), and a
small symmetric square that makes the true double differences vanish.

All randomness (clock parameters, NLOS bias draws) is derived from the
builder's ``seed`` so scenarios are fully reproducible; the same seed also
drives the simulation itself.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .clocks import ClockModel, NoiseSpec
from .geometry import Position
from .simulate import JitterSpec, NodeSpec, Scenario, TxSchedule

# Six fixed nodes spread over a 16 x 20 m outdoor rectangle.
GARDEN_FIXED = (
    Position(0.0, 0.0),
    Position(16.0, 0.0),
    Position(16.0, 20.0),
    Position(0.0, 20.0),
    Position(8.0, 2.0),
    Position(8.0, 18.0),
)

# Indoor hall, 24 x 14 m, seven line-of-sight nodes plus two nodes in
# adjacent corridors whose links all carry excess path.
HALL_LOS = (
    Position(0.0, 0.0),
    Position(12.0, 0.0),
    Position(24.0, 0.0),
    Position(24.0, 14.0),
    Position(12.0, 14.0),
    Position(0.0, 14.0),
    Position(6.0, 7.0),
)
HALL_CORRIDOR = (
    Position(28.0, 2.0),
    Position(28.0, 12.0),
)


def _draw_clock(rng: np.random.Generator, alpha_range_s: float, beta_ppm: float, noise: NoiseSpec) -> ClockModel:
    return ClockModel(
        alpha_s=float(rng.uniform(-alpha_range_s, alpha_range_s)),
        beta=float(rng.uniform(-beta_ppm, beta_ppm) * 1e-6),
        noise=noise,
    )


def _noise(kind: str) -> NoiseSpec:
    return NoiseSpec(kind=kind)


def garden_scenario(
    blind: Position = Position(5.0, 12.0),
    seed: int = 0,
    active: bool = False,
    pivot_index: int = 4,
    packets: int = 200,
    channels: Sequence[int] = (1,),
    noise_kind: str = "quantize",
    alpha_range_s: float = 1.0,
    beta_ppm: float = 20.0,
) -> Scenario:
    """Garden-like deployment: six fixed nodes, one blind transmitter.

    With ``active=False`` the node at ``pivot_index`` is the pivot and the
    other five are receive-only anchors; with ``active=True`` all six are
    active anchors.
    """
    clock_rng = np.random.default_rng([seed, 0xC10C])
    noise = _noise(noise_kind)
    nodes = [
        NodeSpec("blind", "blind", blind, _draw_clock(clock_rng, alpha_range_s, beta_ppm, noise))
    ]
    for i, pos in enumerate(GARDEN_FIXED):
        if active:
            role = "active-anchor"
        else:
            role = "pivot" if i == pivot_index else "anchor"
        nodes.append(
            NodeSpec(f"n{i}", role, pos, _draw_clock(clock_rng, alpha_range_s, beta_ppm, noise))
        )
    return Scenario(
        nodes=tuple(nodes),
        channels=tuple(channels),
        packets_per_channel=packets,
        seed=seed,
    )


def hall_scenario(
    blind: Position = Position(9.0, 5.0),
    seed: int = 0,
    channels: Sequence[int] = (1, 5, 10, 14),
    packets: int = 200,
    nlos_low_m: float = 5.0,
    nlos_high_m: float = 30.0,
    with_nlos: bool = True,
    noise_kind: str = "quantize",
    beta_ppm: float = 20.0,
) -> Scenario:
    """Hall deployment: nine active anchors, two of them behind walls.

    Every link touching a corridor node carries an independent positive
    excess path per channel, drawn uniformly from the given band. Disable
    with ``with_nlos=False`` for the full line-of-sight baseline.
    """
    clock_rng = np.random.default_rng([seed, 0xC10C])
    nlos_rng = np.random.default_rng([seed, 0x7105])
    noise = _noise(noise_kind)
    nodes = [NodeSpec("blind", "blind", blind, _draw_clock(clock_rng, 1.0, beta_ppm, noise))]
    ids = []
    for i, pos in enumerate(HALL_LOS):
        ids.append(f"h{i}")
        nodes.append(
            NodeSpec(f"h{i}", "active-anchor", pos, _draw_clock(clock_rng, 1.0, beta_ppm, noise))
        )
    corridor_ids = []
    for i, pos in enumerate(HALL_CORRIDOR):
        corridor_ids.append(f"c{i}")
        nodes.append(
            NodeSpec(f"c{i}", "active-anchor", pos, _draw_clock(clock_rng, 1.0, beta_ppm, noise))
        )

    nlos = {}
    if with_nlos:
        all_ids = ["blind"] + ids + corridor_ids
        for nid in corridor_ids:
            for other in all_ids:
                if other == nid:
                    continue
                for ch in channels:
                    extra = float(nlos_rng.uniform(nlos_low_m, nlos_high_m))
                    # Obstruction delays both directions of the link alike.
                    nlos[(other, nid, ch)] = extra
                    if other != "blind":
                        nlos[(nid, other, ch)] = extra
    return Scenario(
        nodes=tuple(nodes),
        channels=tuple(channels),
        packets_per_channel=packets,
        nlos_bias_m=nlos,
        seed=seed,
    )


def square_scenario(
    side_m: float = 10.0,
    seed: int = 0,
    noise_kind: str = "quantize",
    beta_ppm: float = 20.0,
    packets: int = 200,
) -> Scenario:
    """Symmetric square: blind and pivot on one diagonal, anchors on the other.

    Both true differential ranges of the diagonal anchor pair vanish, so any
    measured double difference between them is pure noise. A third anchor
    off the square keeps the scenario solvable; the symmetric pair is the
    one to analyse.
    """
    a = side_m
    clock_rng = np.random.default_rng([seed, 0xC10C])
    noise = _noise(noise_kind)

    def clock():
        return _draw_clock(clock_rng, 1.0, beta_ppm, noise)

    nodes = (
        NodeSpec("blind", "blind", Position(0.0, 0.0), clock()),
        NodeSpec("pivot", "pivot", Position(a, a), clock()),
        NodeSpec("a1", "anchor", Position(a, 0.0), clock()),
        NodeSpec("a2", "anchor", Position(0.0, a), clock()),
        NodeSpec("aux", "anchor", Position(2.0 * a, 0.5 * a), clock()),
    )
    return Scenario(nodes=nodes, packets_per_channel=packets, seed=seed)


def random_scenario(
    seed: int,
    n_anchors: int | None = None,
    box_m: float = 20.0,
    alpha_range_s: float = 1.0,
    beta_ppm: float = 50.0,
    noise_kind: str = "none",
    packets: int = 200,
    min_separation_m: float = 2.0,
) -> Scenario:
    """Random non-degenerate single-pivot scenario in a square box.

    Anchor, pivot and blind positions are rejection-sampled to keep a
    minimum pairwise separation, which rules out collinear-degenerate
    geometry in practice.
    """
    rng = np.random.default_rng([seed, 0x5CEA])
    if n_anchors is None:
        n_anchors = int(rng.integers(5, 10))

    placed: list[Position] = []

    def place() -> Position:
        for _ in range(1000):
            cand = Position(*(rng.uniform(0.0, box_m, 2).tolist()))
            if all(
                np.hypot(cand.x - p.x, cand.y - p.y) >= min_separation_m for p in placed
            ):
                placed.append(cand)
                return cand
        raise RuntimeError("could not place nodes with the requested separation")

    noise = _noise(noise_kind)
    clock_rng = np.random.default_rng([seed, 0xC10C])
    nodes = [
        NodeSpec("blind", "blind", place(), _draw_clock(clock_rng, alpha_range_s, beta_ppm, noise)),
        NodeSpec("pivot", "pivot", place(), _draw_clock(clock_rng, alpha_range_s, beta_ppm, noise)),
    ]
    for i in range(n_anchors):
        nodes.append(
            NodeSpec(
                f"a{i}", "anchor", place(), _draw_clock(clock_rng, alpha_range_s, beta_ppm, noise)
            )
        )
    return Scenario(nodes=tuple(nodes), packets_per_channel=packets, seed=seed)


def default_schedule() -> TxSchedule:
    return TxSchedule(inter_departure_s=0.01, jitter=JitterSpec(kind="uniform", slots=15, slot_s=20e-6))
