"""Loading of node metadata and timestamp logs, and blind/pivot packet pairing.

The estimation side of the system consumes two files: a JSON node table
(the known geometry — same schema family as a scenario file, positions of
the blind node being ignored if present) and the timestamp-log CSV written
by a receiver deployment or by the simulator.

Pairing turns the flat log into per-packet-pair observations: each blind
packet is associated with the next packet of the reference transmitter as
seen by every anchor, and the association must agree across anchors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import Position
from .simulate import SCHEMA_VERSION, Scenario, TimestampLog


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class NodeEntry:
    node_id: str
    role: str
    position: Position | None


@dataclass(frozen=True)
class NodeTable:
    """Known node roles and positions used by the estimation pipeline."""

    entries: tuple[NodeEntry, ...]
    tick_rate_hz: float = 22e6

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.node_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate node ids in node table")
        roles = [e.role for e in self.entries]
        if roles.count("blind") != 1:
            raise DataError("node table requires exactly one blind node")
        if roles.count("pivot") > 1:
            raise DataError("node table supports at most one pivot")
        anchors = [e for e in self.entries if e.role in ("anchor", "active-anchor")]
        if len(anchors) < 3:
            raise DataError(f"need at least 3 anchors, got {len(anchors)}")
        for e in self.entries:
            if e.role != "blind" and e.position is None:
                raise DataError(f"node {e.node_id!r} ({e.role}) needs a position")
        if self.pivot_id is None and not self.active_anchor_ids:
            raise DataError("need a pivot or active anchors as reference transmitters")
        if self.tick_rate_hz <= 0:
            raise DataError("tick rate must be positive")

    @property
    def blind_id(self) -> str:
        return next(e.node_id for e in self.entries if e.role == "blind")

    @property
    def pivot_id(self) -> str | None:
        return next((e.node_id for e in self.entries if e.role == "pivot"), None)

    @property
    def anchor_ids(self) -> tuple[str, ...]:
        return tuple(e.node_id for e in self.entries if e.role in ("anchor", "active-anchor"))

    @property
    def active_anchor_ids(self) -> tuple[str, ...]:
        return tuple(e.node_id for e in self.entries if e.role == "active-anchor")

    def __contains__(self, node_id: str) -> bool:
        return any(e.node_id == node_id for e in self.entries)

    def entry(self, node_id: str) -> NodeEntry:
        for e in self.entries:
            if e.node_id == node_id:
                return e
        raise KeyError(node_id)

    def position(self, node_id: str) -> Position:
        pos = self.entry(node_id).position
        if pos is None:
            raise DataError(f"no known position for node {node_id!r}")
        return pos

    def with_pivot(self, pivot_id: str) -> "NodeTable":
        """Reassign roles so that ``pivot_id`` acts as the pivot.

        Used to decompose an active-anchor deployment into single-pivot
        sub-instances: the chosen anchor stops receiving, every other
        active anchor keeps its receiver role.
        """
        if self.entry(pivot_id).role not in ("anchor", "active-anchor"):
            raise DataError(f"{pivot_id!r} is not an anchor")
        entries = []
        for e in self.entries:
            if e.node_id == pivot_id:
                entries.append(replace(e, role="pivot"))
            elif e.role == "pivot":
                entries.append(replace(e, role="anchor"))
            else:
                entries.append(e)
        return NodeTable(tuple(entries), tick_rate_hz=self.tick_rate_hz)


def node_table_from_scenario(scenario: Scenario, keep_blind_position: bool = False) -> NodeTable:
    """Extract the estimation-facing node table from a scenario."""
    entries = []
    for n in scenario.nodes:
        pos = n.position if (n.role != "blind" or keep_blind_position) else None
        entries.append(NodeEntry(n.node_id, n.role, pos))
    return NodeTable(tuple(entries), tick_rate_hz=scenario.tick_rate_hz)


def nodes_to_json(nodes: NodeTable) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "tick_rate_hz": nodes.tick_rate_hz,
        "nodes": [
            {
                "id": e.node_id,
                "role": e.role,
                "position": None if e.position is None else [e.position.x, e.position.y],
            }
            for e in nodes.entries
        ],
    }


def save_nodes(nodes: NodeTable, path) -> None:
    with open(path, "w") as fh:
        json.dump(nodes_to_json(nodes), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_nodes(path) -> NodeTable:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {version!r}")
    entries = []
    for nd in data.get("nodes", []):
        try:
            pos = nd.get("position")
            entries.append(
                NodeEntry(
                    node_id=str(nd["id"]),
                    role=str(nd["role"]),
                    position=None if pos is None else Position(float(pos[0]), float(pos[1])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad node record {nd!r}: {exc}") from None
    return NodeTable(tuple(entries), tick_rate_hz=float(data.get("tick_rate_hz", 22e6)))


def load(nodes_path, log_path, wrapped: bool = False) -> tuple[NodeTable, TimestampLog]:
    """Load and cross-validate a node table and a timestamp log."""
    nodes = load_nodes(nodes_path)
    try:
        log = TimestampLog.read_csv(log_path, wrapped=wrapped)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    known = {e.node_id for e in nodes.entries}
    for col, name in ((log.rx_id, "receiver"), (log.tx_id, "transmitter")):
        unknown = set(col.tolist()) - known
        if unknown:
            raise DataError(f"log references unknown {name} ids: {sorted(unknown)}")
    keys = list(zip(log.rx_id.tolist(), log.tx_id.tolist(), log.seq.tolist(), log.channel.tolist()))
    if len(set(keys)) != len(keys):
        raise DataError("duplicate (rx, tx, seq, channel) rows in log")
    return nodes, log


@dataclass(frozen=True)
class PairedObservation:
    """Timestamps of one blind/pivot packet pair at each anchor.

    ``entries`` maps anchor id to ``(blind_ticks, pivot_ticks)``; an
    observation is complete when every anchor of the node table
    contributed both timestamps.
    """

    pair_index: int
    channel: int
    pivot_seq: int
    entries: Mapping[str, tuple]
    complete: bool

    def has(self, *anchor_ids: str) -> bool:
        return all(a in self.entries for a in anchor_ids)


def pair_packets(
    log: TimestampLog,
    nodes: NodeTable,
    channel: int,
    pivot_id: str | None = None,
) -> list[PairedObservation]:
    """Pair each blind packet with the next pivot packet at every anchor.

    The pairing key is purely (timestamp, sequence) order per anchor, so
    permuting log rows cannot change the result. Packet loss can make an
    anchor nominate a later pivot packet than the rest; the consensus
    pairing is the earliest nominated pivot sequence (losses only ever push
    a nomination later), and anchors disagreeing with it are dropped from
    that observation, leaving it incomplete but usable for the others.
    """
    if log.wrapped:
        raise DataError("pairing requires unwrapped timestamps; run unwrap_timestamps first")
    pivot = pivot_id or nodes.pivot_id
    if pivot is None:
        raise DataError("no pivot available for pairing")
    blind = nodes.blind_id
    anchors = [a for a in nodes.anchor_ids if a != pivot]

    # Per anchor: blind seq -> (pivot seq, blind ticks, pivot ticks).
    candidates: dict[str, dict[int, tuple]] = {}
    chan_mask = log.channel == channel
    for anchor in anchors:
        rows_mask = chan_mask & (log.rx_id == anchor)
        b_mask = rows_mask & (log.tx_id == blind)
        p_mask = rows_mask & (log.tx_id == pivot)
        if not b_mask.any() or not p_mask.any():
            candidates[anchor] = {}
            continue
        b_order = np.lexsort((log.seq[b_mask], log.ticks[b_mask]))
        p_order = np.lexsort((log.seq[p_mask], log.ticks[p_mask]))
        b_seq = log.seq[b_mask][b_order]
        b_ticks = log.ticks[b_mask][b_order]
        p_seq = log.seq[p_mask][p_order]
        p_ticks = log.ticks[p_mask][p_order]
        found: dict[int, tuple] = {}
        j = 0
        for i in range(len(b_seq)):
            while j < len(p_ticks) and p_ticks[j] <= b_ticks[i]:
                j += 1
            if j == len(p_ticks):
                break
            found[int(b_seq[i])] = (int(p_seq[j]), b_ticks[i], p_ticks[j])
        candidates[anchor] = found

    all_blind_seqs = sorted({s for per in candidates.values() for s in per})
    if not all_blind_seqs:
        raise DataError(f"no pairable blind/pivot packets on channel {channel}")

    observations = []
    for bseq in all_blind_seqs:
        per_anchor = {a: candidates[a][bseq] for a in anchors if bseq in candidates[a]}
        consensus = min(v[0] for v in per_anchor.values())
        entries = {a: (v[1], v[2]) for a, v in per_anchor.items() if v[0] == consensus}
        if not entries:
            continue
        observations.append(
            PairedObservation(
                pair_index=bseq,
                channel=channel,
                pivot_seq=consensus,
                entries=entries,
                complete=len(entries) == len(anchors),
            )
        )
    return observations


def pair_all_channels(
    log: TimestampLog,
    nodes: NodeTable,
    channels: Sequence[int] | None = None,
    pivot_id: str | None = None,
) -> dict[int, list[PairedObservation]]:
    """Pair packets on every (or the given) channels present in the log."""
    chans = sorted(set(log.channel.tolist())) if channels is None else list(channels)
    out = {}
    for ch in chans:
        try:
            out[ch] = pair_packets(log, nodes, ch, pivot_id=pivot_id)
        except DataError:
            out[ch] = []
    if not any(out.values()):
        raise DataError("no pairable packets on any channel")
    return out
