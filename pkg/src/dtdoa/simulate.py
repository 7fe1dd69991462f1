"""Deterministic scenario simulator producing reception-timestamp logs.

A scenario holds a set of radio nodes (one blind transmitter in a position
to be estimated, optionally a pivot transmitter in a known position, and
receiving anchors that may themselves transmit), a transmission schedule and
per-node clock models. ``simulate`` plays the schedule out: every packet
reaches every receiver after its line-of-sight (plus any configured excess
NLOS path) propagation delay and is stamped through that receiver's clock
model. The result is the only input the estimation pipeline ever sees.

Transmitters are staggered inside the common inter-departure period, blind
node first, so that blind and reference packets strictly alternate and each
blind packet can be paired with the next packet of any other transmitter.

Everything is driven by a single seeded generator: identical scenarios give
bit-identical logs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .clocks import ClockModel, DriftSpec, NoiseSpec, local_timestamp
from .geometry import SPEED_OF_LIGHT, Position, distance

ROLES = ("blind", "pivot", "anchor", "active-anchor")
WRAP_PERIOD_TICKS = 2**32

LOG_CSV_HEADER = ["rx_id", "tx_id", "seq", "channel", "ticks"]

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Invalid scenario definition."""


class UnwrapError(ValueError):
    """Wrapped timestamps cannot be disambiguated."""


@dataclass(frozen=True)
class JitterSpec:
    """Channel-access delay added to each departure.

    "uniform" draws from [0, slots * slot_s), modelling a random backoff of
    up to ``slots`` contention slots. The delay shifts the true transmission
    time only, which the double-difference processing cancels.
    """

    kind: str = "uniform"
    slots: int = 15
    slot_s: float = 20e-6

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform"):
            raise ScenarioError(f"unknown jitter kind {self.kind!r}")
        if self.kind == "uniform" and (self.slots < 0 or self.slot_s < 0):
            raise ScenarioError("jitter slots and slot duration must be >= 0")


@dataclass(frozen=True)
class TxSchedule:
    inter_departure_s: float = 0.01
    jitter: JitterSpec = JitterSpec()

    def __post_init__(self) -> None:
        if self.inter_departure_s <= 0:
            raise ScenarioError("inter-departure period must be positive")


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    role: str
    position: Position | None = None
    clock: ClockModel = ClockModel()

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ScenarioError(f"unknown role {self.role!r} for node {self.node_id!r}")


@dataclass(frozen=True)
class Scenario:
    """Complete, self-contained description of one simulated measurement."""

    nodes: tuple[NodeSpec, ...]
    channels: tuple[int, ...] = (1,)
    schedule: TxSchedule = TxSchedule()
    packets_per_channel: int = 200
    nlos_bias_m: Mapping[tuple[str, str, int], float] = field(default_factory=dict)
    tick_rate_hz: float = 22e6
    wrap_mode: str = "none"
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "channels", tuple(self.channels))
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ScenarioError("node ids must be unique")
        roles = [n.role for n in self.nodes]
        if roles.count("blind") != 1:
            raise ScenarioError("scenario requires exactly one blind node")
        if roles.count("pivot") > 1:
            raise ScenarioError("at most one pivot node is supported")
        n_rx = sum(r in ("anchor", "active-anchor") for r in roles)
        if n_rx < 3:
            raise ScenarioError(f"scenario requires at least 3 anchors, got {n_rx}")
        known_tx = [n for n in self.nodes if n.role in ("pivot", "active-anchor")]
        if not known_tx:
            raise ScenarioError("need a pivot or active anchors as reference transmitters")
        for n in self.nodes:
            if n.position is None:
                raise ScenarioError(f"simulation node {n.node_id!r} needs a position")
        for (tx, rx, _ch), extra in self.nlos_biases().items():
            if extra < 0:
                raise ScenarioError(f"NLOS bias for ({tx}, {rx}) must be >= 0")
        if len(set(self.channels)) != len(self.channels) or not self.channels:
            raise ScenarioError("channels must be a nonempty list of distinct ids")
        if self.packets_per_channel < 1:
            raise ScenarioError("packets_per_channel must be >= 1")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ScenarioError("drop_probability must be in [0, 1)")
        if self.tick_rate_hz <= 0:
            raise ScenarioError("tick rate must be positive")
        if self.wrap_mode not in ("none", "32bit"):
            raise ScenarioError(f"unknown wrap mode {self.wrap_mode!r}")

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def blind(self) -> NodeSpec:
        return next(n for n in self.nodes if n.role == "blind")

    def pivot(self) -> NodeSpec | None:
        return next((n for n in self.nodes if n.role == "pivot"), None)

    def transmitters(self) -> list[NodeSpec]:
        """Transmitting nodes in schedule-slot order (blind always first)."""
        blind = [self.blind()]
        pivot = [n for n in self.nodes if n.role == "pivot"]
        active = [n for n in self.nodes if n.role == "active-anchor"]
        return blind + pivot + active

    def receivers(self) -> list[NodeSpec]:
        return [n for n in self.nodes if n.role in ("anchor", "active-anchor")]

    def nlos_biases(self) -> dict[tuple[str, str, int], float]:
        """Excess path per (tx, rx, channel), defaulting to zero."""
        return dict(self.nlos_bias_m)


@dataclass
class TimestampLog:
    """Columnar reception-timestamp table.

    One row per (receiver, transmitted packet): receiver id, transmitter id,
    per-transmitter packet sequence number, channel id and the local
    timestamp in ticks. Ticks are extended-precision floats; with the
    default quantizing clocks they are integer-valued. ``wrapped`` marks
    logs whose ticks are reduced modulo the 32-bit counter period;
    ``true_ticks`` retains the simulator's unwrapped ground truth.
    """

    rx_id: np.ndarray
    tx_id: np.ndarray
    seq: np.ndarray
    channel: np.ndarray
    ticks: np.ndarray
    wrapped: bool = False
    true_ticks: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ticks)

    def select(self, rx=None, tx=None, channel=None) -> "TimestampLog":
        mask = np.ones(len(self), dtype=bool)
        if rx is not None:
            mask &= self.rx_id == rx
        if tx is not None:
            mask &= self.tx_id == tx
        if channel is not None:
            mask &= self.channel == channel
        return TimestampLog(
            self.rx_id[mask],
            self.tx_id[mask],
            self.seq[mask],
            self.channel[mask],
            self.ticks[mask],
            wrapped=self.wrapped,
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_CSV_HEADER)
            for i in range(len(self)):
                writer.writerow(
                    [
                        self.rx_id[i],
                        self.tx_id[i],
                        int(self.seq[i]),
                        int(self.channel[i]),
                        str(self.ticks[i]),
                    ]
                )

    @classmethod
    def read_csv(cls, path, wrapped: bool = False) -> "TimestampLog":
        rx, tx, seq, channel, ticks = [], [], [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LOG_CSV_HEADER:
                raise ValueError(f"bad log header {header!r}, expected {LOG_CSV_HEADER}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
                try:
                    rx.append(row[0])
                    tx.append(row[1])
                    seq.append(int(row[2]))
                    channel.append(int(row[3]))
                    ticks.append(np.longdouble(row[4]))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls(
            np.array(rx, dtype=object),
            np.array(tx, dtype=object),
            np.array(seq, dtype=np.int64),
            np.array(channel, dtype=np.int64),
            np.array(ticks, dtype=np.longdouble),
            wrapped=wrapped,
        )


def simulate(scenario: Scenario) -> TimestampLog:
    """Run a scenario and return its timestamp log.

    Channels are played back-to-back in listed order. Within a channel,
    packet round ``q`` departs at ``q * T`` and transmitter ``m`` is offset
    by ``m * T / n_tx`` plus its access jitter, so transmissions interleave
    deterministically. Every receiver other than the transmitter itself
    stamps the packet unless it is dropped.
    """
    rng = np.random.default_rng(scenario.seed)
    tx_nodes = scenario.transmitters()
    rx_nodes = scenario.receivers()
    n_tx = len(tx_nodes)
    packets = scenario.packets_per_channel
    period = scenario.schedule.inter_departure_s
    stagger = period / n_tx
    jitter = scenario.schedule.jitter
    biases = scenario.nlos_biases()
    tick_rate = scenario.tick_rate_hz
    # One guard period between channel blocks.
    block_span = (packets + 1) * period

    q_grid, m_grid = np.meshgrid(np.arange(packets), np.arange(n_tx), indexing="ij")
    rx_parts = {node.node_id: [] for node in rx_nodes}

    for c_idx, ch in enumerate(scenario.channels):
        t = (
            np.longdouble(c_idx) * np.longdouble(block_span)
            + q_grid * np.longdouble(period)
            + m_grid * np.longdouble(stagger)
        )
        if jitter.kind == "uniform" and jitter.slots * jitter.slot_s > 0:
            t = t + rng.uniform(0.0, jitter.slots * jitter.slot_s, size=t.shape)
        seq = c_idx * packets + q_grid

        for rx_idx, rx in enumerate(rx_nodes):
            delay = np.array(
                [
                    (distance(txn.position, rx.position) + biases.get((txn.node_id, rx.node_id, ch), 0.0))
                    / SPEED_OF_LIGHT
                    for txn in tx_nodes
                ],
                dtype=np.longdouble,
            )
            r = t + delay[np.newaxis, :]
            drop = rng.random(size=t.shape) < scenario.drop_probability
            ticks = local_timestamp(rx.clock, r, tick_rate, rng)
            keep = ~drop
            for m, txn in enumerate(tx_nodes):
                if txn.node_id == rx.node_id:
                    keep[:, m] = False
            rx_parts[rx.node_id].append(
                (c_idx, ch, rx_idx, q_grid[keep], m_grid[keep], seq[keep], ticks[keep])
            )

    rx_col, tx_col, seq_col, ch_col, ticks_col = [], [], [], [], []
    order_keys = []
    for rx in rx_nodes:
        for c_idx, ch, rx_idx, qs, ms, seqs, ticks in rx_parts[rx.node_id]:
            n = len(qs)
            rx_col.append(np.full(n, rx.node_id, dtype=object))
            tx_col.append(np.array([tx_nodes[m].node_id for m in ms], dtype=object))
            seq_col.append(seqs.astype(np.int64))
            ch_col.append(np.full(n, ch, dtype=np.int64))
            ticks_col.append(ticks)
            order_keys.append(
                np.stack([np.full(n, c_idx), qs, ms, np.full(n, rx_idx)], axis=0)
            )

    keys = np.concatenate(order_keys, axis=1)
    order = np.lexsort(keys[::-1])
    true_ticks = np.concatenate(ticks_col)[order]
    log = TimestampLog(
        rx_id=np.concatenate(rx_col)[order],
        tx_id=np.concatenate(tx_col)[order],
        seq=np.concatenate(seq_col)[order],
        channel=np.concatenate(ch_col)[order],
        ticks=true_ticks,
    )
    if scenario.wrap_mode == "32bit":
        log.true_ticks = true_ticks
        log.ticks = np.mod(true_ticks, np.longdouble(WRAP_PERIOD_TICKS))
        log.wrapped = True
    return log


# Largest tolerated backward step between consecutive receptions at one
# receiver: genuine reordering from access jitter is a few ms at most, while
# an aliased wrap shows up as a huge negative jump.
_MAX_BACKWARD_TICKS = float(2**20)


def unwrap_timestamps(log: TimestampLog) -> TimestampLog:
    """Undo 32-bit counter wraparound, returning monotone per-receiver ticks.

    Rows must appear in reception order per receiver (as written by the
    simulator) and true gaps must stay below half the wrap period; a larger
    gap is ambiguous and raises :class:`UnwrapError`. The counter is assumed
    to start inside its first epoch, so results equal the pre-wrap truth.
    """
    if not log.wrapped:
        return log
    period = np.longdouble(WRAP_PERIOD_TICKS)
    half = np.longdouble(2**31)
    out = log.ticks.copy()
    for rx in dict.fromkeys(log.rx_id.tolist()):
        idx = np.nonzero(log.rx_id == rx)[0]
        w = log.ticks[idx]
        diffs = np.diff(w)
        steps = np.mod(diffs + half, period) - half
        if np.any(steps < -_MAX_BACKWARD_TICKS):
            raise UnwrapError(
                f"receiver {rx!r}: backward jump exceeds reordering tolerance; "
                "gap too large to disambiguate"
            )
        # (steps - diffs) is an exact integer multiple of the period, so the
        # per-row wrap count is exact and no rounding accumulates.
        wraps = np.rint(((steps - diffs) / period).astype(float)).astype(np.int64)
        out[idx] = w + period * np.concatenate(([0], np.cumsum(wraps))).astype(np.longdouble)
    return TimestampLog(log.rx_id, log.tx_id, log.seq, log.channel, out, wrapped=False)


# --- scenario (de)serialisation -------------------------------------------


def _clock_to_json(clock: ClockModel) -> dict:
    out: dict = {"alpha_s": clock.alpha_s, "beta": clock.beta}
    if clock.drift.kind != "none":
        out["drift"] = {
            "kind": clock.drift.kind,
            "rate_s_per_s": clock.drift.rate_s_per_s,
            "amplitude_s": clock.drift.amplitude_s,
            "period_s": clock.drift.period_s,
        }
    out["noise"] = {
        "kind": clock.noise.kind,
        "sigma_s": clock.noise.sigma_s,
        "bias_s": clock.noise.bias_s,
    }
    return out


def _clock_from_json(data: Mapping | None) -> ClockModel:
    if data is None:
        return ClockModel()
    drift = data.get("drift")
    noise = data.get("noise")
    return ClockModel(
        alpha_s=float(data.get("alpha_s", 0.0)),
        beta=float(data.get("beta", 0.0)),
        drift=DriftSpec(**drift) if drift else DriftSpec(),
        noise=NoiseSpec(**noise) if noise else NoiseSpec(),
    )


def scenario_to_json(scenario: Scenario) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "seed": scenario.seed,
        "tick_rate_hz": scenario.tick_rate_hz,
        "wrap_mode": scenario.wrap_mode,
        "channels": list(scenario.channels),
        "packets_per_channel": scenario.packets_per_channel,
        "drop_probability": scenario.drop_probability,
        "schedule": {
            "inter_departure_s": scenario.schedule.inter_departure_s,
            "jitter": {
                "kind": scenario.schedule.jitter.kind,
                "slots": scenario.schedule.jitter.slots,
                "slot_s": scenario.schedule.jitter.slot_s,
            },
        },
        "nodes": [
            {
                "id": n.node_id,
                "role": n.role,
                "position": None if n.position is None else [n.position.x, n.position.y],
                "clock": _clock_to_json(n.clock),
            }
            for n in scenario.nodes
        ],
        "nlos_bias_m": [
            {"tx": tx, "rx": rx, "channel": ch, "extra_m": extra}
            for (tx, rx, ch), extra in sorted(scenario.nlos_biases().items())
        ],
    }


def scenario_from_json(data: Mapping) -> Scenario:
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema version {version!r}")
    nodes = []
    for nd in data["nodes"]:
        pos = nd.get("position")
        nodes.append(
            NodeSpec(
                node_id=str(nd["id"]),
                role=str(nd["role"]),
                position=None if pos is None else Position(float(pos[0]), float(pos[1])),
                clock=_clock_from_json(nd.get("clock")),
            )
        )
    sched = data.get("schedule", {})
    jit = sched.get("jitter", {})
    nlos = {
        (str(e["tx"]), str(e["rx"]), int(e["channel"])): float(e["extra_m"])
        for e in data.get("nlos_bias_m", [])
    }
    return Scenario(
        nodes=tuple(nodes),
        channels=tuple(int(c) for c in data.get("channels", [1])),
        schedule=TxSchedule(
            inter_departure_s=float(sched.get("inter_departure_s", 0.01)),
            jitter=JitterSpec(
                kind=str(jit.get("kind", "uniform")),
                slots=int(jit.get("slots", 15)),
                slot_s=float(jit.get("slot_s", 20e-6)),
            ),
        ),
        packets_per_channel=int(data.get("packets_per_channel", 200)),
        nlos_bias_m=nlos,
        tick_rate_hz=float(data.get("tick_rate_hz", 22e6)),
        wrap_mode=str(data.get("wrap_mode", "none")),
        drop_probability=float(data.get("drop_probability", 0.0)),
        seed=int(data.get("seed", 0)),
    )


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_json(json.load(fh))


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)
