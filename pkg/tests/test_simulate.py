import numpy as np
import pytest

from dtdoa.clocks import ClockModel, NoiseSpec
from dtdoa.geometry import Position
from dtdoa.simulate import (
    JitterSpec,
    NodeSpec,
    Scenario,
    ScenarioError,
    TimestampLog,
    TxSchedule,
    UnwrapError,
    load_scenario,
    save_scenario,
    scenario_from_json,
    scenario_to_json,
    simulate,
    unwrap_timestamps,
    with_seed,
)
from dtdoa.scenarios import garden_scenario, random_scenario


def ideal(alpha=0.0, beta=0.0):
    return ClockModel(alpha_s=alpha, beta=beta, noise=NoiseSpec(kind="none"))


def colocated_scenario(**kwargs):
    pos = Position(0.0, 0.0)
    nodes = (
        NodeSpec("b", "blind", pos, ideal()),
        NodeSpec("p", "pivot", pos, ideal()),
        NodeSpec("a1", "anchor", pos, ideal()),
        NodeSpec("a2", "anchor", pos, ideal()),
        NodeSpec("a3", "anchor", pos, ideal()),
    )
    defaults = dict(
        nodes=nodes,
        packets_per_channel=5,
        schedule=TxSchedule(inter_departure_s=0.01, jitter=JitterSpec(kind="none")),
    )
    defaults.update(kwargs)
    return Scenario(**defaults)


def test_colocated_ideal_timestamps_equal_transmission_times():
    sc = colocated_scenario()
    log = simulate(sc)
    # With zero distances, ideal clocks and no jitter, the stamp is the
    # departure time: q * T + slot * T / n_tx, in ticks.
    n_tx = 2
    for i in range(len(log)):
        q = log.seq[i]
        slot = 0 if log.tx_id[i] == "b" else 1
        t = q * 0.01 + slot * 0.01 / n_tx
        assert float(log.ticks[i]) == pytest.approx(t * 22e6, rel=1e-15)


def test_determinism():
    sc = garden_scenario(seed=5)
    a, b = simulate(sc), simulate(sc)
    np.testing.assert_array_equal(a.ticks, b.ticks)
    assert a.rx_id.tolist() == b.rx_id.tolist()
    assert a.seq.tolist() == b.seq.tolist()
    c = simulate(with_seed(sc, 6))
    assert not np.array_equal(a.ticks, c.ticks)


def test_default_schedule_packet_volume():
    # 10 ms inter-departure and a 200-packet block span about two seconds
    # per transmitter; every receiver hears every packet of both.
    sc = garden_scenario(seed=1, packets=200)
    log = simulate(sc)
    for rx in ("n0", "n1"):
        for tx in ("blind", "n4"):
            n = int(np.sum((log.rx_id == rx) & (log.tx_id == tx)))
            assert n == 200


def test_alternation_blind_before_pivot():
    sc = garden_scenario(seed=3, packets=50)
    log = simulate(sc)
    for rx in ("n0", "n2"):
        sel_b = (log.rx_id == rx) & (log.tx_id == "blind")
        sel_p = (log.rx_id == rx) & (log.tx_id == "n4")
        tb = log.ticks[sel_b][np.argsort(log.seq[sel_b])]
        tp = log.ticks[sel_p][np.argsort(log.seq[sel_p])]
        assert np.all(tb < tp)  # same round: blind departs first
        assert np.all(tp[:-1] < tb[1:])  # pivot before the next blind


def test_noiseless_exact_clock_relation():
    # s = alpha + (1 + beta) * r exactly when noise and drift are off.
    pos = Position(0.0, 0.0)
    nodes = (
        NodeSpec("b", "blind", pos, ideal()),
        NodeSpec("p", "pivot", pos, ideal()),
        NodeSpec("a1", "anchor", pos, ideal(alpha=0.25, beta=1e-5)),
        NodeSpec("a2", "anchor", pos, ideal()),
        NodeSpec("a3", "anchor", pos, ideal()),
    )
    sc = Scenario(
        nodes=nodes,
        packets_per_channel=4,
        schedule=TxSchedule(inter_departure_s=0.01, jitter=JitterSpec(kind="none")),
    )
    log = simulate(sc)
    ref = simulate(colocated_scenario(packets_per_channel=4))
    sel = log.rx_id == "a1"
    r = ref.ticks[ref.rx_id == "a1"] / np.longdouble(22e6)
    expected = (np.longdouble(0.25) + (1 + np.longdouble(1e-5)) * r) * np.longdouble(22e6)
    np.testing.assert_allclose(
        log.ticks[sel].astype(float), expected.astype(float), rtol=1e-15
    )


def test_drop_probability():
    from dataclasses import replace

    sc = replace(garden_scenario(seed=2, packets=200), drop_probability=0.3)
    log = simulate(sc)
    # 5 receive-only anchors hear 2 transmitters: 2000 rows without loss.
    assert 0.6 < len(log) / (5 * 2 * 200) < 0.8


def test_csv_round_trip(tmp_path):
    sc = random_scenario(seed=3, n_anchors=5, noise_kind="none", packets=20)
    log = simulate(sc)
    path = tmp_path / "log.csv"
    log.write_csv(path)
    back = TimestampLog.read_csv(path)
    np.testing.assert_array_equal(log.ticks, back.ticks)  # exact, not approx
    assert log.rx_id.tolist() == back.rx_id.tolist()
    assert log.tx_id.tolist() == back.tx_id.tolist()
    assert log.seq.tolist() == back.seq.tolist()
    assert log.channel.tolist() == back.channel.tolist()


def test_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        TimestampLog.read_csv(p)


def test_scenario_json_round_trip(tmp_path):
    sc = garden_scenario(seed=9, active=True, channels=(1, 5))
    path = tmp_path / "scenario.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert back == sc
    with pytest.raises(ScenarioError):
        scenario_from_json({**scenario_to_json(sc), "version": 999})


def test_scenario_validation():
    pos = Position(0, 0)
    with pytest.raises(ScenarioError):  # too few anchors
        Scenario(
            nodes=(
                NodeSpec("b", "blind", pos),
                NodeSpec("p", "pivot", pos),
                NodeSpec("a1", "anchor", pos),
            )
        )
    with pytest.raises(ScenarioError):  # no blind
        Scenario(
            nodes=(
                NodeSpec("p", "pivot", pos),
                NodeSpec("a1", "anchor", pos),
                NodeSpec("a2", "anchor", pos),
                NodeSpec("a3", "anchor", pos),
            )
        )
    with pytest.raises(ScenarioError):  # no reference transmitter
        Scenario(
            nodes=(
                NodeSpec("b", "blind", pos),
                NodeSpec("a1", "anchor", pos),
                NodeSpec("a2", "anchor", pos),
                NodeSpec("a3", "anchor", pos),
            )
        )
    with pytest.raises(ScenarioError):  # negative NLOS bias
        Scenario(
            nodes=(
                NodeSpec("b", "blind", pos),
                NodeSpec("p", "pivot", pos),
                NodeSpec("a1", "anchor", pos),
                NodeSpec("a2", "anchor", pos),
                NodeSpec("a3", "anchor", pos),
            ),
            nlos_bias_m={("b", "a1", 1): -2.0},
        )


def test_wrap_identity_when_disabled():
    sc = garden_scenario(seed=4, packets=20)
    log = simulate(sc)
    assert not log.wrapped
    assert unwrap_timestamps(log) is log


def test_single_wrap_mid_log():
    period = float(2**32)
    w = np.array([period - 30.0, period - 10.0, 15.0, 40.0], dtype=np.longdouble)
    log = TimestampLog(
        rx_id=np.array(["a"] * 4, dtype=object),
        tx_id=np.array(["b"] * 4, dtype=object),
        seq=np.arange(4),
        channel=np.zeros(4, dtype=np.int64),
        ticks=w,
        wrapped=True,
    )
    out = unwrap_timestamps(log)
    np.testing.assert_allclose(
        out.ticks.astype(float),
        [period - 30.0, period - 10.0, period + 15.0, period + 40.0],
    )


def test_randomized_wraps_recover_ground_truth():
    # 400 departures one second apart cross the 195 s counter period twice.
    pos_nodes = (
        NodeSpec("b", "blind", Position(0, 0), ideal(alpha=0.3)),
        NodeSpec("p", "pivot", Position(10, 0), ideal(alpha=0.1, beta=2e-5)),
        NodeSpec("a1", "anchor", Position(0, 10), ideal(alpha=0.7, beta=-1e-5)),
        NodeSpec("a2", "anchor", Position(10, 10), ideal(alpha=0.2)),
        NodeSpec("a3", "anchor", Position(5, 5), ideal(alpha=0.0, beta=3e-5)),
    )
    sc = Scenario(
        nodes=pos_nodes,
        packets_per_channel=400,
        schedule=TxSchedule(inter_departure_s=1.0),
        wrap_mode="32bit",
        seed=11,
    )
    log = simulate(sc)
    assert log.wrapped and log.true_ticks is not None
    assert np.any(log.ticks != log.true_ticks)  # wraps actually happened
    out = unwrap_timestamps(log)
    np.testing.assert_array_equal(out.ticks, log.true_ticks)


def test_unwrap_rejects_ambiguous_gap():
    # A 120 s silence exceeds half the wrap period and must be refused.
    w0 = np.longdouble(1000.0)
    gap = np.longdouble(120.0 * 22e6)
    ticks = np.mod(np.array([w0, w0 + gap]), np.longdouble(2**32))
    log = TimestampLog(
        rx_id=np.array(["a", "a"], dtype=object),
        tx_id=np.array(["b", "b"], dtype=object),
        seq=np.arange(2),
        channel=np.zeros(2, dtype=np.int64),
        ticks=ticks,
        wrapped=True,
    )
    with pytest.raises(UnwrapError):
        unwrap_timestamps(log)
