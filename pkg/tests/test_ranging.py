from fractions import Fraction

import numpy as np
import pytest

from conftest import ExactInstance, make_obs
from dtdoa.dataio import node_table_from_scenario, pair_packets
from dtdoa.geometry import SPEED_OF_LIGHT, diff_range
from dtdoa.ranging import (
    EstimationError,
    average_block,
    differential_ranges,
    double_difference,
    estimate_gamma,
)
from dtdoa.scenarios import garden_scenario, random_scenario, square_scenario
from dtdoa.simulate import simulate


def synthetic_obs(alphas, betas, n=50, dt=0.01, stagger=0.005, tick_rate=22e6):
    """Noiseless timestamps in float arithmetic for slope checks."""
    out = []
    for i in range(n):
        tb, tp = i * dt, i * dt + stagger
        entries = {
            a: (
                (alphas[a] + (1 + betas[a]) * tb) * tick_rate,
                (alphas[a] + (1 + betas[a]) * tp) * tick_rate,
            )
            for a in alphas
        }
        out.append(make_obs(i, entries))
    return out


# --- clock-rate ratio regression -------------------------------------------


def test_gamma_identical_clocks():
    obs = synthetic_obs({"r": 0.3, "k": 0.3}, {"r": 2e-5, "k": 2e-5})
    ge = estimate_gamma(obs, "r", "k")
    assert ge.gamma_hat == pytest.approx(1.0, abs=1e-14)
    assert ge.sample_count == 50


def test_gamma_analytic_slope():
    obs = synthetic_obs({"r": 0.0, "k": 0.7}, {"r": 0.0, "k": 1e-5})
    ge = estimate_gamma(obs, "r", "k")
    assert ge.gamma_hat == pytest.approx(1.0 / (1.0 + 1e-5), rel=1e-13)


def test_gamma_quantization_monte_carlo():
    # Smaller version of the acceptance run: one-tick noise, M = 200 pairs
    # over 2 s, skews tens of ppm apart; the regression slope stays within
    # 1e-7 (the analytic slope sigma is about 2.3e-9).
    hits = 0
    for seed in range(50):
        sc = random_scenario(seed=seed, n_anchors=3, noise_kind="quantize", packets=200, beta_ppm=20.0)
        log = simulate(sc)
        nodes = node_table_from_scenario(sc)
        obs = pair_packets(log, nodes, channel=1)
        ref, k = nodes.anchor_ids[0], nodes.anchor_ids[1]
        betas = {n.node_id: n.clock.beta for n in sc.nodes}
        gamma_true = (1 + betas[ref]) / (1 + betas[k])
        ge = estimate_gamma(obs, ref, k)
        hits += abs(float(ge.gamma_hat) - gamma_true) < 1e-7
    assert hits == 50


def test_gamma_needs_two_points_and_variance():
    obs = synthetic_obs({"r": 0.0, "k": 0.0}, {"r": 0.0, "k": 0.0}, n=1)
    with pytest.raises(EstimationError):
        estimate_gamma(obs, "r", "k")
    flat = [make_obs(i, {"r": (1.0, 2.0), "k": (1.0, 2.0)}) for i in range(5)]
    with pytest.raises(EstimationError):
        estimate_gamma(flat, "r", "k")


# --- double differences ------------------------------------------------------


def test_double_difference_recovers_range_difference():
    # All skews zero: c * S_hat / f equals the blind/pivot differential
    # range mismatch exactly, for any clock offsets.
    rng = np.random.default_rng(3)
    inst = ExactInstance(rng, ["r", "k"], n_pairs=8)
    inst.betas = {a: Fraction(0) for a in inst.anchors}
    obs = inst.observations()
    for o in obs:
        dd = double_difference(o, "r", "k", 1)
        i = o.pair_index
        truth = (
            (inst.r_pivot[(i, "r")] - inst.r_blind[(i, "r")])
            - (inst.r_pivot[(i, "k")] - inst.r_blind[(i, "k")])
        ) * inst.tick_rate
        assert dd.s_hat_ticks == truth  # exact rational equality


def test_double_difference_offset_cancellation_exact():
    rng = np.random.default_rng(4)
    inst = ExactInstance(rng, ["r", "k"], n_pairs=6)
    gamma = inst.exact_gamma("r", "k")
    base = [double_difference(o, "r", "k", gamma).s_hat_ticks for o in inst.observations()]
    alphas2 = {a: v + frac_const for (a, v), frac_const in zip(inst.alphas.items(), [Fraction(7, 13), Fraction(-3, 11)])}
    shifted = [
        double_difference(o, "r", "k", gamma).s_hat_ticks
        for o in inst.observations(alphas=alphas2)
    ]
    assert base == shifted  # exactly invariant, zero tolerance


def test_double_difference_matches_reception_time_oracle():
    # The full clock model identity: S_hat rebuilt from the hidden
    # reception times and skews must equal the pipeline value computed
    # from timestamps alone.
    rng = np.random.default_rng(5)
    inst = ExactInstance(rng, ["r", "k"], n_pairs=10)
    gamma = inst.exact_gamma("r", "k")
    for o in inst.observations():
        i = o.pair_index
        got = double_difference(o, "r", "k", gamma).s_hat_ticks
        oracle = (
            (1 + inst.betas["r"])
            * (
                (inst.r_pivot[(i, "r")] - inst.r_blind[(i, "r")])
                - (inst.r_pivot[(i, "k")] - inst.r_blind[(i, "k")])
            )
            * inst.tick_rate
        )
        assert got == oracle


def test_double_difference_requires_both_anchors():
    o = make_obs(0, {"r": (1.0, 2.0)})
    with pytest.raises(EstimationError):
        double_difference(o, "r", "k", 1.0)


# --- averaging ---------------------------------------------------------------


def test_average_block_single_and_symmetric():
    one = [double_difference(make_obs(0, {"r": (0.0, 5.0), "k": (0.0, 3.0)}), "r", "k", 1.0)]
    s, m = average_block(one)
    assert (s, m) == (2.0, 1)
    sym = [
        double_difference(make_obs(0, {"r": (0.0, 4.0), "k": (0.0, 3.0)}), "r", "k", 1.0),
        double_difference(make_obs(1, {"r": (0.0, 2.0), "k": (0.0, 3.0)}), "r", "k", 1.0),
    ]
    s, m = average_block(sym)
    assert (s, m) == (0.0, 2)
    with pytest.raises(EstimationError):
        average_block([])


def test_average_block_shrinks_like_sqrt_m():
    # Standard error of the block mean vs single-sample sigma.
    rng = np.random.default_rng(11)
    singles, means = [], []
    for _ in range(300):
        noise = rng.uniform(-0.5, 0.5, 200)
        singles.append(noise[0])
        means.append(noise.mean())
    ratio = np.std(singles) / np.std(means)
    assert ratio == pytest.approx(np.sqrt(200), rel=0.25)


# --- differential ranges -----------------------------------------------------


def test_differential_ranges_ideal_clocks_match_geometry():
    sc = random_scenario(seed=21, n_anchors=6, noise_kind="none", packets=60,
                         alpha_range_s=0.0, beta_ppm=0.0)
    log = simulate(sc)
    nodes = node_table_from_scenario(sc)
    obs = pair_packets(log, nodes, channel=1)
    ref = nodes.anchor_ids[0]
    drs = differential_ranges(obs, nodes, ref)
    truth = sc.blind().position
    for r in drs.ranges:
        expected = diff_range(truth, nodes.position(r.anchor_id), nodes.position(ref))
        assert r.delta_m == pytest.approx(expected, abs=1e-9)


def test_differential_ranges_blind_colocated_with_pivot():
    sc = random_scenario(seed=22, n_anchors=5, noise_kind="none", packets=40,
                         alpha_range_s=0.5, beta_ppm=0.0)
    from dtdoa.evaluate import with_blind_position

    sc = with_blind_position(sc, sc.pivot().position)
    log = simulate(sc)
    nodes = node_table_from_scenario(sc)
    obs = pair_packets(log, nodes, channel=1)
    ref = nodes.anchor_ids[0]
    drs = differential_ranges(obs, nodes, ref)
    pivot_pos = nodes.position(nodes.pivot_id)
    for r in drs.ranges:
        expected = diff_range(pivot_pos, nodes.position(r.anchor_id), nodes.position(ref))
        assert r.delta_m == pytest.approx(expected, abs=1e-9)


def test_square_topology_double_differences_zero_mean():
    # Symmetric square: the true double differences vanish, so the
    # measured ones are pure quantization noise with zero mean.
    sc = square_scenario(seed=31, noise_kind="quantize", packets=400)
    log = simulate(sc)
    nodes = node_table_from_scenario(sc)
    obs = pair_packets(log, nodes, channel=1)
    gamma = estimate_gamma(obs, "a1", "a2").gamma_hat
    vals = np.array(
        [float(double_difference(o, "a1", "a2", gamma).s_hat_ticks) for o in obs]
    )
    sigma = vals.std()
    assert sigma > 0.1  # tick-level noise is present
    assert abs(vals.mean()) < 5 * sigma / np.sqrt(len(vals))


def test_common_skew_near_invariance():
    # Scaling every reception time by (1 + b) (equivalently compounding
    # every clock's rate) moves the position only at the |b| level.
    from dataclasses import replace

    from dtdoa import SolverConfig, estimate_one_shot, pair_all_channels, position_error

    b1 = 1e-5
    sc = random_scenario(seed=23, n_anchors=6, noise_kind="none", packets=60, beta_ppm=10.0)
    scaled_nodes = tuple(
        replace(n, clock=replace(n.clock, beta=(1 + n.clock.beta) * (1 + b1) - 1))
        for n in sc.nodes
    )
    sc_scaled = replace(sc, nodes=scaled_nodes)
    results = []
    for scenario in (sc, sc_scaled):
        log = simulate(scenario)
        nodes = node_table_from_scenario(scenario)
        obs = pair_all_channels(log, nodes)
        results.append(estimate_one_shot(obs, nodes).position)
    shift = position_error(results[0], results[1])
    p_norm = np.hypot(results[0].x, results[0].y)
    assert shift <= 10 * b1 * p_norm


def test_differential_ranges_errors():
    sc = random_scenario(seed=24, n_anchors=5, packets=10)
    log = simulate(sc)
    nodes = node_table_from_scenario(sc)
    obs = pair_packets(log, nodes, channel=1)
    with pytest.raises(EstimationError):
        differential_ranges(obs, nodes, "nope")
    with pytest.raises(EstimationError):
        differential_ranges(obs, nodes, nodes.anchor_ids[0], anchors=nodes.anchor_ids[:2])
