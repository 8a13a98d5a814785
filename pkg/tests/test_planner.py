import itertools
import math

import numpy as np
import pytest

from _fixtures import CIRCLE, MEAS, MOTION, planner_config, slam_run
from rubinfer.errors import InvalidArgument, NoCandidates
from rubinfer.factors import L, PoseSE2, X, motion_compose, motion_factor, residual
from rubinfer.inference import batch_update, belief_difference, marginal_cov_diag
from rubinfer.planner import (PlannerConfig, SensorModel, heading_candidates, objective,
                              predict_measurements, predict_new_landmarks, propagate,
                              propagate_chain, select_action, sequence_cost)

GOAL = (14.0, 14.0)


def test_heading_candidates():
    c = heading_candidates(4, 2.0)
    assert c[0] == pytest.approx((2.0, 0.0, 0.0))
    assert c[1] == pytest.approx((0.0, 2.0, math.pi / 2), abs=1e-15)
    assert c[2][2] == pytest.approx(math.pi)
    with pytest.raises(InvalidArgument):
        heading_candidates(0)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        planner_config(horizon=0)


def test_sensor_range_and_field_of_view():
    s = SensorModel(5.0, *MEAS)
    assert s.sees(PoseSE2(0, 0, 0), (5.0, 0.0)) and not s.sees(PoseSE2(0, 0, 0), (5.01, 0.0))
    front = SensorModel(5.0, *MEAS, fov=math.pi / 2)
    assert front.sees(PoseSE2(0, 0, 0), (2.0, 1.0))
    assert not front.sees(PoseSE2(0, 0, 0), (-2.0, 0.1))


def test_predict_measurements_matches_brute_force_scan():
    for seed in range(5):
        b = slam_run(seed).belief
        for rng in (2.0, 4.0, 6.0):
            pose = motion_compose(b.estimate_of(b.latest_pose), CIRCLE)
            factors, da = predict_measurements(b, X(b.t + 1), pose, SensorModel(rng, *MEAS))
            expected = sorted(l.index for l in b.landmarks()
                              if math.dist(b.estimate_of(l), pose[:2]) <= rng)
            assert list(da.landmarks) == expected == [f.landmark for f in factors]
            assert all(f.keys[0] == X(b.t + 1) for f in factors)


def test_predicted_readings_have_zero_innovation():
    run = slam_run(1)
    s = propagate(run.belief, CIRCLE, run.config)
    # zero innovation holds at the MAP estimate, not at the linearization point
    est = run.belief.estimate
    est[X(run.belief.t + 1)] = motion_compose(est[run.belief.latest_pose], CIRCLE)
    for f in [s.motion] + s.predicted_factors:
        np.testing.assert_allclose(residual(f, est), 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_propagate_equals_batch_update_with_predicted_factors(seed):
    run = slam_run(seed)
    s = propagate(run.belief, CIRCLE, run.config)
    ref = batch_update(run.belief, [s.motion] + s.predicted_factors)
    assert max(belief_difference(s.predicted_belief, ref).values()) < 1e-9
    assert s.predicted_belief.tree.structure() == ref.tree.structure()
    assert s.predicted_belief.t == run.belief.t + 1 and s.predicted_belief.k == run.belief.t


def test_propagate_with_hypothesis_creates_placeholder():
    run = slam_run(2)
    near = motion_compose(run.belief.estimate_of(run.belief.latest_pose), CIRCLE)
    j = run.new_landmark(near)
    far = run.new_landmark(PoseSE2(near.x + 40.0, near.y, 0.0))
    hyp = {j: run.position(j), far: run.position(far)}
    s = propagate(run.belief, CIRCLE, run.config, hyp)
    assert s.placeholders == (L(j),) and j in s.da and far not in s.da
    assert s.predicted_belief.ordering.keys[-2:] == [X(run.belief.t + 1), L(j)]
    ref = batch_update(run.belief, [s.motion] + s.predicted_factors)
    assert max(belief_difference(s.predicted_belief, ref).values()) < 1e-9
    with pytest.raises(InvalidArgument):
        predict_new_landmarks(run.belief, X(9), near, run.config.sensor,
                              {run.belief.landmarks()[0].index: (0.0, 0.0)})


def test_propagate_chain_advances_time():
    run = slam_run(3)
    chain = propagate_chain(run.belief, [CIRCLE] * 3, run.config)
    assert [s.predicted_belief.t for s in chain] == [run.belief.t + i for i in (1, 2, 3)]


def test_objective_single_step_by_hand():
    run = slam_run(4)
    cfg = PlannerConfig(run.config.sensor, MOTION, horizon=1, w_dist=2.0, w_unc=3.0)
    s = propagate(run.belief, CIRCLE, cfg)
    pb = s.predicted_belief
    x = pb.estimate_of(pb.latest_pose)
    expected = 2.0 * math.dist(x[:2], GOAL) + 3.0 * np.trace(marginal_cov_diag(pb, pb.latest_pose))
    assert objective([s], GOAL, cfg) == pytest.approx(expected, rel=1e-12)
    # pose at the goal and no uncertainty weight -> zero
    cfg0 = PlannerConfig(run.config.sensor, MOTION, horizon=1, w_unc=0.0)
    assert objective([s], tuple(x[:2]), cfg0) == pytest.approx(0.0, abs=1e-12)


def test_select_action_single_candidate_and_empty():
    run = slam_run(5)
    a, s = select_action(run.belief, [CIRCLE], GOAL, run.config)
    assert a == CIRCLE and s.action == CIRCLE
    with pytest.raises(NoCandidates):
        select_action(run.belief, [], GOAL, run.config)


def test_select_action_tie_goes_to_first():
    run = slam_run(6)
    cands = [(1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    cfg = planner_config(horizon=1)
    a, _ = select_action(run.belief, cands, (50.0, 0.0), cfg)
    assert a == cands[0]


@pytest.mark.parametrize("horizon", [1, 2])
def test_select_action_matches_brute_force_enumeration(horizon):
    cands = heading_candidates(4, 1.5)
    for seed in range(3):
        run = slam_run(seed)
        cfg = planner_config(horizon=horizon)
        best, _ = select_action(run.belief, cands, GOAL, cfg)
        costs = {seq: sequence_cost(run.belief, seq, GOAL, cfg)
                 for seq in itertools.product(cands, repeat=horizon)}
        ref = min(costs, key=costs.get)
        assert best == pytest.approx(ref[0])


def test_weight_scaling_does_not_change_choice():
    cands = heading_candidates(8, 1.5)
    run = slam_run(7)
    base = PlannerConfig(run.config.sensor, MOTION, horizon=2, w_dist=1.0, w_unc=50.0)
    scaled = PlannerConfig(run.config.sensor, MOTION, horizon=2, w_dist=7.0, w_unc=350.0)
    assert select_action(run.belief, cands, GOAL, base)[0] == \
        select_action(run.belief, cands, GOAL, scaled)[0]


def test_selected_session_is_a_full_planning_session():
    run = slam_run(8)
    a, s = select_action(run.belief, heading_candidates(8, 1.5), GOAL, planner_config(horizon=2))
    assert s.action == a and s.stats["plan_evaluations"] > 0
    assert s.motion == motion_factor(run.belief.t, run.belief.t + 1, a, MOTION)
