import math

import numpy as np
import pytest

from _fixtures import (CIRCLE, KINDS, MEAS, association_scenario, observe, planner_config,
                       predicted_pose, rub_and_baseline, slam_run)
from rubinfer import bayes_tree as bt
from rubinfer.errors import DimensionMismatch, InvalidArgument
from rubinfer.factors import (DaSet, L, X, assemble, motion_factor,
                              range_bearing_factor)
from rubinfer.inference import belief_difference
from rubinfer.linalg import SparseRowMatrix, UpperTriangular, apply_q_transpose
from rubinfer.planner import propagate
from rubinfer.rub import (RhsMethod, da_update, du_oo_update, du_update, factorize_session,
                          otm_oo_update, otm_update, rhs_update, rub_inference_step)

METHODS = list(RhsMethod)


def scalar_session():
    r = UpperTriangular.from_dense(np.array([[2.0]]))
    return factorize_session(r, [2.0], SparseRowMatrix.empty(1), [],
                             SparseRowMatrix.from_dense(np.array([[1.0]])), [1.0])


# ---------------------------------------------------------------------------
# right-hand-side updates
# ---------------------------------------------------------------------------

def test_scalar_session_values():
    s = scalar_session()
    assert s.r_pred.to_dense()[0, 0] == pytest.approx(math.sqrt(5))
    np.testing.assert_allclose(s.d_pred, [math.sqrt(5)])
    np.testing.assert_allclose(apply_q_transpose(s.q_obs, [2.0, 1.0]), [math.sqrt(5), 0.0],
                               atol=1e-15)


@pytest.mark.parametrize("method", METHODS)
def test_scalar_session_new_measurement(method):
    # [2; 1] x = [2; 3]  ->  R = sqrt(5), d = 7 / sqrt(5)
    d = rhs_update(scalar_session(), method, [], [3.0])
    np.testing.assert_allclose(d, [7 / math.sqrt(5)], rtol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_replaying_predicted_rhs_gives_d_pred(seed):
    s = propagate(slam_run(seed).belief, CIRCLE, planner_config()).lin
    for method in METHODS:
        np.testing.assert_allclose(rhs_update(s, method, s.b_motion, s.b_obs), s.d_pred,
                                   atol=1e-10)


def test_motion_only_replay_gives_d_motion():
    run = slam_run(1)
    s = propagate(run.belief, CIRCLE, planner_config(sensor_range=0.01)).lin
    assert s.obs_rows.n_rows == 0
    np.testing.assert_allclose(otm_oo_update(s, []), s.d_motion, atol=1e-14)
    np.testing.assert_allclose(s.d_motion, s.d_pred, atol=1e-14)


def test_methods_agree_with_dense_least_squares():
    rng = np.random.default_rng(5)
    for seed in range(10):
        s = propagate(slam_run(seed).belief, CIRCLE, planner_config()).lin
        b_obs = s.b_obs + rng.normal(0, 1, len(s.b_obs))
        b_mot = s.b_motion + rng.normal(0, 1, len(s.b_motion))
        full = [otm_update(s, np.concatenate([b_mot, b_obs])),
                du_update(s, np.concatenate([b_mot, b_obs]))]
        obs_only = [otm_oo_update(s, b_obs), du_oo_update(s, b_obs)]
        # reference: R_pred^-T of the stacked normal-equation right-hand side
        stack = np.vstack([np.pad(s.r_prev.to_dense(), ((0, 0), (0, s.n - s.n_prev))),
                           s.new_rows.to_dense()])
        r = s.r_pred.to_dense()
        for d, bm in zip(full + obs_only, [b_mot, b_mot, s.b_motion, s.b_motion]):
            rhs = np.concatenate([s.d_prev, bm, b_obs])
            ref = np.linalg.solve(r.T, stack.T @ rhs)
            np.testing.assert_allclose(d, ref, atol=1e-9)
        np.testing.assert_allclose(full[0], full[1], atol=1e-10)
        np.testing.assert_allclose(obs_only[0], obs_only[1], atol=1e-10)


def test_r_reuse_matches_refactorization():
    s = propagate(slam_run(2).belief, CIRCLE, planner_config()).lin
    stack = np.vstack([np.pad(s.r_prev.to_dense(), ((0, 0), (0, s.n - s.n_prev))),
                       s.new_rows.to_dense()])
    r_ref = np.linalg.qr(stack, mode="r")
    sign = np.sign(np.diag(r_ref))
    r = s.r_pred.to_dense()
    np.testing.assert_allclose(r * np.sign(np.diag(r))[:, None], r_ref * sign[:, None],
                               atol=1e-9)


def test_rhs_length_checks():
    s = scalar_session()
    for fn, arg in [(otm_update, [1.0, 2.0]), (du_update, []), (otm_oo_update, []),
                    (du_oo_update, [1.0, 2.0])]:
        with pytest.raises(DimensionMismatch):
            fn(s, arg)


def test_factorize_session_width_mismatch():
    r = UpperTriangular.from_dense(np.eye(1))
    with pytest.raises(DimensionMismatch):
        factorize_session(r, [0.0], SparseRowMatrix.empty(2), [],
                          SparseRowMatrix.from_dense(np.ones((1, 1))), [0.0])


# ---------------------------------------------------------------------------
# association repair
# ---------------------------------------------------------------------------

def test_da_update_with_planned_association_is_identity():
    run = slam_run(3)
    s = propagate(run.belief, CIRCLE, planner_config())
    graph, tree = da_update(s, s.predicted_factors, s.da)
    assert graph is s.predicted_belief.graph and tree is s.predicted_belief.tree


def test_da_update_matches_from_scratch_elimination():
    run = slam_run(4)
    s = propagate(run.belief, CIRCLE, planner_config())
    t = s.k + 1
    keep = list(s.da.landmarks[1:])
    extra = [l.index for l in run.belief.landmarks() if l.index not in s.da][:2]
    actual = observe(run, t, keep + extra)
    graph, tree = da_update(s, actual, DaSet.of(t, actual))
    ordering = s.predicted_belief.ordering
    scratch = bt.eliminate(graph, s.predicted_belief.lin_point, ordering)
    assert tree.structure() == scratch.structure()
    np.testing.assert_allclose(bt.flatten(tree, ordering)[0].to_dense(),
                               bt.flatten(scratch, ordering)[0].to_dense(), atol=1e-9)
    tree.check(ordering)


# ---------------------------------------------------------------------------
# full step against the baseline
# ---------------------------------------------------------------------------

def assert_matches_baseline(rub, base, tol=1e-9):
    assert rub.ordering == base.ordering
    diff = belief_difference(rub, base)
    assert max(diff.values()) <= tol, diff
    assert rub.tree.structure() == bt.eliminate(rub.graph, rub.lin_point, rub.ordering).structure()
    assert rub.tree.structure() == base.tree.structure()


@pytest.mark.parametrize("method", METHODS)
def test_consistent_step_matches_baseline(method):
    for seed in range(3):
        run = slam_run(seed)
        s = propagate(run.belief, CIRCLE, run.config)
        _, rub, base = rub_and_baseline(run, CIRCLE, s.da.landmarks, method=method)
        assert_matches_baseline(rub, base)
        assert rub.stats["da_add"] == rub.stats["da_rmv"] == 0
        assert rub.stats["n_reeliminations"] == 0
        assert rub.stats["method"] == method.value


def test_fully_inconsistent_step_matches_baseline():
    run = slam_run(6)
    run.config = planner_config(sensor_range=3.0)
    s = propagate(run.belief, CIRCLE, run.config)
    others = [l.index for l in run.belief.landmarks() if l.index not in s.da][:3]
    assert others
    _, rub, base = rub_and_baseline(run, CIRCLE, others)
    assert_matches_baseline(rub, base)
    assert rub.stats["da_rmv"] == len(s.da) and rub.stats["da_add"] == len(others)


def test_motion_only_step_matches_baseline():
    run = slam_run(7)
    run.config = planner_config(sensor_range=0.01)
    s, rub, base = rub_and_baseline(run, CIRCLE, [])
    assert len(s.da) == 0
    assert_matches_baseline(rub, base, tol=1e-12)


def test_multi_step_chain_stays_on_baseline():
    run = slam_run(8, steps=2)
    run.config = planner_config(sensor_range=4.0)
    rng = np.random.default_rng(8)
    for _ in range(6):
        s = propagate(run.belief, CIRCLE, run.config)
        mapped = [l.index for l in run.belief.landmarks()]
        actual = [j for j in mapped if (j in s.da) != (rng.random() < 0.2)]
        _, rub, base = rub_and_baseline(run, CIRCLE, actual)
        assert_matches_baseline(rub, base)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_association_scenarios_match_baseline(kind, seed):
    run = slam_run(20 + seed)
    hyp, actual = association_scenario(kind, run)
    s, rub, base = rub_and_baseline(run, CIRCLE, actual, hyp)
    assert_matches_baseline(rub, base)
    assert set(s.placeholders) == {L(j) for j in hyp}
    for ph in s.placeholders:
        assert (ph in rub.ordering) == (ph.index in actual)


def test_placeholder_is_relinearized_from_reading():
    run = slam_run(30)
    j = run.new_landmark(predicted_pose(run))
    wrong = {j: (run.position(j)[0] + 0.7, run.position(j)[1] - 0.4)}
    s = propagate(run.belief, CIRCLE, run.config)
    s, rub, base = rub_and_baseline(run, CIRCLE, list(s.da.landmarks) + [j], wrong)
    assert s.placeholders == (L(j),)
    assert tuple(rub.lin_point[L(j)]) == pytest.approx(tuple(base.lin_point[L(j)]), abs=1e-12)
    assert_matches_baseline(rub, base)


# ---------------------------------------------------------------------------
# input validation
# ---------------------------------------------------------------------------

def test_step_rejects_wrong_motion_and_association():
    run = slam_run(9)
    s = propagate(run.belief, CIRCLE, run.config)
    t = s.k + 1
    obs = observe(run, t, s.da.landmarks)
    with pytest.raises(InvalidArgument):
        rub_inference_step(s, [motion_factor(s.k, t, (0.9, 0, 0.35), (1, 1, 1))] + obs, s.da)
    with pytest.raises(InvalidArgument):
        rub_inference_step(s, [s.motion] + obs, DaSet(t, s.da.landmarks[1:]))
    dup = obs + [range_bearing_factor(t, obs[0].landmark, (1.0, 0.0), MEAS)]
    with pytest.raises(InvalidArgument):
        rub_inference_step(s, [s.motion] + dup, s.da)
    with pytest.raises(InvalidArgument):
        propagate(run.belief, CIRCLE, run.config, {obs[0].landmark: (0.0, 0.0)})


def test_consistent_step_reuses_predicted_factor():
    run = slam_run(10)
    planned = propagate(run.belief, CIRCLE, run.config).da.landmarks
    s, rub, _ = rub_and_baseline(run, CIRCLE, planned)
    assert rub.r is s.lin.r_pred
    assert rub.stats["factors_reused"] == 1 + len(s.da)
    a, _ = assemble(list(rub.graph), rub.lin_point, rub.ordering)
    dense = rub.r.to_dense()
    ata = a.to_dense().T @ a.to_dense()
    assert np.linalg.norm(dense.T @ dense - ata) / np.linalg.norm(ata) < 1e-10
    assert X(s.k + 1) in rub.ordering
