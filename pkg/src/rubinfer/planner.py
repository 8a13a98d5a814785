"""Discrete-candidate receding-horizon planning over predicted beliefs.

Future observations are predicted at the current MAP estimate (zero
innovation).  A candidate sequence is scored by the distance of each
predicted pose to the goal plus the trace of its marginal covariance.

Exhaustive evaluation of ``len(candidates) ** horizon`` sequences would be
expensive with full Bayes-tree propagation, so the search runs on a reduced
system: the current marginal over the latest pose and the landmarks that
could possibly come into view, extended with future motion and observation
rows.  Marginalizing variables that no future factor touches is exact for a
linear Gaussian system, so the reduced search scores sequences exactly like
``objective`` applied to full planning sessions (up to rounding).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import bayes_tree as bt
from .errors import InvalidArgument, NoCandidates
from .factors import (DaSet, Factor, L, Values, VarKey, X, assemble, linearize,
                      motion_compose, motion_factor, range_bearing, range_bearing_factor,
                      wrap_angle)
from .inference import Belief, marginal_covariance, marginal_cov_diag
from .rub import PlanningSession, factorize_session


@dataclass(frozen=True)
class SensorModel:
    """Range gate (omnidirectional unless ``fov`` is set) and noise sigmas."""

    max_range: float
    sigma_range: float
    sigma_bearing: float
    fov: float | None = None

    def sees(self, pose, point) -> bool:
        r, b = range_bearing(pose, point)
        if r > self.max_range:
            return False
        return self.fov is None or abs(b) <= self.fov / 2


@dataclass(frozen=True)
class PlannerConfig:
    sensor: SensorModel
    motion_sigmas: tuple[float, float, float]
    horizon: int = 5
    w_dist: float = 1.0
    w_unc: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidArgument("horizon must be at least 1")


def heading_candidates(n_headings: int = 8, step: float = 5.0) -> list[tuple[float, float, float]]:
    """Moves of length ``step`` towards ``n_headings`` evenly spaced body-frame
    bearings; each move ends facing its bearing."""
    if n_headings < 1:
        raise InvalidArgument("need at least one heading")
    out = []
    for i in range(n_headings):
        phi = wrap_angle(2.0 * math.pi * i / n_headings)
        out.append((step * math.cos(phi), step * math.sin(phi), phi))
    return out


# ---------------------------------------------------------------------------
# prediction and propagation
# ---------------------------------------------------------------------------

def predict_measurements(belief: Belief, pose_key: VarKey, pose_est, sensor: SensorModel
                         ) -> tuple[list[Factor], DaSet]:
    """Zero-innovation readings of every mapped landmark in range of ``pose_est``."""
    factors = []
    for lm in belief.landmarks():
        est = belief.estimate_of(lm)
        if sensor.sees(pose_est, est):
            z = range_bearing(pose_est, est)
            factors.append(range_bearing_factor(pose_key.index, lm.index, z,
                                                (sensor.sigma_range, sensor.sigma_bearing)))
    factors.sort(key=lambda f: f.landmark)
    return factors, DaSet(pose_key.index, tuple(f.landmark for f in factors))


def predict_new_landmarks(belief: Belief, pose_key: VarKey, pose_est, sensor: SensorModel,
                          hypotheses) -> list[Factor]:
    """Zero-innovation readings of hypothesized, not yet mapped landmarks in range."""
    out = []
    for j, point in sorted((hypotheses or {}).items()):
        if L(j) in belief.ordering:
            raise InvalidArgument(f"landmark {j} is already mapped")
        if sensor.sees(pose_est, point):
            out.append(range_bearing_factor(pose_key.index, j, range_bearing(pose_est, point),
                                            (sensor.sigma_range, sensor.sigma_bearing)))
    return out


def propagate(belief: Belief, action, config: PlannerConfig, hypotheses=None) -> PlanningSession:
    """Predicted belief one step ahead plus the stored planning intermediates.

    ``hypotheses`` optionally maps unmapped landmark indices to guessed
    positions; those in range are predicted as first-time observations and
    enter the predicted belief as placeholder variables.
    """
    action = tuple(float(a) for a in action)
    k = belief.t
    x_k, x_n = X(k), X(k + 1)
    pose_est = motion_compose(belief.estimate_of(x_k), action)
    motion = motion_factor(k, k + 1, action, config.motion_sigmas)
    obs, _ = predict_measurements(belief, x_n, pose_est, config.sensor)
    guessed = predict_new_landmarks(belief, x_n, pose_est, config.sensor, hypotheses)
    obs = sorted(obs + guessed, key=lambda f: f.landmark)
    da = DaSet.of(k + 1, obs)
    placeholders = tuple(f.keys[1] for f in guessed)

    ordering = belief.ordering.extended((x_n,) + placeholders)
    values = Values(belief.lin_point)
    values[x_n] = pose_est
    for f in guessed:
        values[f.keys[1]] = hypotheses[f.landmark]
    graph, ids = belief.graph.add([motion] + obs)
    involved = {x_k} | {f.keys[1] for f in obs if f.keys[1] in belief.ordering}
    tree, info = bt.update(belief.tree, graph, values, ordering, involved, (x_n,) + placeholders)

    r_prev, d_prev = belief.flat
    f_rows, b_m = assemble([motion], values, ordering)
    h_rows, b_o = assemble(obs, values, ordering)
    lin = factorize_session(r_prev, d_prev, f_rows, b_m, h_rows, b_o)

    da_all = dict(belief.da)
    da_all[k + 1] = da
    pred = Belief(k + 1, k, values, tree, graph, ordering, da_all)
    pred._flat = (lin.r_pred, lin.d_pred)
    return PlanningSession(k, action, belief, pred, motion, ids[0], obs, ids[1:], da, lin,
                           info.created, {"n_reeliminations": info.n_reeliminated},
                           placeholders)


def propagate_chain(belief: Belief, actions: Sequence, config: PlannerConfig
                    ) -> list[PlanningSession]:
    out = []
    for a in actions:
        s = propagate(belief, a, config)
        out.append(s)
        belief = s.predicted_belief
    return out


def step_cost(pose_est, cov: np.ndarray, goal, config: PlannerConfig) -> float:
    dist = math.hypot(pose_est[0] - goal[0], pose_est[1] - goal[1])
    return config.w_dist * dist + config.w_unc * float(np.trace(cov))


def objective(session_chain: Sequence[PlanningSession], goal, config: PlannerConfig) -> float:
    """Sum over the horizon of goal distance and pose-covariance trace."""
    total = 0.0
    for s in session_chain:
        pb = s.predicted_belief
        x = pb.latest_pose
        total += step_cost(pb.estimate_of(x), marginal_cov_diag(pb, x), goal, config)
    return total


# ---------------------------------------------------------------------------
# reduced-system search
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    """Square-root system over [landmarks..., x_k, x_k+1, ...] (newest pose last)."""

    r: np.ndarray
    d: np.ndarray
    lin: dict
    offsets: dict
    pose_key: VarKey


class ReducedPlanner:
    """Exact candidate search on the marginal of the relevant variables."""

    def __init__(self, belief: Belief, config: PlannerConfig, step_bound: float):
        self.config = config
        self.belief = belief
        x_k = belief.latest_pose
        here = belief.estimate_of(x_k)
        reach = config.sensor.max_range + config.horizon * step_bound + config.margin
        lms = [l for l in belief.landmarks()
               if math.hypot(*(np.subtract(belief.estimate_of(l), here[:2]))) <= reach]
        keys = lms + [x_k]
        cov = marginal_covariance(belief, keys)
        info = np.linalg.inv(cov)
        info = 0.5 * (info + info.T)
        r = np.linalg.cholesky(info).T
        offsets, o = {}, 0
        for key in keys:
            offsets[key] = o
            o += key.dim
        mu = np.concatenate([belief.delta[belief.ordering.offset(k):belief.ordering.offset(k) + k.dim]
                             for k in keys])
        self.root = _Node(r, r @ mu, {k: belief.lin_point[k] for k in keys}, offsets, x_k)
        self.landmarks = lms
        self.evaluations = 0

    def _estimate(self, node: _Node, delta, key):
        o = node.offsets[key]
        return node.lin[key].retract(delta[o:o + key.dim])

    def expand(self, node: _Node, delta, action) -> tuple[_Node, np.ndarray, float]:
        cfg = self.config
        prev = node.pose_key
        new = X(prev.index + 1)
        pose_est = motion_compose(self._estimate(node, delta, prev), action)
        lin = dict(node.lin)
        lin[new] = pose_est
        offsets = dict(node.offsets)
        n_old = node.r.shape[0]
        offsets[new] = n_old
        n = n_old + 3
        factors = [motion_factor(prev.index, new.index, action, cfg.motion_sigmas)]
        for l in self.landmarks:
            est = self._estimate(node, delta, l)
            if cfg.sensor.sees(pose_est, est):
                z = range_bearing(pose_est, est)
                factors.append(range_bearing_factor(new.index, l.index, z,
                                                    (cfg.sensor.sigma_range, cfg.sensor.sigma_bearing)))
        m = sum(f.dim for f in factors)
        stack = np.zeros((n + m, n))
        stack[:n_old, :n_old] = node.r
        rhs = np.zeros(n + m)
        rhs[:n_old] = node.d
        row = n
        for f in factors:
            blocks, b = linearize(f, lin)
            for key, blk in zip(f.keys, blocks):
                o = offsets[key]
                stack[row:row + f.dim, o:o + key.dim] = blk
            rhs[row:row + f.dim] = b
            row += f.dim
        q, r = np.linalg.qr(stack)
        d = q.T @ rhs
        child = _Node(r, d, lin, offsets, new)
        delta_new = solve_triangular(r, d)
        r_last = r[n_old:, n_old:]
        inv_last = np.linalg.inv(r_last)
        cov = inv_last @ inv_last.T
        self.evaluations += 1
        pose_map = self._estimate(child, delta_new, new)
        return child, delta_new, step_cost(pose_map, cov, self.goal, cfg)

    def search(self, candidates, goal):
        self.goal = goal
        best = [math.inf, None]
        root_delta = np.linalg.solve(self.root.r, self.root.d)

        def dfs(node, delta, depth, acc, first):
            for i, a in enumerate(candidates):
                child, cdelta, c = self.expand(node, delta, a)
                total = acc + c
                if total >= best[0]:
                    continue
                f = i if first is None else first
                if depth + 1 == self.config.horizon:
                    best[0], best[1] = total, f
                else:
                    dfs(child, cdelta, depth + 1, total, f)

        dfs(self.root, root_delta, 0, 0.0, None)
        return best[1], best[0]


def sequence_cost(belief: Belief, actions: Sequence, goal, config: PlannerConfig) -> float:
    """Objective of one action sequence via full planning sessions."""
    return objective(propagate_chain(belief, actions, config), goal, config)


def select_action(belief: Belief, candidates: Sequence, goal, config: PlannerConfig
                  ) -> tuple[tuple[float, float, float], PlanningSession]:
    """Best first action over all sequences of length ``config.horizon``.

    Ties go to the earlier candidate.  The returned session is the full
    planning session of that first action.
    """
    candidates = [tuple(float(v) for v in c) for c in candidates]
    if not candidates:
        raise NoCandidates("no candidate actions")
    if len(candidates) == 1:
        return candidates[0], propagate(belief, candidates[0], config)
    bound = max(math.hypot(c[0], c[1]) for c in candidates)
    planner = ReducedPlanner(belief, config, bound)
    i, _ = planner.search(candidates, goal)
    best = candidates[i]
    session = propagate(belief, best, config)
    session.stats["plan_evaluations"] = planner.evaluations
    return best, session
