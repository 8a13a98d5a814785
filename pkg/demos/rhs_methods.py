"""Four ways to refresh the right-hand side once real measurements arrive.

Planning already rotated the predicted rows into the square-root factor.
When the actual readings come in, only ``d`` needs recomputing; this script
builds a tiny landmark SLAM problem, plans one step and compares the four
updates against a full refactorization.

Run with ``python demos/rhs_methods.py``.
"""
import numpy as np

from rubinfer.factors import (DaSet, L, Ordering, PoseSE2, Values, X, assemble, motion_compose,
                              motion_factor, prior_factor, range_bearing,
                              range_bearing_factor, residual)
from rubinfer.inference import batch_update, belief_difference, initial_belief
from rubinfer.planner import PlannerConfig, SensorModel, propagate
from rubinfer.rub import RhsMethod, rub_inference_step

rng = np.random.default_rng(1)
MOTION, MEAS = (0.05, 0.05, 0.01), (0.1, 0.01)

# %% a short trajectory past three landmarks
landmarks = {0: (2.0, 1.5), 1: (3.5, -1.0), 2: (5.0, 2.0)}
start = PoseSE2(0.0, 0.0, 0.0)
belief = initial_belief([prior_factor(X(0), start, (0.01, 0.01, 0.005))],
                        Values({X(0): start}), Ordering([X(0)]))
pose = start
u = (1.0, 0.0, 0.05)
for t in (1, 2):
    pose = motion_compose(pose, u)
    obs = [range_bearing_factor(t, j, np.add(range_bearing(pose, p), rng.normal(0, MEAS)), MEAS)
           for j, p in landmarks.items()]
    belief = batch_update(belief, [motion_factor(t - 1, t, u, MOTION)] + obs)
print(f"belief at t={belief.t}: {len(belief.ordering)} variables, dim {belief.ordering.dim}")

# %% plan one step: predicted readings at the current estimate (zero innovation)
config = PlannerConfig(SensorModel(8.0, *MEAS), MOTION, horizon=1)
session = propagate(belief, u, config)
lin = session.lin
print(f"planning predicted {len(session.da)} readings; "
      f"{len(lin.q_obs)} observation rotations stored")

# %% the robot moves and measures; readings differ from the prediction
pose = motion_compose(pose, u)
t = belief.t + 1
actual = [range_bearing_factor(t, j, np.add(range_bearing(pose, landmarks[j]),
                                            rng.normal(0, MEAS)), MEAS)
          for j in session.da.landmarks]
values = session.predicted_belief.lin_point
b_obs = np.concatenate([residual(f, values) for f in actual])
print("innovation (predicted vs actual rhs rows):", np.round(b_obs - lin.b_obs, 3))

# %% the four updates against a full re-factorization of the same system
reference = batch_update(belief, [session.motion] + actual)
factors = [session.motion] + actual
for method in RhsMethod:
    post = rub_inference_step(session, factors, DaSet.of(t, actual), method)
    gap = belief_difference(post, reference)
    print(f"{method.value:>7}: " + ", ".join(f"{k} {v:.1e}" for k, v in gap.items()))

# %% and R itself never changed: planning's factor already is the posterior's
a, _ = assemble([session.motion] + actual + list(belief.graph), values,
                session.predicted_belief.ordering)
r = lin.r_pred.to_dense()
print("R^T R == A^T A:", np.allclose(r.T @ r, a.to_dense().T @ a.to_dense()))
print("landmark 2 estimate:", np.round(reference.estimate_of(L(2)), 3), "true", landmarks[2])
