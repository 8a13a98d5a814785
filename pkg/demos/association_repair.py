"""When planning guessed the wrong landmarks.

Planning predicts which landmarks the next pose will see.  If the robot
sees something else, the predicted factors are swapped for the real ones and
only the affected branch of the Bayes tree is re-eliminated.  This script
walks through one such step and shows the repaired tree is exactly what a
from-scratch elimination would give.

Run with ``python demos/association_repair.py``.
"""
import numpy as np

from rubinfer import bayes_tree as bt
from rubinfer.factors import (DaSet, Ordering, PoseSE2, Values, X, motion_compose,
                              motion_factor, prior_factor, range_bearing, range_bearing_factor)
from rubinfer.inference import belief_difference, incremental_update, initial_belief
from rubinfer.planner import PlannerConfig, SensorModel, propagate
from rubinfer.rub import rub_inference_step

rng = np.random.default_rng(3)
MOTION, MEAS = (0.05, 0.05, 0.01), (0.1, 0.01)
landmarks = {j: tuple(rng.uniform(0, 12, 2)) for j in range(12)}


def readings(t, pose, which):
    return [range_bearing_factor(t, j, np.add(range_bearing(pose, landmarks[j]),
                                              rng.normal(0, MEAS)), MEAS) for j in sorted(which)]


# %% a few steps of ordinary incremental SLAM
pose = PoseSE2(1.0, 1.0, 0.3)
belief = initial_belief([prior_factor(X(0), pose, (0.01, 0.01, 0.005))],
                        Values({X(0): pose}), Ordering([X(0)]))
u = (1.2, 0.0, 0.25)
for t in range(1, 7):
    pose = motion_compose(pose, u)
    seen = [j for j, p in landmarks.items() if pose.distance(p) <= 5.0]
    belief = incremental_update(belief, [motion_factor(t - 1, t, u, MOTION)]
                                + readings(t, pose, seen))
print(f"t={belief.t}: {len(belief.landmarks())} landmarks mapped, "
      f"{len(belief.tree.cliques)} cliques")

# %% plan: which landmarks should the next pose see?
config = PlannerConfig(SensorModel(5.0, *MEAS), MOTION, horizon=1)
session = propagate(belief, u, config)
print("planning expects", list(session.da.landmarks))

# %% reality: one expected landmark is occluded, one unmapped landmark shows up
pose = motion_compose(pose, u)
t = belief.t + 1
missing = session.da.landmarks[0]
unmapped = [j for j in landmarks if j not in {k.index for k in belief.landmarks()}]
fresh = min(unmapped, key=lambda j: pose.distance(landmarks[j]))
actual_ids = [j for j in session.da.landmarks if j != missing] + [fresh]
actual = readings(t, pose, actual_ids)
print(f"robot sees {sorted(actual_ids)} (lost {missing}, new {fresh})")

# %% reuse what is still right, repair what is not
factors = [session.motion] + actual
post = rub_inference_step(session, factors, DaSet.of(t, actual))
print(f"repair removed {post.stats['da_rmv']} factor(s), added {post.stats['da_add']}, "
      f"re-eliminated {post.stats['n_reeliminations']} of {len(post.tree.cliques)} cliques")

# %% same answer as the standard incremental update and as elimination from scratch
baseline = incremental_update(belief, factors)
scratch = bt.eliminate(post.graph, post.lin_point, post.ordering)
print("tree equals from-scratch elimination:", post.tree.structure() == scratch.structure())
print("difference from baseline:", {k: f"{v:.1e}" for k, v in belief_difference(post, baseline).items()})
print()
print(post.tree.dump(post.ordering))
