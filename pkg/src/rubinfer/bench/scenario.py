"""Plan-act-infer loop timing the reuse-based update against the incremental baseline.

Each step plans on the carried belief, executes the chosen action in the
simulated world and then updates inference twice from the same data: once
with ``incremental_update`` on the baseline's own belief and once per RHS
method with ``rub_inference_step`` on the planning session.  The ``OTM_OO``
result (reported as ``UD_OTM_OO``) is carried to the next step.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .. import sim
from ..errors import ConfigError
from ..factors import (DaSet, L, Ordering, Point2, PoseSE2, Values, X,
                       prior_factor, range_bearing_factor)
from ..inference import (Belief, batch_update, belief_difference, incremental_update,
                         initial_belief)
from ..planner import PlannerConfig, SensorModel, heading_candidates, select_action
from ..rub import RhsMethod, rub_inference_step
from .config import ScenarioConfig
from .records import BenchRecord

RUB_METHODS = {"UD_OTM_OO": RhsMethod.OTM_OO, "OTM_OO": RhsMethod.OTM_OO,
               "OTM": RhsMethod.OTM, "DU": RhsMethod.DU, "DU_OO": RhsMethod.DU_OO}


@dataclass
class ScenarioResult:
    records: list[BenchRecord]
    truth: list[sim.StepTruth]
    factors: list
    belief: Belief
    baseline: Belief
    world: sim.World
    wall_s: float
    max_diff: dict = field(default_factory=dict)

    def trajectory(self) -> list[tuple[int, PoseSE2, PoseSE2]]:
        """``(step, true pose, estimated pose)`` for every pose of the run."""
        est = self.belief.estimate
        poses = [self.world.start] + [s.pose for s in self.truth]
        return [(t, poses[t], est[X(t)]) for t in range(len(poses))]


def make_world(cfg: ScenarioConfig) -> sim.World:
    return sim.make_world(cfg.seed, cfg.field_size, cfg.n_landmarks, cfg.targets,
                          cfg.world_motion_sigmas, cfg.world_meas_sigmas, cfg.true_range,
                          n_reserve=cfg.n_reserve, start=cfg.start)


def planner_config(cfg: ScenarioConfig) -> PlannerConfig:
    sensor = SensorModel(cfg.sensor_range, cfg.meas_sigmas[0], cfg.meas_sigmas[1])
    return PlannerConfig(sensor, cfg.motion_sigmas, horizon=cfg.horizon,
                         w_dist=cfg.w_dist, w_unc=cfg.w_unc)


def map_priors(cfg: ScenarioConfig, world: sim.World, rng: np.random.Generator) -> dict:
    """Prior factor per mapped landmark, centred on a noisy copy of its position."""
    out = {}
    for j, p in enumerate(world.landmarks):
        noisy = np.asarray(p)
        if cfg.world_map_sigma > 0:
            noisy = noisy + rng.normal(0.0, cfg.world_map_sigma, 2)
        out[j] = prior_factor(L(j), Point2(*map(float, noisy)), (cfg.map_sigma, cfg.map_sigma))
    return out


def activation_radius(cfg: ScenarioConfig) -> float:
    """Distance within which planning could predict a reading over the horizon."""
    return cfg.sensor_range + cfg.horizon * cfg.step_length + cfg.goal_radius


def due_priors(belief: Belief, priors: dict, radius: float) -> list:
    """Map priors of landmarks near the current pose that are not in the belief yet.

    A mapped landmark that has never been near the robot is independent of
    everything else, so leaving it out of the belief until it is needed
    changes nothing but the variable ordering: it enters right after the
    current pose, like a freshly observed landmark.
    """
    here = belief.estimate_of(belief.latest_pose)
    return [f for j, f in sorted(priors.items())
            if f.keys[0] not in belief.ordering and here.distance(f.measured) <= radius]


def prior_belief(cfg: ScenarioConfig, world: sim.World, priors: dict) -> Belief:
    """Known start pose plus the map priors around it."""
    start = prior_factor(X(0), world.start, cfg.prior_sigmas)
    belief = initial_belief([start], Values({X(0): world.start}), Ordering([X(0)]))
    due = due_priors(belief, priors, activation_radius(cfg))
    return incremental_update(belief, due) if due else belief


def measurement_factors(truth: sim.StepTruth, t: int, cfg: ScenarioConfig):
    return [range_bearing_factor(t, j, (r, b), cfg.meas_sigmas) for j, r, b in truth.measurements]


def _timed(fn, reps: int):
    """Run ``fn`` ``reps + 1`` times; the first (warm-up) run is discarded."""
    fn()
    out, samples = None, []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        out = fn()
        samples.append(time.perf_counter_ns() - t0)
    return out, samples


def _median(xs) -> int:
    return int(statistics.median(xs))


def run_scenario(cfg: ScenarioConfig, methods=None, force_da_rate: float | None = None,
                 progress=None) -> ScenarioResult:
    """Simulate ``cfg.steps`` plan-act-infer steps and time every requested update."""
    methods = tuple(methods or cfg.methods)
    unknown = set(methods) - set(RUB_METHODS) - {"ISAM", "STD"}
    if unknown:
        raise ConfigError(f"unknown scenario methods {sorted(unknown)}")
    rate = cfg.inconsistency_rate if force_da_rate is None else float(force_da_rate)
    wall0 = time.perf_counter()
    world = make_world(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    da_rng = np.random.default_rng([cfg.seed, 2])
    pcfg = planner_config(cfg)
    candidates = heading_candidates(cfg.n_headings, cfg.step_length)

    priors = map_priors(cfg, world, rng)
    radius = activation_radius(cfg)
    belief = prior_belief(cfg, world, priors)
    baseline = belief
    true_pose = world.start
    target = 0
    records: list[BenchRecord] = []
    truths, all_factors = [], []
    worst = {"r": 0.0, "d": 0.0, "estimate": 0.0}

    for step in range(1, cfg.steps + 1):
        due = due_priors(belief, priors, radius)
        if due:
            belief = incremental_update(belief, due)
            baseline = incremental_update(baseline, due)
        here = belief.estimate_of(belief.latest_pose)
        if here.distance(world.targets[target]) <= cfg.goal_radius:
            target = (target + 1) % len(world.targets)
        action, session = select_action(belief, candidates, world.targets[target], pcfg)

        truth = sim.step(world, true_pose, action, rng)
        true_pose = truth.pose
        truth = sim.restrict(truth, session.da.landmarks)
        known = [k.index for k in belief.landmarks()]
        truth = sim.force_inconsistency(truth, cfg.inconsistency_mode, rate, da_rng, world, known)
        t = belief.t + 1
        obs = measurement_factors(truth, t, cfg)
        factors = [session.motion] + obs
        m_inf = DaSet.of(t, obs)
        truths.append(truth)
        all_factors.extend(factors)
        n_rows = sum(f.dim for f in factors)

        baseline.delta  # the previous solve is not part of this step's update
        prev = baseline
        baseline, samples = _timed(lambda: incremental_update(prev, factors), cfg.reps)
        n_state = baseline.ordering.dim
        if "ISAM" in methods:
            records.append(BenchRecord(cfg.name, step, "ISAM", "total", _median(samples), n_state,
                                       n_rows, baseline.stats["n_reeliminations"], 0, 0))
        if "STD" in methods:
            _, samples = _timed(lambda: batch_update(prev, factors), cfg.reps)
            records.append(BenchRecord(cfg.name, step, "STD", "total", _median(samples), n_state,
                                       n_rows, n_state, 0, 0))

        carried = None
        for name in methods:
            if name not in RUB_METHODS:
                continue
            method = RUB_METHODS[name]
            stats = []

            def call():
                b = rub_inference_step(session, factors, m_inf, method)
                stats.append(b.stats)
                return b

            out, samples = _timed(call, cfg.reps)
            timed = stats[1:]
            diff = belief_difference(out, baseline)
            for key in worst:
                worst[key] = max(worst[key], diff[key])
            gap = max(diff.values())
            s = out.stats
            common = (n_state, n_rows, s["n_reeliminations"], s["da_rmv"], s["da_add"], gap)
            records.append(BenchRecord(cfg.name, step, name, "rhs_update",
                                       _median([x["rhs_phase_ns"] for x in timed]), *common))
            records.append(BenchRecord(cfg.name, step, name, "da_update",
                                       _median([x["da_phase_ns"] for x in timed]), *common))
            records.append(BenchRecord(cfg.name, step, name, "total", _median(samples), *common))
            if method is RhsMethod.OTM_OO:
                carried = out
        if carried is None:
            carried = rub_inference_step(session, factors, m_inf, RhsMethod.OTM_OO)
        belief = carried
        if progress is not None:
            progress(step, belief)

    return ScenarioResult(records, truths, all_factors, belief, baseline, world,
                          time.perf_counter() - wall0, worst)


def cumulative_time(records, method: str, phase: str = "total") -> int:
    return sum(r.time_ns for r in records if r.method == method and r.phase == phase)


def consistency_rate(records, method: str = "UD_OTM_OO") -> float:
    """Fraction of steps whose planned associations were all confirmed."""
    rows = [r for r in records if r.method == method and r.phase == "total"]
    if not rows:
        return float("nan")
    return sum(1 for r in rows if r.da_rmv == 0 and r.da_add == 0) / len(rows)
