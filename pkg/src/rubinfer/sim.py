"""Seeded planar world: ground-truth motion, noisy range-bearing readings and
forced association errors.

Landmark indices ``0 .. n_mapped-1`` are known to the robot from the start
(a prior map); the reserve landmarks after them are unknown and only enter
the estimate when they are injected as first-time observations.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument, ParseError
from .factors import Point2, PoseSE2, motion_compose, range_bearing


class InconsistencyMode(enum.Enum):
    DropMeasured = "drop"
    SwapLandmark = "swap"
    InjectNew = "inject"
    Mixed = "mixed"


@dataclass(frozen=True)
class World:
    seed: int
    landmarks: tuple[Point2, ...]
    reserve: tuple[Point2, ...]
    targets: tuple[Point2, ...]
    motion_sigmas: tuple[float, float, float]
    meas_sigmas: tuple[float, float]
    sensor_range: float
    start: PoseSE2 = PoseSE2(0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.motion_sigmas + self.meas_sigmas) < 0.0:
            raise InvalidArgument("noise sigmas must be non-negative")
        pts = self.landmarks + self.reserve
        if len(set(pts)) != len(pts):
            raise InvalidArgument("landmarks must be distinct")

    @property
    def n_mapped(self) -> int:
        return len(self.landmarks)

    def position(self, j: int) -> Point2:
        return self.landmarks[j] if j < len(self.landmarks) else self.reserve[j - len(self.landmarks)]

    @property
    def all_landmarks(self) -> tuple[Point2, ...]:
        return self.landmarks + self.reserve


def make_world(seed: int, field_size: tuple[float, float], n_landmarks: int, targets,
               motion_sigmas, meas_sigmas, sensor_range: float, n_reserve: int = 0,
               start=(0.0, 0.0, 0.0)) -> World:
    """Landmarks drawn uniformly on ``[0, w] x [0, h]`` from ``seed``."""
    rng = np.random.default_rng(seed)
    w, h = field_size
    pts = rng.uniform((0.0, 0.0), (w, h), size=(n_landmarks + n_reserve, 2))
    lms = tuple(Point2(float(x), float(y)) for x, y in pts)
    return World(seed, lms[:n_landmarks], lms[n_landmarks:],
                 tuple(Point2(*map(float, t)) for t in targets),
                 tuple(map(float, motion_sigmas)), tuple(map(float, meas_sigmas)),
                 float(sensor_range), PoseSE2(*map(float, start)))


@dataclass(frozen=True)
class StepTruth:
    pose: PoseSE2
    odometry: tuple[float, float, float]
    measurements: tuple[tuple[int, float, float], ...]
    forced: str | None = None

    @property
    def landmarks(self) -> tuple[int, ...]:
        return tuple(m[0] for m in self.measurements)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "StepTruth":
        try:
            raw = json.loads(text)
            return cls(PoseSE2(*raw["pose"]), tuple(raw["odometry"]),
                       tuple((int(j), float(r), float(b)) for j, r, b in raw["measurements"]),
                       raw.get("forced"))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad truth record: {exc}") from exc


def _reading(world: World, pose: PoseSE2, j: int, rng) -> tuple[int, float, float]:
    r, b = range_bearing(pose, world.position(j))
    sr, sb = world.meas_sigmas
    return (j, r + (rng.normal(0.0, sr) if sr > 0 else 0.0),
            b + (rng.normal(0.0, sb) if sb > 0 else 0.0))


def step(world: World, true_pose: PoseSE2, commanded, rng: np.random.Generator) -> StepTruth:
    """Advance the true pose by the noisy command and read every landmark in range.

    The odometry handed to inference is the commanded move; the process noise
    only shows up in the true pose.
    """
    u = np.asarray(commanded, dtype=float)
    noise = np.array([rng.normal(0.0, s) if s > 0 else 0.0 for s in world.motion_sigmas])
    pose = motion_compose(true_pose, u + noise)
    meas = []
    for j, p in enumerate(world.all_landmarks):
        if math.hypot(p.x - pose.x, p.y - pose.y) <= world.sensor_range:
            meas.append(_reading(world, pose, j, rng))
    return StepTruth(pose, tuple(float(v) for v in u), tuple(meas))


def restrict(truth: StepTruth, landmarks) -> StepTruth:
    """Keep only the readings of ``landmarks``."""
    keep = set(landmarks)
    return StepTruth(truth.pose, truth.odometry,
                     tuple(m for m in truth.measurements if m[0] in keep), truth.forced)


def force_inconsistency(truth: StepTruth, mode: InconsistencyMode | str, rate: float,
                        rng: np.random.Generator, world: World | None = None,
                        known=()) -> StepTruth:
    """With probability ``rate`` corrupt the readings so planning's prediction fails.

    ``DropMeasured`` loses every reading, ``SwapLandmark`` replaces one reading
    by a genuine reading of another known landmark in sensor range, and
    ``InjectNew`` adds a reading of a landmark not yet in ``known``.  ``Mixed``
    picks uniformly among the corruptions that are possible at this step.
    A step the chosen corruption cannot act on is returned unchanged.
    """
    if not 0.0 <= rate <= 1.0:
        raise InvalidArgument("rate must lie in [0, 1]")
    mode = InconsistencyMode(mode)
    if rate == 0.0 or rng.random() >= rate:
        return truth
    known = set(known)
    if mode is not InconsistencyMode.Mixed:
        out = _apply(truth, mode, rng, world, known)
        return truth if out is None else out
    options = [m for m in (InconsistencyMode.DropMeasured, InconsistencyMode.SwapLandmark,
                           InconsistencyMode.InjectNew) if _applicable(truth, m, world, known)]
    if not options:
        return truth
    return _apply(truth, options[int(rng.integers(len(options)))], rng, world, known)


def _nearby(world: World, pose: PoseSE2, candidates):
    out = []
    for j in candidates:
        p = world.position(j)
        if math.hypot(p.x - pose.x, p.y - pose.y) <= world.sensor_range:
            out.append(j)
    return out


def _candidates(truth: StepTruth, mode: InconsistencyMode, world, known) -> list[int]:
    seen = set(truth.landmarks)
    if mode is InconsistencyMode.SwapLandmark:
        return _nearby(world, truth.pose, sorted(j for j in known if j not in seen))
    return _nearby(world, truth.pose, [j for j in range(len(world.all_landmarks))
                                       if j not in known and j not in seen])


def _applicable(truth: StepTruth, mode: InconsistencyMode, world, known) -> bool:
    if mode is InconsistencyMode.DropMeasured:
        return bool(truth.measurements)
    if world is None:
        return False
    if mode is InconsistencyMode.SwapLandmark and not truth.measurements:
        return False
    return bool(_candidates(truth, mode, world, known))


def _apply(truth: StepTruth, mode: InconsistencyMode, rng, world, known):
    if not _applicable(truth, mode, world, known):
        return None
    if mode is InconsistencyMode.DropMeasured:
        return StepTruth(truth.pose, truth.odometry, (), mode.name)
    meas = list(truth.measurements)
    pool = _candidates(truth, mode, world, known)
    reading = _reading(world, truth.pose, pool[int(rng.integers(len(pool)))], rng)
    if mode is InconsistencyMode.SwapLandmark:
        meas[int(rng.integers(len(meas)))] = reading
    else:
        meas.append(reading)
    meas.sort()
    return StepTruth(truth.pose, truth.odometry, tuple(meas), mode.name)


def truth_stream_text(steps) -> str:
    return "".join(s.to_json() + "\n" for s in steps)


def parse_truth_stream(text: str) -> list[StepTruth]:
    return [StepTruth.from_json(line) for line in text.splitlines() if line.strip()]
