"""Planar SLAM variables, factors, linearization and data-association sets.

Poses are SE(2) triples ``(x, y, theta)`` updated with additive increments
(``theta`` re-wrapped to ``(-pi, pi]``); landmarks are planar points.  Each
factor whitens its residual with a diagonal square-root information matrix
``W`` and linearizes to ``A delta ~= b`` where ``b = W (z - h(x_bar))`` and
``A = W dh/dx``.
"""
from __future__ import annotations

import bisect
import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (DegenerateGeometry, InvalidArgument, MissingKey, ParseError,
                     TimestampMismatch)
from .linalg import SparseRowMatrix


def wrap_angle(a: float) -> float:
    """Wrap an angle to ``(-pi, pi]``."""
    return a - 2.0 * math.pi * math.ceil((a - math.pi) / (2.0 * math.pi))


# ---------------------------------------------------------------------------
# variables
# ---------------------------------------------------------------------------

class VarKind(enum.IntEnum):
    Pose = 0
    Landmark = 1


class VarKey(NamedTuple):
    kind: VarKind
    index: int

    def __repr__(self):
        return f"{'x' if self.kind is VarKind.Pose else 'l'}{self.index}"

    @property
    def dim(self) -> int:
        return 3 if self.kind is VarKind.Pose else 2


def X(i: int) -> VarKey:
    return VarKey(VarKind.Pose, int(i))


def L(j: int) -> VarKey:
    return VarKey(VarKind.Landmark, int(j))


class PoseSE2(NamedTuple):
    x: float
    y: float
    theta: float

    def retract(self, delta) -> "PoseSE2":
        return PoseSE2(self.x + delta[0], self.y + delta[1], wrap_angle(self.theta + delta[2]))

    def distance(self, p) -> float:
        return math.hypot(self.x - p[0], self.y - p[1])


class Point2(NamedTuple):
    x: float
    y: float

    def retract(self, delta) -> "Point2":
        return Point2(self.x + delta[0], self.y + delta[1])


def motion_compose(x: PoseSE2, u) -> PoseSE2:
    """Apply body-frame odometry ``u = (dx, dy, dtheta)`` to pose ``x``."""
    c, s = math.cos(x.theta), math.sin(x.theta)
    return PoseSE2(x.x + c * u[0] - s * u[1], x.y + s * u[0] + c * u[1],
                   wrap_angle(x.theta + u[2]))


def range_bearing(x: PoseSE2, l) -> tuple[float, float]:
    """Range and body-frame bearing from pose ``x`` to point ``l``."""
    dx, dy = l[0] - x.x, l[1] - x.y
    r = math.hypot(dx, dy)
    if r <= 1e-9:
        raise DegenerateGeometry("landmark coincides with the robot position")
    return r, wrap_angle(math.atan2(dy, dx) - x.theta)


def invert_range_bearing(x: PoseSE2, r: float, b: float) -> Point2:
    """Point observed at range ``r`` and bearing ``b`` from ``x``."""
    a = x.theta + b
    return Point2(x.x + r * math.cos(a), x.y + r * math.sin(a))


class Values(dict):
    """Mapping ``VarKey -> PoseSE2 | Point2``."""

    def retract(self, delta, ordering) -> "Values":
        """New values ``self (+) delta`` with ``delta`` laid out by ``ordering``."""
        out = Values(self)
        for key in ordering.keys:
            o = ordering.offset(key)
            out[key] = self[key].retract(delta[o:o + key.dim])
        return out


class Ordering:
    """Elimination order with per-variable column offsets.

    Variables are appended at the tail, so ``offset`` and ``position`` stay
    stable for existing keys; ``without`` is the one exception and is only
    used to discard placeholder variables created during planning.
    """

    __slots__ = ("keys", "_pos", "_off", "dim")

    def __init__(self, keys: Iterable[VarKey] = ()):
        self.keys: list[VarKey] = []
        self._pos: dict[VarKey, int] = {}
        self._off: list[int] = []
        self.dim = 0
        for k in keys:
            self._push(k)

    def _push(self, k):
        if k in self._pos:
            raise InvalidArgument(f"{k!r} already ordered")
        self._pos[k] = len(self.keys)
        self.keys.append(k)
        self._off.append(self.dim)
        self.dim += k.dim

    def extended(self, new_keys: Iterable[VarKey]) -> "Ordering":
        out = Ordering.__new__(Ordering)
        out.keys = list(self.keys)
        out._pos = dict(self._pos)
        out._off = list(self._off)
        out.dim = self.dim
        for k in new_keys:
            out._push(k)
        return out

    def without(self, keys: Iterable[VarKey]) -> "Ordering":
        """Drop ``keys``; later variables shift down to close the gap."""
        drop = set(keys)
        for k in drop:
            self.position(k)
        return Ordering(k for k in self.keys if k not in drop)

    def __len__(self):
        return len(self.keys)

    def __contains__(self, k):
        return k in self._pos

    def __eq__(self, other):
        return isinstance(other, Ordering) and self.keys == other.keys

    def position(self, k) -> int:
        try:
            return self._pos[k]
        except KeyError:
            raise MissingKey(k) from None

    def offset(self, k) -> int:
        return self._off[self.position(k)]

    def key_at_column(self, col: int) -> VarKey:
        return self.keys[bisect.bisect_right(self._off, col) - 1]

    def __repr__(self):
        return f"Ordering({self.keys!r})"


# ---------------------------------------------------------------------------
# factors
# ---------------------------------------------------------------------------

class FactorKind(enum.Enum):
    Prior = "PRIOR"
    Motion = "MOTION"
    RangeBearing = "BR"


@dataclass(frozen=True)
class Factor:
    """A Gaussian factor with diagonal noise.

    ``sqrt_info`` holds the diagonal of ``Sigma^{-1/2}``.
    """

    kind: FactorKind
    keys: tuple[VarKey, ...]
    measured: tuple[float, ...]
    sqrt_info: tuple[float, ...]

    def __post_init__(self):
        arity = {FactorKind.Prior: 1, FactorKind.Motion: 2, FactorKind.RangeBearing: 2}
        if len(self.keys) != arity[self.kind]:
            raise InvalidArgument(f"{self.kind.name} takes {arity[self.kind]} keys")
        if self.kind is FactorKind.Motion and not all(k.kind is VarKind.Pose for k in self.keys):
            raise InvalidArgument("motion factor connects two poses")
        if self.kind is FactorKind.RangeBearing and (
                self.keys[0].kind is not VarKind.Pose or self.keys[1].kind is not VarKind.Landmark):
            raise InvalidArgument("range-bearing factor connects (pose, landmark)")
        if len(self.measured) != self.dim or len(self.sqrt_info) != self.dim:
            raise InvalidArgument("measurement or noise length does not match factor dof")
        if min(self.sqrt_info) <= 0.0:
            raise InvalidArgument("noise square-root information must be positive")

    @property
    def dim(self) -> int:
        if self.kind is FactorKind.Prior:
            return self.keys[0].dim
        return 3 if self.kind is FactorKind.Motion else 2

    @property
    def landmark(self) -> int | None:
        """Landmark index of a range-bearing factor."""
        return self.keys[1].index if self.kind is FactorKind.RangeBearing else None

    def with_measured(self, measured) -> "Factor":
        return Factor(self.kind, self.keys, tuple(float(v) for v in measured), self.sqrt_info)


def _sqrt_info(sigmas) -> tuple[float, ...]:
    sigmas = tuple(float(s) for s in sigmas)
    if not all(s > 0.0 for s in sigmas):
        raise InvalidArgument(f"noise sigmas must be positive, got {sigmas}")
    return tuple(1.0 / s for s in sigmas)


def prior_factor(key: VarKey, mean, sigmas) -> Factor:
    return Factor(FactorKind.Prior, (key,), tuple(map(float, mean)), _sqrt_info(sigmas))


def motion_factor(i: int, j: int, u, sigmas) -> Factor:
    return Factor(FactorKind.Motion, (X(i), X(j)), tuple(map(float, u)), _sqrt_info(sigmas))


def range_bearing_factor(t: int, lm: int, z, sigmas) -> Factor:
    return Factor(FactorKind.RangeBearing, (X(t), L(lm)), tuple(map(float, z)),
                  _sqrt_info(sigmas))


def _lookup(values, key):
    try:
        return values[key]
    except KeyError:
        raise MissingKey(key) from None


def _pose_jacobian(x: PoseSE2, u):
    c, s = math.cos(x.theta), math.sin(x.theta)
    return np.array([[1.0, 0.0, -s * u[0] - c * u[1]],
                     [0.0, 1.0, c * u[0] - s * u[1]],
                     [0.0, 0.0, 1.0]])


def residual(f: Factor, values) -> np.ndarray:
    """Whitened ``b = W (z - h(x))`` at ``values`` (angles wrapped)."""
    w = np.asarray(f.sqrt_info)
    if f.kind is FactorKind.Prior:
        x = _lookup(values, f.keys[0])
        e = np.subtract(f.measured, x)
        if f.keys[0].kind is VarKind.Pose:
            e[2] = wrap_angle(e[2])
    elif f.kind is FactorKind.Motion:
        xi, xj = _lookup(values, f.keys[0]), _lookup(values, f.keys[1])
        e = np.subtract(motion_compose(xi, f.measured), xj)
        e[2] = wrap_angle(e[2])
    else:
        x, l = _lookup(values, f.keys[0]), _lookup(values, f.keys[1])
        r, b = range_bearing(x, l)
        e = np.array([f.measured[0] - r, wrap_angle(f.measured[1] - b)])
    return w * e


def linearize(f: Factor, values) -> tuple[list[np.ndarray], np.ndarray]:
    """Whitened Jacobian blocks (one per key, in key order) and RHS."""
    w = np.asarray(f.sqrt_info)[:, None]
    b = residual(f, values)
    if f.kind is FactorKind.Prior:
        return [w * np.eye(f.dim)], b
    if f.kind is FactorKind.Motion:
        xi = values[f.keys[0]]
        return [-w * _pose_jacobian(xi, f.measured), w * np.eye(3)], b
    x, l = values[f.keys[0]], values[f.keys[1]]
    dx, dy = l[0] - x.x, l[1] - x.y
    q = dx * dx + dy * dy
    r = math.sqrt(q)
    hx = np.array([[-dx / r, -dy / r, 0.0],
                   [dy / q, -dx / q, -1.0]])
    hl = np.array([[dx / r, dy / r],
                   [-dy / q, dx / q]])
    return [w * hx, w * hl], b


@functools.lru_cache(maxsize=1 << 16)
def _linearize_at(f: Factor, point: tuple):
    blocks, b = linearize(f, dict(zip(f.keys, point)))
    for blk in blocks:
        blk.flags.writeable = False
    b.flags.writeable = False
    return blocks, b


def linearize_cached(f: Factor, values) -> tuple[list[np.ndarray], np.ndarray]:
    """Memoized ``linearize``; returned arrays are read-only."""
    return _linearize_at(f, tuple(_lookup(values, k) for k in f.keys))


def assemble(factors: Iterable[Factor], values, ordering: Ordering
             ) -> tuple[SparseRowMatrix, np.ndarray]:
    """Stack whitened factor linearizations into ``(A, b)``."""
    rows, rhs = [], []
    for f in factors:
        for k in f.keys:
            if k not in ordering:
                raise MissingKey(k)
        blocks, b = linearize(f, values)
        for r in range(f.dim):
            row = []
            for k, blk in zip(f.keys, blocks):
                o = ordering.offset(k)
                row.extend((o + c, blk[r, c]) for c in range(k.dim) if blk[r, c] != 0.0)
            rows.append(row)
        rhs.append(b)
    a = SparseRowMatrix.from_rows(rows, ordering.dim)
    return a, (np.concatenate(rhs) if rhs else np.zeros(0))


# ---------------------------------------------------------------------------
# factor graph
# ---------------------------------------------------------------------------

class FactorGraph:
    """Factors keyed by stable integer ids, with a variable adjacency index.

    ``add``/``remove``/``replace`` return new graphs; the receiver is never
    modified.
    """

    __slots__ = ("factors", "adjacency", "next_id")

    def __init__(self, factors: Iterable[Factor] = ()):
        self.factors: dict[int, Factor] = {}
        self.adjacency: dict[VarKey, set[int]] = {}
        self.next_id = 0
        self._insert(factors)

    def _insert(self, factors):
        ids = []
        for f in factors:
            fid = self.next_id
            self.next_id += 1
            self.factors[fid] = f
            for k in f.keys:
                s = self.adjacency.get(k)
                self.adjacency[k] = {fid} if s is None else s | {fid}
            ids.append(fid)
        return ids

    def _clone(self) -> "FactorGraph":
        out = FactorGraph.__new__(FactorGraph)
        out.factors = dict(self.factors)
        out.adjacency = dict(self.adjacency)
        out.next_id = self.next_id
        return out

    def add(self, factors: Iterable[Factor]) -> tuple["FactorGraph", list[int]]:
        out = self._clone()
        ids = out._insert(factors)
        return out, ids

    def remove(self, ids: Iterable[int]) -> "FactorGraph":
        out = self._clone()
        for fid in ids:
            f = out.factors.pop(fid)
            for k in f.keys:
                rest = out.adjacency[k] - {fid}
                if rest:
                    out.adjacency[k] = rest
                else:
                    del out.adjacency[k]
        return out

    def replace(self, updates: dict[int, Factor]) -> "FactorGraph":
        """Swap factor payloads in place of the same ids (same keys required)."""
        out = self._clone()
        for fid, f in updates.items():
            if out.factors[fid].keys != f.keys:
                raise InvalidArgument("replacement must keep the factor's keys")
            out.factors[fid] = f
        return out

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors.values())

    def __getitem__(self, fid):
        return self.factors[fid]

    def items(self):
        return self.factors.items()

    @property
    def variables(self) -> set[VarKey]:
        return set(self.adjacency)

    def factors_within(self, keys: set[VarKey]) -> list[int]:
        """Ids of factors whose keys all lie in ``keys`` (ascending)."""
        out = set()
        for k in keys:
            for fid in self.adjacency.get(k, ()):
                if fid not in out and all(x in keys for x in self.factors[fid].keys):
                    out.add(fid)
        return sorted(out)

    def find(self, kind: FactorKind, keys) -> int | None:
        keys = tuple(keys)
        for fid in self.adjacency.get(keys[0], ()):
            f = self.factors[fid]
            if f.kind is kind and f.keys == keys:
                return fid
        return None


# ---------------------------------------------------------------------------
# data association
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DaSet:
    """Landmark indices associated with the measurements at ``timestamp``."""

    timestamp: int
    landmarks: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "landmarks", tuple(sorted(set(int(j) for j in self.landmarks))))

    def __contains__(self, j):
        return j in self.landmarks

    def __len__(self):
        return len(self.landmarks)

    @classmethod
    def of(cls, timestamp, factors: Iterable[Factor]) -> "DaSet":
        return cls(timestamp, tuple(f.landmark for f in factors
                                    if f.kind is FactorKind.RangeBearing))


def da_report(m_plan: DaSet, m_inf: DaSet) -> tuple[DaSet, DaSet, DaSet]:
    """Split two associations into (common, planned-only, inferred-only)."""
    if m_plan.timestamp != m_inf.timestamp:
        raise TimestampMismatch(f"{m_plan.timestamp} != {m_inf.timestamp}")
    p, q = set(m_plan.landmarks), set(m_inf.landmarks)
    t = m_plan.timestamp
    return DaSet(t, tuple(p & q)), DaSet(t, tuple(p - q)), DaSet(t, tuple(q - p))


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def format_factors(factors: Iterable[Factor]) -> str:
    """Line-oriented text: ``PRIOR t x y th sx sy sth``, ``MOTION t dx dy dth sx sy sth``,
    ``BR t j r b sr sb`` and ``LPRIOR j x y sx sy`` for landmark priors."""
    lines = []
    for f in factors:
        sig = [1.0 / w for w in f.sqrt_info]
        if f.kind is FactorKind.Prior and f.keys[0].kind is VarKind.Pose:
            head = ["PRIOR", f.keys[0].index]
        elif f.kind is FactorKind.Prior:
            head = ["LPRIOR", f.keys[0].index]
        elif f.kind is FactorKind.Motion:
            if f.keys[1].index != f.keys[0].index + 1:
                raise InvalidArgument("text format only encodes consecutive motion factors")
            head = ["MOTION", f.keys[1].index]
        else:
            head = ["BR", f.keys[0].index, f.keys[1].index]
        lines.append(" ".join([str(h) for h in head] + [repr(float(v)) for v in (*f.measured, *sig)]))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_factors(text: str) -> list[Factor]:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag, args = parts[0], parts[1:]
        try:
            if tag == "PRIOR" and len(args) == 7:
                v = list(map(float, args[1:]))
                out.append(prior_factor(X(int(args[0])), v[:3], v[3:]))
            elif tag == "LPRIOR" and len(args) == 5:
                v = list(map(float, args[1:]))
                out.append(prior_factor(L(int(args[0])), v[:2], v[2:]))
            elif tag == "MOTION" and len(args) == 7:
                t = int(args[0])
                v = list(map(float, args[1:]))
                out.append(motion_factor(t - 1, t, v[:3], v[3:]))
            elif tag == "BR" and len(args) == 6:
                v = list(map(float, args[2:]))
                out.append(range_bearing_factor(int(args[0]), int(args[1]), v[:2], v[2:]))
            else:
                raise ParseError(f"line {n}: unrecognized record {line!r}")
        except (ValueError, InvalidArgument) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"line {n}: {exc}") from exc
    return out
