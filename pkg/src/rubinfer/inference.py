"""Beliefs and the two reference inference updates.

A belief keeps a fixed linearization point for every variable it has seen;
new variables are linearized at their initial guess.  The square-root
information factor and right-hand side live in the Bayes tree, and the MAP
estimate is ``lin_point (+) delta`` with ``delta`` from back-substitution.
Keeping the linearization point fixed is what makes the planning-time factor
``R`` reusable at inference time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import bayes_tree as bt
from .errors import DimensionMismatch, Diverged, InvalidArgument, MissingKey
from .factors import (DaSet, Factor, FactorGraph, FactorKind, Ordering, Point2, PoseSE2,
                      Values, VarKey, VarKind, invert_range_bearing, motion_compose, residual,
                      wrap_angle)
from .linalg import UpperTriangular, back_substitute, forward_substitute_transpose_multi


@dataclass
class Belief:
    """Gaussian belief over the trajectory and map at time ``t`` given data up to ``k``."""

    t: int
    k: int
    lin_point: Values
    tree: bt.BayesTree
    graph: FactorGraph
    ordering: Ordering
    da: dict[int, DaSet] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    _flat: tuple | None = field(default=None, repr=False)
    _delta: np.ndarray | None = field(default=None, repr=False)

    @property
    def flat(self) -> tuple[UpperTriangular, np.ndarray]:
        """Global ``(R, d)`` (computed on first use)."""
        if self._flat is None:
            self._flat = bt.flatten(self.tree, self.ordering)
        return self._flat

    @property
    def r(self) -> UpperTriangular:
        return self.flat[0]

    @property
    def d(self) -> np.ndarray:
        return self.flat[1]

    @property
    def delta(self) -> np.ndarray:
        if self._delta is None:
            r, d = self.flat
            self._delta = back_substitute(r, d)
        return self._delta

    @property
    def estimate(self) -> Values:
        return self.lin_point.retract(self.delta, self.ordering)

    def estimate_of(self, key: VarKey):
        o = self.ordering.offset(key)
        return self.lin_point[key].retract(self.delta[o:o + key.dim])

    @property
    def latest_pose(self) -> VarKey:
        return VarKey(VarKind.Pose, self.t)

    def landmarks(self) -> list[VarKey]:
        return [k for k in self.ordering.keys if k.kind is VarKind.Landmark]


def whitened_cost(graph: FactorGraph, values) -> float:
    """Sum of squared whitened residuals."""
    return float(sum(np.dot(e, e) for e in (residual(f, values) for f in graph)))


def initial_belief(prior_factors: Iterable[Factor], values: Values, ordering: Ordering,
                   t: int = 0) -> Belief:
    """Belief from a set of prior factors evaluated at ``values``."""
    graph = FactorGraph(prior_factors)
    tree = bt.eliminate(graph, values, ordering)
    return Belief(t, t, Values(values), tree, graph, ordering, {})


def new_variables(belief: Belief, factors: Iterable[Factor]) -> tuple[list[VarKey], Values]:
    """Keys introduced by ``factors`` and their initial values.

    A new pose is the current estimate composed with its odometry; a new
    landmark is placed by inverting its first range-bearing reading from the
    observing pose's initial value.  A variable introduced only by a prior
    starts at the prior mean.
    """
    keys: list[VarKey] = []
    init = Values()
    known = belief.ordering
    for f in factors:
        if f.kind is FactorKind.Motion and f.keys[1] not in known and f.keys[1] not in init:
            src = f.keys[0]
            base = init[src] if src in init else belief.estimate_of(src)
            init[f.keys[1]] = motion_compose(base, f.measured)
            keys.append(f.keys[1])
    for f in factors:
        if f.kind is FactorKind.RangeBearing and f.keys[1] not in known and f.keys[1] not in init:
            x = f.keys[0]
            pose = init[x] if x in init else belief.lin_point.get(x)
            if pose is None:
                raise MissingKey(x)
            init[f.keys[1]] = invert_range_bearing(pose, *f.measured)
            keys.append(f.keys[1])
    for f in factors:
        if f.kind is FactorKind.Prior and f.keys[0] not in known and f.keys[0] not in init:
            key = f.keys[0]
            init[key] = (PoseSE2 if key.kind is VarKind.Pose else Point2)(*f.measured)
            keys.append(key)
    for f in factors:
        for key in f.keys:
            if key not in known and key not in init:
                raise MissingKey(f"cannot initialize {key!r}")
    return keys, init


def _advance(belief: Belief, factors: list[Factor]):
    keys, init = new_variables(belief, factors)
    ordering = belief.ordering.extended(keys)
    values = Values(belief.lin_point)
    values.update(init)
    graph, ids = belief.graph.add(factors)
    t = max([belief.t] + [k.index for k in keys if k.kind is VarKind.Pose])
    da = dict(belief.da)
    obs = [f for f in factors if f.kind is FactorKind.RangeBearing]
    for ti in sorted({f.keys[0].index for f in obs} | ({t} if t != belief.t else set())):
        da[ti] = DaSet(ti, tuple(da.get(ti, DaSet(ti)).landmarks)
                       + tuple(f.landmark for f in obs if f.keys[0].index == ti))
    return keys, ordering, values, graph, t, da


def batch_update(belief: Belief, new_factors: Iterable[Factor]) -> Belief:
    """Re-assemble and re-factor the whole problem with ``new_factors`` added."""
    new_factors = list(new_factors)
    keys, ordering, values, graph, t, da = _advance(belief, new_factors)
    tree = bt.eliminate(graph, values, ordering)
    return Belief(t, t, values, tree, graph, ordering, da,
                  {"n_reeliminations": len(ordering), "n_added_factor_rows":
                   sum(f.dim for f in new_factors)})


def incremental_update(belief: Belief, new_factors: Iterable[Factor]) -> Belief:
    """Re-eliminate only the cliques reached by the new factors.

    The involved cliques are those owning a variable of a new factor plus
    their ancestors; their variables are re-eliminated together with the new
    variables while untouched sub-trees re-enter as cached separator factors.
    """
    new_factors = list(new_factors)
    if not new_factors:
        return belief
    keys, ordering, values, graph, t, da = _advance(belief, new_factors)
    involved = {k for f in new_factors for k in f.keys if k in belief.ordering}
    tree, info = bt.update(belief.tree, graph, values, ordering, involved, keys)
    return Belief(t, t, values, tree, graph, ordering, da,
                  {"n_reeliminations": info.n_reeliminated,
                   "n_added_factor_rows": sum(f.dim for f in new_factors)})


def gauss_newton(belief: Belief, max_iter: int = 10, tol: float = 1e-6) -> Belief:
    """Iterate full relinearization and re-elimination to the MAP estimate.

    A step that increases the whitened cost is halved; three consecutive
    increases raise ``Diverged``.  The returned belief is linearized at the
    final estimate.
    """
    if max_iter < 1:
        raise InvalidArgument("max_iter must be positive")
    x = belief.lin_point
    tree = belief.tree
    cost = whitened_cost(belief.graph, x)
    history = [cost]
    iterations = 0
    for _ in range(max_iter):
        delta = bt.tree_solve(tree, belief.ordering)
        if np.max(np.abs(delta), initial=0.0) < tol:
            break
        step = delta
        growths = 0
        while True:
            x_new = x.retract(step, belief.ordering)
            c_new = whitened_cost(belief.graph, x_new)
            if c_new <= cost * (1.0 + 1e-12) + 1e-300:
                break
            growths += 1
            if growths >= 3:
                raise Diverged(f"cost rose three times in a row (from {cost:.6g})")
            step = step / 2.0
        x, cost = x_new, c_new
        history.append(cost)
        iterations += 1
        tree = bt.eliminate(belief.graph, x, belief.ordering)
    out = Belief(belief.t, belief.k, Values(x), tree, belief.graph, belief.ordering,
                 dict(belief.da), {"gn_iterations": iterations, "cost_history": history})
    return out


def marginal_covariance(belief: Belief, keys: Iterable[VarKey]) -> np.ndarray:
    """Joint marginal covariance of ``keys`` from ``(R^T R)^{-1}``.

    Solves ``R^T Y = E`` for the unit columns ``E`` of the requested
    variables; the block is ``Y^T Y``.
    """
    keys = list(keys)
    r = belief.r
    cols = np.concatenate([np.arange(belief.ordering.offset(k), belief.ordering.offset(k) + k.dim)
                           for k in keys])
    e = np.zeros((r.n, len(cols)))
    e[cols, np.arange(len(cols))] = 1.0
    y = forward_substitute_transpose_multi(r, e)
    return y.T @ y


def marginal_cov_diag(belief: Belief, key: VarKey) -> np.ndarray:
    """Marginal covariance block of a single variable."""
    return marginal_covariance(belief, [key])


def estimate_vector(belief: Belief) -> np.ndarray:
    """MAP estimate stacked in ordering layout."""
    est = belief.estimate
    return np.concatenate([np.asarray(est[k], dtype=float) for k in belief.ordering.keys])


def belief_difference(a: Belief, b: Belief) -> dict[str, float]:
    """Largest absolute differences of ``R``, ``d`` and the MAP estimate.

    Both beliefs must share an ordering.  Pose headings are compared modulo
    ``2*pi``.
    """
    if a.ordering != b.ordering:
        raise DimensionMismatch("beliefs have different variable orderings")
    ra, da = a.flat
    rb, db = b.flat
    dr = abs(ra.to_scipy() - rb.to_scipy())
    diff = estimate_vector(a) - estimate_vector(b)
    for k in a.ordering.keys:
        if k.kind is VarKind.Pose:
            o = a.ordering.offset(k) + 2
            diff[o] = wrap_angle(diff[o])
    return {"r": float(dr.max()) if dr.nnz else 0.0,
            "d": float(np.max(np.abs(da - db), initial=0.0)),
            "estimate": float(np.max(np.abs(diff), initial=0.0))}
