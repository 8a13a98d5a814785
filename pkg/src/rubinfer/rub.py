"""Inference updates that reuse the factorization computed while planning.

Planning already folded the motion factor and the predicted observations
into the square-root factor.  When the executed action matches the plan and
every predicted association is confirmed, the only thing left is the
right-hand side: the measured values differ from the predicted ones.  Four
exact ways of recomputing it are provided:

``OTM``
    replay the stored rotations on ``[d_prev; b_new]``;
``OTM_OO``
    replay only the observation rotations, starting from the
    motion-propagated ``d_motion``;
``DU``
    remove the old information and add the new one through a transposed
    triangular solve;
``DU_OO``
    same, correcting only the observation rows.

Associations that planning got wrong are repaired by re-eliminating the
affected part of the Bayes tree (``da_update``).
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import bayes_tree as bt
from .errors import DimensionMismatch, InvalidArgument
from .factors import (DaSet, Factor, FactorGraph, FactorKind, Ordering, Values, VarKey,
                      da_report, invert_range_bearing, residual)
from .inference import Belief
from .linalg import (GivensSeq, SparseRowMatrix, UpperTriangular, check_pivots,
                     apply_q_transpose, forward_substitute_transpose, incremental_qr)


class RhsMethod(enum.Enum):
    OTM = "OTM"
    OTM_OO = "OTM_OO"
    DU = "DU"
    DU_OO = "DU_OO"


@dataclass
class LinearSession:
    """Two-stage factorization of ``[R_prev; motion rows; observation rows]``.

    Stage one folds the motion rows into ``R_prev`` (zero-padded to ``n``
    columns) giving ``(q_motion, r_motion, d_motion)``; stage two folds the
    observation rows into ``r_motion`` giving ``(q_obs, r_pred, d_pred)``.
    ``q_full`` acts on ``[d_prev; 0; b_motion; b_obs]``.
    """

    r_prev: UpperTriangular
    d_prev: np.ndarray
    motion_rows: SparseRowMatrix
    b_motion: np.ndarray
    obs_rows: SparseRowMatrix
    b_obs: np.ndarray
    q_motion: GivensSeq
    r_motion: UpperTriangular
    d_motion: np.ndarray
    q_obs: GivensSeq
    r_pred: UpperTriangular
    d_pred: np.ndarray
    q_full: GivensSeq

    @property
    def n(self) -> int:
        return self.r_pred.n

    @property
    def n_prev(self) -> int:
        return self.r_prev.n

    @property
    def new_rows(self) -> SparseRowMatrix:
        return self.motion_rows.vstack(self.obs_rows)

    @property
    def b_new(self) -> np.ndarray:
        return np.concatenate([self.b_motion, self.b_obs])


def factorize_session(r_prev: UpperTriangular, d_prev, motion_rows: SparseRowMatrix, b_motion,
                      obs_rows: SparseRowMatrix, b_obs) -> LinearSession:
    """Run both planning stages and keep every intermediate."""
    n = motion_rows.n_cols
    if obs_rows.n_cols != n:
        raise DimensionMismatch("motion and observation rows differ in width")
    d_prev = np.asarray(d_prev, dtype=float)
    b_motion = np.asarray(b_motion, dtype=float)
    b_obs = np.asarray(b_obs, dtype=float)
    if len(d_prev) != r_prev.n or len(b_motion) != motion_rows.n_rows \
            or len(b_obs) != obs_rows.n_rows:
        raise DimensionMismatch("right-hand side lengths do not match their rows")
    # columns only the observations reach (first-time landmarks) stay empty
    # after the motion stage
    q_m, r_m = incremental_qr(r_prev, motion_rows, allow_deficient=True)
    pad = n - r_prev.n
    d_m = apply_q_transpose(q_m, np.concatenate([d_prev, np.zeros(pad), b_motion]))[:n]
    q_o, r_p = incremental_qr(r_m, obs_rows, allow_deficient=True)
    check_pivots(r_p.diagonal())
    d_p = apply_q_transpose(q_o, np.concatenate([d_m, b_obs]))[:n]
    m_m = motion_rows.n_rows
    j_shift = np.where(q_o.j >= n, q_o.j + m_m, q_o.j)
    i_shift = np.where(q_o.i >= n, q_o.i + m_m, q_o.i)
    shifted = GivensSeq(n + m_m + obs_rows.n_rows, i_shift, j_shift, q_o.c, q_o.s)
    q_full = GivensSeq(shifted.dim, q_m.i, q_m.j, q_m.c, q_m.s).then(shifted)
    return LinearSession(r_prev, d_prev, motion_rows, b_motion, obs_rows, b_obs,
                         q_m, r_m, d_m, q_o.scheduled(), r_p, d_p, q_full.scheduled())


@dataclass
class PlanningSession:
    """Everything planning hands to inference for one executed action.

    ``obs_fids`` are the ids of ``predicted_factors`` inside
    ``predicted_belief.graph``; observation ``i`` owns rows ``2i, 2i+1`` of
    ``lin.b_obs``.  ``p_cliques`` are the clique ids planning re-eliminated.
    ``placeholders`` are landmark variables planning created for predicted
    first-time observations.
    """

    k: int
    action: tuple[float, float, float]
    prior: Belief
    predicted_belief: Belief | None
    motion: Factor
    motion_fid: int
    predicted_factors: list[Factor]
    obs_fids: list[int]
    da: DaSet
    lin: LinearSession
    p_cliques: tuple[int, ...] = ()
    stats: dict = field(default_factory=dict)
    placeholders: tuple[VarKey, ...] = ()

    @property
    def q_full(self):
        return self.lin.q_full

    @property
    def q_obs(self):
        return self.lin.q_obs

    @property
    def r_motion(self):
        return self.lin.r_motion

    @property
    def d_motion(self):
        return self.lin.d_motion

    def row_span(self, i: int) -> tuple[int, int]:
        r0 = sum(f.dim for f in self.predicted_factors[:i])
        return r0, r0 + self.predicted_factors[i].dim


def _lin(session) -> LinearSession:
    return session.lin if isinstance(session, PlanningSession) else session


# ---------------------------------------------------------------------------
# right-hand-side updates
# ---------------------------------------------------------------------------

def otm_update(session, b_new) -> np.ndarray:
    """``d = (Q_full^T [d_prev; 0; b_new])[:n]`` with ``b_new = [b_motion; b_obs]``."""
    s = _lin(session)
    b_new = np.asarray(b_new, dtype=float)
    if len(b_new) != len(s.b_motion) + len(s.b_obs):
        raise DimensionMismatch(f"expected {len(s.b_motion) + len(s.b_obs)} new rows")
    v = np.concatenate([s.d_prev, np.zeros(s.n - s.n_prev), b_new])
    return apply_q_transpose(s.q_full, v)[:s.n]


def otm_oo_update(session, b_new_obs) -> np.ndarray:
    """``d = (Q_obs^T [d_motion; b_obs])[:n]``."""
    s = _lin(session)
    b_new_obs = np.asarray(b_new_obs, dtype=float)
    if len(b_new_obs) != len(s.b_obs):
        raise DimensionMismatch(f"expected {len(s.b_obs)} observation rows")
    return apply_q_transpose(s.q_obs, np.concatenate([s.d_motion, b_new_obs]))[:s.n]


def du_update(session, b_new) -> np.ndarray:
    """``d = R_pred^{-T} ([R_prev; 0]^T [d_prev; 0] + A_new^T b_new)``."""
    s = _lin(session)
    b_new = np.asarray(b_new, dtype=float)
    m_m = len(s.b_motion)
    if len(b_new) != m_m + len(s.b_obs):
        raise DimensionMismatch(f"expected {m_m + len(s.b_obs)} new rows")
    g = np.zeros(s.n)
    g[:s.n_prev] = s.r_prev.rmatvec(s.d_prev)
    g += s.motion_rows.rmatvec(b_new[:m_m])
    g += s.obs_rows.rmatvec(b_new[m_m:])
    return forward_substitute_transpose(s.r_pred, g)


def du_oo_update(session, b_new_obs) -> np.ndarray:
    """``d = d_pred + R_pred^{-T} H^T (b_obs_new - b_obs_pred)``."""
    s = _lin(session)
    b_new_obs = np.asarray(b_new_obs, dtype=float)
    if len(b_new_obs) != len(s.b_obs):
        raise DimensionMismatch(f"expected {len(s.b_obs)} observation rows")
    g = s.obs_rows.rmatvec(b_new_obs - s.b_obs)
    return s.d_pred + forward_substitute_transpose(s.r_pred, g)


def rhs_update(session, method: RhsMethod, b_motion, b_obs) -> np.ndarray:
    method = RhsMethod(method)
    if method is RhsMethod.OTM:
        return otm_update(session, np.concatenate([b_motion, b_obs]))
    if method is RhsMethod.OTM_OO:
        return otm_oo_update(session, b_obs)
    if method is RhsMethod.DU:
        return du_update(session, np.concatenate([b_motion, b_obs]))
    return du_oo_update(session, b_obs)


# ---------------------------------------------------------------------------
# data association repair
# ---------------------------------------------------------------------------

@dataclass
class DaOutcome:
    graph: FactorGraph
    tree: bt.BayesTree
    ordering: Ordering
    values: Values
    common: DaSet
    removed: DaSet
    added: DaSet
    n_reeliminations: int = 0
    new_variables: tuple[VarKey, ...] = ()


def _observations(factors) -> dict[int, Factor]:
    out = {}
    for f in factors:
        if f.kind is FactorKind.RangeBearing:
            if f.landmark in out:
                raise InvalidArgument(f"two measurements associated with landmark {f.landmark}")
            out[f.landmark] = f
    return out


def _repair(session: PlanningSession, graph: FactorGraph, tree: bt.BayesTree,
            actual: dict[int, Factor], m_inf: DaSet) -> DaOutcome:
    pred = session.predicted_belief
    common, rmv, add = da_report(session.da, m_inf)
    values, ordering = pred.lin_point, pred.ordering
    guessed = {k.index for k in session.placeholders}
    if guessed:
        # a placeholder is linearized at the planner's guess; re-create it from
        # the actual reading so it matches a fresh first-time observation
        t = m_inf.timestamp
        rmv = DaSet(t, rmv.landmarks + tuple(sorted(guessed - set(rmv.landmarks))))
        fresh = set(add.landmarks) | guessed
        add = DaSet(t, tuple(j for j in m_inf.landmarks if j in fresh))
        common = DaSet(t, tuple(j for j in common.landmarks if j not in guessed))
    if not rmv.landmarks and not add.landmarks:
        return DaOutcome(graph, tree, ordering, values, common, rmv, add)
    by_landmark = {f.landmark: fid for f, fid in zip(session.predicted_factors, session.obs_fids)}
    rmv_ids = [by_landmark[j] for j in rmv.landmarks]
    add_factors = [actual[j] for j in add.landmarks]
    involved = {k for fid in rmv_ids for k in graph[fid].keys}
    new_vars = []
    values = Values(values)
    if session.placeholders:
        ordering = ordering.without(session.placeholders)
        for k in session.placeholders:
            del values[k]
    for f in add_factors:
        lm = f.keys[1]
        if lm in ordering:
            involved.update(f.keys)
        else:
            values[lm] = invert_range_bearing(values[f.keys[0]], *f.measured)
            new_vars.append(lm)
            involved.add(f.keys[0])
    ordering = ordering.extended(new_vars)
    graph = graph.remove(rmv_ids)
    graph, _ = graph.add(add_factors)
    tree, info = bt.update(tree, graph, values, ordering, involved, new_vars,
                           removed_variables=session.placeholders)
    return DaOutcome(graph, tree, ordering, values, common, rmv, add,
                     info.n_reeliminated, tuple(new_vars))


def da_update(session: PlanningSession, actual_factors, m_inf: DaSet
              ) -> tuple[FactorGraph, bt.BayesTree]:
    """Make the planning graph and tree agree with the inferred associations.

    Factors predicted for landmarks that were not observed are removed,
    factors for unpredicted observations are added, and the involved part of
    the tree is re-eliminated.  Confirmed factors keep their predicted
    measurement values.
    """
    pred = session.predicted_belief
    out = _repair(session, pred.graph, pred.tree, _observations(actual_factors), m_inf)
    return out.graph, out.tree


# ---------------------------------------------------------------------------
# full step
# ---------------------------------------------------------------------------

def _affected_cliques(tree: bt.BayesTree, graph: FactorGraph, ordering: Ordering, fids):
    """Cliques whose inputs include ``fids``, closed under ancestors."""
    marked: set[int] = set()
    pos = ordering.position
    for fid in fids:
        cid = tree.var_clique[min(graph[fid].keys, key=pos)]
        while cid is not None and cid not in marked:
            marked.add(cid)
            cid = tree.cliques[cid].parent
    return marked


def rub_inference_step(session: PlanningSession, actual_factors, m_inf: DaSet,
                       method: RhsMethod = RhsMethod.OTM_OO) -> Belief:
    """Posterior at ``k+1`` from the planning session and the actual measurements.

    The right-hand side of the planning system is updated first, using the
    actual values of confirmed observations and keeping the predicted values
    of observations that will be removed; the refreshed tree is then
    repaired for the association differences.  Both orders give the same
    posterior because the repair re-eliminates every clique whose inputs it
    changes.
    """
    method = RhsMethod(method)
    pred = session.predicted_belief
    if pred is None:
        raise InvalidArgument("session carries no predicted belief")
    actual_factors = list(actual_factors)
    motions = [f for f in actual_factors if f.kind is FactorKind.Motion]
    if len(motions) != 1 or motions[0] != session.motion:
        raise InvalidArgument("executed motion differs from the planned action")
    actual = _observations(actual_factors)
    if set(actual) != set(m_inf.landmarks):
        raise InvalidArgument("association set does not match the measurements")
    values = pred.lin_point
    lin = session.lin

    t0 = time.perf_counter_ns()
    b_obs = lin.b_obs.copy()
    b_motion = residual(motions[0], values) if method in (RhsMethod.OTM, RhsMethod.DU) \
        else lin.b_motion
    replaced: dict[int, Factor] = {}
    factor_b: dict[int, np.ndarray] = {}
    r0 = 0
    for f, fid in zip(session.predicted_factors, session.obs_fids):
        r1 = r0 + f.dim
        g = actual.get(f.landmark)
        if g is not None and f.keys[1] not in session.placeholders:
            b = residual(g, values)
            b_obs[r0:r1] = b
            replaced[fid] = g
            factor_b[fid] = b
        r0 = r1
    d = rhs_update(lin, method, b_motion, b_obs)
    changed = _affected_cliques(pred.tree, pred.graph, pred.ordering, factor_b)
    tree = bt.refresh_rhs(pred.tree, changed, factor_b,
                          bt.set_rhs(pred.tree, d, pred.ordering, changed))
    graph = pred.graph.replace(replaced)
    t1 = time.perf_counter_ns()
    out = _repair(session, graph, tree, actual, m_inf)
    t2 = time.perf_counter_ns()

    consistent = not out.removed.landmarks and not out.added.landmarks
    da = dict(pred.da)
    da[pred.t] = m_inf
    belief = Belief(pred.t, pred.t, out.values, out.tree, out.graph, out.ordering, da, {
        "rhs_phase_ns": t1 - t0,
        "da_phase_ns": t2 - t1,
        "factors_reused": 1 + len(out.common),
        "factors_added": len(out.added),
        "factors_removed": len(out.removed),
        "n_reeliminations": out.n_reeliminations,
        "da_rmv": len(out.removed),
        "da_add": len(out.added),
        "method": method.value,
    })
    if consistent:
        belief._flat = (lin.r_pred, d)
    return belief
