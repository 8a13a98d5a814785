"""Bayes tree built by sequential variable elimination.

Every variable is eliminated into its own clique.  Eliminating ``v`` stacks
the linearized factors whose earliest variable is ``v`` together with the
separator factors handed up by child cliques, runs a dense QR over the
columns ``[v, S_v]`` and keeps

* the conditional rows ``r_rows``/``d_rows`` (the rows of ``R`` and ``d``
  owned by ``v``),
* the remaining rows ``(cached_r, cached_d)``, a factor on the separator that
  the parent consumes,
* the local orthogonal factor, so the separator factor can be recomputed when
  only right-hand sides change.

Keeping the separator factor on every clique lets a partial re-elimination
treat untouched sub-trees as ready-made inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import MissingKey, RankDeficient, SeparatorUnresolvable, UnknownVariable
from .factors import FactorGraph, Ordering, VarKey, linearize_cached
from .linalg import ZERO_TOL, UpperTriangular, back_substitute

FACTOR, CHILD = 0, 1


class Clique:
    """One eliminated variable and its conditional on the separator.

    ``inputs`` lists ``(kind, ref, row0, row1)`` where ``kind`` is ``FACTOR``
    (``ref`` a factor id) or ``CHILD`` (``ref`` a clique id); ``input_b`` is
    the stacked right-hand side those rows contributed.  Instances are never
    mutated after construction; the ``with_*`` methods return modified copies.
    """

    __slots__ = ("id", "frontal", "separator", "r_rows", "d_rows", "parent", "children",
                 "cached_r", "cached_d", "local_q", "inputs", "input_b")

    def __init__(self, id, frontal, separator, r_rows, d_rows, parent, children,
                 cached_r, cached_d, local_q, inputs, input_b):
        self.id = id
        self.frontal = frontal
        self.separator = separator
        self.r_rows = r_rows
        self.d_rows = d_rows
        self.parent = parent
        self.children = children
        self.cached_r = cached_r
        self.cached_d = cached_d
        self.local_q = local_q
        self.inputs = inputs
        self.input_b = input_b

    def with_links(self, parent, children=None) -> "Clique":
        return Clique(self.id, self.frontal, self.separator, self.r_rows, self.d_rows, parent,
                      self.children if children is None else children, self.cached_r,
                      self.cached_d, self.local_q, self.inputs, self.input_b)

    def with_rhs(self, d_rows, cached_d, input_b) -> "Clique":
        return Clique(self.id, self.frontal, self.separator, self.r_rows, d_rows, self.parent,
                      self.children, self.cached_r, cached_d, self.local_q, self.inputs,
                      input_b)

    @property
    def var(self) -> VarKey:
        return self.frontal[0]

    @property
    def keys(self) -> tuple[VarKey, ...]:
        return self.frontal + self.separator

    def __repr__(self):
        return f"Clique({self.id}, F:{list(self.frontal)} S:{list(self.separator)})"


class BayesTree:
    """Clique store with a variable index.  Treated as an immutable value."""

    __slots__ = ("cliques", "var_clique", "next_id")

    def __init__(self, cliques=None, var_clique=None, next_id=0):
        self.cliques: dict[int, Clique] = cliques or {}
        self.var_clique: dict[VarKey, int] = var_clique or {}
        self.next_id = next_id

    @property
    def roots(self) -> list[int]:
        return sorted(c.id for c in self.cliques.values() if c.parent is None)

    @property
    def root(self) -> int | None:
        r = self.roots
        return r[-1] if r else None

    def __len__(self):
        return len(self.cliques)

    def clique_of(self, key: VarKey) -> Clique:
        try:
            return self.cliques[self.var_clique[key]]
        except KeyError:
            raise UnknownVariable(key) from None

    def structure(self) -> list[tuple[tuple, tuple, tuple | None]]:
        """Sorted ``(frontal, separator, parent frontal)`` triples."""
        out = []
        for c in self.cliques.values():
            p = self.cliques[c.parent].frontal if c.parent is not None else None
            out.append((c.frontal, c.separator, p))
        return sorted(out, key=repr)

    def dump(self, ordering: Ordering | None = None) -> str:
        """Indented ``F:{...} S:{...}`` listing, children sorted by frontal."""
        def rank(cid):
            v = self.cliques[cid].var
            return ordering.position(v) if ordering is not None else repr(v)

        lines = []

        def walk(cid, depth):
            c = self.cliques[cid]
            f = ",".join(map(repr, c.frontal))
            s = ",".join(map(repr, c.separator))
            lines.append(f"{'  ' * depth}F:{{{f}}} S:{{{s}}}")
            for ch in sorted(c.children, key=rank):
                walk(ch, depth + 1)

        for r in sorted(self.roots, key=rank):
            walk(r, 0)
        return "\n".join(lines)

    def check(self, ordering: Ordering) -> None:
        """Assert structural invariants (used by tests)."""
        seen = {}
        for c in self.cliques.values():
            for v in c.frontal:
                assert v not in seen, f"{v!r} frontal twice"
                seen[v] = c.id
                assert self.var_clique[v] == c.id
            if c.parent is None:
                assert not c.separator
            else:
                p = self.cliques[c.parent]
                assert c.id in p.children
                assert set(c.separator) <= set(p.keys), "separator not inside parent"
                assert p.var == min(c.separator, key=ordering.position)
            for ch in c.children:
                assert self.cliques[ch].parent == c.id
        assert set(seen) == set(ordering.keys)


@dataclass
class Subtree:
    """Involved cliques (closed under ancestors) and the orphans below them."""

    cliques: frozenset[int]
    variables: frozenset[VarKey]
    orphans: tuple[int, ...]


@dataclass
class UpdateInfo:
    n_reeliminated: int = 0
    removed: tuple[int, ...] = ()
    created: tuple[int, ...] = ()
    involved: frozenset = field(default_factory=frozenset)


# ---------------------------------------------------------------------------
# elimination
# ---------------------------------------------------------------------------

def _eliminate(variables: list[VarKey], factor_ids: Iterable[int], graph: FactorGraph,
               values, ordering: Ordering, orphans: Iterable[Clique], first_id: int
               ) -> tuple[list[Clique], dict[int, int]]:
    """Eliminate ``variables`` (sorted by position) from the given inputs.

    Returns the new cliques (children lists include adopted orphans) and the
    mapping ``orphan id -> new parent id``.
    """
    pos = ordering.position
    var_set = set(variables)
    buckets: dict[VarKey, list] = {v: [] for v in variables}

    for fid in factor_ids:
        f = graph.factors[fid]
        blocks, b = linearize_cached(f, values)
        first = min(f.keys, key=pos)
        buckets[first].append((FACTOR, fid, f.keys, blocks, b))

    adopted = {}
    for o in orphans:
        for k in o.separator:
            if k not in ordering:
                raise SeparatorUnresolvable(f"separator variable {k!r} of clique {o.id} is gone")
        if not o.separator or o.separator[0] not in var_set:
            raise SeparatorUnresolvable(f"clique {o.id} has no parent among re-eliminated variables")
        buckets[o.separator[0]].append((CHILD, o.id, o.separator, _split(o), o.cached_d))
        adopted[o.id] = o.separator[0]

    out: list[Clique] = []
    clique_of_var: dict[VarKey, int] = {}
    parent_var: dict[int, VarKey] = {}
    child_ids: dict[VarKey, list[int]] = {v: [] for v in variables}
    for oid, v in adopted.items():
        child_ids[v].append(oid)

    next_id = first_id
    for v in variables:
        inputs = buckets[v]
        sep = sorted({k for _, _, keys, _, _ in inputs for k in keys if k != v}, key=pos)
        dv = v.dim
        col = {v: 0}
        ncols = dv
        for k in sep:
            col[k] = ncols
            ncols += k.dim
        m = sum(len(inp[4]) for inp in inputs)
        if m < dv:
            raise RankDeficient(f"{v!r} is constrained by {m} rows, needs {dv}")
        mat = np.zeros((m, ncols))
        rhs = np.empty(m)
        spans = []
        r0 = 0
        for kind, ref, keys, blocks, b in inputs:
            r1 = r0 + len(b)
            for k, blk in zip(keys, blocks):
                c0 = col[k]
                mat[r0:r1, c0:c0 + k.dim] = blk
            rhs[r0:r1] = b
            spans.append((kind, ref, r0, r1))
            r0 = r1
        q, r = np.linalg.qr(mat)
        diag = np.diagonal(r).copy()
        if np.any(np.abs(diag[:dv]) < ZERO_TOL):
            raise RankDeficient(f"zero pivot while eliminating {v!r}")
        sign = np.where(diag < 0.0, -1.0, 1.0)
        r *= sign[:, None]
        q *= sign[None, :]
        c = q.T @ rhs
        cid = next_id
        next_id += 1
        rest_r = r[dv:, dv:]
        cl = Clique(cid, (v,), tuple(sep), r[:dv].copy(), c[:dv].copy(), None, (),
                    np.ascontiguousarray(rest_r), c[dv:].copy(), q, tuple(spans), rhs)
        out.append(cl)
        clique_of_var[v] = cid
        if sep:
            parent = sep[0]
            if parent not in var_set:
                raise SeparatorUnresolvable(f"{parent!r} is not being re-eliminated")
            buckets[parent].append((CHILD, cid, tuple(sep), _split_blocks(rest_r, sep), cl.cached_d))
            parent_var[cid] = parent
            child_ids[parent].append(cid)

    final = []
    for cl in out:
        pv = parent_var.get(cl.id)
        final.append(cl.with_links(None if pv is None else clique_of_var[pv],
                                  tuple(child_ids[cl.var])))
    return final, {oid: clique_of_var[v] for oid, v in adopted.items()}


def _split_blocks(rest_r: np.ndarray, keys) -> list[np.ndarray]:
    blocks, c0 = [], 0
    for k in keys:
        blocks.append(rest_r[:, c0:c0 + k.dim])
        c0 += k.dim
    return blocks


def _split(c: Clique) -> list[np.ndarray]:
    return _split_blocks(c.cached_r, c.separator)


def eliminate(graph: FactorGraph, values, ordering: Ordering) -> BayesTree:
    """Eliminate the whole graph under ``ordering``."""
    missing = graph.variables - set(ordering.keys)
    if missing:
        raise MissingKey(sorted(missing, key=repr)[0])
    cliques, _ = _eliminate(list(ordering.keys), graph.factors.keys(), graph, values,
                            ordering, (), 0)
    return BayesTree({c.id: c for c in cliques}, {c.var: c.id for c in cliques}, len(cliques))


# ---------------------------------------------------------------------------
# partial re-elimination
# ---------------------------------------------------------------------------

def involved_subtree(tree: BayesTree, variables: Iterable[VarKey]) -> Subtree:
    """Cliques owning any of ``variables`` plus all their ancestors."""
    marked: set[int] = set()
    for v in variables:
        try:
            cid = tree.var_clique[v]
        except KeyError:
            raise UnknownVariable(v) from None
        while cid is not None and cid not in marked:
            marked.add(cid)
            cid = tree.cliques[cid].parent
    frontal = frozenset(v for cid in marked for v in tree.cliques[cid].frontal)
    orphans = tuple(sorted(ch for cid in marked for ch in tree.cliques[cid].children
                           if ch not in marked))
    return Subtree(frozenset(marked), frontal, orphans)


def detach_subgraph(graph: FactorGraph, subtree: Subtree, new_variables=()
                    ) -> tuple[dict, dict]:
    """Split the graph into factors inside the involved variable set and the rest."""
    inside = set(subtree.variables) | set(new_variables)
    ids = set(graph.factors_within(inside))
    sub = {fid: f for fid, f in graph.items() if fid in ids}
    rest = {fid: f for fid, f in graph.items() if fid not in ids}
    return sub, rest


@dataclass
class PartialTree:
    cliques: list[Clique]
    adopted: dict[int, int]
    variables: list[VarKey]


def eliminate_subtree(tree: BayesTree, graph: FactorGraph, values, ordering: Ordering,
                      subtree: Subtree, new_variables=(), factor_ids=None,
                      removed_variables=()) -> PartialTree:
    """Re-eliminate the involved variables (plus new ones) over ``graph``.

    Orphaned sub-trees enter as their cached separator factors; involved
    variables listed in ``removed_variables`` are left out.
    """
    keep = (set(subtree.variables) - set(removed_variables)) | set(new_variables)
    variables = sorted(keep, key=ordering.position)
    if factor_ids is None:
        factor_ids = graph.factors_within(set(variables))
    orphans = [tree.cliques[o] for o in subtree.orphans]
    cliques, adopted = _eliminate(variables, factor_ids, graph, values, ordering, orphans,
                                  tree.next_id)
    return PartialTree(cliques, adopted, variables)


def reattach(tree: BayesTree, subtree: Subtree, partial: PartialTree) -> BayesTree:
    """Replace the involved cliques by the re-eliminated ones."""
    cliques = dict(tree.cliques)
    var_clique = dict(tree.var_clique)
    for cid in subtree.cliques:
        for v in cliques.pop(cid).frontal:
            del var_clique[v]
    for c in partial.cliques:
        cliques[c.id] = c
        var_clique[c.var] = c.id
    for oid, pid in partial.adopted.items():
        cliques[oid] = cliques[oid].with_links(pid)
    next_id = max([tree.next_id] + [c.id + 1 for c in partial.cliques])
    return BayesTree(cliques, var_clique, next_id)


def update(tree: BayesTree, graph: FactorGraph, values, ordering: Ordering,
           involved: Iterable[VarKey], new_variables: Iterable[VarKey] = (),
           removed_variables: Iterable[VarKey] = ()) -> tuple[BayesTree, UpdateInfo]:
    """Re-eliminate everything affected by factors touching ``involved``.

    ``graph`` must already contain the added factors and lack the removed
    ones; ``new_variables`` are appended at the ordering tail.
    ``removed_variables`` are dropped from the tree: ``ordering`` must no
    longer contain them, ``graph`` must hold no factor on them, and every
    former neighbour has to be listed in ``involved``.
    """
    new_variables = list(new_variables)
    removed = set(removed_variables)
    involved = [v for v in set(involved) | removed if v in tree.var_clique]
    sub = involved_subtree(tree, involved)
    if not sub.cliques and not new_variables:
        return tree, UpdateInfo()
    partial = eliminate_subtree(tree, graph, values, ordering, sub, new_variables,
                                removed_variables=removed)
    out = reattach(tree, sub, partial)
    return out, UpdateInfo(len(partial.variables), tuple(sorted(sub.cliques)),
                           tuple(c.id for c in partial.cliques), sub.cliques)


# ---------------------------------------------------------------------------
# right-hand-side refresh and flat views
# ---------------------------------------------------------------------------

def refresh_rhs(tree: BayesTree, clique_ids: Iterable[int], factor_b: dict[int, np.ndarray],
                d_new: dict[int, np.ndarray] | None = None) -> BayesTree:
    """Recompute ``d_rows``/``cached_d`` of ``clique_ids`` after RHS-only changes.

    ``factor_b`` maps factor ids to their new whitened RHS.  A parent is
    always created after its children, so ascending ids visit children first
    and refreshed separator factors propagate upward.  If
    ``d_new`` is given its entries overwrite the recomputed ``d_rows``.
    """
    ids = set(clique_ids)
    cliques = dict(tree.cliques)
    done: dict[int, np.ndarray] = {}

    for cid in sorted(ids):
        c = cliques[cid]
        vec = c.input_b.copy()
        for kind, ref, r0, r1 in c.inputs:
            if kind == FACTOR:
                nb = factor_b.get(ref)
            else:
                nb = done.get(ref)
            if nb is not None:
                vec[r0:r1] = nb
        full = c.local_q.T @ vec
        dv = c.var.dim
        d_rows = full[:dv] if d_new is None or cid not in d_new else d_new[cid]
        done[cid] = full[dv:]
        cliques[cid] = c.with_rhs(d_rows, full[dv:], vec)
    return BayesTree(cliques, tree.var_clique, tree.next_id)


def set_rhs(tree: BayesTree, d: np.ndarray, ordering: Ordering, clique_ids: Iterable[int]
            ) -> dict[int, np.ndarray]:
    """Slice a flat ``d`` into per-clique rows for ``clique_ids``."""
    out = {}
    for cid in clique_ids:
        v = tree.cliques[cid].var
        o = ordering.offset(v)
        out[cid] = d[o:o + v.dim]
    return out


def flatten(tree: BayesTree, ordering: Ordering) -> tuple[UpperTriangular, np.ndarray]:
    """Global ``(R, d)`` under ``ordering``."""
    n = ordering.dim
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx_parts, data_parts = [], []
    d = np.empty(n)
    row = 0
    for v in ordering.keys:
        c = tree.clique_of(v)
        cols = np.concatenate([np.arange(ordering.offset(k), ordering.offset(k) + k.dim)
                               for k in c.keys])
        dv = v.dim
        for i in range(dv):
            vals = c.r_rows[i, i:]
            keep = vals != 0.0
            idx_parts.append(cols[i:][keep])
            data_parts.append(vals[keep])
            indptr[row + 1] = indptr[row] + int(keep.sum())
            row += 1
        o = ordering.offset(v)
        d[o:o + dv] = c.d_rows
    if row != n:
        raise MissingKey("tree does not cover the ordering")
    indices = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64)
    data = np.concatenate(data_parts) if data_parts else np.zeros(0)
    return UpperTriangular(n, indptr, indices, data, check=False), d


def tree_solve(tree: BayesTree, ordering: Ordering) -> np.ndarray:
    """Back-substitute the tree's ``R delta = d``."""
    r, d = flatten(tree, ordering)
    return back_substitute(r, d)
