"""Sparse containers, Givens-rotation QR, triangular solves and rotation replay.

Matrices are stored in compressed-row form (``indptr``, ``indices``, ``data``)
with column indices sorted inside every row.  The orthogonal factor of a QR
factorization is never formed; it is kept as the ordered list of plane
rotations that produced ``R`` so that ``Q^T v`` can be replayed in
``O(len(q))``.

Rotation convention: a rotation ``(i, j, c, s)`` maps ``(v_i, v_j)`` to
``(c v_i + s v_j, -s v_i + c v_j)``.  An entry with ``i == j`` is a sign flip
(``c = -1``) used to keep the diagonal of ``R`` non-negative.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidArgument, RankDeficient, SingularPivot

ZERO_TOL = 1e-12

DenseVector = np.ndarray


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

class SparseRowMatrix:
    """Row-compressed sparse matrix with sorted, strictly increasing columns."""

    __slots__ = ("n_rows", "n_cols", "indptr", "indices", "data")

    def __init__(self, n_rows, n_cols, indptr, indices, data):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.indptr.shape != (self.n_rows + 1,):
            raise DimensionMismatch("indptr length must be n_rows + 1")

    @classmethod
    def from_dense(cls, a, tol=0.0):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        mask = np.abs(a) > tol
        indptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(mask.sum(axis=1), out=indptr[1:])
        rows, cols = np.nonzero(mask)
        return cls(a.shape[0], a.shape[1], indptr, cols, a[rows, cols])

    @classmethod
    def from_rows(cls, rows, n_cols):
        """Build from a list of ``[(col, value), ...]`` rows."""
        indptr = [0]
        indices, data = [], []
        for row in rows:
            row = sorted((int(c), float(v)) for c, v in row if v != 0.0)
            cols = [c for c, _ in row]
            if len(set(cols)) != len(cols):
                raise InvalidArgument("duplicate column in row")
            if cols and (cols[0] < 0 or cols[-1] >= n_cols):
                raise DimensionMismatch("column index out of range")
            indices.extend(cols)
            data.extend(v for _, v in row)
            indptr.append(len(indices))
        return cls(len(rows), n_cols, indptr, indices, data)

    @classmethod
    def empty(cls, n_cols, n_rows=0):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], [])

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def rows(self):
        return [list(zip(self.indices[a:b].tolist(), self.data[a:b].tolist()))
                for a, b in zip(self.indptr[:-1], self.indptr[1:])]

    def row(self, i):
        a, b = self.indptr[i], self.indptr[i + 1]
        return self.indices[a:b], self.data[a:b]

    def leftmost(self):
        """Leftmost stored column over all rows (``n_cols`` if empty)."""
        return int(self.indices.min()) if self.nnz else self.n_cols

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def to_scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def with_cols(self, n_cols):
        """Same rows viewed against a wider column space (zero padding)."""
        if n_cols < self.n_cols:
            raise DimensionMismatch("cannot shrink column space")
        return SparseRowMatrix(self.n_rows, n_cols, self.indptr, self.indices, self.data)

    def vstack(self, other):
        if other.n_cols != self.n_cols:
            raise DimensionMismatch("column counts differ")
        indptr = np.concatenate([self.indptr, other.indptr[1:] + self.indptr[-1]])
        return SparseRowMatrix(self.n_rows + other.n_rows, self.n_cols, indptr,
                               np.concatenate([self.indices, other.indices]),
                               np.concatenate([self.data, other.data]))

    def matvec(self, x):
        return _csr_matvec(self.indptr, self.indices, self.data,
                           np.ascontiguousarray(x, dtype=np.float64), self.n_rows)

    def rmatvec(self, y):
        """``A^T y``."""
        return _csr_rmatvec(self.indptr, self.indices, self.data,
                            np.ascontiguousarray(y, dtype=np.float64), self.n_cols)

    def __repr__(self):
        return f"{type(self).__name__}({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


class UpperTriangular(SparseRowMatrix):
    """Square upper-triangular matrix; row ``i`` stores columns ``>= i``."""

    __slots__ = ()

    def __init__(self, n, indptr, indices, data, check=True):
        super().__init__(n, n, indptr, indices, data)
        if check and self.nnz:
            rows = np.repeat(np.arange(n), np.diff(self.indptr))
            if np.any(self.indices < rows):
                raise InvalidArgument("entry below the diagonal")

    @property
    def n(self):
        return self.n_rows

    @classmethod
    def from_dense(cls, a, tol=0.0):
        m = SparseRowMatrix.from_dense(np.triu(a), tol)
        if m.n_rows != m.n_cols:
            raise DimensionMismatch("upper-triangular matrix must be square")
        return cls(m.n_rows, m.indptr, m.indices, m.data)

    @classmethod
    def from_rows(cls, rows, n_cols=None):
        m = SparseRowMatrix.from_rows(rows, len(rows) if n_cols is None else n_cols)
        return cls(m.n_rows, m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n):
        return cls(n, np.arange(n + 1), np.arange(n), np.ones(n))

    def diagonal(self):
        """Diagonal entries (0 where a row lacks its diagonal)."""
        out = np.zeros(self.n)
        starts = self.indptr[:-1]
        has = (self.indptr[1:] > starts)
        has[has] = self.indices[starts[has]] == np.nonzero(has)[0]
        out[has] = self.data[starts[has]]
        return out

    def padded(self, n):
        """Zero-pad to ``n x n`` (new rows are empty)."""
        if n < self.n:
            raise DimensionMismatch("cannot shrink")
        indptr = np.concatenate([self.indptr, np.full(n - self.n, self.indptr[-1])])
        return UpperTriangular(n, indptr, self.indices, self.data, check=False)


class GivensSeq:
    """Ordered plane rotations representing an orthogonal factor ``Q``.

    ``apply_q_transpose`` replays the rotations in order, so for a
    factorization ``A = Q [R; 0]`` we get ``Q^T b``.
    """

    __slots__ = ("dim", "i", "j", "c", "s")

    def __init__(self, dim, i=(), j=(), c=(), s=()):
        self.dim = int(dim)
        self.i = np.ascontiguousarray(i, dtype=np.int64)
        self.j = np.ascontiguousarray(j, dtype=np.int64)
        self.c = np.ascontiguousarray(c, dtype=np.float64)
        self.s = np.ascontiguousarray(s, dtype=np.float64)
        if not (len(self.i) == len(self.j) == len(self.c) == len(self.s)):
            raise DimensionMismatch("rotation arrays differ in length")

    @classmethod
    def empty(cls, dim):
        return cls(dim)

    def __len__(self):
        return len(self.c)

    @property
    def rotations(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.c.tolist(), self.s.tolist()))

    def then(self, other):
        """Sequence applying ``self`` first and ``other`` second."""
        return GivensSeq(max(self.dim, other.dim),
                         np.concatenate([self.i, other.i]), np.concatenate([self.j, other.j]),
                         np.concatenate([self.c, other.c]), np.concatenate([self.s, other.s]))

    def scheduled(self) -> "GivensSeq":
        """Same product with rotations grouped by dependency level.

        A rotation's level is one more than the latest level among earlier
        rotations sharing one of its indices.  Rotations of equal level touch
        disjoint index pairs and commute, so a stable sort by level yields
        bit-identical results while letting consecutive replay steps overlap.
        """
        if len(self) == 0:
            return self
        order = np.argsort(_levels(self.i, self.j, self.dim), kind="stable")
        return GivensSeq(self.dim, self.i[order], self.j[order], self.c[order], self.s[order])

    def to_dense(self):
        """Materialize ``Q`` (tests and diagnostics only)."""
        eye = np.eye(self.dim)
        return np.column_stack([apply_q(self, eye[:, k]) for k in range(self.dim)])

    def __repr__(self):
        return f"GivensSeq(dim={self.dim}, rotations={len(self)})"


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _csr_matvec(indptr, indices, data, x, n_rows):
    out = np.zeros(n_rows)
    for r in range(n_rows):
        acc = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            acc += data[k] * x[indices[k]]
        out[r] = acc
    return out


@numba.njit(cache=True)
def _csr_rmatvec(indptr, indices, data, y, n_cols):
    out = np.zeros(n_cols)
    for r in range(len(indptr) - 1):
        yr = y[r]
        if yr != 0.0:
            for k in range(indptr[r], indptr[r + 1]):
                out[indices[k]] += data[k] * yr
    return out


@numba.njit(cache=True)
def _levels(ri, rj, dim):
    last = np.zeros(dim, dtype=np.int64)
    lev = np.empty(len(ri), dtype=np.int64)
    for k in range(len(ri)):
        level = max(last[ri[k]], last[rj[k]]) + 1
        lev[k] = level
        last[ri[k]] = level
        last[rj[k]] = level
    return lev


@numba.njit(cache=True)
def _replay(ri, rj, rc, rs, v):
    for k in range(len(rc)):
        i = ri[k]
        j = rj[k]
        c = rc[k]
        s = rs[k]
        if i == j:
            v[i] = c * v[i]
        else:
            a = v[i]
            b = v[j]
            v[i] = c * a + s * b
            v[j] = -s * a + c * b


@numba.njit(cache=True)
def _replay_inverse(ri, rj, rc, rs, v):
    for k in range(len(rc) - 1, -1, -1):
        i = ri[k]
        j = rj[k]
        c = rc[k]
        s = rs[k]
        if i == j:
            v[i] = c * v[i]
        else:
            a = v[i]
            b = v[j]
            v[i] = c * a - s * b
            v[j] = s * a + c * b


@numba.njit(cache=True)
def _eliminate_rows(w, nrows, col0, row0, tol, ri, rj, rc, rs):
    """Rotate each row of ``nrows`` into the triangular block ``w``.

    Rows are processed top to bottom, and within a row the leftmost surviving
    nonzero is eliminated first.  Returns the number of rotations written.
    """
    nw = w.shape[0]
    cnt = 0
    for r in range(nrows.shape[0]):
        for col in range(nw):
            b = nrows[r, col]
            if abs(b) <= tol:
                nrows[r, col] = 0.0
                continue
            a = w[col, col]
            h = math.hypot(a, b)
            c = a / h
            s = b / h
            for t in range(col + 1, nw):
                x = w[col, t]
                y = nrows[r, t]
                w[col, t] = c * x + s * y
                nrows[r, t] = -s * x + c * y
            w[col, col] = h
            nrows[r, col] = 0.0
            ri[cnt] = col0 + col
            rj[cnt] = row0 + r
            rc[cnt] = c
            rs[cnt] = s
            cnt += 1
    return cnt


@numba.njit(cache=True)
def _triangularize(a, tol, ri, rj, rc, rs):
    """Row-wise Givens triangularization of a dense ``m x n`` array in place."""
    m, n = a.shape
    cnt = 0
    for r in range(1, m):
        for col in range(min(r, n)):
            b = a[r, col]
            if abs(b) <= tol:
                a[r, col] = 0.0
                continue
            x0 = a[col, col]
            h = math.hypot(x0, b)
            c = x0 / h
            s = b / h
            for t in range(col + 1, n):
                x = a[col, t]
                y = a[r, t]
                a[col, t] = c * x + s * y
                a[r, t] = -s * x + c * y
            a[col, col] = h
            a[r, col] = 0.0
            ri[cnt] = col
            rj[cnt] = r
            rc[cnt] = c
            rs[cnt] = s
            cnt += 1
    for col in range(min(m, n)):
        if a[col, col] < 0.0:
            for t in range(col, n):
                a[col, t] = -a[col, t]
            ri[cnt] = col
            rj[cnt] = col
            rc[cnt] = -1.0
            rs[cnt] = 0.0
            cnt += 1
    return cnt


@numba.njit(cache=True)
def _csr_block_to_dense(indptr, indices, data, r0, r1, c0, ncols):
    out = np.zeros((r1 - r0, ncols))
    for r in range(r0, r1):
        for k in range(indptr[r], indptr[r + 1]):
            col = indices[k] - c0
            if col >= 0:
                out[r - r0, col] = data[k]
    return out


@numba.njit(cache=True)
def _back_substitute(indptr, indices, data, d):
    n = len(d)
    x = d.copy()
    for i in range(n - 1, -1, -1):
        a = indptr[i]
        acc = x[i]
        for k in range(a + 1, indptr[i + 1]):
            acc -= data[k] * x[indices[k]]
        x[i] = acc / data[a]
    return x


@numba.njit(cache=True)
def _forward_transpose(indptr, indices, data, v):
    n = len(v)
    x = v.copy()
    for i in range(n):
        a = indptr[i]
        xi = x[i] / data[a]
        x[i] = xi
        if xi != 0.0:
            for k in range(a + 1, indptr[i + 1]):
                x[indices[k]] -= data[k] * xi
    return x


@numba.njit(cache=True)
def _forward_transpose_multi(indptr, indices, data, b):
    n, p = b.shape
    for i in range(n):
        a = indptr[i]
        inv = 1.0 / data[a]
        for q in range(p):
            b[i, q] *= inv
        for k in range(a + 1, indptr[i + 1]):
            col = indices[k]
            val = data[k]
            for q in range(p):
                b[col, q] -= val * b[i, q]
    return b


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _dense_to_upper(w, tol=ZERO_TOL):
    w = np.where(np.abs(w) > tol, w, 0.0)
    return UpperTriangular.from_dense(w)


def check_pivots(diag, offset=0):
    """Raise ``RankDeficient`` if any diagonal entry is numerically zero."""
    bad = np.nonzero(np.abs(diag) < ZERO_TOL)[0]
    if len(bad):
        raise RankDeficient(f"zero pivot on column {int(bad[0]) + offset}")


def givens_qr(a: SparseRowMatrix) -> tuple[GivensSeq, UpperTriangular]:
    """Triangularize ``a`` with Givens rotations.

    Returns ``(q, r)`` with ``a = Q [r; 0]`` and ``diag(r) >= 0``.
    """
    m, n = a.shape
    if m < n:
        raise RankDeficient(f"{m} rows cannot determine {n} columns")
    work = a.to_dense()
    cap = m * n + n
    ri = np.empty(cap, dtype=np.int64)
    rj = np.empty(cap, dtype=np.int64)
    rc = np.empty(cap)
    rs = np.empty(cap)
    cnt = _triangularize(work, ZERO_TOL, ri, rj, rc, rs)
    top = work[:n]
    check_pivots(np.diag(top))
    q = GivensSeq(m, ri[:cnt].copy(), rj[:cnt].copy(), rc[:cnt].copy(), rs[:cnt].copy())
    return q, _dense_to_upper(top)


def incremental_qr(r_prev: UpperTriangular, new_rows: SparseRowMatrix,
                   allow_deficient: bool = False) -> tuple[GivensSeq, UpperTriangular]:
    """Fold ``new_rows`` into an existing factor.

    ``r_prev`` is zero-padded to ``new_rows.n_cols`` columns; the returned
    rotations act on the stacked vector ``[d_prev_padded; b_new]`` of length
    ``new_rows.n_cols + new_rows.n_rows``.  Only rows and columns at or right
    of the leftmost nonzero of ``new_rows`` are touched.  With
    ``allow_deficient`` a zero pivot is kept instead of raising, for an
    intermediate factor that later rows will complete.
    """
    n = new_rows.n_cols
    n_prev = r_prev.n
    if n < n_prev:
        raise DimensionMismatch(f"new rows have {n} columns, factor has {n_prev}")
    m = new_rows.n_rows
    if m == 0 or new_rows.nnz == 0:
        if n > n_prev and not allow_deficient:
            raise RankDeficient(f"no rows constrain columns {n_prev}..{n - 1}")
        return GivensSeq.empty(n + m), r_prev.padded(n)
    j0 = min(new_rows.leftmost(), n_prev)
    w = np.zeros((n - j0, n - j0))
    if n_prev > j0:
        w[: n_prev - j0] = _csr_block_to_dense(r_prev.indptr, r_prev.indices, r_prev.data,
                                               j0, n_prev, j0, n - j0)
    block = _csr_block_to_dense(new_rows.indptr, new_rows.indices, new_rows.data,
                                0, m, j0, n - j0)
    cap = m * (n - j0)
    ri = np.empty(cap, dtype=np.int64)
    rj = np.empty(cap, dtype=np.int64)
    rc = np.empty(cap)
    rs = np.empty(cap)
    cnt = _eliminate_rows(w, block, j0, n, ZERO_TOL, ri, rj, rc, rs)
    if not allow_deficient:
        check_pivots(np.diag(w), j0)
    tail = _dense_to_upper(w)
    head_end = r_prev.indptr[j0]
    indptr = np.concatenate([r_prev.indptr[: j0 + 1], tail.indptr[1:] + head_end])
    indices = np.concatenate([r_prev.indices[:head_end], tail.indices + j0])
    data = np.concatenate([r_prev.data[:head_end], tail.data])
    r = UpperTriangular(n, indptr, indices, data, check=False)
    q = GivensSeq(n + m, ri[:cnt].copy(), rj[:cnt].copy(), rc[:cnt].copy(), rs[:cnt].copy())
    return q, r


def apply_q_transpose(q: GivensSeq, v) -> np.ndarray:
    """Return ``Q^T v`` by replaying the rotations in order."""
    v = np.array(v, dtype=np.float64)
    if v.shape != (q.dim,):
        raise DimensionMismatch(f"vector length {v.shape[0]} != rotation dim {q.dim}")
    _replay(q.i, q.j, q.c, q.s, v)
    return v


def apply_q(q: GivensSeq, v) -> np.ndarray:
    """Return ``Q v`` (inverse replay)."""
    v = np.array(v, dtype=np.float64)
    if v.shape != (q.dim,):
        raise DimensionMismatch(f"vector length {v.shape[0]} != rotation dim {q.dim}")
    _replay_inverse(q.i, q.j, q.c, q.s, v)
    return v


def _check_solvable(r: UpperTriangular, length):
    if length != r.n:
        raise DimensionMismatch(f"vector length {length} != matrix size {r.n}")
    diag = r.diagonal()
    bad = np.nonzero(np.abs(diag) < ZERO_TOL)[0]
    if len(bad):
        raise SingularPivot(f"zero pivot in row {int(bad[0])}")


def back_substitute(r: UpperTriangular, d) -> np.ndarray:
    """Solve ``r x = d``."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    _check_solvable(r, d.shape[0])
    return _back_substitute(r.indptr, r.indices, r.data, d)


def forward_substitute_transpose(r: UpperTriangular, v) -> np.ndarray:
    """Solve ``r^T x = v``."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    _check_solvable(r, v.shape[0])
    return _forward_transpose(r.indptr, r.indices, r.data, v)


def forward_substitute_transpose_multi(r: UpperTriangular, b) -> np.ndarray:
    """Solve ``r^T X = B`` for a block of right-hand sides."""
    b = np.array(b, dtype=np.float64, order="C")
    _check_solvable(r, b.shape[0])
    return _forward_transpose_multi(r.indptr, r.indices, r.data, b)


# ---------------------------------------------------------------------------
# nnz(Q) closed form
# ---------------------------------------------------------------------------

class DominantTerm(enum.Enum):
    TermA = "TermA"
    TermC = "TermC"


def nnz_q_predict(n_s: int, n_f: int, j: int) -> int:
    """Closed-form count of nonzeros in the accumulated rotation matrix.

    ``n_s`` is the factor size, ``n_f`` the number of dense new rows and ``j``
    (1-based) the leftmost column they touch.
    """
    if n_s < 1 or n_f < 1:
        raise InvalidArgument("n_s and n_f must be positive")
    if not 1 <= j <= n_s:
        raise InvalidArgument(f"j={j} outside 1..{n_s}")
    n = n_s + n_f - j + 1
    twice_b = n * n + 3 * n
    twice_c = (n_f - 1) * (2 * n_s + n_f + 2)
    assert twice_b % 2 == 0 and twice_c % 2 == 0
    return (j - 1) + twice_b // 2 - 1 + twice_c // 2


def dominance_threshold(n_s: int) -> float:
    return (n_s - 3) / 2 + math.sqrt(n_s * n_s - 6 * n_s) / 2


def nnz_q_dominant_term(n_s: int, n_f: int) -> DominantTerm:
    """Which quadratic term governs ``nnz_q_predict`` (exact condition)."""
    if n_s >= 6 and n_f > dominance_threshold(n_s):
        return DominantTerm.TermA
    return DominantTerm.TermC


@dataclass(frozen=True)
class NnzTerms:
    a: float
    b: float
    c: float


def nnz_q_terms(n_s: int, n_f: int, j: int) -> NnzTerms:
    """The three quadratic terms of the regrouped closed form."""
    return NnzTerms(a=0.5 * (n_s + n_f - j + 1.5) ** 2,
                    b=0.5 * (n_f + 1.5) ** 2,
                    c=float(n_s * n_f))
