import math

import numpy as np
import pytest

from rubinfer.errors import DimensionMismatch, InvalidArgument, RankDeficient, SingularPivot
from rubinfer.linalg import (DominantTerm, GivensSeq, SparseRowMatrix, UpperTriangular,
                             apply_q, apply_q_transpose, back_substitute, dominance_threshold,
                             forward_substitute_transpose, forward_substitute_transpose_multi,
                             givens_qr, incremental_qr, nnz_q_dominant_term, nnz_q_predict)


def gram_gap(r, a):
    """Relative Frobenius gap between ``r^T r`` and ``a^T a``."""
    r, a = np.asarray(r), np.asarray(a)
    ata = a.T @ a
    return np.linalg.norm(r.T @ r - ata) / max(np.linalg.norm(ata), 1.0)


def random_upper(rng, n, cond_boost=3.0):
    return np.triu(rng.standard_normal((n, n))) + cond_boost * np.eye(n)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def test_sparse_round_trip_and_products():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 4))
    a[a < 0.3] = 0.0
    s = SparseRowMatrix.from_dense(a)
    np.testing.assert_array_equal(s.to_dense(), a)
    x, y = rng.standard_normal(4), rng.standard_normal(5)
    np.testing.assert_allclose(s.matvec(x), a @ x, atol=1e-14)
    np.testing.assert_allclose(s.rmatvec(y), a.T @ y, atol=1e-14)
    assert s.nnz == np.count_nonzero(a)


def test_upper_triangular_rejects_lower_entries():
    with pytest.raises(InvalidArgument):
        UpperTriangular(2, [0, 1, 3], [0, 0, 1], [1.0, 1.0, 1.0])
    # the dense constructor keeps only the upper triangle
    u = UpperTriangular.from_dense(np.array([[1.0, 0.0], [1.0, 1.0]]))
    np.testing.assert_array_equal(u.to_dense(), np.eye(2))


# ---------------------------------------------------------------------------
# givens_qr
# ---------------------------------------------------------------------------

def test_givens_qr_three_four_column():
    q, r = givens_qr(SparseRowMatrix.from_dense(np.array([[3.0], [4.0]])))
    np.testing.assert_allclose(r.to_dense(), [[5.0]])
    assert len(q) == 1
    (_, _, c, s), = q.rotations
    assert c == pytest.approx(0.6) and s == pytest.approx(0.8)


def test_givens_qr_identity_needs_no_rotation():
    q, r = givens_qr(SparseRowMatrix.from_dense(np.eye(2)))
    assert len(q) == 0
    np.testing.assert_array_equal(r.to_dense(), np.eye(2))


def test_givens_qr_matches_householder_up_to_sign():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((9, 5))
    _, r = givens_qr(SparseRowMatrix.from_dense(a))
    r_ref = np.linalg.qr(a, mode="r")
    r_ref *= np.sign(np.diag(r_ref))[:, None]
    np.testing.assert_allclose(r.to_dense(), r_ref, atol=1e-12)
    assert np.all(r.diagonal() >= 0)


def test_givens_qr_gram_identity_on_stacked_prior():
    rng = np.random.default_rng(5)
    r_prev = random_upper(rng, 5)
    a = np.vstack([r_prev, rng.standard_normal((3, 5))])
    _, r = givens_qr(SparseRowMatrix.from_dense(a))
    assert gram_gap(r.to_dense(), a) < 1e-9


def test_givens_qr_rank_deficient():
    with pytest.raises(RankDeficient):
        givens_qr(SparseRowMatrix.from_dense(np.array([[1.0, 1.0], [2.0, 2.0]])))
    with pytest.raises(RankDeficient):
        givens_qr(SparseRowMatrix.from_dense(np.ones((1, 2))))


# ---------------------------------------------------------------------------
# incremental_qr
# ---------------------------------------------------------------------------

def test_incremental_qr_scalar():
    q, r = incremental_qr(UpperTriangular.from_dense(np.array([[2.0]])),
                          SparseRowMatrix.from_dense(np.array([[1.0]])))
    assert r.to_dense()[0, 0] == pytest.approx(math.sqrt(5))
    (_, _, c, s), = q.rotations
    assert c == pytest.approx(2 / math.sqrt(5)) and s == pytest.approx(1 / math.sqrt(5))


def test_incremental_qr_without_rows_is_identity():
    r_prev = UpperTriangular.from_dense(np.array([[2.0, 1.0], [0.0, 3.0]]))
    q, r = incremental_qr(r_prev, SparseRowMatrix.empty(2))
    assert len(q) == 0
    np.testing.assert_array_equal(r.to_dense(), r_prev.to_dense())


def test_incremental_qr_gram_identity():
    rng = np.random.default_rng(2)
    r_prev = random_upper(rng, 10)
    rows = rng.standard_normal((3, 10))
    _, r = incremental_qr(UpperTriangular.from_dense(r_prev), SparseRowMatrix.from_dense(rows))
    assert gram_gap(r.to_dense(), np.vstack([r_prev, rows])) < 1e-9


def test_incremental_qr_pads_new_columns_and_replays_rhs():
    rng = np.random.default_rng(3)
    r_prev, d_prev = random_upper(rng, 4), rng.standard_normal(4)
    rows, b = rng.standard_normal((5, 6)), rng.standard_normal(5)
    q, r = incremental_qr(UpperTriangular.from_dense(r_prev), SparseRowMatrix.from_dense(rows))
    assert q.dim == 11
    d = apply_q_transpose(q, np.concatenate([d_prev, np.zeros(2), b]))[:6]
    stack = np.vstack([np.hstack([r_prev, np.zeros((4, 2))]), rows])
    x = back_substitute(r, d)
    x_ref = np.linalg.lstsq(stack, np.concatenate([d_prev, b]), rcond=None)[0]
    np.testing.assert_allclose(x, x_ref, atol=1e-10)


def test_incremental_qr_touches_only_columns_right_of_new_rows():
    rng = np.random.default_rng(4)
    r_prev = random_upper(rng, 8)
    rows = np.zeros((2, 8))
    rows[:, 5:] = rng.standard_normal((2, 3))
    q, r = incremental_qr(UpperTriangular.from_dense(r_prev), SparseRowMatrix.from_dense(rows))
    np.testing.assert_array_equal(r.to_dense()[:5], r_prev[:5])
    assert q.i.min() >= 5


def test_incremental_qr_allow_deficient_keeps_zero_pivot():
    r_prev = UpperTriangular.from_dense(np.array([[1.0]]))
    rows = SparseRowMatrix.from_dense(np.array([[1.0, 0.0]]))
    with pytest.raises(RankDeficient):
        incremental_qr(r_prev, rows)
    _, r = incremental_qr(r_prev, rows, allow_deficient=True)
    assert r.to_dense()[1, 1] == 0.0


def test_incremental_qr_rotation_order_top_to_bottom_leftmost_first():
    r_prev = UpperTriangular.from_dense(np.eye(3))
    rows = SparseRowMatrix.from_dense(np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 1.0]]))
    q, _ = incremental_qr(r_prev, rows)
    pairs = [(i, j) for i, j, _, _ in q.rotations if i != j]
    # first new row (stack index 3) meets columns 1 and 2, then the second (index 4) columns 0..2
    assert pairs == [(1, 3), (2, 3), (0, 4), (1, 4), (2, 4)]


# ---------------------------------------------------------------------------
# rotation replay
# ---------------------------------------------------------------------------

def test_apply_q_transpose_empty_and_hand_rotation():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(apply_q_transpose(GivensSeq.empty(3), v), v)
    q = GivensSeq(2, [0], [1], [0.6], [0.8])
    np.testing.assert_allclose(apply_q_transpose(q, [3.0, 4.0]), [5.0, 0.0], atol=1e-15)


def test_apply_q_transpose_solves_least_squares():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((12, 5)), rng.standard_normal(12)
    q, r = givens_qr(SparseRowMatrix.from_dense(a))
    x = back_substitute(r, apply_q_transpose(q, b)[:5])
    x_ref = np.linalg.solve(a.T @ a, a.T @ b)
    np.testing.assert_allclose(x, x_ref, atol=1e-9)


def test_apply_q_round_trip():
    rng = np.random.default_rng(7)
    q, _ = givens_qr(SparseRowMatrix.from_dense(rng.standard_normal((15, 6))))
    v = rng.standard_normal(15)
    np.testing.assert_allclose(apply_q_transpose(q, apply_q(q, v)), v, atol=1e-10)
    np.testing.assert_allclose(apply_q(q, apply_q_transpose(q, v)), v, atol=1e-10)


def test_apply_q_transpose_length_mismatch():
    with pytest.raises(DimensionMismatch):
        apply_q_transpose(GivensSeq.empty(3), np.zeros(2))


def test_scheduled_replay_is_bitwise_identical():
    rng = np.random.default_rng(8)
    r_prev = random_upper(rng, 40)
    q, _ = incremental_qr(UpperTriangular.from_dense(r_prev),
                          SparseRowMatrix.from_dense(rng.standard_normal((25, 43))))
    v = rng.standard_normal(q.dim)
    sched = q.scheduled()
    assert len(sched) == len(q)
    np.testing.assert_array_equal(apply_q_transpose(sched, v), apply_q_transpose(q, v))


def test_to_dense_is_orthogonal():
    rng = np.random.default_rng(9)
    q, _ = givens_qr(SparseRowMatrix.from_dense(rng.standard_normal((7, 4))))
    m = q.to_dense()
    np.testing.assert_allclose(m.T @ m, np.eye(7), atol=1e-12)


# ---------------------------------------------------------------------------
# triangular solves
# ---------------------------------------------------------------------------

def test_back_substitute_examples():
    r = UpperTriangular.from_dense(np.array([[2.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(back_substitute(r, [3.0, 1.0]), [1.0, 1.0])
    d = np.array([4.0, -1.0, 2.5])
    np.testing.assert_array_equal(back_substitute(UpperTriangular.identity(3), d), d)


def test_back_substitute_residual():
    rng = np.random.default_rng(10)
    r = random_upper(rng, 20)
    d = rng.standard_normal(20)
    x = back_substitute(UpperTriangular.from_dense(r), d)
    assert np.max(np.abs(r @ x - d)) < 1e-10


def test_forward_substitute_transpose_examples():
    r = UpperTriangular.from_dense(np.array([[2.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(forward_substitute_transpose(r, [2.0, 2.0]), [1.0, 1.0])
    v = np.array([1.0, 2.0])
    np.testing.assert_array_equal(forward_substitute_transpose(UpperTriangular.identity(2), v), v)


def test_forward_substitute_transpose_residual_and_multi():
    rng = np.random.default_rng(11)
    r = random_upper(rng, 20)
    ru = UpperTriangular.from_dense(r)
    v = rng.standard_normal(20)
    x = forward_substitute_transpose(ru, v)
    assert np.max(np.abs(r.T @ x - v)) < 1e-10
    b = rng.standard_normal((20, 3))
    np.testing.assert_allclose(forward_substitute_transpose_multi(ru, b),
                               np.linalg.solve(r.T, b), atol=1e-10)


def test_solves_reject_zero_pivot_and_bad_length():
    r = UpperTriangular(2, [0, 1, 1], [0], [1.0])
    with pytest.raises(SingularPivot):
        back_substitute(r, [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        back_substitute(UpperTriangular.identity(2), [1.0])


# ---------------------------------------------------------------------------
# nnz(Q) closed form
# ---------------------------------------------------------------------------

def measured_nnz(n_s, n_f, j, seed=0):
    """Structural nnz of the accumulated rotations for dense rows starting at column ``j``."""
    rng = np.random.default_rng(seed)
    r = random_upper(rng, n_s)
    rows = np.zeros((n_f, n_s))
    rows[:, j - 1:] = rng.standard_normal((n_f, n_s - j + 1))
    q, _ = incremental_qr(UpperTriangular.from_dense(r), SparseRowMatrix.from_dense(rows))
    return int(np.count_nonzero(np.abs(q.to_dense()) > 1e-12))


@pytest.mark.parametrize("n_s,n_f,j,expected", [(6, 1, 6, 9), (6, 1, 1, 34), (1, 1, 1, 4)])
def test_nnz_q_predict_examples(n_s, n_f, j, expected):
    assert nnz_q_predict(n_s, n_f, j) == expected
    assert measured_nnz(n_s, n_f, j) == expected


@pytest.mark.parametrize("n_s", [6, 12, 24])
def test_nnz_q_predict_exact_for_single_row(n_s):
    for j in range(1, n_s + 1):
        assert nnz_q_predict(n_s, 1, j) == measured_nnz(n_s, 1, j)


def test_nnz_q_predict_bounds_measurement():
    for n_s in (6, 12, 24):
        for n_f in (1, 2, 6, 12):
            for j in (1, (n_s + 1) // 2, n_s):
                assert measured_nnz(n_s, n_f, j) <= nnz_q_predict(n_s, n_f, j)


def test_nnz_q_predict_argument_checks():
    with pytest.raises(InvalidArgument):
        nnz_q_predict(6, 0, 1)
    with pytest.raises(InvalidArgument):
        nnz_q_predict(6, 1, 7)


def test_dominant_term_examples():
    assert dominance_threshold(6) == pytest.approx(1.5)
    assert nnz_q_dominant_term(6, 2) is DominantTerm.TermA
    assert nnz_q_dominant_term(100, 1) is DominantTerm.TermC
    assert nnz_q_dominant_term(100, 200) is DominantTerm.TermA
