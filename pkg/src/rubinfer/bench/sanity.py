"""Dense-system microbenchmark of the update methods.

For every ``(n_s, n_f)`` pair a random dense prior system over ``n_s``
columns is factored once, then one new 3-dof block is appended with three
dense motion rows and ``n_f`` dense observation rows.  Planning-time work
(folding the predicted rows into the factor) is done outside the timers; the
timed step is whatever each method needs to produce the posterior ``(R, d)``
once the actual right-hand side is known:

``STD``
    re-factor the whole stacked system ``[A_prev | b_prev; A_new | b_new]``;
``ISAM``
    re-factor the previous factor with the new rows,
    ``[R_prev | d_prev; A_new | b_new]``;
``OTM`` / ``OTM_OO`` / ``DU`` / ``DU_OO``
    recompute only ``d`` from the stored planning session.

Both re-factoring baselines use LAPACK Householder QR on the augmented
matrix, so no orthogonal factor is formed.
"""
from __future__ import annotations

import statistics
import time

import numpy as np
from scipy.linalg import qr as lapack_qr

from ..errors import ConfigError
from ..linalg import SparseRowMatrix, UpperTriangular
from ..rub import LinearSession, RhsMethod, factorize_session, rhs_update
from .config import SanityConfig
from .records import BenchRecord


def _sign_fixed(r_aug: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    r = r_aug[:n, :n]
    d = r_aug[:n, n]
    sign = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return np.triu(r) * sign[:, None], d * sign


def dense_system(n_s: int, n_f: int, rng: np.random.Generator, prior_rows_per_state: int = 2):
    """Random dense prior, new rows and predicted/actual right-hand sides."""
    n = n_s + 3
    a_prev = rng.standard_normal((prior_rows_per_state * n_s, n_s))
    b_prev = rng.standard_normal(prior_rows_per_state * n_s)
    motion = rng.standard_normal((3, n))
    obs = rng.standard_normal((n_f, n))
    b_motion = rng.standard_normal(3)
    b_obs_pred = rng.standard_normal(n_f)
    b_obs = b_obs_pred + 0.1 * rng.standard_normal(n_f)
    return a_prev, b_prev, motion, obs, b_motion, b_obs_pred, b_obs


def planning_session(a_prev, b_prev, motion, obs, b_motion, b_obs_pred) -> LinearSession:
    n_s = a_prev.shape[1]
    r_prev, d_prev = _sign_fixed(lapack_qr(np.column_stack([a_prev, b_prev]), mode="r")[0], n_s)
    return factorize_session(UpperTriangular.from_dense(r_prev), d_prev,
                             SparseRowMatrix.from_dense(motion), b_motion,
                             SparseRowMatrix.from_dense(obs), b_obs_pred)


def batch_refactor(a_prev, b_prev, motion, obs, b_motion, b_obs):
    n = motion.shape[1]
    pad = np.zeros((a_prev.shape[0], n - a_prev.shape[1]))
    aug = np.block([[a_prev, pad, b_prev[:, None]],
                    [motion, b_motion[:, None]],
                    [obs, b_obs[:, None]]])
    return _sign_fixed(lapack_qr(aug, mode="r", overwrite_a=True, check_finite=False)[0], n)


def incremental_refactor(r_prev_dense, d_prev, motion, obs, b_motion, b_obs):
    n = motion.shape[1]
    n_s = r_prev_dense.shape[0]
    top = np.zeros((n_s, n + 1))
    top[:, :n_s] = r_prev_dense
    top[:, n] = d_prev
    aug = np.vstack([top, np.column_stack([motion, b_motion]), np.column_stack([obs, b_obs])])
    return _sign_fixed(lapack_qr(aug, mode="r", overwrite_a=True, check_finite=False)[0], n)


def _time(fn, reps):
    fn()
    samples = []
    out = None
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        out = fn()
        samples.append(time.perf_counter_ns() - t0)
    return out, samples


def run_sanity(cfg: SanityConfig, progress=None) -> list[BenchRecord]:
    """Time every method on each grid point; two rows (median, mean) per method."""
    unknown = set(cfg.methods) - {"STD", "ISAM"} - {m.value for m in RhsMethod}
    if unknown:
        raise ConfigError(f"unknown sanity methods {sorted(unknown)}")
    records = []
    for n_s in cfg.n_s:
        for n_f in cfg.n_f:
            rng = np.random.default_rng([cfg.seed, n_s, n_f])
            a_prev, b_prev, motion, obs, b_motion, b_pred, b_obs = dense_system(
                n_s, n_f, rng, cfg.prior_rows_per_state)
            session = planning_session(a_prev, b_prev, motion, obs, b_motion, b_pred)
            r_prev_dense = session.r_prev.to_dense()
            n = n_s + 3
            n_rows = 3 + n_f
            (_, d_ref) = incremental_refactor(r_prev_dense, session.d_prev, motion, obs,
                                              b_motion, b_obs)
            calls = {
                "STD": lambda: batch_refactor(a_prev, b_prev, motion, obs, b_motion, b_obs)[1],
                "ISAM": lambda: incremental_refactor(r_prev_dense, session.d_prev, motion, obs,
                                                     b_motion, b_obs)[1],
            }
            for m in RhsMethod:
                calls[m.value] = (lambda m=m: rhs_update(session, m, b_motion, b_obs))
            scenario = f"{cfg.name}/ns={n_s}/nf={n_f}"
            for name in cfg.methods:
                d, samples = _time(calls[name], cfg.reps)
                diff = float(np.max(np.abs(d - d_ref)))
                n_reelim = n if name in ("STD", "ISAM") else 0
                common = (n, n_rows, n_reelim, 0, 0, diff)
                records.append(BenchRecord(scenario, 0, name, "total",
                                           int(statistics.median(samples)), *common))
                records.append(BenchRecord(scenario, 0, name, "total_mean",
                                           int(statistics.fmean(samples)), *common))
            if progress is not None:
                progress(n_s, n_f)
    return records


def median_times(records, scenario: str) -> dict[str, int]:
    return {r.method: r.time_ns for r in records if r.scenario == scenario and r.phase == "total"}
