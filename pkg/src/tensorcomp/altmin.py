"""Alternating minimisation over subspaces (Kronecker variant) and over factors.

The Kronecker variant keeps one orthonormal basis per mode.  To update the
x-basis it fits every row of the x-unfolding, restricted to its observed
columns, with a combination of the ``r^2`` columns of ``Vy (x) Vz``; the
top-``r`` left singular vectors of the stacked coefficients ``H`` (``n x r^2``)
become the new basis.  Rows are independent, so all of them are solved in
one batched call on a zero-padded ``(rows, max_count, d)`` array.

The standard variant carries factor matrices and uses the ``r`` Khatri-Rao
columns instead; the unfolding baseline is matrix alternating least squares
on the ``n x n^2`` x-unfolding.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .exceptions import BudgetError, DegeneracyError
from .observations import split_k, subsample
from .postprocess import project_to_subspaces
from .tensor_core import (MODES, CPDecomposition, SubspaceBasis, SubspaceTriple, khatri_rao,
                          max_angle, normalized_mse, other_modes, top_r_left_singular_basis)

log = logging.getLogger(__name__)

SCHEDULES = {"fresh": "fresh", "fresh-splits": "fresh", "half": "half",
             "subsample-half": "half", "full": "full"}
VARIANTS = ("kronecker", "standard", "unfolding")


@dataclass(frozen=True)
class AltMinConfig:
    r: int
    iters: int = 100
    schedule: str = "half"
    ls_ridge: float = 1e-12
    variant: str = "kronecker"
    track_angles: bool = True
    sequential: bool = False
    seed: int = 0
    p_prime: float | None = None
    stop_tol: float | None = None
    track_every: int = 1

    def __post_init__(self):
        if self.track_every < 1:
            raise ValueError("track_every must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        if self.r < 1:
            raise ValueError("r must be positive")
        if self.ls_ridge < 0:
            raise ValueError("ls_ridge must be non-negative")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        object.__setattr__(self, "schedule", SCHEDULES[self.schedule])
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def theory_k(n, sigma1, sigma_r, c):
    """Round count ``100 log(n sigma1 / (c sigma_r))``."""
    return int(math.ceil(100 * math.log(n * sigma1 / (c * sigma_r))))


# ---------------------------------------------------------------------------
# Row least squares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RowSolveResult:
    coeffs: np.ndarray
    observed_count: np.ndarray
    regularized: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise DegeneracyError("row solve produced non-finite coefficients")


def _ridge_solve(G, b, counts, ridge):
    """Solve ``(G_q + lam_q I) c_q = b_q`` for a batch, ``lam_q = ridge * tr(G_q) / d``."""
    d = G.shape[-1]
    out = np.zeros(b.shape)
    live = counts > 0
    if not live.any():
        return out
    Gl, bl = G[live], b[live]
    if ridge > 0:
        lam = ridge * np.trace(Gl, axis1=1, axis2=2) / d
        lam = np.maximum(lam, np.finfo(float).tiny)
        Gl = Gl + lam[:, None, None] * np.eye(d)
        out[live] = np.linalg.solve(Gl, bl[..., None])[..., 0]
    else:
        out[live] = (np.linalg.pinv(Gl, hermitian=True) @ bl[..., None])[..., 0]
    return out


def solve_row(u_obs, basis_cols, ridge=1e-12):
    """Least-squares coefficients of one row against the observed basis columns.

    ``u_obs`` holds the observed values of the row and ``basis_cols`` the
    ``d x |obs|`` slice of the basis at those positions.
    """
    u = np.asarray(u_obs, dtype=float).reshape(-1)
    Bs = np.asarray(basis_cols, dtype=float).reshape(-1, u.size)
    G = (Bs @ Bs.T)[None]
    b = (Bs @ u)[None]
    counts = np.array([u.size])
    c = _ridge_solve(G, b, counts, ridge)
    return RowSolveResult(c, counts, counts < Bs.shape[0])


def _normal_equations(groups, D, vals, num_groups):
    """Per-group ``D^T D`` and ``D^T v`` for rows of ``D`` labelled by ``groups``."""
    m, d = D.shape
    counts = np.bincount(groups, minlength=num_groups)
    maxc = int(counts.max(initial=0))
    if m and num_groups * maxc <= 4 * m + 1024:
        order = np.argsort(groups, kind="stable")
        g = groups[order]
        pos = np.arange(m) - (np.cumsum(counts) - counts)[g]
        P = np.zeros((num_groups, maxc, d))
        P[g, pos] = D[order]
        v = np.zeros((num_groups, maxc))
        v[g, pos] = vals[order]
        G = np.matmul(P.transpose(0, 2, 1), P)
        b = np.matmul(P.transpose(0, 2, 1), v[..., None])[..., 0]
    else:
        # skewed counts: accumulate outer products instead of padding
        G = np.zeros((num_groups, d, d))
        b = np.zeros((num_groups, d))
        np.add.at(b, groups, D * vals[:, None])
        for s in range(0, m, 65536):
            sl = slice(s, s + 65536)
            np.add.at(G, groups[sl], D[sl, :, None] * D[sl, None, :])
    return G, b, counts


def solve_rows(groups, D, vals, num_groups, ridge=1e-12):
    """Batched ``solve_row`` over all groups at once."""
    G, b, counts = _normal_equations(np.asarray(groups), D, vals, num_groups)
    coeffs = _ridge_solve(G, b, counts, ridge)
    return RowSolveResult(coeffs, counts, counts < D.shape[1])


# ---------------------------------------------------------------------------
# Kronecker variant
# ---------------------------------------------------------------------------


def kron_design(obs, triple, mode):
    """Rows ``Va[a_s] (x) Vb[b_s]`` of the mode's Kronecker column basis at the observations."""
    row, a, b = obs.mode_indices(mode)
    ma, mb = other_modes(mode)
    A, B = triple.mode(ma).B, triple.mode(mb).B
    r = A.shape[1]
    D = np.einsum("ma,mb->mab", A[a], B[b]).reshape(-1, r * B.shape[1])
    return row, D


def solve_h(obs, triple, mode, ridge=1e-12):
    """``H`` (``n x r^2``) for one mode and the row-solve diagnostics."""
    row, D = kron_design(obs, triple, mode)
    res = solve_rows(row, D, obs.values, triple.mode(mode).n, ridge)
    return res.coeffs, res


def kron_step(obs_t, triple, mode, cfg, return_info=False):
    """One Kronecker update of the ``mode`` subspace from the other two."""
    if len(obs_t) == 0:
        raise ValueError("round observation set is empty")
    H, res = solve_h(obs_t, triple, mode, cfg.ls_ridge)
    empty = int(np.sum(res.observed_count == 0))
    if empty:
        log.debug("mode %s: %d rows without observations set to zero", mode, empty)
    basis = top_r_left_singular_basis(H, cfg.r, seed=cfg.seed)
    return (basis, res) if return_info else basis


@dataclass
class AltMinTrace:
    """Per-round diagnostics; entry 0 describes the starting point."""

    iterations: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    angles: list = field(default_factory=list)
    wall_time_ms: list = field(default_factory=list)
    empty_rows: list = field(default_factory=list)
    regularized_rows: list = field(default_factory=list)
    degenerate_rounds: int = 0
    stopped_early: bool = False

    def record(self, it, elapsed, mse=None, angle=None, empty=0, regularized=0):
        self.iterations.append(it)
        self.wall_time_ms.append(elapsed * 1e3)
        self.mse.append(mse)
        self.angles.append(angle)
        self.empty_rows.append(empty)
        self.regularized_rows.append(regularized)

    @property
    def final_mse(self):
        return self.mse[-1] if self.mse else None


def round_sets(obs, cfg):
    """Generator of the per-round observation sets for the configured schedule."""
    if cfg.schedule == "full":
        for _ in range(cfg.iters):
            yield obs
    elif cfg.schedule == "half":
        for t in range(cfg.iters):
            yield subsample(obs, 0.5, int(make_rng(cfg.seed, 20, t).integers(2 ** 62)))
    else:
        if cfg.iters == 0:
            return
        p_prime = cfg.p_prime if cfg.p_prime is not None else obs.p / cfg.iters
        if cfg.iters * p_prime > obs.p * (1 + 1e-12):
            raise BudgetError(f"iters * p_prime = {cfg.iters * p_prime} exceeds p = {obs.p}")
        yield from split_k(obs, cfg.iters, p_prime, int(make_rng(cfg.seed, 21).integers(2 ** 62)))


def _track(trace, it, elapsed, obs, triple, truth, cfg, empty=0, regularized=0):
    mse = angle = None
    if truth is not None:
        if cfg.track_angles:
            angle = max_angle(triple, SubspaceTriple.from_cp(truth))
        core = project_to_subspaces(obs, triple, cfg.ls_ridge)
        mse = normalized_mse(core, truth)
    trace.record(it, elapsed, mse, angle, empty, regularized)
    return mse


def kron_altmin(obs, init, cfg, truth=None):
    """Kronecker alternating minimisation from ``init``.

    All three modes are updated from the previous round's triple unless
    ``cfg.sequential`` is set.  With ``truth`` the trace records the max
    principal angle and the normalised error of the projected estimate
    (least-squares core on all of ``obs``) every ``cfg.track_every`` rounds
    and after the last one.  ``cfg.stop_tol`` ends the run once that error
    drops below it.
    """
    if init.r != cfg.r:
        raise ValueError(f"init rank {init.r} differs from cfg.r={cfg.r}")
    trace = AltMinTrace()
    triple = init
    elapsed = 0.0
    _track(trace, 0, elapsed, obs, triple, truth, cfg)
    for t, obs_t in enumerate(round_sets(obs, cfg), start=1):
        t0 = time.perf_counter()
        new = {}
        empty = regularized = 0
        src = triple
        try:
            for mode in MODES:
                basis, res = kron_step(obs_t, src, mode, cfg, return_info=True)
                new[mode] = basis
                empty += int(np.sum(res.observed_count == 0))
                regularized += int(np.sum(res.regularized))
                if cfg.sequential:
                    src = src.replace(**{mode: basis})
            triple = SubspaceTriple(new["x"], new["y"], new["z"])
        except DegeneracyError as exc:
            trace.degenerate_rounds += 1
            log.warning("round %d degenerate, keeping previous triple: %s", t, exc)
        elapsed += time.perf_counter() - t0
        if t % cfg.track_every and t != cfg.iters:
            continue
        mse = _track(trace, t, elapsed, obs, triple, truth, cfg, empty, regularized)
        if cfg.stop_tol is not None and mse is not None and mse < cfg.stop_tol:
            trace.stopped_early = t < cfg.iters
            break
    return triple, trace


# ---------------------------------------------------------------------------
# Standard variant
# ---------------------------------------------------------------------------


def _unit_cols(M):
    nrm = np.linalg.norm(M, axis=0)
    nrm[nrm == 0] = 1.0
    return M / nrm


def standard_step(obs_t, factors, mode, cfg, return_info=False):
    """Least-squares update of one factor matrix with the other two fixed.

    ``factors`` maps ``x``, ``y``, ``z`` to ``n x r`` matrices.  The fixed
    factors are column-normalised first, so the scale lives in the solved one.
    """
    row, a, b = obs_t.mode_indices(mode)
    ma, mb = other_modes(mode)
    A, B = _unit_cols(factors[ma]), _unit_cols(factors[mb])
    D = A[a] * B[b]
    res = solve_rows(row, D, obs_t.values, factors[mode].shape[0], cfg.ls_ridge)
    out = dict(factors)
    out[ma], out[mb], out[mode] = A, B, res.coeffs
    return (out, res) if return_info else out


def factors_to_cp(factors):
    """CP decomposition of ``sum_l x_l (x) y_l (x) z_l``; ``None`` if all terms vanish."""
    try:
        return CPDecomposition.from_factors(factors["x"], factors["y"], factors["z"])
    except DegeneracyError:
        return None


def _cp_error(factors, truth):
    cp = factors_to_cp(factors)
    return 1.0 if cp is None else normalized_mse(cp, truth)


def standard_altmin(obs, init, cfg, truth=None):
    """Alternating least squares on the factors, modes updated x, y, z in turn.

    ``init`` is a dict of ``n x r`` factor matrices (or a ``SubspaceTriple``,
    whose bases are used as the starting factors).
    """
    if isinstance(init, SubspaceTriple):
        init = {m: np.array(init.mode(m).B) for m in MODES}
    factors = {m: np.array(init[m], dtype=float) for m in MODES}
    trace = AltMinTrace()
    elapsed = 0.0
    if truth is not None:
        trace.record(0, 0.0, _cp_error(factors, truth))
    else:
        trace.record(0, 0.0)
    for t, obs_t in enumerate(round_sets(obs, cfg), start=1):
        t0 = time.perf_counter()
        empty = regularized = 0
        for mode in MODES:
            factors, res = standard_step(obs_t, factors, mode, cfg, return_info=True)
            empty += int(np.sum(res.observed_count == 0))
            regularized += int(np.sum(res.regularized))
        elapsed += time.perf_counter() - t0
        if t % cfg.track_every and t != cfg.iters:
            continue
        mse = _cp_error(factors, truth) if truth is not None else None
        trace.record(t, elapsed, mse, None, empty, regularized)
        if cfg.stop_tol is not None and mse is not None and mse < cfg.stop_tol:
            trace.stopped_early = t < cfg.iters
            break
    return factors, trace


# ---------------------------------------------------------------------------
# Unfolding baseline
# ---------------------------------------------------------------------------


def _unfolding_error(U, W, truth):
    """``||U W^T - T_(x)||_F / ||T||_F`` with ``W`` the ``n^2 x r`` column factor."""
    N = khatri_rao(truth.Y, truth.Z) * truth.sigmas
    tt = float(truth.sigmas @ ((truth.X.T @ truth.X) * (truth.Y.T @ truth.Y)
                               * (truth.Z.T @ truth.Z)) @ truth.sigmas)
    ee = float(np.sum((U.T @ U) * (W.T @ W)))
    cross = float(np.sum((U.T @ truth.X) * (W.T @ N)))
    return float(np.sqrt(max(ee - 2 * cross + tt, 0.0) / tt))


def unfolding_altmin(obs, init, cfg, truth=None):
    """Rank-``r`` matrix alternating least squares on the x-unfolding.

    ``init`` is an ``n x r`` matrix or ``SubspaceBasis`` for the row factor.
    Returns ``(U, W)`` with ``U W^T`` approximating the ``n x n^2`` unfolding.
    """
    U = np.array(init.B if isinstance(init, SubspaceBasis) else init, dtype=float)
    n1, n2, n3 = obs.dims
    W = np.zeros((n2 * n3, cfg.r))
    trace = AltMinTrace()
    trace.record(0, 0.0, 1.0 if truth is not None else None)
    elapsed = 0.0
    for t, obs_t in enumerate(round_sets(obs, cfg), start=1):
        t0 = time.perf_counter()
        col = obs_t.j * n3 + obs_t.k
        U = _unit_cols(U)
        res_w = solve_rows(col, U[obs_t.i], obs_t.values, n2 * n3, cfg.ls_ridge)
        W = res_w.coeffs
        res_u = solve_rows(obs_t.i, W[col], obs_t.values, n1, cfg.ls_ridge)
        U = res_u.coeffs
        elapsed += time.perf_counter() - t0
        if t % cfg.track_every and t != cfg.iters:
            continue
        mse = _unfolding_error(U, W, truth) if truth is not None else None
        trace.record(t, elapsed, mse, None, int(np.sum(res_w.observed_count == 0)),
                     int(np.sum(res_w.regularized) + np.sum(res_u.regularized)))
        if cfg.stop_tol is not None and mse is not None and mse < cfg.stop_tol:
            trace.stopped_early = t < cfg.iters
            break
    return (U, W), trace
