"""Spectral initialisation of the three factor subspaces.

For each mode the zero-filled unfolding ``U`` of the observed sample gives the
reweighted second moment ``B = diag(U U^T)/p1 + offdiag(U U^T)/p1^2``.  Its
top-``r`` eigenvectors, with heavy rows trimmed, span the initial subspace.
``B`` is assembled by enumerating observation pairs inside each fiber, so the
work is ``sum_f |f|^2`` rather than ``n^3``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .exceptions import DegeneracyError
from .tensor_core import (MODES, SubspaceBasis, SubspaceTriple,
                          top_r_left_singular_basis)


@dataclass(frozen=True)
class InitConfig:
    r: int
    tau: float = 10.0
    power_iters: int = 300
    power_tol: float = 1e-10
    seed: int = 0
    max_nnz: int = 10 ** 8

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    @classmethod
    def theory(cls, r, mu, c, kappa, **kw):
        """Trimming threshold from the incoherence, independence and conditioning."""
        return cls(r=r, tau=theory_tau(r, mu, c, kappa), **kw)


def theory_tau(r, mu, c, kappa):
    return (2.0 * mu * r / c ** 2 * kappa ** 2) ** 5


@dataclass(frozen=True, eq=False)
class ImplicitGram:
    """Reweighted Gram matrix held as uncoalesced coordinate triples.

    Every within-fiber pair contributes one stored triple, so ``nnz_stored``
    equals ``sum_f |f|^2``.  Products go through a coalesced CSR copy.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    p1: float

    @property
    def nnz_stored(self):
        return self.vals.size

    @cached_property
    def csr(self):
        # coalesce the upper triangle once and mirror it, so the matrix is
        # exactly symmetric regardless of summation order
        up = self.rows <= self.cols
        U = sparse.coo_matrix((self.vals[up], (self.rows[up], self.cols[up])),
                              shape=(self.n, self.n)).tocsr()
        return (U + sparse.triu(U, k=1, format="csr").T).tocsr()

    def matvec(self, v):
        return self.csr @ v

    def toarray(self):
        return self.csr.toarray()


def _mode_dims(obs, mode):
    perm = {"x": (0, 1, 2), "y": (1, 2, 0), "z": (2, 0, 1)}[mode]
    return tuple(obs.dims[d] for d in perm)


def fiber_pair_count(obs, mode):
    """``sum_f |f|^2`` over the column fibers of the ``mode`` unfolding."""
    _, a, b = obs.mode_indices(mode)
    _, counts = np.unique(a * _mode_dims(obs, mode)[2] + b, return_counts=True)
    return int(np.sum(counts.astype(np.int64) ** 2))


def build_bhat(obs, mode, p1=None, max_nnz=10 ** 8):
    """Implicit ``B = Pi(U U^T)/p1 + Pi_perp(U U^T)/p1^2`` for one unfolding."""
    if len(obs) == 0:
        raise ValueError("need at least one observation")
    p1 = obs.p if p1 is None else p1
    row, a, b = obs.mode_indices(mode)
    n, _, nb = _mode_dims(obs, mode)
    key = a * nb + b
    order = np.argsort(key, kind="stable")
    key, row, val = key[order], row[order], obs.values[order]
    _, start, size = np.unique(key, return_index=True, return_counts=True)
    total = int(np.sum(size.astype(np.int64) ** 2))
    if total > max_nnz:
        raise MemoryError(f"B would store {total} entries, above the cap of {max_nnz}")
    # per observation: its fiber's start and size
    fiber_of = np.repeat(np.arange(size.size), size)
    e_start, e_size = start[fiber_of], size[fiber_of]
    first = np.repeat(np.arange(row.size), e_size)
    block = np.repeat(np.cumsum(e_size) - e_size, e_size)
    second = np.repeat(e_start, e_size) + (np.arange(total) - block)
    rows, cols = row[first], row[second]
    w = np.where(first == second, 1.0 / p1, 1.0 / p1 ** 2)
    return ImplicitGram(n, rows, cols, val[first] * val[second] * w, p1)


def trim_rows(X, tau):
    """Zero every row whose norm is at least ``tau * sqrt(r / n)``."""
    X = np.array(X, dtype=float)
    n, r = X.shape
    heavy = np.linalg.norm(X, axis=1) >= tau * np.sqrt(r / n)
    X[heavy] = 0.0
    return X


def init_mode(obs, mode, cfg):
    gram = build_bhat(obs, mode, max_nnz=cfg.max_nnz)
    top = top_r_left_singular_basis(gram.csr, cfg.r, iters=cfg.power_iters,
                                    tol=cfg.power_tol, seed=cfg.seed)
    X0 = trim_rows(top.B, cfg.tau)
    try:
        return SubspaceBasis.from_matrix(X0, rank_tol=1e-10)
    except DegeneracyError:
        raise DegeneracyError(
            f"trimming with tau={cfg.tau} left fewer than r={cfg.r} directions in mode {mode}"
        ) from None


def init_subspaces(obs, cfg):
    """Initial subspace estimates for all three modes from one sample."""
    return SubspaceTriple(*(init_mode(obs, m, cfg) for m in MODES))
