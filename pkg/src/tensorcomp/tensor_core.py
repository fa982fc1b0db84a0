"""Dense and factored third-order tensors and the linear algebra they share.

Layout conventions used throughout the package:

* dense tensors are stored mode-1 major, i.e. entry ``(i, j, k)`` lives at
  linear index ``i*n2*n3 + j*n3 + k`` (NumPy C order);
* the mode-x unfolding puts ``(i, j, k)`` at row ``i``, column ``j*n + k``;
  mode y at row ``j``, column ``k*n + i``; mode z at row ``k``, column
  ``i*n + j``.  The Kronecker design rows used by the solvers follow the same
  cyclic order, so ``kronecker(Vy, Vz)`` is the column basis for mode x.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import issparse
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .exceptions import ConvergenceError, DegeneracyError

log = logging.getLogger(__name__)

MODES = ("x", "y", "z")
DENSE_LIMIT = 64
_INDEX_MAX = np.iinfo(np.int64).max


def other_modes(mode):
    """The two modes spanning the unfolding columns of ``mode``, in column order."""
    return {"x": ("y", "z"), "y": ("z", "x"), "z": ("x", "y")}[_check_mode(mode)]


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseTensor3:
    """A fully materialised ``n1 x n2 x n3`` array."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"expected a non-empty 3-way array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("tensor values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dims(self):
        return self.values.shape

    def entries(self, i, j, k):
        return self.values[i, j, k]

    def frob_norm(self):
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class CPDecomposition:
    """``sum_l sigmas[l] * X[:, l] (x) Y[:, l] (x) Z[:, l]`` with unit columns."""

    sigmas: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        s = _frozen(self.sigmas).reshape(-1)
        X, Y, Z = (_frozen(M) for M in (self.X, self.Y, self.Z))
        r = s.size
        if X.ndim != 2 or X.shape != Y.shape or X.shape != Z.shape or X.shape[1] != r:
            raise ValueError("factor matrices must all be n x r with r = len(sigmas)")
        if r < 1 or r > X.shape[0]:
            raise ValueError(f"need 1 <= r <= n, got r={r}, n={X.shape[0]}")
        if np.any(s <= 0) or np.any(np.diff(s) > 0):
            raise ValueError("sigmas must be positive and sorted descending")
        for name, M in zip("XYZ", (X, Y, Z)):
            if np.max(np.abs(np.linalg.norm(M, axis=0) - 1.0)) > 1e-12:
                raise ValueError(f"columns of {name} must have unit norm")
        object.__setattr__(self, "sigmas", s)
        for name, M in zip("XYZ", (X, Y, Z)):
            object.__setattr__(self, name, M)

    @classmethod
    def from_factors(cls, X, Y, Z, weights=None):
        """Normalise arbitrary factor columns, absorbing scale and sign into sigma.

        Components with a zero column are dropped; the rest are sorted by
        weight, descending.
        """
        X, Y, Z = (np.array(M, dtype=float) for M in (X, Y, Z))
        w = np.ones(X.shape[1]) if weights is None else np.array(weights, dtype=float)
        nx, ny, nz = (np.linalg.norm(M, axis=0) for M in (X, Y, Z))
        s = w * nx * ny * nz
        keep = (nx > 0) & (ny > 0) & (nz > 0) & (s != 0)
        if not np.any(keep):
            raise DegeneracyError("all components vanish")
        X = X[:, keep] / nx[keep]
        Y = Y[:, keep] / ny[keep]
        Z = Z[:, keep] / nz[keep] * np.sign(s[keep])
        s = np.abs(s[keep])
        order = np.argsort(-s, kind="stable")
        return cls(s[order], X[:, order], Y[:, order], Z[:, order])

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def r(self):
        return self.sigmas.size

    @property
    def dims(self):
        return (self.n, self.n, self.n)

    def factor(self, mode):
        return {"x": self.X, "y": self.Y, "z": self.Z}[_check_mode(mode)]

    def entries(self, i, j, k):
        """Evaluate the tensor at index arrays without materialising it."""
        return (self.X[i] * self.Y[j] * self.Z[k]) @ self.sigmas

    def full(self, force=False):
        _guard_dense(self.n, force)
        return DenseTensor3(np.einsum("l,il,jl,kl->ijk", self.sigmas, self.X, self.Y, self.Z))

    def frob_norm(self):
        return float(np.sqrt(max(_cp_inner(self, self), 0.0)))


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """An ``n x r`` matrix with orthonormal columns."""

    B: np.ndarray

    def __post_init__(self):
        B = _frozen(self.B)
        if B.ndim != 2 or B.shape[1] < 1 or B.shape[1] > B.shape[0]:
            raise ValueError(f"basis must be n x r with 1 <= r <= n, got {B.shape}")
        if np.max(np.abs(B.T @ B - np.eye(B.shape[1]))) > 1e-10:
            raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "B", B)

    @classmethod
    def from_matrix(cls, M, rank_tol=1e-12):
        """Orthonormal basis for the column span of ``M`` (via thin QR)."""
        M = np.asarray(M, dtype=float)
        Q, R = np.linalg.qr(M)
        d = np.abs(np.diag(R))
        if d.size == 0 or d.min() <= rank_tol * max(d.max(), 1e-300):
            raise DegeneracyError("matrix columns are linearly dependent")
        return cls(Q)

    @classmethod
    def random(cls, n, r, rng):
        return cls(np.linalg.qr(rng.standard_normal((n, r)))[0])

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def r(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class SubspaceTriple:
    vx: SubspaceBasis
    vy: SubspaceBasis
    vz: SubspaceBasis

    def __post_init__(self):
        shapes = {v.B.shape for v in self}
        if len(shapes) != 1:
            raise ValueError(f"bases must share n and r, got {sorted(shapes)}")

    def __iter__(self):
        return iter((self.vx, self.vy, self.vz))

    def mode(self, mode):
        return {"x": self.vx, "y": self.vy, "z": self.vz}[_check_mode(mode)]

    def replace(self, **bases):
        """Copy with some bases swapped, keyed by mode name (``x=...``)."""
        d = {"x": self.vx, "y": self.vy, "z": self.vz}
        for mode, basis in bases.items():
            d[_check_mode(mode)] = basis
        return SubspaceTriple(d["x"], d["y"], d["z"])

    @property
    def n(self):
        return self.vx.n

    @property
    def r(self):
        return self.vx.r

    @classmethod
    def from_cp(cls, cp):
        """The true factor spans of a CP decomposition."""
        return cls(*(SubspaceBasis.from_matrix(M) for M in (cp.X, cp.Y, cp.Z)))

    @classmethod
    def random(cls, n, r, rng):
        return cls(*(SubspaceBasis.random(n, r, rng) for _ in range(3)))


@dataclass(frozen=True, eq=False)
class CoreTensor:
    """``T' = sum core[a,b,c] vx_a (x) vy_b (x) vz_c`` in a product of subspaces."""

    triple: SubspaceTriple
    core: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        G = _frozen(self.core)
        r = self.triple.r
        if G.shape != (r, r, r):
            raise ValueError(f"core must be {r}x{r}x{r}, got {G.shape}")
        if not np.all(np.isfinite(G)):
            raise ValueError("core must be finite")
        object.__setattr__(self, "core", G)

    @property
    def n(self):
        return self.triple.n

    @property
    def r(self):
        return self.triple.r

    @property
    def dims(self):
        return (self.n, self.n, self.n)

    def entries(self, i, j, k):
        t = self.triple
        return np.einsum("abc,ea,eb,ec->e", self.core, t.vx.B[i], t.vy.B[j], t.vz.B[k])

    def full(self, force=False):
        _guard_dense(self.n, force)
        t = self.triple
        return DenseTensor3(np.einsum("abc,ia,jb,kc->ijk", self.core, t.vx.B, t.vy.B, t.vz.B))

    def frob_norm(self):
        return float(np.linalg.norm(self.core))


@dataclass(frozen=True)
class AssumptionsReport:
    mu_x: float
    mu_y: float
    mu_z: float
    c: float
    kappa: float

    @property
    def mu(self):
        return max(self.mu_x, self.mu_y, self.mu_z)


def assumptions(cp):
    """Incoherence of each factor span, robust independence ``c`` and ``kappa``."""
    mus = [incoherence(SubspaceBasis.from_matrix(M)) for M in (cp.X, cp.Y, cp.Z)]
    c = min(np.linalg.svd(M, compute_uv=False)[-1] for M in (cp.X, cp.Y, cp.Z))
    return AssumptionsReport(*mus, c=float(c), kappa=float(cp.sigmas[0] / cp.sigmas[-1]))


def _guard_dense(n, force):
    if n > DENSE_LIMIT and not force:
        raise MemoryError(
            f"refusing to materialise an n={n} cube (limit {DENSE_LIMIT}); pass force=True")


def _as_matrix(V):
    return V.B if isinstance(V, SubspaceBasis) else np.asarray(V, dtype=float)


# ---------------------------------------------------------------------------
# Products and unfoldings
# ---------------------------------------------------------------------------


def kronecker(A, B):
    """Column ``i*q + j`` of the result is ``A[:, i] (x) B[:, j]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] * B.shape[0] > _INDEX_MAX // max(A.shape[1] * B.shape[1], 1):
        raise OverflowError("Kronecker product too large to index")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("inputs must be finite")
    return np.kron(A, B)


def khatri_rao(A, B):
    """Column-wise Kronecker product: column ``i`` is ``A[:, i] (x) B[:, i]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    return np.einsum("ir,jr->ijr", A, B).reshape(A.shape[0] * B.shape[0], A.shape[1])


def unfold(t, mode, dense_limit=DENSE_LIMIT):
    """The ``n x n^2`` unfolding along ``mode``.

    Dense inputs are reshaped directly.  CP inputs are materialised only when
    ``n <= dense_limit``; above that a ``LinearOperator`` applying
    ``M_mode diag(sigma) khatri_rao(...)^T`` in factored form is returned.
    """
    _check_mode(mode)
    if isinstance(t, DenseTensor3) or isinstance(t, np.ndarray):
        v = t.values if isinstance(t, DenseTensor3) else np.asarray(t, dtype=float)
        perm = {"x": (0, 1, 2), "y": (1, 2, 0), "z": (2, 0, 1)}[mode]
        w = v.transpose(perm)
        return w.reshape(w.shape[0], -1)
    if not isinstance(t, CPDecomposition):
        raise TypeError(f"cannot unfold {type(t).__name__}")
    n = t.n
    if n * n > _INDEX_MAX // n:
        raise OverflowError(f"n^2 = {n * n} columns overflow the index range")
    b, c = other_modes(mode)
    M, P, Q = t.factor(mode), t.factor(b), t.factor(c)
    s = t.sigmas
    if n <= dense_limit:
        return (M * s) @ khatri_rao(P, Q).T

    def matvec(v):
        v = np.asarray(v).reshape(n, n)
        # khatri_rao(P, Q)^T vec(V) = diag(P^T V Q)
        return M @ (s * np.einsum("jl,jk,kl->l", P, v, Q))

    def rmatvec(u):
        w = s * (M.T @ np.asarray(u).reshape(-1))
        return ((P * w) @ Q.T).reshape(-1)

    return LinearOperator((n, n * n), matvec=matvec, rmatvec=rmatvec, dtype=float)


# ---------------------------------------------------------------------------
# Subspace geometry
# ---------------------------------------------------------------------------


def principal_angle_sine(U, V):
    """Sine of the largest principal angle between two equal-dimension subspaces.

    Evaluated as ``||(I - V V^T) U||_op``, which equals ``||V_perp^T U||_op``
    and ``sqrt(1 - sigma_min(U^T V)^2)`` but keeps full relative accuracy for
    tiny angles.  Cost is O(n r^2).
    """
    U, V = _as_matrix(U), _as_matrix(V)
    if U.shape[0] != V.shape[0]:
        raise ValueError(f"ambient dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    if U.shape[1] != V.shape[1]:
        raise ValueError(f"subspace dimensions differ: {U.shape[1]} vs {V.shape[1]}")
    R = U - V @ (V.T @ U)
    s = np.linalg.norm(R, 2) if R.size else 0.0
    return float(min(max(s, 0.0), 1.0))


def max_angle(triple, truth):
    """Largest principal-angle sine over the three modes."""
    return max(principal_angle_sine(a, b) for a, b in zip(triple, truth))


def incoherence(V):
    """Smallest mu with ``||P_V e_i|| <= sqrt(mu r / n)`` for every ``i``."""
    B = _as_matrix(V)
    n, r = B.shape
    return float(n / r * np.max(np.einsum("ij,ij->i", B, B)))


def top_r_left_singular_basis(M, r, *, iters=300, tol=1e-10, seed=0, oversample=4,
                              gap_tol=1e-8, dense_limit=DENSE_LIMIT):
    """Orthonormal basis of the top-``r`` left singular subspace of ``M``.

    ``M`` may be a dense array, a scipy sparse matrix or any object accepted by
    ``scipy.sparse.linalg.aslinearoperator``.  Small problems use a dense SVD;
    otherwise block power iteration on ``M M^T`` with Rayleigh-Ritz extraction
    runs until the top-``r`` Ritz subspace moves by less than ``tol``.
    """
    n, m = M.shape
    if not 1 <= r <= min(n, m):
        raise ValueError(f"need 1 <= r <= min(n, m), got r={r} for shape {M.shape}")
    if min(n, m) <= dense_limit and not isinstance(M, LinearOperator):
        A = M.toarray() if issparse(M) else np.asarray(M, dtype=float)
        return SubspaceBasis(np.linalg.svd(A, full_matrices=False)[0][:, :r])

    op = aslinearoperator(M)
    rng = np.random.default_rng(seed)
    k = min(r + oversample, n, m)
    Q = np.linalg.qr(rng.standard_normal((n, k)))[0]
    prev = None
    s = None
    for it in range(iters):
        W = np.asarray(op.rmatmat(Q))
        u, s, _ = np.linalg.svd(W.T, full_matrices=False)
        top = Q @ u[:, :r]
        if prev is not None and principal_angle_sine(top, prev) < tol:
            break
        prev = top
        Z = np.asarray(op.matmat(W))
        Q = np.linalg.qr(Z)[0]
    else:
        gap = (s[r - 1] - s[r]) / s[r - 1] if k > r and s[r - 1] > 0 else 1.0
        if gap < gap_tol:
            raise ConvergenceError(
                f"power iteration stalled after {iters} iterations: "
                f"relative singular gap {gap:.3g} < {gap_tol:g}")
        log.debug("power iteration hit %d iterations without meeting tol=%g", iters, tol)
    top = np.linalg.qr(top)[0]
    return SubspaceBasis(top)


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


def _cp_inner(a, b):
    G = (a.X.T @ b.X) * (a.Y.T @ b.Y) * (a.Z.T @ b.Z)
    return float(a.sigmas @ G @ b.sigmas)


def _as_tucker(t):
    """(core, A, B, C) with ``t = core x1 A x2 B x3 C``."""
    if isinstance(t, CPDecomposition):
        r = t.r
        G = np.zeros((r, r, r))
        G[np.arange(r), np.arange(r), np.arange(r)] = t.sigmas
        return G, t.X, t.Y, t.Z
    v = t.triple
    return t.core, v.vx.B, v.vy.B, v.vz.B


def _mode_products(G, A, B, C):
    return np.einsum("abc,ia,jb,kc->ijk", G, A, B, C)


def _rfac(M):
    return np.linalg.qr(M, mode="r")


def _sq_error_factored(est, truth):
    """``||est - truth||^2`` split along the truth's factor spans.

    With ``P`` the projector onto ``Vx (x) Vy (x) Vz`` (the truth spans) the
    error is ``||P est - truth||^2 + ||(I - P) est||^2`` and ``I - P`` splits
    into three orthogonal pieces.  Every piece is a small Tucker tensor whose
    norm is evaluated through QR factors, so tiny errors keep full relative
    accuracy (the plain Gram expansion cancels at about 1e-8).
    """
    G, A, B, C = _as_tucker(est)
    bases = []
    for M in (truth.X, truth.Y, truth.Z):
        Q, R = np.linalg.qr(M)
        d = np.abs(np.diag(R))
        if d.min() <= 1e-12 * d.max():
            return None
        bases.append(Q)
    Vx, Vy, Vz = bases
    a, b, c = Vx.T @ A, Vy.T @ B, Vz.T @ C
    core_t = _mode_products(_as_tucker(truth)[0], Vx.T @ truth.X, Vy.T @ truth.Y,
                            Vz.T @ truth.Z)
    in_span = _mode_products(G, a, b, c) - core_t
    qa, qb, qc = A - Vx @ a, B - Vy @ b, C - Vz @ c
    out = (_mode_products(G, _rfac(qa), _rfac(B), _rfac(C)),
           _mode_products(G, a, _rfac(qb), _rfac(C)),
           _mode_products(G, a, b, _rfac(qc)))
    return float(np.sum(in_span ** 2) + sum(np.sum(o ** 2) for o in out))


def _frob_sq(t):
    if isinstance(t, CPDecomposition):
        return _cp_inner(t, t)
    if isinstance(t, CoreTensor):
        return float(np.sum(t.core ** 2))
    return float(np.sum(t.values ** 2))


def normalized_mse(est, truth):
    """``||est - truth||_F / ||truth||_F``.

    ``est`` may be a ``DenseTensor3``, ``CPDecomposition`` or ``CoreTensor``;
    ``truth`` a ``CPDecomposition`` or ``DenseTensor3``.  Factored inputs are
    combined through ``r x r`` factor products, never through ``n^3`` entries.
    """
    if isinstance(est, np.ndarray):
        est = DenseTensor3(est)
    if tuple(est.dims) != tuple(truth.dims):
        raise ValueError(f"dimension mismatch: {est.dims} vs {truth.dims}")
    tt = _frob_sq(truth)
    if tt == 0:
        raise ValueError("truth tensor is zero")
    if isinstance(truth, DenseTensor3):
        if not isinstance(est, DenseTensor3):
            est = est.full(force=True)
        return float(np.linalg.norm(est.values - truth.values) / np.sqrt(tt))
    if isinstance(est, DenseTensor3):
        if truth.n <= DENSE_LIMIT:
            return float(np.linalg.norm(est.values - truth.full().values) / np.sqrt(tt))
        cross = float(np.einsum("ijk,il,jl,kl,l->", est.values, truth.X, truth.Y, truth.Z,
                                truth.sigmas))
        return float(np.sqrt(max(_frob_sq(est) - 2.0 * cross + tt, 0.0) / tt))
    err = _sq_error_factored(est, truth)
    if err is None:
        G, A, B, C = _as_tucker(est)
        cross = float(np.einsum("abc,al,bl,cl,l->", G, A.T @ truth.X, B.T @ truth.Y,
                                C.T @ truth.Z, truth.sigmas))
        err = max(_frob_sq(est) - 2.0 * cross + tt, 0.0)
    return float(np.sqrt(err / tt))
