"""From subspace estimates to an exact CP decomposition.

Three stages:

1. ``project_to_subspaces`` fits the ``r^3`` core of the best tensor inside
   ``Vx (x) Vy (x) Vz`` to the observed entries;
2. ``jennrich`` splits that tensor into ``r`` rank-one components via two
   random contractions;
3. ``convex_refine`` polishes the components by projected gradient on the
   observed residual, restricted to a small box and to the dual-basis
   hyperplanes that remove the scaling redundancy between factors.

Core file format used by the CLI (text)::

    n r
    core values        # r^3 numbers, index (a, b, c) at a*r*r + b*r + c
    vx_1 ... vz_r      # 3r lines of n values: vx columns, vy columns, vz columns
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import linear_sum_assignment

from ._rng import make_rng
from .exceptions import ConvergenceError, DegeneracyError, ObservationFormatError
from .tensor_core import (CoreTensor, CPDecomposition, DenseTensor3, SubspaceBasis,
                          SubspaceTriple, khatri_rao)

log = logging.getLogger(__name__)

__all__ = [
    "CoreTensor", "RefinePolytope", "RefineProblem", "MatchResult", "project_to_subspaces",
    "jennrich", "match_components", "build_polytope", "convex_refine", "theory_box",
    "read_core", "write_core",
]


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project_to_subspaces(obs, triple, ridge=1e-12, chunk=32768, strict=False):
    """Least-squares core of the tensor in ``Vx (x) Vy (x) Vz`` matching ``obs``.

    Each observed ``(i, j, k)`` contributes the design row
    ``Vx[i] (x) Vy[j] (x) Vz[k]``; the ``r^3`` normal equations are
    accumulated in chunks and solved with a relative ridge.
    """
    r = triple.r
    d = r ** 3
    G = np.zeros((d, d))
    rhs = np.zeros(d)
    Vx, Vy, Vz = (v.B for v in triple)
    for s in range(0, len(obs), chunk):
        sl = slice(s, s + chunk)
        D = np.einsum("ma,mb,mc->mabc", Vx[obs.i[sl]], Vy[obs.j[sl]], Vz[obs.k[sl]],
                      optimize=True).reshape(-1, d)
        G += D.T @ D
        rhs += D.T @ obs.values[sl]
    lam = ridge * max(np.trace(G) / d, np.finfo(float).tiny)
    info = {"num_obs": len(obs)}
    eig_min = float(np.linalg.eigvalsh(G)[0]) if len(obs) else 0.0
    info["min_eig"] = eig_min
    info["ill_conditioned"] = eig_min < 1e3 * lam
    if info["ill_conditioned"]:
        msg = f"projection normal equations ill conditioned (min eigenvalue {eig_min:.3g})"
        if strict:
            raise DegeneracyError(msg)
        log.warning(msg)
    G[np.diag_indices(d)] += lam
    try:
        coef = linalg.cho_solve(linalg.cho_factor(G), rhs)
    except linalg.LinAlgError:
        coef = np.linalg.lstsq(G, rhs, rcond=None)[0]
    return CoreTensor(triple, coef.reshape(r, r, r), info)


# ---------------------------------------------------------------------------
# Jennrich's algorithm
# ---------------------------------------------------------------------------


def _unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _truncated(M, r):
    P, s, Qt = np.linalg.svd(M, full_matrices=False)
    return P[:, :r], s[:r], Qt[:r]


def _top_eig(M, r):
    lam, vec = np.linalg.eig(M)
    order = np.argsort(-np.abs(lam), kind="stable")
    return lam[order], vec[:, order]


class _Retry(Exception):
    pass


def _jennrich_attempt(T, r, a, b, gap_tol, imag_tol):
    """One draw of the algorithm on a dense ``n1 x n2 x n3`` array."""
    Ta, Tb = T @ a, T @ b
    Pa, sa, Qa = _truncated(Ta, r)
    Pb, sb, Qb = _truncated(Tb, r)
    if sa[-1] <= 1e-14 * sa[0] or sb[-1] <= 1e-14 * sb[0]:
        raise _Retry("contraction has rank below r")
    Ta_r = (Pa * sa) @ Qa
    Tb_r = (Pb * sb) @ Qb
    U = Ta_r @ ((Qb.T / sb) @ Pb.T)
    V = ((Qa.T / sa) @ Pa.T @ Tb_r).T
    lu, Eu = _top_eig(U, T.shape[0])
    lv, Ev = _top_eig(V, T.shape[1])
    lu, Eu, lv, Ev = lu[:r], Eu[:, :r], lv[:r], Ev[:, :r]
    scale = max(np.abs(lu).max(), 1e-300)
    if np.abs(lu.imag).max() > imag_tol * scale or \
            np.abs(lv.imag).max() > imag_tol * max(np.abs(lv).max(), 1e-300):
        raise _Retry("complex eigenvalues")
    lu, lv = lu.real, lv.real
    gaps = np.abs(lu[:, None] - lu[None, :])
    np.fill_diagonal(gaps, np.inf)
    if r > 1 and gaps.min() < gap_tol * scale:
        raise _Retry("eigenvalue collision")
    # greedy reciprocal pairing
    cost = np.abs(lu[:, None] * lv[None, :] - 1.0)
    pair = np.full(r, -1)
    for _ in range(r):
        ui, vj = np.unravel_index(np.argmin(cost), cost.shape)
        pair[ui] = vj
        cost[ui, :] = np.inf
        cost[:, vj] = np.inf
    Xu = np.real(Eu)
    Yv = np.real(Ev[:, pair])
    A = khatri_rao(Xu, Yv)
    W = np.linalg.lstsq(A, T.reshape(-1, T.shape[2]), rcond=None)[0].T
    residue = np.abs(lu * lv[pair] - 1.0)
    return CPDecomposition.from_factors(Xu, Yv, W), residue


def jennrich(t, r, seed=0, retries=5, gap_tol=1e-8, imag_tol=1e-8):
    """Decompose a rank-``r`` tensor into ``r`` rank-one components.

    ``t`` may be a ``CoreTensor`` (decomposed in core coordinates and lifted
    through its orthonormal bases, never touching ``n^3`` entries), a
    ``DenseTensor3`` or a plain 3-way array.  Draws whose eigenvalues collide
    or turn complex are retried with fresh contraction vectors.
    """
    rng = make_rng(seed, 30)
    if isinstance(t, CoreTensor):
        T = t.core
        lift = [v.B for v in t.triple]
        n3 = t.n
    else:
        T = np.asarray(t.values if isinstance(t, DenseTensor3) else t, dtype=float)
        lift = None
        n3 = T.shape[2]
    if r > min(T.shape):
        raise ValueError(f"rank {r} exceeds the tensor dimensions {T.shape}")
    last = None
    for attempt in range(retries + 1):
        a, b = _unit(rng, n3), _unit(rng, n3)
        if lift is not None:
            a, b = lift[2].T @ a, lift[2].T @ b
        try:
            cp, residue = _jennrich_attempt(T, r, a, b, gap_tol, imag_tol)
        except (_Retry, DegeneracyError, np.linalg.LinAlgError) as exc:
            last = exc
            log.debug("jennrich attempt %d failed: %s", attempt, exc)
            continue
        if cp.r != r:
            last = DegeneracyError(f"only {cp.r} non-zero components recovered")
            continue
        if lift is not None:
            cp = CPDecomposition(cp.sigmas, lift[0] @ cp.X, lift[1] @ cp.Y, lift[2] @ cp.Z)
        return cp
    raise DegeneracyError(f"Jennrich failed after {retries + 1} draws: {last}")


def jennrich_pairing_residue(t, r, seed=0):
    """``|lambda_u * lambda_v - 1|`` of the matched eigenvalue pairs for one draw."""
    rng = make_rng(seed, 30)
    T = t.core if isinstance(t, CoreTensor) else np.asarray(getattr(t, "values", t), float)
    a, b = _unit(rng, T.shape[2]), _unit(rng, T.shape[2])
    return _jennrich_attempt(T, r, a, b, 1e-8, 1e-8)[1]


# ---------------------------------------------------------------------------
# Component matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    """``perm[i]`` is the estimated component matched to true component ``i``."""

    perm: np.ndarray
    signs: np.ndarray
    errors: np.ndarray

    @property
    def max_error(self):
        return float(self.errors.max())


def match_components(est, truth):
    """Align estimated components with the truth up to permutation and sign.

    Components are assigned by maximising the summed ``|<x,x^>| |<y,y^>| |<z,z^>|``
    (Hungarian algorithm).  Per component the x and y signs follow the inner
    products and the z sign is their product, so the three multiply to +1.
    The error is the largest of the three factor distances and the weight
    error relative to the leading true weight.
    """
    if est.r != truth.r:
        raise ValueError(f"rank mismatch: {est.r} vs {truth.r}")
    sim = np.abs(truth.X.T @ est.X) * np.abs(truth.Y.T @ est.Y) * np.abs(truth.Z.T @ est.Z)
    rows, cols = linear_sum_assignment(-sim)
    perm = cols[np.argsort(rows)]
    signs = np.empty((truth.r, 3))
    errors = np.empty(truth.r)
    for i, e in enumerate(perm):
        sx = 1.0 if truth.X[:, i] @ est.X[:, e] >= 0 else -1.0
        sy = 1.0 if truth.Y[:, i] @ est.Y[:, e] >= 0 else -1.0
        sz = sx * sy
        signs[i] = (sx, sy, sz)
        errors[i] = max(np.linalg.norm(truth.X[:, i] - sx * est.X[:, e]),
                        np.linalg.norm(truth.Y[:, i] - sy * est.Y[:, e]),
                        np.linalg.norm(truth.Z[:, i] - sz * est.Z[:, e]),
                        abs(truth.sigmas[i] - est.sigmas[e]) / truth.sigmas[0])
    return MatchResult(perm, signs, errors)


# ---------------------------------------------------------------------------
# Convex refinement
# ---------------------------------------------------------------------------


def theory_box(n, c, kappa):
    """Box radius ``(c / (10 n kappa))^10``; underflows for any realistic n."""
    return (c / (10.0 * n * kappa)) ** 10


def _dual_directions(F):
    G = F.T @ F
    if np.linalg.cond(G) > 1e12:
        raise DegeneracyError("factor Gram matrix is singular")
    D = F @ np.linalg.inv(G)
    return D / np.linalg.norm(D, axis=0)


@dataclass(frozen=True, eq=False)
class RefinePolytope:
    """Feasible set for the refinement perturbations and the anchor estimate.

    ``y_primes[:, i]`` is the unit vector in ``span(Y^)`` orthogonal to every
    ``y^_j`` with ``j != i`` (likewise ``z_primes``).  Perturbations satisfy
    ``|a_i|_inf, |b_i|_inf, |c_i|_inf <= box`` and ``b_i . y'_i = c_i . z'_i = 0``.
    """

    anchor: CPDecomposition
    box: float
    y_primes: np.ndarray
    z_primes: np.ndarray

    def __post_init__(self):
        for P, F in ((self.y_primes, self.anchor.Y), (self.z_primes, self.anchor.Z)):
            M = P.T @ F
            off = M - np.diag(np.diag(M))
            if np.abs(off).max(initial=0.0) > 1e-10:
                raise DegeneracyError("dual directions are not orthogonal to the other factors")
            resid = P - F @ np.linalg.lstsq(F, P, rcond=None)[0]
            if np.abs(resid).max() > 1e-10 or np.abs(np.linalg.norm(P, axis=0) - 1).max() > 1e-10:
                raise DegeneracyError("dual directions leave the factor span or are not unit")


def build_polytope(est, box=1e-2):
    if box <= 0:
        raise ValueError("box must be positive")
    return RefinePolytope(est, float(box), _dual_directions(est.Y), _dual_directions(est.Z))


def _project_box_hyperplane(v, y, eps):
    """Euclidean projection of ``v`` onto ``{b : |b|_inf <= eps, b . y = 0}`` (``|y| = 1``)."""
    b = v - (y @ v) * y
    if np.abs(b).max() <= eps:
        return b

    def phi(lam):
        return y @ np.clip(v - lam * y, -eps, eps)

    lo, hi = -1.0, 1.0
    while phi(lo) < 0:
        lo *= 2
    while phi(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * max(1.0, abs(mid)):
            break
    lam = 0.5 * (lo + hi)
    w = v - lam * y
    free = np.abs(w) < eps
    if np.any(free & (y != 0)):
        clamped = np.clip(w, -eps, eps)
        num = y[free] @ v[free] + y[~free] @ clamped[~free]
        lam_exact = num / (y[free] @ y[free])
        w2 = v - lam_exact * y
        if np.all(np.abs(w2[free]) <= eps) and np.all(np.abs(w2[~free]) >= eps - 1e-15):
            lam = lam_exact
    return np.clip(v - lam * y, -eps, eps)


class RefineProblem:
    """Observed-residual objective over perturbations ``(A, B, C)`` (each ``n x r``)."""

    def __init__(self, obs, poly):
        self.obs = obs
        self.poly = poly
        cp = poly.anchor
        self.sig = cp.sigmas
        self.X0, self.Y0, self.Z0 = (np.array(M) for M in (cp.X, cp.Y, cp.Z))
        n, m = cp.n, len(obs)
        cols = np.arange(m)
        ones = np.ones(m)
        self.S = [sparse.csr_matrix((ones, (idx, cols)), shape=(n, m))
                  for idx in (obs.i, obs.j, obs.k)]
        self.v = obs.values

    def zero(self):
        return np.zeros((3,) + self.X0.shape)

    def _factors(self, P):
        return self.X0 + P[0], self.Y0 + P[1], self.Z0 + P[2]

    def residual(self, P):
        X, Y, Z = self._factors(P)
        o = self.obs
        return (X[o.i] * Y[o.j] * Z[o.k]) @ self.sig - self.v

    def objective(self, P):
        res = self.residual(P)
        return float(res @ res)

    def gradient(self, P, res=None):
        X, Y, Z = self._factors(P)
        o = self.obs
        res = self.residual(P) if res is None else res
        xi, yj, zk = X[o.i], Y[o.j], Z[o.k]
        w = 2.0 * res[:, None] * self.sig
        return np.stack([self.S[0] @ (w * yj * zk), self.S[1] @ (w * xi * zk),
                         self.S[2] @ (w * xi * yj)])

    def jvp(self, P, D):
        X, Y, Z = self._factors(P)
        o = self.obs
        xi, yj, zk = X[o.i], Y[o.j], Z[o.k]
        t = D[0][o.i] * yj * zk + xi * D[1][o.j] * zk + xi * yj * D[2][o.k]
        return t @ self.sig

    def vjp(self, P, u):
        X, Y, Z = self._factors(P)
        o = self.obs
        xi, yj, zk = X[o.i], Y[o.j], Z[o.k]
        w = u[:, None] * self.sig
        return np.stack([self.S[0] @ (w * yj * zk), self.S[1] @ (w * xi * zk),
                         self.S[2] @ (w * xi * yj)])

    def project(self, P):
        eps = self.poly.box
        out = np.empty_like(P)
        out[0] = np.clip(P[0], -eps, eps)
        for slot, duals in ((1, self.poly.y_primes), (2, self.poly.z_primes)):
            for l in range(P.shape[2]):
                out[slot][:, l] = _project_box_hyperplane(P[slot][:, l], duals[:, l], eps)
        return out

    def lipschitz(self, P, iters=50, seed=0):
        """``2 * lambda_max(J^T J)`` of the Gauss-Newton model at ``P``."""
        rng = make_rng(seed, 40)
        d = rng.standard_normal(P.shape)
        d /= np.linalg.norm(d)
        lam = 0.0
        for _ in range(iters):
            w = self.vjp(P, self.jvp(P, d))
            lam = float(np.linalg.norm(w))
            if lam == 0:
                break
            d = w / lam
        return 2.0 * lam

    def to_cp(self, P):
        X, Y, Z = self._factors(P)
        return CPDecomposition.from_factors(X, Y, Z, self.sig)


@dataclass
class RefineInfo:
    iterations: int
    converged: bool
    objective: list = field(default_factory=list)
    hit_box: bool = False
    lipschitz: float = 0.0


def convex_refine(obs, poly, max_iter=20000, tol=1e-10, lipschitz_safety=1.0,
                  return_info=False, raise_on_fail=False):
    """Projected gradient descent on the observed residual over the polytope.

    The step is ``1/L`` with ``L`` from power iteration on the Gauss-Newton
    Hessian at the anchor; ``L`` doubles whenever a step would increase the
    objective, so the objective never rises.  Stops when the gradient-mapping
    norm falls below ``tol`` times its initial value (or the residual vanishes).
    """
    prob = RefineProblem(obs, poly)
    P = prob.zero()
    L = max(prob.lipschitz(P) * lipschitz_safety, 1e-300)
    res = prob.residual(P)
    f = float(res @ res)
    info = RefineInfo(0, False, [f], lipschitz=L)
    floor = 1e-30 * float(obs.values @ obs.values)
    gm0 = None
    for it in range(1, max_iter + 1):
        g = prob.gradient(P, res)
        while True:
            Pn = prob.project(P - g / L)
            rn = prob.residual(Pn)
            fn = float(rn @ rn)
            if fn <= f or L > 1e300:
                break
            L *= 2.0
        gm = L * np.linalg.norm(Pn - P)
        if gm0 is None:
            gm0 = max(gm, 1e-300)
        P, res, f = Pn, rn, fn
        info.objective.append(f)
        info.iterations = it
        if f <= floor or gm <= tol * gm0:
            info.converged = True
            break
    info.lipschitz = L
    info.hit_box = bool(np.abs(P).max() >= poly.box * (1 - 1e-9))
    if info.hit_box:
        log.warning("refinement reached the box boundary; the anchor may be too far off")
    if not info.converged:
        msg = f"refinement did not converge in {max_iter} iterations (objective {f:.3g})"
        if raise_on_fail:
            raise ConvergenceError(msg)
        log.warning(msg)
    cp = prob.to_cp(P)
    return (cp, info) if return_info else cp


# ---------------------------------------------------------------------------
# Core file I/O
# ---------------------------------------------------------------------------


def write_core(core, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{core.n} {core.r}\n")
        np.savetxt(fh, core.core.reshape(1, -1), fmt="%.17g")
        for v in core.triple:
            np.savetxt(fh, v.B.T, fmt="%.17g")


def read_core(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        n, r = (int(x) for x in lines[0].split())
    except (ValueError, IndexError):
        raise ObservationFormatError("core file header must be 'n r'", 1) from None
    if len(lines) != 2 + 3 * r:
        raise ObservationFormatError(f"expected {2 + 3 * r} non-empty lines, found {len(lines)}")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            vals = np.array([float(x) for x in ln.split()])
        except ValueError:
            raise ObservationFormatError(f"cannot parse {ln[:40]!r}", lineno) from None
        want = r ** 3 if lineno == 2 else n
        if vals.size != want:
            raise ObservationFormatError(f"expected {want} values, got {vals.size}", lineno)
        rows.append(vals)
    cols = np.array(rows[1:])
    bases = [SubspaceBasis(cols[s * r:(s + 1) * r].T) for s in range(3)]
    return CoreTensor(SubspaceTriple(*bases), rows[0].reshape(r, r, r))
