"""Bernoulli-sampled observation sets, sample splitting and the text file format.

File format (UTF-8, whitespace separated)::

    n1 n2 n3 p count
    i j k value        # count lines, 0-based indices

Floats are written with 17 significant digits so a write/read round trip is
bit-exact.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .exceptions import BudgetError, ObservationFormatError
from .tensor_core import CPDecomposition, DenseTensor3

_PROB_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Revealed entries of an ``n1 x n2 x n3`` tensor, sorted by linear index.

    Unobserved entries are absent, never stored as zeros.  ``p`` is the
    per-entry reveal probability the set was drawn with; ``seed`` is recorded
    for provenance and does not take part in equality.
    """

    dims: tuple
    p: float
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        idx = [np.asarray(a, dtype=np.int64).reshape(-1) for a in (self.i, self.j, self.k)]
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if not (0 < self.p <= 1 or (self.p == 0 and vals.size == 0)):
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if not all(a.size == vals.size for a in idx):
            raise ValueError("index and value arrays must have equal length")
        for a, d, name in zip(idx, dims, "ijk"):
            if a.size and (a.min() < 0 or a.max() >= d):
                raise ValueError(f"index {name} out of range [0, {d})")
        if not np.all(np.isfinite(vals)):
            raise ValueError("observed values must be finite")
        lin = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if lin.size > 1 and np.any(lin[1:] == lin[:-1]):
            raise ValueError("duplicate (i, j, k) entries")
        for name, a in zip("ijk", idx):
            a = a[order]
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        vals = vals[order]
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "p", float(self.p))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return (self.dims == other.dims and self.p == other.p
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("i", "j", "k", "values")))

    __hash__ = None

    @property
    def n(self):
        return self.dims[0]

    @property
    def linear_index(self):
        n1, n2, n3 = self.dims
        return (self.i * n2 + self.j) * n3 + self.k

    @property
    def entries(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.k.tolist(), self.values.tolist()))

    def subset(self, mask, p, seed=None):
        return ObservationSet(self.dims, p, self.i[mask], self.j[mask], self.k[mask],
                              self.values[mask], seed)

    def with_values(self, values, seed=None):
        return ObservationSet(self.dims, self.p, self.i, self.j, self.k, values,
                              self.seed if seed is None else seed)

    def mode_indices(self, mode):
        """``(row, col_a, col_b)`` index arrays for the unfolding along ``mode``."""
        return {"x": (self.i, self.j, self.k), "y": (self.j, self.k, self.i),
                "z": (self.k, self.i, self.j)}[mode]


@dataclass(frozen=True)
class SamplingPlan:
    """Probability budget for the three-stage exact completion pipeline."""

    p: float
    p1: float
    p2: float
    p3: float
    k: int = 1
    p_prime: float | None = None

    def __post_init__(self):
        if self.p_prime is None:
            object.__setattr__(self, "p_prime", self.p2 / self.k)
        for name in ("p", "p1", "p2", "p3", "p_prime"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise BudgetError(f"{name}={v} outside [0, 1]")
        if self.p1 + self.p2 + self.p3 > self.p * (1 + _PROB_SLACK):
            raise BudgetError(f"p1 + p2 + p3 = {self.p1 + self.p2 + self.p3} exceeds p = {self.p}")
        if self.k < 1 or self.k * self.p_prime > self.p2 * (1 + _PROB_SLACK):
            raise BudgetError(f"k * p_prime = {self.k * self.p_prime} exceeds p2 = {self.p2}")


def _source_values(t, i, j, k):
    if isinstance(t, (CPDecomposition, DenseTensor3)):
        return t.entries(i, j, k)
    return np.asarray(t)[i, j, k]


def sample(t, p, seed):
    """Reveal each entry of ``t`` independently with probability ``p``.

    Implemented as a binomial count followed by a uniform subset of that size,
    which has exactly the Bernoulli product law and never enumerates the
    ``n^3`` cube.
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    dims = tuple(t.dims) if hasattr(t, "dims") else np.asarray(t).shape
    n1, n2, n3 = dims
    total = n1 * n2 * n3
    rng = make_rng(seed, 0)
    if p == 1:
        lin = np.arange(total, dtype=np.int64)
    else:
        m = int(rng.binomial(total, p))
        lin = np.sort(rng.choice(total, size=m, replace=False)).astype(np.int64)
    i, rem = np.divmod(lin, n2 * n3)
    j, k = np.divmod(rem, n3)
    return ObservationSet(dims, p, i, j, k, _source_values(t, i, j, k), seed)


def sample_count(t, num_obs, seed):
    """``sample`` at ``p = num_obs / n^3`` (the experiments' parametrisation)."""
    n1, n2, n3 = t.dims
    return sample(t, min(1.0, num_obs / (n1 * n2 * n3)), seed)


def split(obs, p1, p2, seed):
    """Split one Bernoulli(p) sample into independent Bernoulli(p1), Bernoulli(p2) samples.

    Each observed entry goes to the first output only with probability
    ``(p1 - p1 p2)/p``, to the second only with ``(p2 - p1 p2)/p``, to both
    with ``p1 p2 / p`` and to neither otherwise.
    """
    p = obs.p
    if p1 < 0 or p2 < 0 or p1 + p2 > p * (1 + _PROB_SLACK):
        raise BudgetError(f"p1 + p2 = {p1 + p2} exceeds the sample's p = {p}")
    only1 = (p1 - p1 * p2) / p
    only2 = (p2 - p1 * p2) / p
    both = p1 * p2 / p
    u = make_rng(seed, 1).random(len(obs))
    in1 = (u < only1) | ((u >= only1 + only2) & (u < only1 + only2 + both))
    in2 = u >= only1
    in2 &= u < only1 + only2 + both
    return obs.subset(in1, p1, seed), obs.subset(in2, p2, seed)


def split_k(obs, k, p_prime, seed):
    """``k`` pairwise independent Bernoulli(p_prime) samples by iterated splitting."""
    if k < 1:
        raise ValueError("k must be positive")
    if k * p_prime > obs.p * (1 + _PROB_SLACK):
        raise BudgetError(f"k * p_prime = {k * p_prime} exceeds p = {obs.p}")
    out = []
    rest = obs
    for t in range(k - 1):
        piece, rest = split(rest, p_prime, (k - 1 - t) * p_prime,
                            int(make_rng(seed, 2, t).integers(2 ** 62)))
        out.append(piece)
    last, _ = split(rest, p_prime, 0.0, int(make_rng(seed, 2, k).integers(2 ** 62)))
    out.append(last)
    return out


def subsample(obs, fraction, seed):
    """Uniformly random subset of ``round(fraction * len(obs))`` observations."""
    m = len(obs)
    keep = int(round(fraction * m))
    mask = np.zeros(m, dtype=bool)
    mask[make_rng(seed, 3).choice(m, size=keep, replace=False)] = True
    return obs.subset(mask, obs.p * fraction, seed)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def write_observations(obs, path):
    n1, n2, n3 = obs.dims
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n1} {n2} {n3} {obs.p:.17g} {len(obs)}\n")
        if len(obs):
            body = np.empty(len(obs), dtype=[("i", "i8"), ("j", "i8"), ("k", "i8"), ("v", "f8")])
            body["i"], body["j"], body["k"], body["v"] = obs.i, obs.j, obs.k, obs.values
            np.savetxt(fh, body, fmt="%d %d %d %.17g")


def read_observations(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_observations(text)


def parse_observations(text):
    lines = text.splitlines()
    if not lines:
        raise ObservationFormatError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5:
        raise ObservationFormatError(f"header needs 'n1 n2 n3 p count', got {lines[0]!r}", 1)
    try:
        dims = tuple(int(x) for x in head[:3])
        p = float(head[3])
        count = int(head[4])
    except ValueError as exc:
        raise ObservationFormatError(f"bad header: {exc}", 1) from None
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != count:
        raise ObservationFormatError(f"header announces {count} entries, found {len(body)}",
                                     len(body) + 2 if len(body) > count else len(lines) + 1)
    idx = np.empty((count, 3), dtype=np.int64)
    vals = np.empty(count)
    try:
        if count:
            arr = np.loadtxt(io.StringIO("\n".join(body)), ndmin=2, dtype=float)
            if arr.shape != (count, 4):
                raise ValueError
            idx[:] = arr[:, :3].astype(np.int64)
            if not np.array_equal(idx, arr[:, :3]):
                raise ValueError
            vals[:] = arr[:, 3]
    except ValueError:
        for lineno, ln in enumerate(body, start=2):
            parts = ln.split()
            if len(parts) != 4:
                raise ObservationFormatError(f"expected 'i j k value', got {ln!r}", lineno)
            try:
                idx[lineno - 2] = [int(x) for x in parts[:3]]
                vals[lineno - 2] = float(parts[3])
            except ValueError:
                raise ObservationFormatError(f"cannot parse {ln!r}", lineno) from None
    for col, d, name in zip(idx.T, dims, "ijk"):
        bad = np.flatnonzero((col < 0) | (col >= d))
        if bad.size:
            raise ObservationFormatError(f"index {name}={col[bad[0]]} outside [0, {d})",
                                         int(bad[0]) + 2)
    try:
        return ObservationSet(dims, p, idx[:, 0], idx[:, 1], idx[:, 2], vals)
    except ValueError as exc:
        raise ObservationFormatError(str(exc)) from None
