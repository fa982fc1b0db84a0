"""Synthetic low-rank tensors (uncorrelated and correlated families) and noise.

Factor file format (text)::

    n r
    sigma_1 ... sigma_r
    x_1            # one line per factor column, n values each:
    ...            # x_1..x_r, then y_1..y_r, then z_1..z_r
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .exceptions import ObservationFormatError
from .tensor_core import CPDecomposition

# Mixing weight giving mean inner product 0.88 with the leading factor at
# n = 200; see scripts/calibrate_rho.py (measured 0.8798).
CORRELATED_RHO = 0.88
NOISE_KINDS = ("additive-gaussian-relative",)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise with std ``level * (RMS entry of the truth)``."""

    level: float
    kind: str = "additive-gaussian-relative"

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be non-negative")
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")


def _unit_columns(rng, n, r):
    G = rng.standard_normal((n, r))
    return G / np.linalg.norm(G, axis=0)


def gen_uncorrelated(n, r, seed):
    """All weights 1 and independent uniformly random unit factors."""
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    rng = make_rng(seed, 10)
    X, Y, Z = (_unit_columns(rng, n, r) for _ in range(3))
    return CPDecomposition(np.ones(r), X, Y, Z)


def gen_correlated(n, r, seed, rho=CORRELATED_RHO):
    """Weights ``0.5**(i-1)``; factors ``i > 1`` lean towards the first one.

    For each mode the first factor is uniform on the sphere and every later
    one is ``normalize(rho * f1 + sqrt(1 - rho**2) * g_i)`` with ``g_i`` an
    independent uniform unit vector.
    """
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    rng = make_rng(seed, 11)
    mats = []
    for _ in range(3):
        U = _unit_columns(rng, n, r)
        if r > 1:
            U[:, 1:] = rho * U[:, :1] + np.sqrt(1 - rho ** 2) * U[:, 1:]
            U /= np.linalg.norm(U, axis=0)
        mats.append(U)
    return CPDecomposition(0.5 ** np.arange(r), *mats)


FAMILIES = {"uncorrelated": gen_uncorrelated, "correlated": gen_correlated}


def generate(family, n, r, seed):
    try:
        gen = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}") from None
    return gen(n, r, seed)


def rms_entry(cp):
    """Root-mean-square entry magnitude, from Gram matrices."""
    return cp.frob_norm() / np.sqrt(float(cp.n) ** 3)


def add_noise(obs, spec, truth_scale, seed):
    """Add i.i.d. ``N(0, (level * truth_scale)^2)`` noise to every observed value."""
    if isinstance(spec, (int, float)):
        spec = NoiseSpec(float(spec))
    if spec.level == 0:
        return obs
    g = make_rng(seed, 12).standard_normal(len(obs))
    return obs.with_values(obs.values + spec.level * truth_scale * g)


def write_factors(cp, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{cp.n} {cp.r}\n")
        np.savetxt(fh, cp.sigmas[None, :], fmt="%.17g")
        for M in (cp.X, cp.Y, cp.Z):
            np.savetxt(fh, M.T, fmt="%.17g")


def read_factors(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        n, r = (int(x) for x in lines[0].split())
    except (ValueError, IndexError):
        raise ObservationFormatError("factor file header must be 'n r'", 1) from None
    if len(lines) != 2 + 3 * r:
        raise ObservationFormatError(f"expected {2 + 3 * r} non-empty lines, found {len(lines)}")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            vals = np.array([float(x) for x in ln.split()])
        except ValueError:
            raise ObservationFormatError(f"cannot parse {ln[:40]!r}", lineno) from None
        want = r if lineno == 2 else n
        if vals.size != want:
            raise ObservationFormatError(f"expected {want} values, got {vals.size}", lineno)
        rows.append(vals)
    cols = np.array(rows[1:])
    X, Y, Z = cols[:r].T, cols[r:2 * r].T, cols[2 * r:].T
    return CPDecomposition(rows[0], X, Y, Z)
