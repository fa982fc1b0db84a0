"""Shared constructions for the test modules."""

import numpy as np

from tensorcomp.tensor_core import CPDecomposition, SubspaceBasis, SubspaceTriple


def tilt(V, angle, rng):
    """A basis at exactly ``angle`` (sine of every principal angle) from ``V``."""
    B = V.B
    G = rng.standard_normal(B.shape)
    G -= B @ (B.T @ G)
    Q = np.linalg.qr(G)[0]
    c = np.sqrt(1 - angle ** 2)
    return SubspaceBasis(c * B + angle * Q)


def tilted_triple(cp, angle, rng):
    return SubspaceTriple(*(tilt(v, angle, rng) for v in SubspaceTriple.from_cp(cp)))


def perturb_cp(cp, scale, rng):
    """``cp`` with every factor entry moved by ``scale`` times a standard normal."""
    X, Y, Z = (M + scale * rng.standard_normal(M.shape) for M in (cp.X, cp.Y, cp.Z))
    return CPDecomposition.from_factors(X, Y, Z, cp.sigmas)
