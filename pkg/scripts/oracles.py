"""Brute-force reference values frozen into the test-suite.

Everything here uses explicit loops or dense NumPy on tiny inputs drawn from
``np.random.default_rng`` and never imports ``tensorcomp``, so the frozen
numbers are independent of the package's own code paths.  Run with
``python scripts/oracles.py`` and paste the printout into the tests when an
input recipe changes.
"""

import itertools

import numpy as np


def unit_cols(M):
    return M / np.linalg.norm(M, axis=0)


def cp_dense(s, X, Y, Z):
    n = X.shape[0]
    T = np.zeros((n, n, n))
    for a, b, c in itertools.product(range(n), repeat=3):
        T[a, b, c] = sum(s[l] * X[a, l] * Y[b, l] * Z[c, l] for l in range(len(s)))
    return T


def random_cp(rng, n, r):
    return np.sort(rng.uniform(0.5, 2.0, r))[::-1], *(unit_cols(rng.standard_normal((n, r)))
                                                     for _ in range(3))


def nmse_pair():
    rng = np.random.default_rng(101)
    A, B = random_cp(rng, 5, 2), random_cp(rng, 5, 2)
    Ta, Tb = cp_dense(*A), cp_dense(*B)
    return np.sqrt(np.sum((Ta - Tb) ** 2) / np.sum(Tb ** 2))


def kron_entry_sum():
    rng = np.random.default_rng(102)
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((2, 2))
    K = np.zeros((6, 4))
    for i, j, k, l in itertools.product(range(3), range(2), range(2), range(2)):
        K[i * 2 + k, j * 2 + l] = A[i, j] * B[k, l]
    return K


def incoherence_oracle():
    rng = np.random.default_rng(103)
    B = np.linalg.qr(rng.standard_normal((100, 3)))[0]
    P = B @ B.T
    return max(np.linalg.norm(P[:, i]) ** 2 for i in range(100)) * 100 / 3


def bhat_oracle():
    """Dense zero-fill formula for one n=15, p1=0.4 instance, mode x."""
    rng = np.random.default_rng(104)
    n, p1 = 15, 0.4
    T = rng.standard_normal((n, n, n))
    mask = rng.random((n, n, n)) < p1
    U = np.where(mask, T, 0.0).reshape(n, n * n)
    G = U @ U.T
    B = G / p1 ** 2
    B[np.diag_indices(n)] = np.diag(G) / p1
    return B


def row_ls_oracle():
    rng = np.random.default_rng(105)
    Bs = rng.standard_normal((9, 40))
    u = rng.standard_normal(40)
    return np.linalg.pinv(Bs.T) @ u


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    print("nmse_pair", repr(nmse_pair()))
    print("kron_entry_sum", repr(kron_entry_sum().sum()), repr(kron_entry_sum()[4, 3]))
    print("incoherence", repr(incoherence_oracle()))
    B = bhat_oracle()
    print("bhat trace", repr(np.trace(B)), "bhat[3,7]", repr(B[3, 7]))
    print("row_ls", repr(row_ls_oracle()[:3].tolist()))
