"""Half-vectorization maps for symmetric matrices and column stacking.

Ordering used throughout the package: the diagonal ``M_11 .. M_nn`` first,
then the strict upper triangle row by row (``M_12 .. M_1n, M_23 .. M_2n,
..., M_(n-1)n``).  ``vech`` keeps off-diagonal entries as they are while
``vecs`` doubles them, so that ``x' M x == vech(x x') @ vecs(M)``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

SYMMETRY_TOL = 1e-10


@lru_cache(maxsize=None)
def sym_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of the canonical half-vectorization order."""
    if n < 1:
        raise ValueError(f"dimension must be positive, got {n}")
    rows = list(range(n))
    cols = list(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            rows.append(i)
            cols.append(j)
    r = np.array(rows, dtype=np.intp)
    c = np.array(cols, dtype=np.intp)
    r.setflags(write=False)
    c.setflags(write=False)
    return r, c


def sym_dim(n: int) -> int:
    return n * (n + 1) // 2


def _side_from_length(length: int) -> int:
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if sym_dim(n) != length:
        raise ValueError(f"length {length} is not a triangular number n(n+1)/2")
    return n


def _symmetrized(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(M))):
        raise ValueError(f"matrix is not symmetric (max |M - M'| = {asym:.3e})")
    return 0.5 * (M + M.T)


def vech(M) -> np.ndarray:
    """Half-vectorization of a symmetric matrix, off-diagonals taken once."""
    S = _symmetrized(M)
    r, c = sym_indices(S.shape[0])
    return S[r, c]


def vecs(M) -> np.ndarray:
    """Half-vectorization of a symmetric matrix with doubled off-diagonals."""
    S = _symmetrized(M)
    n = S.shape[0]
    r, c = sym_indices(n)
    v = S[r, c].copy()
    v[n:] *= 2.0
    return v


def vecn(M) -> np.ndarray:
    """Column-major stacking of an arbitrary matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return M.copy()
    return M.reshape(-1, order="F")


def unvecs(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`vecs`; off-diagonal coordinates are halved back."""
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = _side_from_length(v.size)
    elif v.size != sym_dim(n):
        raise ValueError(f"expected length {sym_dim(n)} for n={n}, got {v.size}")
    r, c = sym_indices(n)
    M = np.zeros((n, n))
    M[r, c] = v
    M[c, r] = v
    off = r != c
    M[r[off], c[off]] *= 0.5
    M[c[off], r[off]] *= 0.5
    return M


def unvech(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`vech`."""
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = _side_from_length(v.size)
    elif v.size != sym_dim(n):
        raise ValueError(f"expected length {sym_dim(n)} for n={n}, got {v.size}")
    r, c = sym_indices(n)
    M = np.zeros((n, n))
    M[r, c] = v
    M[c, r] = v
    return M


def unvecn(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != rows * cols:
        raise ValueError(f"expected length {rows * cols}, got {v.size}")
    return v.reshape((rows, cols), order="F")


@lru_cache(maxsize=None)
def duplication_matrix(n: int) -> np.ndarray:
    """Matrix ``D`` with ``vecn(M) == D @ vech(M)`` for every symmetric ``M``."""
    r, c = sym_indices(n)
    D = np.zeros((n * n, r.size))
    for k, (i, j) in enumerate(zip(r, c)):
        D[i + j * n, k] = 1.0
        D[j + i * n, k] = 1.0
    D.setflags(write=False)
    return D
