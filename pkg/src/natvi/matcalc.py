"""Structured matrix calculus: vec/vech, commutation, duplication and
elimination operators.

Every operator is available twice: as an explicit dense matrix (for tests and
Fisher diagnostics) and as an index-mapped application that never builds the
O(d^4) matrix (for the optimisation hot path). Storage is column-major with
0-based indices throughout, so ``vec(A)[j * rows + i] == A[i, j]``.
"""
from functools import lru_cache

import numpy as np

__all__ = [
    "as_matrix",
    "vec",
    "unvec",
    "vech",
    "vech_indices",
    "vech_to_lower",
    "vech_to_sym",
    "half_dim",
    "dim_from_half",
    "commutation_matrix",
    "duplication_matrix",
    "elimination_matrix",
    "mp_duplication",
    "n_matrix",
    "kron",
    "bar",
    "dg",
    "apply_commutation",
    "apply_duplication",
    "apply_duplication_transpose",
    "apply_elimination",
    "apply_elimination_transpose",
    "apply_mp_duplication",
    "apply_n",
]


def as_matrix(A, square=False):
    """Validate and return ``A`` as a finite 2-d float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if square and A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def half_dim(d):
    return d * (d + 1) // 2


def dim_from_half(n):
    d = int(round((np.sqrt(8 * n + 1) - 1) / 2))
    if half_dim(d) != n:
        raise ValueError(f"{n} is not a triangular number")
    return d


def vec(A):
    """Stack the columns of ``A`` left to right."""
    return as_matrix(A).reshape(-1, order="F")


def unvec(v, rows, cols=None):
    cols = rows if cols is None else cols
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ValueError(f"vector of length {v.size} cannot fill {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


@lru_cache(maxsize=None)
def _vech_indices(d):
    # np.triu_indices enumerates (r, c), r <= c, row by row; read as (col, row)
    # that is exactly column-major order over the lower triangle.
    cols, rows = np.triu_indices(d)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech_indices(d):
    """Row and column index arrays of the lower triangle in vech order."""
    return _vech_indices(int(d))


def vech(A):
    """Column-stack the lower triangle (diagonal included) of square ``A``."""
    A = as_matrix(A, square=True)
    rows, cols = vech_indices(A.shape[0])
    return A[rows, cols]


def vech_to_lower(h, d=None):
    """Rebuild the lower-triangular matrix whose vech is ``h``."""
    h = np.asarray(h, dtype=float)
    d = dim_from_half(h.size) if d is None else d
    if h.size != half_dim(d):
        raise ValueError(f"half-vector of length {h.size} does not match d={d}")
    T = np.zeros((d, d))
    rows, cols = vech_indices(d)
    T[rows, cols] = h
    return T


def vech_to_sym(h, d=None):
    """Rebuild the symmetric matrix whose vech is ``h``."""
    T = vech_to_lower(h, d)
    return T + np.tril(T, -1).T


# ---------------------------------------------------------------------------
# dense operators
# ---------------------------------------------------------------------------

def commutation_matrix(d):
    """d^2 x d^2 permutation K with K vec(A) = vec(A^T)."""
    _check_dim(d)
    K = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            # A[i, j] sits at j*d+i in vec(A) and at i*d+j in vec(A^T)
            K[i * d + j, j * d + i] = 1.0
    return K


def duplication_matrix(d):
    """d^2 x d(d+1)/2 matrix D with D vech(S) = vec(S) for symmetric S."""
    _check_dim(d)
    D = np.zeros((d * d, half_dim(d)))
    rows, cols = vech_indices(d)
    for k, (i, j) in enumerate(zip(rows, cols)):
        D[j * d + i, k] = 1.0
        D[i * d + j, k] = 1.0
    return D


def elimination_matrix(d):
    """d(d+1)/2 x d^2 matrix L with L vec(A) = vech(A)."""
    _check_dim(d)
    L = np.zeros((half_dim(d), d * d))
    rows, cols = vech_indices(d)
    for k, (i, j) in enumerate(zip(rows, cols)):
        L[k, j * d + i] = 1.0
    return L


def mp_duplication(d):
    """Moore-Penrose inverse D+ = (D^T D)^{-1} D^T of the duplication matrix."""
    D = duplication_matrix(d)
    return np.linalg.solve(D.T @ D, D.T)


def n_matrix(d):
    """Symmetriser N = (K + I)/2, so N vec(A) = vec((A + A^T)/2)."""
    return 0.5 * (commutation_matrix(d) + np.eye(d * d))


def kron(A, B):
    return np.kron(as_matrix(A), as_matrix(B))


def bar(A):
    """Zero the supradiagonal of ``A``."""
    return np.tril(as_matrix(A, square=True))


def dg(A):
    """Zero everything off the diagonal of ``A``."""
    return np.diag(np.diag(as_matrix(A, square=True)))


def _check_dim(d):
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")


# ---------------------------------------------------------------------------
# index-mapped applications
# ---------------------------------------------------------------------------

def apply_commutation(v, d):
    return unvec(v, d).T.reshape(-1, order="F")


def apply_duplication(h, d):
    return vech_to_sym(h, d).reshape(-1, order="F")


def apply_duplication_transpose(v, d):
    """D^T vec(A): diagonal entries once, off-diagonal pairs summed."""
    A = unvec(v, d)
    rows, cols = vech_indices(d)
    out = A[rows, cols].copy()
    off = rows != cols
    out[off] += A[cols[off], rows[off]]
    return out


def apply_elimination(v, d):
    rows, cols = vech_indices(d)
    return unvec(v, d)[rows, cols]


def apply_elimination_transpose(h, d):
    return vech_to_lower(h, d).reshape(-1, order="F")


def apply_mp_duplication(v, d):
    """D+ vec(A) = vech((A + A^T)/2)."""
    A = unvec(v, d)
    rows, cols = vech_indices(d)
    return 0.5 * (A[rows, cols] + A[cols, rows])


def apply_n(v, d):
    A = unvec(v, d)
    return (0.5 * (A + A.T)).reshape(-1, order="F")
