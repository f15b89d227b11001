"""Sparse and small dense linear algebra used by every other module.

Sparse matrices are :class:`scipy.sparse.csr_matrix` objects with sorted
column indices and 64-bit values; this module adds the operations scipy does
not provide with the guarantees we need (structural products that keep
cancelled zeros, products masked to a fixed pattern, deterministic dots).
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels

RANK_TOL = 1e-10

__all__ = [
    "RANK_TOL",
    "as_csr",
    "spmv",
    "spmm",
    "add",
    "gather",
    "masked_spmm",
    "dot",
    "symmetry_error",
    "qr_economy",
    "svd",
    "numerical_rank",
    "mm_read",
    "mm_write",
]


def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float64 CSR matrix (sorted, no duplicates)."""
    A = sp.csr_matrix(A, dtype=np.float64)
    if not A.has_canonical_format:
        A = A.copy()
        A.sum_duplicates()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


def _ones_like(A):
    return sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)


def gather(M: sp.csr_matrix, pattern: sp.csr_matrix) -> np.ndarray:
    """Values of ``M`` at the stored positions of ``pattern`` (0 where absent).

    Both matrices must be in canonical CSR form; the result follows the
    row-major order of ``pattern``.
    """
    if M.shape != pattern.shape:
        raise ValueError("shape mismatch")
    ncols = np.int64(M.shape[1])
    rows_m = np.repeat(np.arange(M.shape[0], dtype=np.int64), np.diff(M.indptr))
    keys_m = rows_m * ncols + M.indices
    rows_p = np.repeat(np.arange(pattern.shape[0], dtype=np.int64), np.diff(pattern.indptr))
    keys_p = rows_p * ncols + pattern.indices
    loc = np.searchsorted(keys_m, keys_p)
    loc_c = np.minimum(loc, max(len(keys_m) - 1, 0))
    hit = (loc < len(keys_m)) & (keys_m[loc_c] == keys_p) if len(keys_m) else np.zeros(len(keys_p), bool)
    out = np.zeros(len(keys_p))
    out[hit] = M.data[loc_c[hit]]
    return out


def spmm(A: sp.csr_matrix, B: sp.csr_matrix) -> sp.csr_matrix:
    """Structural product ``A @ B``.

    The result pattern is the full symbolic product; entries that cancel to
    zero are stored explicitly.
    """
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {B.shape}")
    A = as_csr(A)
    B = as_csr(B)
    pattern = (_ones_like(A) @ _ones_like(B)).tocsr()
    pattern.sort_indices()
    C = (A @ B).tocsr()
    C.sort_indices()
    values = gather(C, pattern)
    return sp.csr_matrix((values, pattern.indices, pattern.indptr), shape=pattern.shape)


def add(A: sp.csr_matrix, B: sp.csr_matrix, alpha: float = 1.0,
        beta: float = 1.0) -> sp.csr_matrix:
    """Structural ``alpha A + beta B``: the pattern is the union of both
    patterns and cancelled entries stay stored."""
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    A = as_csr(A)
    B = as_csr(B)
    pattern = (_ones_like(A) + _ones_like(B)).tocsr()
    pattern.sort_indices()
    values = alpha * gather(A, pattern) + beta * gather(B, pattern)
    return sp.csr_matrix((values, pattern.indices, pattern.indptr), shape=pattern.shape)


def masked_spmm(A: sp.csr_matrix, P: sp.csr_matrix, rows=None, skip=None) -> np.ndarray:
    """Entries of ``A @ P`` at the stored positions of ``P``, without fill.

    Parameters
    ----------
    A : csr_matrix
        n x n operator.
    P : csr_matrix
        n x nc matrix whose pattern is the mask.
    rows : array of int, optional
        Rows of ``P`` to evaluate (default: all). Positions belonging to
        other rows are returned as zero.
    skip : bool array, optional
        Rows ``k`` of ``P`` to leave out of the sum ``sum_k A(i,k) P(k,c)``.

    Returns
    -------
    ndarray
        Values aligned with ``P.data``.
    """
    if A.shape[1] != P.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {P.shape}")
    if rows is None:
        rows = np.arange(P.shape[0])
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= min(A.shape[0], P.shape[0])):
        raise ValueError("row index out of range for A or P")
    if skip is None:
        skip = np.zeros(P.shape[0], dtype=np.bool_)
    out = np.zeros(P.nnz)
    _kernels.masked_product(
        A.indptr, A.indices, A.data, P.indptr, P.indices,
        np.ascontiguousarray(P.data, dtype=np.float64), rows, skip, out,
    )
    return out


def dot(x: np.ndarray, y: np.ndarray) -> float:
    """Inner product with a fixed reduction tree (bitwise reproducible)."""
    return float(_kernels.dot(np.ascontiguousarray(x, dtype=np.float64),
                              np.ascontiguousarray(y, dtype=np.float64)))


def symmetry_error(A: sp.csr_matrix) -> float:
    """max |A(i,j) - A(j,i)| relative to max |A|."""
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return 0.0
    D = (A - A.T).tocsr()
    return (abs(D).max() if D.nnz else 0.0) / scale


def qr_economy(B: np.ndarray, rank_tol: float = RANK_TOL):
    """Householder economy QR of a tall block.

    Returns ``(Q, R, rank)`` where ``rank`` counts diagonal entries of R above
    ``rank_tol`` times the largest one.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise ValueError("expected a 2-D block")
    nrows, ncols = B.shape
    if nrows < ncols:
        raise ValueError(f"qr_economy needs nrows >= ncols, got {B.shape}")
    Q, R = np.linalg.qr(B, mode="reduced")
    d = np.abs(np.diag(R))
    ref = d.max() if d.size else 0.0
    rank = int(np.count_nonzero(d > rank_tol * ref)) if ref > 0 else 0
    return Q, R, rank


def svd(B: np.ndarray, rank_tol: float = RANK_TOL):
    """Thin SVD ``B = U diag(s) V^T`` plus numerical rank."""
    B = np.asarray(B, dtype=np.float64)
    if not np.all(np.isfinite(B)):
        raise ValueError("non-finite entries in block")
    if B.size == 0:
        k = min(B.shape)
        return np.zeros((B.shape[0], k)), np.zeros(k), np.zeros((B.shape[1], k)), 0
    U, s, Vt = sla.svd(B, full_matrices=False, lapack_driver="gesvd")
    return U, s, Vt.T, numerical_rank(s, rank_tol)


def numerical_rank(s: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rank_tol * s[0]))


def mm_read(path) -> sp.csr_matrix | np.ndarray:
    """Read a Matrix Market file.

    Coordinate files come back as CSR (symmetric storage expanded to full);
    array files come back as dense ``ndarray``.
    """
    M = scipy.io.mmread(str(path))
    if sp.issparse(M):
        if np.iscomplexobj(M.data):
            raise ValueError("complex Matrix Market files are not supported")
        return as_csr(M)
    return np.asarray(M, dtype=np.float64)


def mm_write(path, A, symmetric: bool = False) -> None:
    """Write a sparse matrix (coordinate) or dense array (array format).

    Values are written with 17 significant digits, so a round trip is exact.
    """
    if sp.issparse(A):
        A = sp.coo_matrix(A)
    scipy.io.mmwrite(str(path), A, precision=17,
                     symmetry="symmetric" if symmetric else "general")
