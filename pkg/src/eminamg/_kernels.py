"""Compiled CSR kernels.

Every kernel keeps a fixed per-row summation order (A's row order, then P's
row order) so results are bitwise reproducible regardless of thread count.
Row-parallel loops only write to storage owned by their row.
"""

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old; workqueue is always available
numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True)
def _find(cols, lo, hi, c):
    # binary search for c in sorted cols[lo:hi]; -1 if absent
    while lo < hi:
        mid = (lo + hi) >> 1
        v = cols[mid]
        if v < c:
            lo = mid + 1
        elif v > c:
            hi = mid
        else:
            return mid
    return -1


@njit(cache=True, parallel=True)
def masked_product(a_ptr, a_idx, a_val, p_ptr, p_idx, p_val, rows, skip, out):
    """out[pos] = sum_k A(i,k) P(k,c) for every pattern position (i,c) of P
    with i in ``rows``. Terms with skip[k] set are ignored."""
    for t in prange(rows.shape[0]):
        i = rows[t]
        lo = p_ptr[i]
        hi = p_ptr[i + 1]
        for q in range(lo, hi):
            out[q] = 0.0
        for jj in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[jj]
            if skip[k]:
                continue
            v = a_val[jj]
            for kk in range(p_ptr[k], p_ptr[k + 1]):
                pos = _find(p_idx, lo, hi, p_idx[kk])
                if pos >= 0:
                    out[pos] += v * p_val[kk]


@njit(cache=True)
def masked_sgs(a_ptr, a_idx, a_val, p_ptr, p_idx, rows, is_row, x, out):
    """Symmetric Gauss-Seidel with the block diagonal K over the pattern of P.

    Each pattern column c is a block A(I_c, I_c); processing the rows in
    ascending order performs the forward solves of all blocks at once, the
    descending pass performs the backward solves. ``x`` and ``out`` live in
    the full P data layout.
    """
    n = a_ptr.shape[0] - 1
    diag = np.zeros(n)
    for t in range(rows.shape[0]):
        i = rows[t]
        for jj in range(a_ptr[i], a_ptr[i + 1]):
            if a_idx[jj] == i:
                diag[i] = a_val[jj]
    u = np.zeros(out.shape[0])
    # forward: (L + D) u = x
    for t in range(rows.shape[0]):
        i = rows[t]
        lo = p_ptr[i]
        hi = p_ptr[i + 1]
        for q in range(lo, hi):
            u[q] = x[q]
        for jj in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[jj]
            if k >= i or not is_row[k]:
                continue
            v = a_val[jj]
            for kk in range(p_ptr[k], p_ptr[k + 1]):
                pos = _find(p_idx, lo, hi, p_idx[kk])
                if pos >= 0:
                    u[pos] -= v * u[kk]
        d = diag[i]
        for q in range(lo, hi):
            u[q] /= d
    # scale by D, then backward: (D + L^T) z = D u
    for t in range(rows.shape[0] - 1, -1, -1):
        i = rows[t]
        lo = p_ptr[i]
        hi = p_ptr[i + 1]
        d = diag[i]
        for q in range(lo, hi):
            out[q] = d * u[q]
        for jj in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[jj]
            if k <= i or not is_row[k]:
                continue
            v = a_val[jj]
            for kk in range(p_ptr[k], p_ptr[k + 1]):
                pos = _find(p_idx, lo, hi, p_idx[kk])
                if pos >= 0:
                    out[pos] -= v * out[kk]
        for q in range(lo, hi):
            out[q] /= d


@njit(cache=True, parallel=True)
def project_rows(x_ptr, q_ptr, q_cols, q_val, x, out):
    """out_i = x_i - Q_i (Q_i^T x_i) per row block; Q_i stored row-major."""
    nrows = x_ptr.shape[0] - 1
    for t in prange(nrows):
        lo = x_ptr[t]
        nl = x_ptr[t + 1] - lo
        k = q_cols[t]
        base = q_ptr[t]
        for q in range(nl):
            out[lo + q] = x[lo + q]
        for j in range(k):
            s = 0.0
            for q in range(nl):
                s += q_val[base + q * k + j] * x[lo + q]
            for q in range(nl):
                out[lo + q] -= q_val[base + q * k + j] * s


@njit(cache=True)
def gauss_seidel(a_ptr, a_idx, a_val, x, b, forward):
    n = a_ptr.shape[0] - 1
    if forward:
        start, stop, step = 0, n, 1
    else:
        start, stop, step = n - 1, -1, -1
    for i in range(start, stop, step):
        s = b[i]
        d = 0.0
        for jj in range(a_ptr[i], a_ptr[i + 1]):
            j = a_idx[jj]
            if j == i:
                d = a_val[jj]
            else:
                s -= a_val[jj] * x[j]
        x[i] = s / d


@njit(cache=True)
def dot(x, y):
    # fixed-shape pairwise reduction over 256-element leaves
    n = x.shape[0]
    nb = (n + 255) // 256
    partial = np.zeros(max(nb, 1))
    for b in range(nb):
        s = 0.0
        for i in range(b * 256, min(n, (b + 1) * 256)):
            s += x[i] * y[i]
        partial[b] = s
    m = nb
    while m > 1:
        h = (m + 1) // 2
        for b in range(m // 2):
            partial[b] = partial[2 * b] + partial[2 * b + 1]
        if m % 2 == 1:
            partial[m // 2] = partial[m - 1]
        m = h
    return partial[0]
