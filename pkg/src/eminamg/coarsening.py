"""Strength of connection, PMIS C/F splitting and pattern expansion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import as_csr

COARSE = 1
FINE = 0


@dataclass
class StrengthGraph:
    """Symmetric strong-coupling graph (unit values, no diagonal)."""

    S: sp.csr_matrix
    theta: float

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self.S.indices[self.S.indptr[i]:self.S.indptr[i + 1]]


@dataclass
class CfSplitting:
    labels: np.ndarray  # COARSE / FINE per node
    f_list: np.ndarray = field(init=False)
    c_list: np.ndarray = field(init=False)
    fine_local: np.ndarray = field(init=False)
    coarse_local: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.c_list = np.flatnonzero(self.labels == COARSE)
        self.f_list = np.flatnonzero(self.labels == FINE)
        n = self.labels.shape[0]
        self.fine_local = np.full(n, -1, dtype=np.int64)
        self.fine_local[self.f_list] = np.arange(self.f_list.size)
        self.coarse_local = np.full(n, -1, dtype=np.int64)
        self.coarse_local[self.c_list] = np.arange(self.c_list.size)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def nc(self) -> int:
        return self.c_list.size

    @property
    def nf(self) -> int:
        return self.f_list.size

    @property
    def is_fine(self) -> np.ndarray:
        return self.labels == FINE


class NearKernel:
    """Dense basis ``V`` (n x m) of low-energy modes."""

    def __init__(self, V, check: bool = True):
        V = np.asarray(V, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        self.V = V
        if check and V.shape[0] > 0:
            s = np.linalg.svd(V, compute_uv=False)
            if s[0] == 0.0 or s[-1] / s[0] <= 1e-12:
                raise ValueError("near-kernel columns are linearly dependent")

    @property
    def m(self) -> int:
        return self.V.shape[1]

    def __len__(self):
        return self.V.shape[0]


def strength_of_connection(A, theta: float = 0.25) -> StrengthGraph:
    """Classical test ``|a_ij| >= theta * max_{k != i} |a_ik|``, union-symmetrized."""
    if not 0.0 <= theta < 1.0:
        raise ValueError("theta must lie in [0, 1)")
    A = as_csr(A)
    n = A.shape[0]
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    offd = (rows != A.indices) & (A.data != 0.0)
    mag = np.where(offd, np.abs(A.data), 0.0)
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, rows, mag)
    strong = offd & (mag >= theta * rowmax[rows])
    S = sp.csr_matrix((np.ones(np.count_nonzero(strong)), (rows[strong], A.indices[strong])),
                      shape=(n, n))
    S = ((S + S.T) > 0).astype(np.float64).tocsr()
    S.sort_indices()
    return StrengthGraph(S=S, theta=theta)


def cf_split_pmis(S: StrengthGraph, seed: int | np.random.Generator = 42) -> CfSplitting:
    """PMIS coarse-point selection on the strong graph.

    Weights are strong degree plus a uniform(0, 1) draw; ties are broken by
    node index. Nodes without strong neighbours become COARSE.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    G = S.S
    n = G.shape[0]
    deg = np.diff(G.indptr).astype(np.float64)
    weight = deg + rng.uniform(0.0, 1.0, size=n)
    src = np.repeat(np.arange(n), np.diff(G.indptr))
    dst = G.indices
    # (weight, index) lexicographic order as a single rank
    order = np.lexsort((np.arange(n), weight))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    labels = np.full(n, -1, dtype=np.int8)
    while True:
        undecided = labels < 0
        if not undecided.any():
            break
        live = undecided[src] & undecided[dst]
        beaten = np.zeros(n, dtype=bool)
        beaten[src[live & (rank[dst] > rank[src])]] = True
        new_c = undecided & ~beaten
        labels[new_c] = COARSE
        hit = new_c[src] & (labels[dst] < 0)
        labels[dst[hit]] = FINE
    return CfSplitting(labels)


def split_near_kernel(V: NearKernel, cf: CfSplitting):
    """Row blocks ``(V_f, V_c)`` following ``cf.f_list`` and ``cf.c_list``."""
    return V.V[cf.f_list], V.V[cf.c_list]


def merge_near_kernel(V_f: np.ndarray, V_c: np.ndarray, cf: CfSplitting) -> np.ndarray:
    out = np.empty((cf.n, V_c.shape[1] if V_c.ndim == 2 else V_f.shape[1]))
    out[cf.f_list] = V_f
    out[cf.c_list] = V_c
    return out


def injection_pattern(cf: CfSplitting) -> sp.csr_matrix:
    """Unit n x nc pattern with identity C-rows and empty F-rows."""
    n, nc = cf.n, cf.nc
    return sp.csr_matrix((np.ones(nc), (cf.c_list, np.arange(nc))), shape=(n, nc))


def expand_pattern(S: StrengthGraph, P0_pattern: sp.csr_matrix, k: int,
                   cf: CfSplitting | None = None) -> sp.csr_matrix:
    """Pattern of ``(S + I)^k P0`` on F-rows; C-rows stay identity.

    ``cf`` identifies the C-rows; without it, rows holding a single unit
    entry are left as they are by construction of the product.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    P = sp.csr_matrix((np.ones(P0_pattern.nnz), P0_pattern.indices, P0_pattern.indptr),
                      shape=P0_pattern.shape)
    if k == 0:
        return P
    SI = (S.S + sp.identity(S.n, format="csr")).tocsr()
    SI.data[:] = 1.0
    M = P
    for _ in range(k):
        M = (SI @ M).tocsr()
        M.data[:] = 1.0
    if cf is None:
        return M
    keep = np.zeros(M.shape[0], dtype=bool)
    keep[cf.f_list] = True
    M = sp.diags(keep.astype(np.float64)) @ M + injection_pattern(cf)
    M = M.tocsr()
    M.eliminate_zeros()
    M.data[:] = 1.0
    M.sort_indices()
    return M
