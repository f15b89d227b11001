"""Tentative prolongation by adaptive-distance max-vol interpolation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .coarsening import CfSplitting, NearKernel, StrengthGraph
from .sparse import RANK_TOL, add, as_csr, gather, spmm

RESIDUAL_TOL = 1e-12


class RankDeficient(ValueError):
    """The local constraint block does not have full row rank."""


@dataclass
class ProlongationState:
    """Prolongation ``P = [W; I]`` on a fixed pattern.

    ``pattern`` is the n x nc unit pattern with identity C-rows; ``values``
    holds the F-row nonzeros in row-major order.
    """

    cf: CfSplitting
    pattern: sp.csr_matrix
    values: np.ndarray
    flagged: np.ndarray = None  # bool per fine node, in f_list order
    free: np.ndarray = field(init=False, repr=False)
    row_ptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pat = self.pattern
        fine = self.cf.is_fine
        counts = np.diff(pat.indptr)
        if np.any(counts[self.cf.c_list] != 1) or np.any(
                pat.indices[pat.indptr[self.cf.c_list]] != np.arange(self.cf.nc)):
            raise ValueError("C-rows of the pattern must be the identity")
        row_of = np.repeat(np.arange(pat.shape[0]), counts)
        self.free = np.flatnonzero(fine[row_of])
        self.row_ptr = np.concatenate(([0], np.cumsum(counts[self.cf.f_list])))
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.free.shape:
            raise ValueError(f"expected {self.free.size} values, got {self.values.size}")
        if self.flagged is None:
            self.flagged = np.zeros(self.cf.nf, dtype=bool)

    @classmethod
    def from_rows(cls, cf: CfSplitting, supports, weights, flagged=None):
        """Build from per-F-row coarse supports and weights (``f_list`` order)."""
        n, nc = cf.n, cf.nc
        lengths = np.zeros(n, dtype=np.int64)
        lengths[cf.c_list] = 1
        lengths[cf.f_list] = [len(s) for s in supports]
        indptr = np.concatenate(([0], np.cumsum(lengths)))
        indices = np.empty(indptr[-1], dtype=np.int32)
        data = np.ones(indptr[-1])
        indices[indptr[cf.c_list]] = np.arange(nc)
        for t, i in enumerate(cf.f_list):
            s = np.asarray(supports[t], dtype=np.int64)
            order = np.argsort(s)
            indices[indptr[i]:indptr[i + 1]] = s[order]
            data[indptr[i]:indptr[i + 1]] = np.asarray(weights[t], dtype=np.float64)[order]
        pattern = sp.csr_matrix((np.ones_like(data), indices, indptr), shape=(n, nc))
        fine_pos = np.flatnonzero(np.repeat(cf.is_fine, lengths))
        return cls(cf, pattern, data[fine_pos], flagged)

    @classmethod
    def on_pattern(cls, other: "ProlongationState", pattern: sp.csr_matrix):
        """Copy ``other``'s values onto a larger pattern (zeros elsewhere)."""
        vals = gather(other.to_csr(), pattern)
        return cls(other.cf, pattern, vals[_fine_positions(other.cf, pattern)],
                   other.flagged.copy())

    @property
    def nnz(self) -> int:
        return self.pattern.nnz

    def data_with(self, x: np.ndarray, c_value: float = 1.0) -> np.ndarray:
        """Full CSR data array with F-row entries ``x`` and C-rows ``c_value``."""
        data = np.full(self.pattern.nnz, c_value)
        data[self.free] = x
        return data

    def with_values(self, values) -> "ProlongationState":
        return ProlongationState(self.cf, self.pattern, np.array(values, dtype=np.float64),
                                 self.flagged.copy())

    def to_csr(self, values=None) -> sp.csr_matrix:
        v = self.values if values is None else values
        return sp.csr_matrix((self.data_with(v), self.pattern.indices, self.pattern.indptr),
                             shape=self.pattern.shape)

    def row(self, t: int):
        """(support, values) of the t-th fine row."""
        i = self.cf.f_list[t]
        lo, hi = self.pattern.indptr[i], self.pattern.indptr[i + 1]
        return self.pattern.indices[lo:hi], self.values[self.row_ptr[t]:self.row_ptr[t + 1]]

    @property
    def W(self) -> sp.csr_matrix:
        """F-rows of P as an nf x nc matrix."""
        cols = self.pattern.indices[self.free]
        return sp.csr_matrix((self.values, cols, self.row_ptr),
                             shape=(self.cf.nf, self.cf.nc))

    def constraint_residual(self, V: NearKernel, include_flagged: bool = False) -> float:
        """Relative ``||W V_c - V_f||_F`` over (non-flagged) fine rows."""
        R = self.W @ V.V[self.cf.c_list] - V.V[self.cf.f_list]
        Vf = V.V[self.cf.f_list]
        if not include_flagged:
            R = R[~self.flagged]
            Vf = Vf[~self.flagged]
        den = np.linalg.norm(Vf)
        return float(np.linalg.norm(R) / den) if den > 0 else float(np.linalg.norm(R))


def _fine_positions(cf: CfSplitting, pattern: sp.csr_matrix) -> np.ndarray:
    counts = np.diff(pattern.indptr)
    return np.flatnonzero(np.repeat(cf.is_fine, counts))


@lru_cache(maxsize=256)
def _pairs(n: int):
    return np.triu_indices(n, 1)


def _volume_exchange(C: np.ndarray, budget: int, tol: float):
    """Best block exchange (out-slots, in-columns) of size >= 2 within budget."""
    m, n = C.shape
    if m >= 2:
        # all 2x2 minors C[a,i] C[b,j] - C[a,j] C[b,i] with a < b, i < j
        M = C[:, None, :, None] * C[None, :, None, :]
        vol = np.abs(M - M.transpose(0, 1, 3, 2))
        ra, rb = _pairs(m)
        ci, cj = _pairs(n)
        vol = vol[ra, rb][:, ci, cj]
        a, q = np.unravel_index(np.argmax(vol), vol.shape)
        if vol[a, q] > 1.0 + tol:
            return (int(ra[a]), int(rb[a])), (int(ci[q]), int(cj[q]))
    for k in range(3, m + 1):
        if comb(m, k) * comb(n, k) > budget:
            break
        Js = np.array(list(itertools.combinations(range(m), k)))
        Is = np.array(list(itertools.combinations(range(n), k)))
        minors = C[Js[:, None, :, None], Is[None, :, None, :]]
        vol = np.abs(np.linalg.det(minors))
        a, b = np.unravel_index(np.argmax(vol), vol.shape)
        if vol[a, b] > 1.0 + tol:
            return tuple(Js[a]), tuple(Is[b])
    return None


def max_vol_select(B: np.ndarray, m: int | None = None, tol: float = 1e-9,
                   budget: int = 4096) -> np.ndarray:
    """Pick ``m`` columns of ``B`` whose square block has (locally) maximal |det|.

    Greedy column-pivoted QR gives the starting set. Single-column swaps are
    then applied while one grows |det| by more than ``1 + tol``; once none
    does, block exchanges of 2..m columns are tried whenever their count is
    within ``budget`` (which makes the search exhaustive for small blocks).

    Raises
    ------
    RankDeficient
        If ``B`` has fewer than ``m`` columns or rank below ``m``.
    """
    B = np.asarray(B, dtype=np.float64)
    if m is None:
        m = B.shape[0]
    if B.shape[0] != m:
        raise ValueError("B must have m rows")
    n = B.shape[1]
    if n < m:
        raise RankDeficient(f"{n} columns cannot span {m} constraints")
    _, R, piv = sla.qr(B, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size < m or d[0] == 0.0 or d[m - 1] <= RANK_TOL * d[0]:
        raise RankDeficient("constraint block is rank deficient")
    idx = np.array(piv[:m])
    for _ in range(1000):
        C = np.linalg.solve(B[:, idx], B)
        j, i = np.unravel_index(np.argmax(np.abs(C)), C.shape)
        if abs(C[j, i]) > 1.0 + tol:
            idx[j] = i
            continue
        swap = _volume_exchange(C, budget, tol)
        if swap is None:
            break
        idx[list(swap[0])] = list(swap[1])
    return np.sort(idx)


def _coarse_within(S: StrengthGraph, cf: CfSplitting, i: int, dist: int) -> np.ndarray:
    """Sorted coarse-local indices of nodes within strong distance ``dist`` of ``i``."""
    return _coarse_neighbourhoods(S, cf, np.array([i]), dist)[-1][0]


def _coarse_neighbourhoods(S: StrengthGraph, cf: CfSplitting, rows: np.ndarray, l_max: int):
    """Per distance l = 1..l_max, the coarse neighbourhoods of ``rows`` as lists."""
    n = S.n
    G = (S.S + sp.identity(n, format="csr")).tocsr()
    G.data[:] = 1.0
    R = sp.csr_matrix((np.ones(rows.size), (np.arange(rows.size), rows)), shape=(rows.size, n))
    to_coarse = sp.csr_matrix((np.ones(cf.nc), (cf.c_list, np.arange(cf.nc))), shape=(n, cf.nc))
    out = []
    for _ in range(l_max):
        R = (R @ G).tocsr()
        R.data[:] = 1.0
        N = (R @ to_coarse).tocsr()
        N.sort_indices()
        out.append(np.split(N.indices.astype(np.int64), N.indptr[1:-1]))
    return out


@dataclass
class TentativeReport:
    flagged_rows: list
    distance_histogram: dict


def ptent_setup(S: StrengthGraph, V: NearKernel, cf: CfSplitting, l_max: int = 3):
    """Tentative prolongation that interpolates ``V`` exactly row by row.

    Each fine row looks for coarse nodes at strong distance 1, 2, ... l_max,
    picks the best ``m`` of them by max-vol and solves the square system.
    Rows that never succeed get the least-squares fit over the distance
    ``l_max`` neighbourhood and are flagged.

    Returns
    -------
    (ProlongationState, TentativeReport)
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    Vc = V.V[cf.c_list]
    m = V.m
    nf = cf.nf
    supports = [None] * nf
    weights = [None] * nf
    flagged = np.ones(nf, dtype=bool)
    hist: dict = {}
    hoods = _coarse_neighbourhoods(S, cf, cf.f_list, l_max) if nf else []
    for dist in range(1, l_max + 1):
        for t in np.flatnonzero(flagged):
            N = hoods[dist - 1][t]
            if N.size < m:
                continue
            v = V.V[cf.f_list[t]]
            Bl = Vc[N].T
            try:
                sel = max_vol_select(Bl, m)
            except RankDeficient:
                continue
            w = np.linalg.solve(Bl[:, sel], v)
            if np.linalg.norm(v - Bl[:, sel] @ w) <= RESIDUAL_TOL * np.linalg.norm(v):
                supports[t], weights[t] = N[sel], w
                flagged[t] = False
                hist[dist] = hist.get(dist, 0) + 1
    for t in np.flatnonzero(flagged):
        N = hoods[-1][t]
        v = V.V[cf.f_list[t]]
        w = np.linalg.lstsq(Vc[N].T, v, rcond=None)[0] if N.size else np.zeros(0)
        supports[t], weights[t] = N, w
    state = ProlongationState.from_rows(cf, supports, weights, flagged)
    return state, TentativeReport(flagged_rows=[int(r) for r in cf.f_list[flagged]],
                                  distance_histogram=hist)


def smoothed_prolongation(A, P0, omega: float = 0.7) -> sp.csr_matrix:
    """One weighted-Jacobi step ``P = (I - omega D^-1 A) P0``.

    All rows are smoothed, so the result is a plain CSR matrix rather than a
    ``[W; I]`` prolongation state. The pattern is the structural one of
    ``P0 + A P0``; entries that happen to cancel are kept.
    """
    A = as_csr(A)
    P0 = P0.to_csr() if isinstance(P0, ProlongationState) else as_csr(P0)
    d = A.diagonal()
    if np.any(d == 0.0):
        raise ZeroDivisionError("zero diagonal entry in A")
    if omega == 0.0:
        return P0.copy()
    AP = spmm(sp.diags(omega / d).tocsr() @ A, P0)
    return add(P0, AP, 1.0, -1.0)
