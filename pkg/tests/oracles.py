"""Dense reference constructions used only by the tests.

Everything here is assembled explicitly and is meant for small instances
(a few hundred pattern entries at most).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from eminamg.coarsening import NearKernel, cf_split_pmis, expand_pattern, strength_of_connection
from eminamg.emin import emin_setup
from eminamg.tentative import ptent_setup


@dataclass
class Setup:
    A: object
    V: NearKernel
    S: object
    cf: object
    P_hat: object
    proj: object
    P0: object


def build_setup(A, V, theta=0.25, seed=42, k=1, lmax=3) -> Setup:
    V = V if isinstance(V, NearKernel) else NearKernel(V)
    S = strength_of_connection(A, theta)
    cf = cf_split_pmis(S, seed)
    P_hat, _ = ptent_setup(S, V, cf, lmax)
    pattern = expand_pattern(S, P_hat.pattern, k, cf)
    proj, P0 = emin_setup(V, P_hat, pattern)
    return Setup(A, V, S, cf, P_hat, proj, P0)


def positions(state):
    """(fine row, coarse column) of every F-row entry, in P layout order."""
    rows = np.repeat(state.cf.f_list, np.diff(state.row_ptr))
    cols = state.pattern.indices[state.free]
    return rows, cols


def assemble_K(A, state) -> np.ndarray:
    """K[(r,c),(s,d)] = A(r,s) if c == d (both F-rows), else 0."""
    Ad = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    rows, cols = positions(state)
    same = cols[:, None] == cols[None, :]
    return np.where(same, Ad[np.ix_(rows, rows)], 0.0)


def assemble_Bt(V, state) -> np.ndarray:
    """Constraint matrix: row (t, j) holds V_c(c, j) at every entry (t, c)."""
    Vm = V.V if isinstance(V, NearKernel) else V
    Vc = Vm[state.cf.c_list]
    m = Vc.shape[1]
    nf = state.cf.nf
    _, cols = positions(state)
    Bt = np.zeros((nf * m, state.values.size))
    for t in range(nf):
        lo, hi = state.row_ptr[t], state.row_ptr[t + 1]
        Bt[t * m:(t + 1) * m, lo:hi] = Vc[cols[lo:hi]].T
    return Bt


def assemble_ZQ(V, state, rank_tol=1e-10):
    """Block-diagonal orthonormal bases: Z of ker(B^T) and Q of range(B), per row."""
    Vm = V.V if isinstance(V, NearKernel) else V
    Vc = Vm[state.cf.c_list]
    _, cols = positions(state)
    N = state.values.size
    Zc, Qc = [], []
    for t in range(state.cf.nf):
        lo, hi = state.row_ptr[t], state.row_ptr[t + 1]
        Bl = Vc[cols[lo:hi]]
        if hi == lo:
            continue
        U, s, _ = np.linalg.svd(Bl, full_matrices=True)
        k = int(np.count_nonzero(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
        for j in range(U.shape[1]):
            col = np.zeros(N)
            col[lo:hi] = U[:, j]
            (Qc if j < k else Zc).append(col)
    Z = np.array(Zc).T if Zc else np.zeros((N, 0))
    Q = np.array(Qc).T if Qc else np.zeros((N, 0))
    return Z, Q


def sgs_explicit(K: np.ndarray) -> np.ndarray:
    """(L + D)^-T D (L + D)^-1 for the given (block diagonal) matrix."""
    LD = np.tril(K)
    D = np.diag(np.diag(K))
    inv = sla.solve_triangular(LD, np.eye(K.shape[0]), lower=True)
    return inv.T @ D @ inv


def column_order_permutation(state) -> np.ndarray:
    """Permutation from P layout to the column-wise enumeration (by coarse
    column, then fine row)."""
    rows, cols = positions(state)
    return np.lexsort((rows, cols))


def exhaustive_maxvol(B: np.ndarray) -> float:
    m, n = B.shape
    return max(abs(np.linalg.det(B[:, list(c)])) for c in itertools.combinations(range(n), m))


def ideal_prolongation(A, cf) -> np.ndarray:
    """Dense [-A_ff^-1 A_fc; I] in the original row order."""
    Ad = A.toarray()
    f, c = cf.f_list, cf.c_list
    P = np.zeros((cf.n, cf.nc))
    P[f] = -np.linalg.solve(Ad[np.ix_(f, f)], Ad[np.ix_(f, c)])
    P[c] = np.eye(cf.nc)
    return P


def random_spd(n, density, rng, shift=1.0):
    M = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    M = np.triu(M, 1)
    M = M + M.T
    d = np.abs(M).sum(axis=1) + shift
    return M + np.diag(d)
