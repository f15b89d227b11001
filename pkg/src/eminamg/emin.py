"""Constrained energy minimization of the prolongation.

Vectors "in P layout" hold one entry per F-row nonzero of the prolongation
pattern, in row-major order (``ProlongationState.values`` is one of them).
The block diagonal operator K (one block ``A(I_c, I_c)`` per coarse column)
is never formed; its action is the product ``A_ff W`` masked to the pattern.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .coarsening import NearKernel
from .sparse import RANK_TOL, as_csr, dot, gather, masked_spmm, qr_economy, svd
from .tentative import ProlongationState

QR, SVD = "QR", "SVD"
ZERO_GRADIENT = 1e-12


class IndefiniteBreakdown(ArithmeticError):
    """Search direction with nonpositive curvature ``y^T K y``."""


@dataclass
class ConstraintProjector:
    """Block-wise ``I - Q_i Q_i^T`` over the F-rows of the pattern."""

    x_ptr: np.ndarray       # row offsets in P layout
    q_ptr: np.ndarray       # offsets of each row-major Q_i block in q_val
    ranks: np.ndarray       # k_i
    q_val: np.ndarray
    method: np.ndarray      # QR / SVD per row

    @property
    def size(self) -> int:
        return int(self.x_ptr[-1])

    @property
    def nnz(self) -> int:
        return int(self.q_val.size)

    @property
    def svd_rows(self) -> int:
        return int(np.count_nonzero(self.method == SVD))

    def block(self, t: int) -> np.ndarray:
        nl = self.x_ptr[t + 1] - self.x_ptr[t]
        return self.q_val[self.q_ptr[t]:self.q_ptr[t + 1]].reshape(nl, self.ranks[t])

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape[0] != self.size:
            raise ValueError(f"vector of length {x.shape[0]} does not match layout {self.size}")
        out = np.empty_like(x)
        _kernels.project_rows(self.x_ptr, self.q_ptr, self.ranks, self.q_val, x, out)
        return out


def apply_projector(proj: ConstraintProjector, x: np.ndarray) -> np.ndarray:
    return proj.apply(x)


def emin_setup(V: NearKernel, P_hat: ProlongationState, pattern: sp.csr_matrix | None = None,
               rank_tol: float = RANK_TOL):
    """Build the constraint projector and the corrected tentative prolongation.

    For every F-row with support ``J`` the local block is ``V_c[J]``
    (``n_l x m``). Full-rank tall blocks use an economy QR and the least-norm
    correction ``Q R^-T r``; short or rank-deficient blocks use a truncated
    SVD with the least-squares correction ``U S^+ V^T r``.

    Returns
    -------
    (ConstraintProjector, ProlongationState)
    """
    state = P_hat if pattern is None else ProlongationState.on_pattern(P_hat, pattern)
    cf = state.cf
    Vc = V.V[cf.c_list]
    m = V.m
    nf = cf.nf
    values = state.values.copy()
    violated = np.zeros(nf, dtype=bool)
    ranks = np.zeros(nf, dtype=np.int64)
    method = np.empty(nf, dtype=object)
    blocks = []
    cols = state.pattern.indices
    indptr = state.pattern.indptr
    for t, i in enumerate(cf.f_list):
        J = cols[indptr[i]:indptr[i + 1]]
        lo, hi = state.row_ptr[t], state.row_ptr[t + 1]
        Bl = Vc[J]
        r = V.V[i] - Bl.T @ values[lo:hi]
        nl = J.size
        done = False
        if nl >= m:
            Q, R, rank = qr_economy(Bl, rank_tol)
            if rank == m:
                delta = Q @ np.linalg.solve(R.T, r)
                method[t] = QR
                done = True
        if not done:
            U, s, W, k = svd(Bl, rank_tol)
            Q = U[:, :k]
            # least-squares solution of Bl^T delta = r
            delta = Q @ ((W[:, :k].T @ r) / s[:k]) if k else np.zeros(nl)
            method[t] = SVD
        values[lo:hi] += delta
        v = V.V[i]
        violated[t] = np.linalg.norm(Bl.T @ values[lo:hi] - v) > 1e-10 * (1.0 + np.linalg.norm(v))
        ranks[t] = Q.shape[1]
        blocks.append(np.ascontiguousarray(Q).ravel())
    sizes = np.array([b.size for b in blocks], dtype=np.int64)
    q_ptr = np.concatenate(([0], np.cumsum(sizes)))
    q_val = np.concatenate(blocks) if blocks else np.zeros(0)
    proj = ConstraintProjector(state.row_ptr.astype(np.int64), q_ptr, ranks, q_val,
                               method.astype(str) if nf else np.zeros(0, dtype=str))
    P0 = ProlongationState(cf, state.pattern, values, violated)
    return proj, P0


def _zero_c_data(state: ProlongationState, x: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix((state.data_with(x, 0.0), state.pattern.indices, state.pattern.indptr),
                         shape=state.pattern.shape)


def apply_K(A, state: ProlongationState, x: np.ndarray) -> np.ndarray:
    """``K x`` for ``x`` in P layout: ``A_ff X`` masked to the pattern."""
    X = _zero_c_data(state, x)
    out = masked_spmm(A, X, rows=state.cf.f_list, skip=~state.cf.is_fine)
    return out[state.free]


def rhs_f(A, state: ProlongationState) -> np.ndarray:
    """``-A(r, c)`` at every F-row pattern position (r, c)."""
    A = as_csr(A)
    Afc = A[:, state.cf.c_list].tocsr()
    Afc.sort_indices()
    return -gather(Afc, state.pattern)[state.free]


def _row_diag(A, state: ProlongationState) -> np.ndarray:
    d = as_csr(A).diagonal()[state.cf.f_list]
    if np.any(d == 0.0):
        raise ZeroDivisionError("zero diagonal entry in A")
    return np.repeat(d, np.diff(state.row_ptr))


def precond_jacobi(A, state: ProlongationState, r: np.ndarray, diag=None) -> np.ndarray:
    """Row-wise scaling by ``1 / A(i, i)`` (the exact diagonal of K)."""
    d = _row_diag(A, state) if diag is None else diag
    return r / d


def precond_block_sgs(A, state: ProlongationState, r: np.ndarray,
                      proj: ConstraintProjector | None = None) -> np.ndarray:
    """``(L+D)^-T D (L+D)^-1 r`` over K's column blocks, then projected."""
    A = as_csr(A)
    x = state.data_with(r, 0.0)
    out = np.zeros_like(x)
    _kernels.masked_sgs(A.indptr, A.indices, A.data, state.pattern.indptr,
                        state.pattern.indices, state.cf.f_list.astype(np.int64),
                        state.cf.is_fine, x, out)
    z = out[state.free]
    return proj.apply(z) if proj is not None else z


def energy_of(A, P) -> float:
    """``tr(P^T A P)`` as the sum over columns of ``p_j^T A p_j``."""
    P = P.to_csr() if isinstance(P, ProlongationState) else as_csr(P)
    A = as_csr(A)
    AP = (A @ P).tocsr()
    AP.sort_indices()
    Ps = P.copy()
    Ps.sort_indices()
    return dot(Ps.data, gather(AP, Ps))


@dataclass
class EminConfig:
    maxit: int = 10
    tau: float = 0.1
    precond: str = "jacobi"   # "jacobi" | "sgs"
    pattern_distance: int = 1
    debug: bool = False
    use_tau: bool = True      # False: always run maxit steps (fixed-count variants)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.maxit < 1:
            raise ValueError("maxit must be >= 1")
        if self.precond not in ("jacobi", "sgs"):
            raise ValueError(f"unknown preconditioner {self.precond!r}")


@dataclass
class EminReport:
    n_it_E: int = 0
    dE: list = field(default_factory=list)
    dE_rel: list = field(default_factory=list)
    energy_initial: float = 0.0
    energy_final: float = 0.0
    constraint_residual: float = 0.0
    time_seconds: float = 0.0
    svd_rows: int = 0
    stop: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def emin_pcg(cfg: EminConfig, A, P0: ProlongationState, proj: ConstraintProjector,
             V: NearKernel | None = None, callback=None):
    """Restricted PCG on ``Pi K Pi dw = Pi (f - K w0)`` starting from ``dw = 0``.

    Each step's energy decrease is ``gamma * alpha``; the loop stops before
    applying a step whose decrease falls below ``tau`` times the first one
    (unless ``cfg.use_tau`` is off), or after ``cfg.maxit`` steps.
    ``callback(k, w)`` sees the weights after every applied step.

    Returns
    -------
    (ProlongationState, EminReport)
    """
    t0 = time.perf_counter()
    A = as_csr(A)
    w0 = P0.values
    diag = _row_diag(A, P0)
    if cfg.precond == "jacobi":
        def precond(r):
            z = r / diag
            if cfg.debug:
                zp = proj.apply(z)
                assert np.linalg.norm(zp - z) <= 1e-12 * max(np.linalg.norm(z), 1e-300)
            return z
    else:
        def precond(r):
            return precond_block_sgs(A, P0, r, proj)

    report = EminReport(energy_initial=energy_of(A, P0), svd_rows=proj.svd_rows)
    f, Kw0 = rhs_f(A, P0), apply_K(A, P0, w0)
    r = proj.apply(f - Kw0)
    # gradient at roundoff level: P0 is already optimal on its pattern
    stalled = np.linalg.norm(r) <= ZERO_GRADIENT * (np.linalg.norm(f) + np.linalg.norm(Kw0))
    dw = np.zeros_like(w0)
    y = np.zeros_like(w0)
    gamma_old = 1.0
    dE1 = None
    for k in range(1, cfg.maxit + 1):
        z = precond(r)
        gamma = dot(r, z)
        if not np.isfinite(gamma):
            raise FloatingPointError("non-finite residual in energy minimization")
        if k == 1:
            gamma1 = gamma
            y = z.copy()
        elif gamma <= ZERO_GRADIENT ** 2 * gamma1:
            report.stop = "converged"
            break
        else:
            y = z + (gamma / gamma_old) * y
        gamma_old = gamma
        if k == 1 and (gamma <= 0.0 or stalled):
            report.dE, report.dE_rel, report.n_it_E = [0.0], [1.0], 1
            report.stop = "zero-gradient"
            break
        Ky = proj.apply(apply_K(A, P0, y))
        curv = dot(y, Ky)
        if not np.isfinite(curv):
            raise FloatingPointError("non-finite curvature in energy minimization")
        if curv <= 0.0:
            raise IndefiniteBreakdown(f"y^T K y = {curv:.3e} at iteration {k}")
        alpha = gamma / curv
        dE = gamma * alpha
        if dE1 is None:
            dE1 = dE
        elif cfg.use_tau and dE < cfg.tau * dE1:
            report.stop = "tau"
            break
        dw += alpha * y
        r -= alpha * Ky
        report.dE.append(dE)
        report.dE_rel.append(dE / dE1)
        report.n_it_E = k
        if callback is not None:
            callback(k, w0 + dw)
    else:
        report.stop = "maxit"
    P = P0.with_values(w0 + dw)
    report.energy_final = energy_of(A, P)
    if V is not None:
        report.constraint_residual = P.constraint_residual(V)
    report.time_seconds = time.perf_counter() - t0
    return P, report
