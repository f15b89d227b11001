"""Multilevel hierarchy and the AMG-preconditioned conjugate gradient solver."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels
from .coarsening import NearKernel, cf_split_pmis, expand_pattern, strength_of_connection
from .emin import EminConfig, EminReport, emin_pcg, emin_setup
from .sparse import add, as_csr, dot, spmm, symmetry_error
from .tentative import ProlongationState, ptent_setup, smoothed_prolongation

log = logging.getLogger(__name__)

PROLONGATIONS = ("tentative", "smoothed", "emin")


def galerkin(A, P) -> sp.csr_matrix:
    """Coarse operator ``P^T A P``, symmetrized on its structural pattern."""
    A = as_csr(A)
    P = as_csr(P)
    Ac = spmm(P.T.tocsr(), spmm(A, P))
    asym = symmetry_error(Ac)
    if asym > 1e-12:
        raise ArithmeticError(f"Galerkin product lost symmetry ({asym:.2e})")
    return add(Ac, Ac.T.tocsr(), 0.5, 0.5)


@dataclass
class HierarchyConfig:
    prolongation: str = "emin"
    theta: float = 0.25
    lmax: int = 3
    omega: float = 0.7
    emin: EminConfig = field(default_factory=EminConfig)
    coarse_size: int = 500
    max_levels: int = 25
    seed: int = 42

    def __post_init__(self):
        if self.prolongation not in PROLONGATIONS:
            raise ValueError(f"prolongation must be one of {PROLONGATIONS}")


@dataclass
class Level:
    A: sp.csr_matrix
    V: NearKernel
    P: sp.csr_matrix | None = None
    state: ProlongationState | None = None
    emin: EminReport | None = None
    flagged_rows: int = 0

    def __post_init__(self):
        self.A.sort_indices()


@dataclass
class Hierarchy:
    levels: list
    coarse_factor: tuple = None
    T_p: float = 0.0
    T_i: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def grid_complexity(self) -> float:
        return sum(lv.A.shape[0] for lv in self.levels) / self.levels[0].A.shape[0]

    @property
    def operator_complexity(self) -> float:
        return sum(lv.A.nnz for lv in self.levels) / self.levels[0].A.nnz

    def sizes(self) -> list:
        return [[int(lv.A.shape[0]), int(lv.A.nnz)] for lv in self.levels]


def _prolongation(A, V, S, cf, cfg: HierarchyConfig):
    P_hat, trep = ptent_setup(S, V, cf, cfg.lmax)
    t0 = time.perf_counter()
    if cfg.prolongation == "tentative":
        return P_hat.to_csr(), P_hat, None, 0.0
    if cfg.prolongation == "smoothed":
        P = smoothed_prolongation(A, P_hat, cfg.omega)
        return P, None, None, time.perf_counter() - t0
    pattern = expand_pattern(S, P_hat.pattern, cfg.emin.pattern_distance, cf)
    proj, P0 = emin_setup(V, P_hat, pattern)
    state, rep = emin_pcg(cfg.emin, A, P0, proj, V)
    return state.to_csr(), state, rep, time.perf_counter() - t0


def build_hierarchy(A, V, cfg: HierarchyConfig | None = None) -> Hierarchy:
    """Coarsen until ``coarse_size`` rows or ``max_levels`` levels."""
    cfg = cfg or HierarchyConfig()
    t0 = time.perf_counter()
    A = as_csr(A)
    V = V if isinstance(V, NearKernel) else NearKernel(V)
    rng = np.random.default_rng(cfg.seed)
    H = Hierarchy(levels=[Level(A, V)])
    while H.levels[-1].A.shape[0] > cfg.coarse_size and len(H.levels) < cfg.max_levels:
        lv = H.levels[-1]
        n = lv.A.shape[0]
        S = strength_of_connection(lv.A, cfg.theta)
        cf = cf_split_pmis(S, rng)
        if cf.nc == 0 or cf.nc >= 0.95 * n:
            msg = f"coarsening stagnated at level {len(H.levels) - 1} ({cf.nc} of {n} coarse)"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            H.warnings.append(msg)
            break
        P, state, rep, t_i = _prolongation(lv.A, lv.V, S, cf, cfg)
        H.T_i += t_i
        lv.P, lv.state, lv.emin = P, state, rep
        if state is not None:
            lv.flagged_rows = int(np.count_nonzero(state.flagged))
        Ac = galerkin(lv.A, P)
        H.levels.append(Level(Ac, NearKernel(lv.V.V[cf.c_list], check=False)))
    Ac = H.levels[-1].A.toarray()
    H.coarse_factor = sla.cho_factor(Ac, lower=True)
    H.T_p = time.perf_counter() - t0
    return H


def vcycle(H: Hierarchy, r: np.ndarray, level: int = 0) -> np.ndarray:
    """One V(1,1) cycle: forward GS, coarse correction, backward GS."""
    if level == len(H.levels) - 1:
        return sla.cho_solve(H.coarse_factor, r)
    lv = H.levels[level]
    A = lv.A
    x = np.zeros_like(r)
    _kernels.gauss_seidel(A.indptr, A.indices, A.data, x, r, True)
    res = r - A @ x
    x += lv.P @ vcycle(H, lv.P.T @ res, level + 1)
    _kernels.gauss_seidel(A.indptr, A.indices, A.data, x, r, False)
    return x


@dataclass
class SolveReport:
    n_it: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    T_p: float = 0.0
    T_s: float = 0.0
    T_t: float = 0.0
    T_i: float = 0.0
    level_sizes: list = field(default_factory=list)


def pcg_solve(A, b, H: Hierarchy | None = None, tol: float = 1e-8, maxit: int = 500):
    """PCG from a zero guess until ``||r|| <= tol ||b||``."""
    t0 = time.perf_counter()
    A = as_csr(A)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    rep = SolveReport()
    if H is not None:
        rep.T_p, rep.T_i, rep.level_sizes = H.T_p, H.T_i, H.sizes()
    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0.0:
        rep.converged = True
        rep.residuals = [0.0]
        return x, rep
    M = (lambda v: vcycle(H, v)) if H is not None else (lambda v: v.copy())
    r = b.copy()
    rep.residuals.append(1.0)
    z = M(r)
    p = z.copy()
    rz = dot(r, z)
    for k in range(1, maxit + 1):
        Ap = A @ p
        alpha = rz / dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.sqrt(dot(r, r)) / bnorm
        rep.residuals.append(rel)
        rep.n_it = k
        if rel <= tol:
            rep.converged = True
            break
        z = M(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    rep.T_s = time.perf_counter() - t0
    rep.T_t = rep.T_p + rep.T_s
    return x, rep
