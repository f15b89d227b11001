import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from oracles import exhaustive_maxvol

from eminamg.coarsening import (CfSplitting, NearKernel, StrengthGraph, cf_split_pmis,
                                strength_of_connection)
from eminamg.emin import energy_of
from eminamg.problems import gen_elasticity_cube, gen_poisson
from eminamg.tentative import (ProlongationState, RankDeficient, max_vol_select, ptent_setup,
                               smoothed_prolongation)

# --- max-vol -------------------------------------------------------------------------


def test_maxvol_identity_block():
    B = np.array([[1.0, 0.0, 0.1], [0.0, 1.0, 0.1]])
    np.testing.assert_array_equal(max_vol_select(B, 2), [0, 1])


def test_maxvol_single_row():
    np.testing.assert_array_equal(max_vol_select(np.array([[0.2, -0.9, 0.5]]), 1), [1])


def test_maxvol_random_2x5_exhaustive(rng):
    B = rng.standard_normal((2, 5))
    sel = max_vol_select(B, 2)
    assert abs(np.linalg.det(B[:, sel])) == pytest.approx(exhaustive_maxvol(B), rel=1e-10)


@given(st.integers(1, 3), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_maxvol_exhaustive_small(m, extra, seed):
    n = min(m + extra, 8)
    B = np.random.default_rng(seed).standard_normal((m, n))
    sel = max_vol_select(B, m)
    assert len(set(sel.tolist())) == m
    got = abs(np.linalg.det(B[:, sel]))
    assert got >= exhaustive_maxvol(B) * (1 - 1e-10)


@given(st.integers(2, 6), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_maxvol_no_improving_single_swap(m, extra, seed):
    B = np.random.default_rng(seed).standard_normal((m, m + extra))
    sel = max_vol_select(B, m)
    base = abs(np.linalg.det(B[:, sel]))
    for j in range(m):
        for i in range(B.shape[1]):
            trial = sel.copy()
            trial[j] = i
            assert abs(np.linalg.det(B[:, trial])) <= base * (1 + 1e-9) + 1e-300


def test_maxvol_deterministic(rng):
    B = rng.standard_normal((4, 12))
    np.testing.assert_array_equal(max_vol_select(B, 4), max_vol_select(B.copy(), 4))


def test_maxvol_rank_deficient():
    B = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(RankDeficient):
        max_vol_select(B, 2)
    with pytest.raises(RankDeficient):
        max_vol_select(np.ones((3, 2)), 3)


# --- prolongation state --------------------------------------------------------------------

def test_state_rejects_bad_c_rows():
    cf = CfSplitting(np.array([1, 0, 1]))
    pat = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        ProlongationState(cf, pat, np.ones(1))


def test_state_layout_round_trip():
    cf = CfSplitting(np.array([1, 0, 1, 0]))
    st_ = ProlongationState.from_rows(cf, [[1, 0], [1]], [[0.25, 0.75], [1.0]])
    P = st_.to_csr().toarray()
    np.testing.assert_array_equal(P, [[1, 0], [0.75, 0.25], [0, 1], [0, 1]])
    np.testing.assert_array_equal(st_.values, [0.75, 0.25, 1.0])
    cols, vals = st_.row(0)
    np.testing.assert_array_equal(cols, [0, 1])


# --- tentative set-up -------------------------------------------------------------------------

def test_ptent_constant_mode_single_coefficient():
    A, V = gen_poisson((16, 16))
    S = strength_of_connection(A, 0.25)
    cf = cf_split_pmis(S, 3)
    P, rep = ptent_setup(S, NearKernel(V), cf, 3)
    assert not P.flagged.any()
    np.testing.assert_array_equal(np.diff(P.row_ptr), 1)
    np.testing.assert_array_equal(P.values, 1.0)
    # ties between equal columns go to the lowest coarse index
    for t, i in enumerate(cf.f_list):
        nb = S.neighbors(i)
        coarse_nb = np.sort(cf.coarse_local[nb[cf.labels[nb] == 1]])
        if coarse_nb.size:
            assert P.row(t)[0][0] == coarse_nb[0]


def test_ptent_elasticity_rows_exact_with_six_columns():
    A, X, V = gen_elasticity_cube(5)
    S = strength_of_connection(A, 0.06)
    cf = cf_split_pmis(S, 42)
    P, rep = ptent_setup(S, NearKernel(V), cf, 3)
    assert not P.flagged.any()
    assert sum(rep.distance_histogram.values()) == cf.nf
    assert set(rep.distance_histogram) <= {1, 2, 3}
    np.testing.assert_array_equal(np.diff(P.row_ptr), 6)
    Vc = V[cf.c_list]
    for t, i in enumerate(cf.f_list):
        J, w = P.row(t)
        res = np.linalg.norm(Vc[J].T @ w - V[i])
        assert res <= 1e-12 * (1 + np.linalg.norm(V[i]))


def test_ptent_takes_smallest_sufficient_distance():
    A, X, V = gen_elasticity_cube(4)
    S = strength_of_connection(A, 0.06)
    cf = cf_split_pmis(S, 42)
    P, rep = ptent_setup(S, NearKernel(V), cf, 3)
    G = (S.S + sp.identity(S.n)).tocsr()
    Vc = V[cf.c_list]
    reach = sp.identity(S.n, format="csr")
    within = []
    for _ in range(3):
        reach = (reach @ G).tocsr()
        within.append(reach)
    for t, i in enumerate(cf.f_list):
        J, _ = P.row(t)
        for l, R in enumerate(within, start=1):
            nodes = R.indices[R.indptr[i]:R.indptr[i + 1]]
            N = np.sort(cf.coarse_local[nodes[cf.labels[nodes] == 1]])
            if N.size >= 6 and np.linalg.matrix_rank(Vc[N]) == 6:
                assert set(J.tolist()) <= set(N.tolist())
                break


def test_ptent_isolated_fine_node_flagged():
    # path 0-1-2 with node 0 forced FINE next to another FINE node
    S = StrengthGraph(sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)), 0.25)
    cf = CfSplitting(np.array([0, 0, 1]))
    P, rep = ptent_setup(S, NearKernel(np.ones((3, 1))), cf, l_max=1)
    assert P.flagged.tolist() == [True, False]
    assert rep.flagged_rows == [0]
    assert P.row(0)[0].size == 0          # empty neighbourhood, empty LSQ row
    P2, _ = ptent_setup(S, NearKernel(np.ones((3, 1))), cf, l_max=2)
    assert not P2.flagged.any()
    assert rep.distance_histogram == {1: 1}


def test_ptent_rejects_lmax_zero(poisson_small):
    A, V = poisson_small
    S = strength_of_connection(A)
    with pytest.raises(ValueError):
        ptent_setup(S, NearKernel(V), cf_split_pmis(S), 0)


def test_ptent_global_constraint_residual(elasticity_small):
    A, V = elasticity_small
    S = strength_of_connection(A, 0.06)
    cf = cf_split_pmis(S, 1)
    P, _ = ptent_setup(S, NearKernel(V), cf, 3)
    assert P.constraint_residual(NearKernel(V)) <= 1e-10


# --- smoothed baseline -----------------------------------------------------------------------

def _aggregate_p0(n):
    P0 = sp.csr_matrix((np.ones(n), (np.arange(n), np.arange(n) // 2)), shape=(n, n // 2))
    return P0


def test_smoothed_omega_zero_is_identity():
    A, _ = gen_poisson((8,))
    P0 = _aggregate_p0(8)
    P = smoothed_prolongation(A, P0, 0.0)
    np.testing.assert_array_equal(P.toarray(), P0.toarray())


def test_smoothed_hand_row():
    A, _ = gen_poisson((8,))
    P0 = _aggregate_p0(8)
    P = smoothed_prolongation(A, P0, 0.5).toarray()
    ref = (np.eye(8) - 0.5 * np.diag(1 / A.diagonal()) @ A.toarray()) @ P0.toarray()
    np.testing.assert_allclose(P, ref, rtol=0, atol=1e-15)
    np.testing.assert_allclose(P[1, :2], [0.75, 0.25])
    np.testing.assert_allclose(P[2, :2], [0.25, 0.75])


def test_smoothed_reduces_energy():
    A, _ = gen_poisson((32,))
    P0 = _aggregate_p0(32)
    assert energy_of(A, smoothed_prolongation(A, P0, 0.7)) < energy_of(A, P0)


def test_smoothed_zero_diagonal():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(ZeroDivisionError):
        smoothed_prolongation(A, sp.identity(2, format="csr"))


def test_smoothed_pattern_is_structural(poisson_small):
    A, V = poisson_small
    S = strength_of_connection(A)
    cf = cf_split_pmis(S, 0)
    P0, _ = ptent_setup(S, NearKernel(V), cf)
    P = smoothed_prolongation(A, P0)
    pat = (abs(A) @ abs(P0.to_csr()) + abs(P0.to_csr())).tocsr()
    assert P.nnz == pat.nnz
