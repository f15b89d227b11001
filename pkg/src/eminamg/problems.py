"""Generated SPD test problems with their near-kernel bases."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .sparse import as_csr


def gen_poisson(dims) -> tuple[sp.csr_matrix, np.ndarray]:
    """Finite-difference Laplacian on a grid of interior points (Dirichlet
    boundary eliminated); 3-, 5- or 7-point stencil depending on ``len(dims)``.

    Returns the matrix and the constant near-kernel vector.
    """
    dims = [int(d) for d in np.atleast_1d(dims)]
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"invalid grid dimensions {dims}")
    A = None
    for d in dims:
        T = sp.diags([-np.ones(d - 1), 2 * np.ones(d), -np.ones(d - 1)], [-1, 0, 1])
        if A is None:
            A = T
        else:
            A = sp.kron(A, sp.identity(d)) + sp.kron(sp.identity(A.shape[0]), T)
    A = as_csr(A)
    return A, np.ones((A.shape[0], 1))


def _isotropic_D(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] = lam + 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


# local node order: bit 0 -> x, bit 1 -> y, bit 2 -> z
_CORNERS = np.array([[(a >> 0) & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)]) * 2 - 1


def hex_stiffness(h, E: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """24 x 24 stiffness of a trilinear brick with edge lengths ``h``
    (2x2x2 Gauss quadrature), DOFs ordered node-major (u, v, w)."""
    hx, hy, hz = np.broadcast_to(np.asarray(h, dtype=float), (3,))
    D = _isotropic_D(E, nu)
    g = 1.0 / np.sqrt(3.0)
    K = np.zeros((24, 24))
    jac = np.array([2.0 / hx, 2.0 / hy, 2.0 / hz])
    detJ = hx * hy * hz / 8.0
    for q in _CORNERS * g:
        # dN_a/dxi_k = c_ak/8 * prod_{l != k} (1 + c_al xi_l)
        terms = 1.0 + _CORNERS * q
        dN = np.empty((8, 3))
        for k in range(3):
            others = [l for l in range(3) if l != k]
            dN[:, k] = _CORNERS[:, k] / 8.0 * terms[:, others[0]] * terms[:, others[1]]
        dN *= jac
        B = np.zeros((6, 24))
        for a in range(8):
            dx, dy, dz = dN[a]
            c = 3 * a
            B[0, c] = dx
            B[1, c + 1] = dy
            B[2, c + 2] = dz
            B[3, c], B[3, c + 1] = dy, dx
            B[4, c + 1], B[4, c + 2] = dz, dy
            B[5, c], B[5, c + 2] = dz, dx
        K += B.T @ D @ B * detJ
    return 0.5 * (K + K.T)


def rigid_body_modes(coords: np.ndarray) -> np.ndarray:
    """Three translations and three rotations, node-major DOF ordering."""
    coords = np.asarray(coords, dtype=float)
    x, y, z = (coords - coords.mean(axis=0)).T
    n = coords.shape[0]
    V = np.zeros((3 * n, 6))
    for d in range(3):
        V[d::3, d] = 1.0
    V[0::3, 3], V[1::3, 3] = -y, x
    V[1::3, 4], V[2::3, 4] = -z, y
    V[0::3, 5], V[2::3, 5] = z, -x
    return V


def gen_elasticity_cube(nx: int, ny: int | None = None, nz: int | None = None,
                        E: float = 1.0, nu: float = 0.3, fixed_region: float | None = 0.125):
    """Linear elasticity on the unit cube with ``nx*ny*nz`` trilinear bricks.

    Displacements are fixed at nodes on z = 0 with x, y <= ``fixed_region``;
    the region is widened to one element if it would hold fewer than 2x2
    nodes. ``fixed_region=None`` leaves the body free.

    Returns
    -------
    A : csr_matrix
        Stiffness with fixed DOFs eliminated symmetrically.
    coords : ndarray
        Coordinates of the free nodes' DOFs (one row per DOF).
    V : ndarray
        Rigid-body modes restricted to the free DOFs.
    """
    ny = nx if ny is None else ny
    nz = nx if nz is None else nz
    if min(nx, ny, nz) < 1:
        raise ValueError("need at least one element per axis")
    if not 0.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    h = np.array([1.0 / nx, 1.0 / ny, 1.0 / nz])
    Ke = hex_stiffness(h, E, nu)
    gx, gy, gz = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1),
                             indexing="ij")
    node_id = lambda i, j, k: (i * (ny + 1) + j) * (nz + 1) + k  # noqa: E731
    coords = np.column_stack([gx.ravel() * h[0], gy.ravel() * h[1], gz.ravel() * h[2]])
    ei, ej, ek = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    conn = np.column_stack([node_id(ei + c[0], ej + c[1], ek + c[2])
                            for c in (_CORNERS + 1) // 2])
    dofs = (3 * conn[:, :, None] + np.arange(3)).reshape(len(conn), 24)
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    vals = np.tile(Ke.ravel(), len(conn))
    ndof = 3 * coords.shape[0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(ndof, ndof))
    V = rigid_body_modes(coords)

    free = np.ones(ndof, dtype=bool)
    if fixed_region is not None:
        r = max(fixed_region, h[0], h[1]) + 1e-12
        fixed_nodes = np.flatnonzero((coords[:, 0] <= r) & (coords[:, 1] <= r)
                                     & (coords[:, 2] <= 1e-12))
        free[(3 * fixed_nodes[:, None] + np.arange(3)).ravel()] = False
    idx = np.flatnonzero(free)
    A = as_csr(A[idx][:, idx])
    A.data[np.abs(A.data) < 1e-14 * np.abs(A.data).max()] = 0.0
    A.eliminate_zeros()
    dof_coords = np.repeat(coords, 3, axis=0)[idx]
    return A, dof_coords, V[idx]
