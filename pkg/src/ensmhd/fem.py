"""Finite element spaces and operator assembly.

Two spaces are provided: continuous piecewise-quadratic vectors for the
Elsasser fields (VECTOR_P2) and discontinuous piecewise-linears for the
pressures (SCALAR_P1_DISC).  On barycentric-refined meshes this is the
Scott-Vogelius pair, whose discrete velocities are pointwise
divergence-free.

Vector coefficient layout is component-blocked: the first ``num_scalar_dofs``
entries are the x-component, the second half the y-component.  Local scalar
P2 dofs are ordered ``[v0, v1, v2, m01, m12, m20]`` (vertices then edge
midpoints).

Assembly is vectorized over elements: local (nt, nloc, nloc) batches are
scattered into CSR through a COO round-trip.  Assembled matrices are
immutable by convention and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp


class FeKind(Enum):
    VECTOR_P2 = "vector_p2"
    SCALAR_P1_DISC = "scalar_p1_disc"


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric quadrature on the reference triangle.

    ``points`` are barycentric coordinates, ``weights`` sum to one; a rule
    integrates f over a physical triangle as area * sum(w_q f(x_q)).
    """

    points: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    degree: int

    @staticmethod
    def degree5() -> "QuadratureRule":
        """The 7-point rule, exact for polynomials up to degree 5."""
        s15 = np.sqrt(15.0)
        a_p, w_p = (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0
        a_m, w_m = (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0
        pts = [(1 / 3, 1 / 3, 1 / 3)]
        wts = [9.0 / 40.0]
        for a, w in ((a_p, w_p), (a_m, w_m)):
            b = 1.0 - 2.0 * a
            pts += [(b, a, a), (a, b, a), (a, a, b)]
            wts += [w, w, w]
        return QuadratureRule(np.array(pts), np.array(wts), degree=5)


def _p2_values(lam: np.ndarray) -> np.ndarray:
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ]
    )


def _p2_dlambda(lam: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 basis w.r.t. the barycentric coords, (nq, 6, 3)."""
    nq = lam.shape[0]
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    d = np.zeros((nq, 6, 3))
    d[:, 0, 0] = 4 * l0 - 1
    d[:, 1, 1] = 4 * l1 - 1
    d[:, 2, 2] = 4 * l2 - 1
    d[:, 3, 0], d[:, 3, 1] = 4 * l1, 4 * l0
    d[:, 4, 1], d[:, 4, 2] = 4 * l2, 4 * l1
    d[:, 5, 2], d[:, 5, 0] = 4 * l0, 4 * l2
    return d


def _grad_lambda(corners: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Gradients of the barycentric coordinates per element, (nt, 3, 2)."""
    x, y = corners[:, :, 0], corners[:, :, 1]
    g = np.empty((corners.shape[0], 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = y[:, j] - y[:, k]
        g[:, i, 1] = x[:, k] - x[:, j]
    g /= (2.0 * areas)[:, None, None]
    return g


class FeSpace:
    """A finite element space with precomputed per-element tables.

    Parameters
    ----------
    kind : FeKind
    mesh : Mesh
    quadrature : QuadratureRule, optional
        Defaults to the degree-5 rule (exact for all bilinear/trilinear
        terms appearing with P2 fields).
    """

    def __init__(self, kind: FeKind, mesh, quadrature: QuadratureRule | None = None):
        self.kind = kind
        self.mesh = mesh
        self.quadrature = quadrature or QuadratureRule.degree5()

        corners = mesh.corners()
        areas = mesh.areas()
        lam = self.quadrature.points
        self.wdet = areas[:, None] * self.quadrature.weights[None, :]  # (nt, nq)
        self.quad_coords = np.einsum("qi,eid->eqd", lam, corners)
        self._grad_lam = _grad_lambda(corners, areas)

        if kind is FeKind.VECTOR_P2:
            self._init_p2()
        elif kind is FeKind.SCALAR_P1_DISC:
            self._init_p1_disc()
        else:  # pragma: no cover
            raise ValueError(f"unsupported space kind {kind}")

        self._mass_scalar = None
        self._stiffness_scalar = None
        self._mass_full = None
        self._stiffness_full = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def _init_p2(self):
        mesh = self.mesh
        t = mesh.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        pairs = np.sort(pairs, axis=1)
        self.edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        cell_edges = inverse.reshape(-1)[: 3 * mesh.num_triangles].reshape(3, mesh.num_triangles).T
        nv = mesh.num_vertices
        self.cell_dofs = np.hstack([t, nv + cell_edges])
        self.num_scalar_dofs = nv + len(self.edges)
        self.components = 2

        mids = 0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]])
        self.dof_coords = np.vstack([mesh.vertices, mids])

        lam = self.quadrature.points
        self.basis_val = _p2_values(lam)  # (nq, 6)
        dl = _p2_dlambda(lam)  # (nq, 6, 3)
        self.basis_grad = np.einsum("qki,eid->eqkd", dl, self._grad_lam)

        self._edge_key_sorted = self.edges[:, 0] * (nv + len(self.edges) + 1) + self.edges[:, 1]

    def _init_p1_disc(self):
        mesh = self.mesh
        nt = mesh.num_triangles
        self.cell_dofs = np.arange(3 * nt, dtype=np.int64).reshape(nt, 3)
        self.num_scalar_dofs = 3 * nt
        self.components = 1
        self.dof_coords = mesh.corners().reshape(-1, 2)
        self.edges = None

        lam = self.quadrature.points
        self.basis_val = lam.copy()  # (nq, 3)
        nq = lam.shape[0]
        self.basis_grad = np.broadcast_to(
            self._grad_lam[:, None, :, :], (nt, nq, 3, 2)
        ).copy()

    @property
    def dof_count(self) -> int:
        return self.components * self.num_scalar_dofs

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    # ------------------------------------------------------------------
    # dof queries
    # ------------------------------------------------------------------

    def _edge_ids(self, vertex_pairs: np.ndarray) -> np.ndarray:
        if self.edges is None:
            raise ValueError("space has no edge dofs")
        nv = self.mesh.num_vertices
        pairs = np.sort(np.asarray(vertex_pairs), axis=1)
        keys = pairs[:, 0] * (nv + len(self.edges) + 1) + pairs[:, 1]
        pos = np.searchsorted(self._edge_key_sorted, keys)
        if np.any(pos >= len(self.edges)) or np.any(self._edge_key_sorted[pos] != keys):
            raise ValueError("vertex pair is not a mesh edge")
        return pos

    def boundary_scalar_dofs(self, markers=None) -> np.ndarray:
        """Scalar dofs sitting on the selected boundary segments, sorted."""
        mesh = self.mesh
        sel = mesh._edge_selection(markers)
        edges = mesh.boundary_edges[sel]
        verts = np.unique(edges)
        if self.kind is FeKind.VECTOR_P2:
            mid_dofs = mesh.num_vertices + self._edge_ids(edges)
            return np.unique(np.concatenate([verts, mid_dofs]))
        raise ValueError("boundary dofs are only meaningful for the continuous space")

    def boundary_dofs(self, markers=None) -> np.ndarray:
        """Boundary dofs expanded over vector components (x block then y block)."""
        sc = self.boundary_scalar_dofs(markers)
        if self.components == 1:
            return sc
        return np.concatenate([sc, self.num_scalar_dofs + sc])

    def interior_scalar_dofs(self) -> np.ndarray:
        mask = np.ones(self.num_scalar_dofs, dtype=bool)
        mask[self.boundary_scalar_dofs()] = False
        return np.nonzero(mask)[0]

    # ------------------------------------------------------------------
    # cached operators
    # ------------------------------------------------------------------

    def mass_matrix(self) -> sp.csr_matrix:
        if self._mass_full is None:
            self._mass_full = assemble_mass(self)
        return self._mass_full

    def stiffness_matrix(self) -> sp.csr_matrix:
        if self._stiffness_full is None:
            self._stiffness_full = assemble_stiffness(self)
        return self._stiffness_full


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------


def _scatter(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Sum (nt, nloc, nloc) element batches into a scalar CSR matrix."""
    n = space.num_scalar_dofs
    rows = np.broadcast_to(space.cell_dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(space.cell_dofs[:, None, :], local.shape).ravel()
    a = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    a.sort_indices()
    return a


def _expand(space: FeSpace, scalar: sp.csr_matrix) -> sp.csr_matrix:
    if space.components == 1:
        return scalar
    return sp.kron(sp.identity(2, format="csr"), scalar, format="csr")


def mass_scalar(space: FeSpace) -> sp.csr_matrix:
    if space._mass_scalar is None:
        ref = np.einsum("q,qi,qj->ij", space.quadrature.weights, space.basis_val, space.basis_val)
        local = space.mesh.areas()[:, None, None] * ref[None, :, :]
        space._mass_scalar = _scatter(space, local)
    return space._mass_scalar


def stiffness_scalar(space: FeSpace, coeff=None) -> sp.csr_matrix:
    if coeff is None:
        if space._stiffness_scalar is None:
            local = np.einsum("eq,eqid,eqjd->eij", space.wdet, space.basis_grad, space.basis_grad)
            space._stiffness_scalar = _scatter(space, local)
        return space._stiffness_scalar
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = np.full_like(space.wdet, float(c))
    if c.shape != space.wdet.shape:
        raise ValueError(f"coefficient shape {c.shape} != (nt, nq) {space.wdet.shape}")
    if np.any(c < 0.0):
        raise ValueError("diffusion coefficient is negative at a quadrature point")
    local = np.einsum("eq,eqid,eqjd->eij", space.wdet * c, space.basis_grad, space.basis_grad)
    return _scatter(space, local)


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    """Mass matrix M_ab = integral(phi_a . phi_b)."""
    return _expand(space, mass_scalar(space))


def assemble_stiffness(space: FeSpace, coeff=None) -> sp.csr_matrix:
    """Weighted stiffness K_ab = integral(coeff grad phi_a : grad phi_b).

    ``coeff`` may be None (unit), a scalar, or per-quadrature-point values
    of shape (nt, nq); negative values raise ValueError.
    """
    return _expand(space, stiffness_scalar(space, coeff))


def _beta_at_quadrature(space: FeSpace, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    nt, nq = space.wdet.shape
    if beta.shape == (nt, nq, 2):
        return beta
    if space.kind is FeKind.VECTOR_P2 and beta.shape[-1] == space.dof_count:
        return eval_at_quadrature(space, beta)
    raise ValueError("advecting field must be vector-space coefficients or (nt, nq, 2) values")


def convection_scalar(space: FeSpace, beta, skew: bool = False) -> sp.csr_matrix:
    beta_q = _beta_at_quadrature(space, beta)
    bg = np.einsum("eqd,eqjd->eqj", beta_q, space.basis_grad)
    local = np.einsum("eq,eqj,qi->eij", space.wdet, bg, space.basis_val)
    if skew:
        gb = eval_gradient_at_quadrature(space, np.asarray(beta, dtype=float))
        divb = gb[..., 0, 0] + gb[..., 1, 1]
        local += np.einsum("eq,qi,qj->eij", 0.5 * space.wdet * divb, space.basis_val, space.basis_val)
    return _scatter(space, local)


def assemble_convection(space: FeSpace, beta, skew: bool = False) -> sp.csr_matrix:
    """Transport matrix N_ab = integral((beta . grad phi_b) . phi_a).

    The default is the plain (non-skew) trilinear form; ``skew=True`` adds
    1/2 ((div beta) phi_b, phi_a), which makes N skew-adjoint for advecting
    fields with zero normal trace regardless of their divergence.
    """
    return _expand(space, convection_scalar(space, beta, skew=skew))


def assemble_divergence(vel: FeSpace, pres: FeSpace) -> sp.csr_matrix:
    """Divergence matrix B_pa = integral(rho_p (div phi_a)), shape (n_p, n_u)."""
    if vel.mesh is not pres.mesh:
        raise ValueError("velocity and pressure spaces must share a mesh")
    nt = vel.mesh.num_triangles
    n_p, n_s = pres.num_scalar_dofs, vel.num_scalar_dofs
    blocks = []
    for d in range(2):
        local = np.einsum("eq,qp,eqa->epa", vel.wdet, pres.basis_val, vel.basis_grad[..., d])
        rows = np.broadcast_to(pres.cell_dofs[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(vel.cell_dofs[:, None, :], local.shape).ravel()
        blocks.append(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_p, n_s)).tocsr())
    out = sp.hstack(blocks, format="csr")
    out.sort_indices()
    return out


def assemble_load(space: FeSpace, values: np.ndarray) -> np.ndarray:
    """Load vector from per-quadrature-point values.

    ``values`` has shape (..., nt, nq) for a scalar space or (..., nt, nq, 2)
    for the vector space; leading axes are vectorized (e.g. ensemble members).
    Returns (..., dof_count).
    """
    values = np.asarray(values, dtype=float)
    nt, nq = space.wdet.shape

    def scatter_scalar(vals):  # (..., nt, nq) -> (..., nsc)
        local = np.einsum("...eq,qi->...ei", space.wdet * vals, space.basis_val)
        lead = local.shape[:-2]
        flat = local.reshape(-1, nt * space.nloc)
        idx = space.cell_dofs.ravel()
        out = np.empty((flat.shape[0], space.num_scalar_dofs))
        for b in range(flat.shape[0]):
            out[b] = np.bincount(idx, weights=flat[b], minlength=space.num_scalar_dofs)
        return out.reshape(*lead, space.num_scalar_dofs)

    if space.components == 1:
        if values.shape[-2:] != (nt, nq):
            raise ValueError("scalar load values must have shape (..., nt, nq)")
        return scatter_scalar(values)
    if values.shape[-3:] != (nt, nq, 2):
        raise ValueError("vector load values must have shape (..., nt, nq, 2)")
    return np.concatenate(
        [scatter_scalar(values[..., 0]), scatter_scalar(values[..., 1])], axis=-1
    )


# ----------------------------------------------------------------------
# field evaluation
# ----------------------------------------------------------------------


def _local_coeffs(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    """Gather (..., nt, nloc, components) from blocked coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != space.dof_count:
        raise ValueError(f"coefficient length {coeffs.shape[-1]} != {space.dof_count}")
    if space.components == 1:
        return coeffs[..., space.cell_dofs][..., None]
    comp = coeffs.reshape(*coeffs.shape[:-1], 2, space.num_scalar_dofs)
    return np.moveaxis(comp[..., :, space.cell_dofs], -3, -1)


def eval_at_quadrature(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    """Field values at quadrature points: (..., nt, nq[, 2])."""
    loc = _local_coeffs(space, coeffs)
    vals = np.einsum("qi,...eic->...eqc", space.basis_val, loc)
    return vals[..., 0] if space.components == 1 else vals


def eval_gradient_at_quadrature(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    """Gradients at quadrature points: (..., nt, nq, 2) or (..., nt, nq, 2, 2).

    For vector fields the last two axes are [component, derivative].
    """
    loc = _local_coeffs(space, coeffs)
    grads = np.einsum("eqid,...eic->...eqcd", space.basis_grad, loc)
    return grads[..., 0, :] if space.components == 1 else grads


def convection_apply(space: FeSpace, beta: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Weak transport action r_a = integral((beta . grad field) . phi_a).

    Both arguments are vector-space coefficients; leading axes (members)
    are vectorized and broadcast against each other.
    """
    beta_q = eval_at_quadrature(space, beta)
    grad_q = eval_gradient_at_quadrature(space, field)
    conv = np.einsum("...eqd,...eqcd->...eqc", beta_q, grad_q)
    return assemble_load(space, conv)


def interpolate(f, t: float, space: FeSpace) -> np.ndarray:
    """Nodal interpolant of an analytic field f(x, y, t).

    For the vector space f must return a pair (fx, fy); for scalar spaces a
    single array.  Values are taken at the space's dof coordinates.
    """
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    vals = f(x, y, t)
    if space.components == 1:
        out = np.asarray(vals, dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).astype(float)
        return out.copy()
    fx = np.broadcast_to(np.asarray(vals[0], dtype=float), x.shape)
    fy = np.broadcast_to(np.asarray(vals[1], dtype=float), x.shape)
    return np.concatenate([fx, fy])


# ----------------------------------------------------------------------
# boundary conditions
# ----------------------------------------------------------------------


def replace_rows_with_identity(matrix: sp.spmatrix, rows: np.ndarray) -> sp.csr_matrix:
    """Return a copy of the matrix with the given rows replaced by identity rows."""
    a = matrix.tocsr(copy=True)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size:
        starts, ends = a.indptr[rows], a.indptr[rows + 1]
        lens = ends - starts
        total = int(lens.sum())
        if total:
            offsets = np.repeat(np.cumsum(lens) - lens, lens)
            idx = np.arange(total) - offsets + np.repeat(starts, lens)
            a.data[idx] = 0.0
        a = (a + sp.csr_matrix((np.ones(rows.size), (rows, rows)), shape=a.shape)).tocsr()
    a.sort_indices()
    return a


def apply_dirichlet(matrix: sp.spmatrix, rhs: np.ndarray, bdofs: np.ndarray, values: np.ndarray):
    """Impose Dirichlet values by row replacement.

    Constrained rows become identity rows and the corresponding right-hand
    side entries are overwritten; columns are left untouched (the system is
    solved with a direct non-symmetric factorization).  ``rhs`` may be a
    vector or a block of columns; ``values`` must match (len(bdofs),) or
    (len(bdofs), ncols).
    """
    bdofs = np.asarray(bdofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != bdofs.shape[0]:
        raise ValueError(f"{values.shape[0]} boundary values for {bdofs.shape[0]} dofs")
    if values.ndim > 1 and rhs.ndim > 1 and values.shape[1] != rhs.shape[1]:
        raise ValueError("boundary value block does not match rhs column count")
    out = replace_rows_with_identity(matrix, bdofs)
    rhs = np.array(rhs, dtype=float, copy=True)
    rhs[bdofs] = values
    return out, rhs


# ----------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------


def _quadratic_form(mat: sp.spmatrix, coeffs: np.ndarray) -> np.ndarray:
    x = np.asarray(coeffs, dtype=float)
    if x.ndim == 1:
        return float(x @ (mat @ x))
    prod = (mat @ x.reshape(-1, x.shape[-1]).T).T.reshape(x.shape)
    return np.einsum("...i,...i->...", x, prod)


def norm_l2(space: FeSpace, coeffs: np.ndarray):
    """L2 norm sqrt(x^T M x); batched over leading axes."""
    return np.sqrt(np.maximum(_quadratic_form(space.mass_matrix(), coeffs), 0.0))


def norm_h1(space: FeSpace, coeffs: np.ndarray):
    """Full H1 norm sqrt(x^T M x + x^T K x) with unit-coefficient K."""
    q = _quadratic_form(space.mass_matrix(), coeffs) + _quadratic_form(space.stiffness_matrix(), coeffs)
    return np.sqrt(np.maximum(q, 0.0))


def divergence_l2(vel: FeSpace, coeffs: np.ndarray):
    """L2 norm of the pointwise divergence of a vector field, by quadrature."""
    if vel.kind is not FeKind.VECTOR_P2:
        raise ValueError("divergence_l2 expects the vector space")
    g = eval_gradient_at_quadrature(vel, coeffs)
    div = g[..., 0, 0] + g[..., 1, 1]
    return np.sqrt(np.einsum("eq,...eq->...", vel.wdet, div * div))
