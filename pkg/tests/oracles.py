"""Independent reference implementations used as test oracles.

Everything here is deliberately written via a different route than the
package: exact barycentric-monomial integration instead of quadrature for
the transport matrix, per-element Python loops with basis gradients from a
small linear solve, and dense numpy linear algebra for the one-step solve.
Dof numbering and quadrature points are taken from the public interface so
coefficient vectors are comparable entry by entry.
"""

from __future__ import annotations

import math

import numpy as np

from ensmhd.ensemble import viscosity_stats
from ensmhd.fem import FeKind, FeSpace

# P2 basis in barycentric monomials {(a,b,c): coef}; order [v0,v1,v2,m01,m12,m20]
P2_POLYS = [
    {(2, 0, 0): 2.0, (1, 0, 0): -1.0},
    {(0, 2, 0): 2.0, (0, 1, 0): -1.0},
    {(0, 0, 2): 2.0, (0, 0, 1): -1.0},
    {(1, 1, 0): 4.0},
    {(0, 1, 1): 4.0},
    {(1, 0, 1): 4.0},
]
P1_POLYS = [{(1, 0, 0): 1.0}, {(0, 1, 0): 1.0}, {(0, 0, 1): 1.0}]


def poly_mul(p, q):
    out = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            key = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def poly_scale(p, s):
    return {e: c * s for e, c in p.items()}


def poly_add(p, q):
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, 0.0) + c
    return out


def poly_dlambda(p, i):
    """Derivative of a barycentric polynomial w.r.t. lambda_i."""
    out = {}
    for e, c in p.items():
        if e[i] > 0:
            key = list(e)
            key[i] -= 1
            out[tuple(key)] = out.get(tuple(key), 0.0) + c * e[i]
    return out


def integrate_poly(p, area):
    """Exact integral over a triangle: int l1^a l2^b l3^c = 2A a!b!c!/(a+b+c+2)!."""
    total = 0.0
    for (a, b, c), coef in p.items():
        total += coef * math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 2)
    return 2.0 * area * total


def grad_lambda_by_solve(corners):
    """Barycentric gradients from the affine system (independent route).

    lambda_i = a_i x + b_i y + c_i with lambda_i(p_j) = delta_ij; solve the
    3x3 system per coordinate function.
    """
    mat = np.column_stack([corners[:, 0], corners[:, 1], np.ones(3)])
    grads = np.zeros((3, 2))
    for i in range(3):
        coefs = np.linalg.solve(mat, np.eye(3)[:, i])
        grads[i] = coefs[:2]
    return grads


def convection_matrix_exact(space: FeSpace, beta: np.ndarray) -> np.ndarray:
    """Dense transport matrix by exact (quadrature-free) integration.

    N_ab = int (beta . grad phi_b) . phi_a for the vector P2 space; the
    degree-5 integrand is integrated exactly with the factorial formula.
    """
    assert space.kind is FeKind.VECTOR_P2
    ns = space.num_scalar_dofs
    n = 2 * ns
    out = np.zeros((n, n))
    mesh = space.mesh
    areas = mesh.areas()
    bx, by = beta[:ns], beta[ns:]

    for e in range(mesh.num_triangles):
        dofs = space.cell_dofs[e]
        grads = grad_lambda_by_solve(mesh.corners()[e])
        bx_poly, by_poly = {}, {}
        for k in range(6):
            bx_poly = poly_add(bx_poly, poly_scale(P2_POLYS[k], bx[dofs[k]]))
            by_poly = poly_add(by_poly, poly_scale(P2_POLYS[k], by[dofs[k]]))
        for jloc in range(6):
            # beta . grad phi_j as a barycentric polynomial
            gx, gy = {}, {}
            for i in range(3):
                d = poly_dlambda(P2_POLYS[jloc], i)
                gx = poly_add(gx, poly_scale(d, grads[i, 0]))
                gy = poly_add(gy, poly_scale(d, grads[i, 1]))
            transport = poly_add(poly_mul(bx_poly, gx), poly_mul(by_poly, gy))
            for iloc in range(6):
                val = integrate_poly(poly_mul(transport, P2_POLYS[iloc]), areas[e])
                out[dofs[iloc], dofs[jloc]] += val
                out[ns + dofs[iloc], ns + dofs[jloc]] += val
    return out


# ----------------------------------------------------------------------
# dense quadrature-based assembly (independent per-element loops)
# ----------------------------------------------------------------------


def _p2_values_at(lam):
    l0, l1, l2 = lam
    return np.array(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0]
    )


def _p2_grads_at(lam, grads):
    l0, l1, l2 = lam
    dl = np.array(
        [
            [4 * l0 - 1, 0, 0],
            [0, 4 * l1 - 1, 0],
            [0, 0, 4 * l2 - 1],
            [4 * l1, 4 * l0, 0],
            [0, 4 * l2, 4 * l1],
            [4 * l2, 0, 4 * l0],
        ]
    )
    return dl @ grads  # (6, 2)


def quadrature_deg5():
    s15 = math.sqrt(15.0)
    a_p, w_p = (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0
    a_m, w_m = (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a_p, w_p), (a_m, w_m)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


class DenseOperators:
    """Dense mass/stiffness/transport/divergence assembled with plain loops."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.vel = FeSpace(FeKind.VECTOR_P2, mesh)
        self.pres = FeSpace(FeKind.SCALAR_P1_DISC, mesh)
        self.lam, self.wts = quadrature_deg5()
        self.ns = self.vel.num_scalar_dofs
        self.np_ = self.pres.num_scalar_dofs
        self.areas = mesh.areas()
        self.corners = mesh.corners()

    def _quad_xy(self, e, lam):
        return lam @ self.corners[e]

    def mass_scalar(self):
        ns = self.ns
        out = np.zeros((ns, ns))
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            for lam, w in zip(self.lam, self.wts):
                vals = _p2_values_at(lam)
                out[np.ix_(dofs, dofs)] += self.areas[e] * w * np.outer(vals, vals)
        return out

    def stiffness_scalar(self, coeff_fn=None):
        ns = self.ns
        out = np.zeros((ns, ns))
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            grads = grad_lambda_by_solve(self.corners[e])
            for lam, w in zip(self.lam, self.wts):
                g = _p2_grads_at(lam, grads)
                c = 1.0 if coeff_fn is None else coeff_fn(*self._quad_xy(e, lam))
                out[np.ix_(dofs, dofs)] += self.areas[e] * w * c * (g @ g.T)
        return out

    def convection_scalar(self, beta):
        ns = self.ns
        bx, by = beta[:ns], beta[ns:]
        out = np.zeros((ns, ns))
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            grads = grad_lambda_by_solve(self.corners[e])
            for lam, w in zip(self.lam, self.wts):
                vals = _p2_values_at(lam)
                g = _p2_grads_at(lam, grads)
                bq = np.array([bx[dofs] @ vals, by[dofs] @ vals])
                out[np.ix_(dofs, dofs)] += self.areas[e] * w * np.outer(vals, g @ bq)
        return out

    def divergence(self):
        out = np.zeros((self.np_, 2 * self.ns))
        for e in range(self.mesh.num_triangles):
            vdofs = self.vel.cell_dofs[e]
            pdofs = self.pres.cell_dofs[e]
            grads = grad_lambda_by_solve(self.corners[e])
            for lam, w in zip(self.lam, self.wts):
                g = _p2_grads_at(lam, grads)
                for p in range(3):
                    out[pdofs[p], vdofs] += self.areas[e] * w * lam[p] * g[:, 0]
                    out[pdofs[p], self.ns + vdofs] += self.areas[e] * w * lam[p] * g[:, 1]
        return out

    def load_vector(self, f, t):
        out = np.zeros(2 * self.ns)
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            for lam, w in zip(self.lam, self.wts):
                x, y = self._quad_xy(e, lam)
                fx, fy = f(x, y, t)
                vals = _p2_values_at(lam)
                out[dofs] += self.areas[e] * w * fx * vals
                out[self.ns + dofs] += self.areas[e] * w * fy * vals
        return out

    def eddy_coefficient(self, flucts, mu, dt):
        """2 nu_T at quadrature points, per element, from (J, n_vel) fluctuations."""
        nq = len(self.wts)
        out = np.zeros((self.mesh.num_triangles, nq))
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            for qi, lam in enumerate(self.lam):
                vals = _p2_values_at(lam)
                worst = 0.0
                for zj in flucts:
                    zx = zj[dofs] @ vals
                    zy = zj[self.ns + dofs] @ vals
                    worst = max(worst, zx * zx + zy * zy)
                out[e, qi] = 2.0 * mu * dt * worst
        return out

    def stiffness_scalar_table(self, coeff_table):
        """Stiffness with a per-(element, quadrature-point) coefficient table."""
        ns = self.ns
        out = np.zeros((ns, ns))
        for e in range(self.mesh.num_triangles):
            dofs = self.vel.cell_dofs[e]
            grads = grad_lambda_by_solve(self.corners[e])
            for qi, (lam, w) in enumerate(zip(self.lam, self.wts)):
                g = _p2_grads_at(lam, grads)
                out[np.ix_(dofs, dofs)] += self.areas[e] * w * coeff_table[e, qi] * (g @ g.T)
        return out


def expand_vector(scalar_mat):
    n = scalar_mat.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = scalar_mat
    out[n:, n:] = scalar_mat
    return out


def dense_shared_matrix(ops: DenseOperators, mean_adv, flucts, config, dt):
    """Dense version of one sub-step's shared saddle matrix (before BCs)."""
    stats = viscosity_stats(config)
    a_s = (
        ops.mass_scalar() / dt
        + ops.convection_scalar(mean_adv)
        + 0.5 * (stats.nu_bar + stats.nu_m_bar) * ops.stiffness_scalar()
        + ops.stiffness_scalar_table(ops.eddy_coefficient(flucts, config.mu, dt))
    )
    b = ops.divergence()
    n, np_ = 2 * ops.ns, ops.np_
    full = np.zeros((n + np_, n + np_))
    full[:n, :n] = expand_vector(a_s)
    full[:n, n:] = -b.T
    full[n:, :n] = b
    return full


def apply_bc_rows(full, rhs, bdofs, values, pin_row):
    for d, val in zip(bdofs, values):
        full[d, :] = 0.0
        full[d, d] = 1.0
        rhs[d] = val
    full[pin_row, :] = 0.0
    full[pin_row, pin_row] = 1.0
    rhs[pin_row] = 0.0
    return full, rhs


def dense_one_step(ops: DenseOperators, config, state_v, state_w, forcing_fns, bc_fns, t_next):
    """One full step of the scheme for J members, dense matrices throughout.

    ``state_v``/``state_w`` are (J, n_vel); ``forcing_fns[j]`` is a pair of
    callables f(x, y, t) -> (fx, fy); ``bc_fns[j]`` likewise gives the
    boundary fields.  Returns new (v, w, q, r) arrays.
    """
    count = len(state_v)
    stats = viscosity_stats(config)
    dt = config.dt
    mean_v = state_v.mean(axis=0)
    mean_w = state_w.mean(axis=0)
    fluct_v = state_v - mean_v
    fluct_w = state_w - mean_w

    mass = expand_vector(ops.mass_scalar())
    stiff = expand_vector(ops.stiffness_scalar())
    bdofs = ops.vel.boundary_dofs()
    coords = np.vstack([ops.vel.dof_coords, ops.vel.dof_coords])
    pin = 2 * ops.ns

    new = {}
    for kind, same, other, fluct, mean_adv in (
        ("v", state_v, state_w, fluct_w, mean_w),
        ("w", state_w, state_v, fluct_v, mean_v),
    ):
        full = dense_shared_matrix(ops, mean_adv, fluct, config, dt)
        sols = []
        for j in range(count):
            conv_j = expand_vector(ops.convection_scalar(fluct[j]))
            rhs_vel = (
                mass @ same[j] / dt
                + ops.load_vector(forcing_fns[j][0 if kind == "v" else 1], t_next)
                - conv_j @ same[j]
                - 0.5 * (config.members[j].nu - config.members[j].nu_m) * (stiff @ other[j])
                - 0.5 * (stats.nu_fluct[j] + stats.nu_m_fluct[j]) * (stiff @ same[j])
            )
            rhs = np.concatenate([rhs_vel, np.zeros(ops.np_)])
            bc_field = bc_fns[j][0 if kind == "v" else 1]
            values = []
            for d in bdofs:
                comp = 0 if d < ops.ns else 1
                x, y = coords[d]
                values.append(bc_field(x, y, t_next)[comp])
            mat, rhs = apply_bc_rows(full.copy(), rhs, bdofs, values, pin)
            sols.append(np.linalg.solve(mat, rhs))
        sols = np.array(sols)
        vel_new = sols[:, : 2 * ops.ns]
        pres_new = sols[:, 2 * ops.ns :]
        weights = np.array(
            [integrate_poly(P1_POLYS[p % 3], ops.areas[p // 3]) for p in range(ops.np_)]
        )
        pres_new = pres_new - ((pres_new @ weights) / ops.areas.sum())[:, None]
        new[kind] = (vel_new, pres_new)

    return new["v"][0], new["w"][0], new["v"][1], new["w"][1]
