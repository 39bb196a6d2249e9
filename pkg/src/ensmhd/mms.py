"""Manufactured reference solutions for the verification runs.

The base Elsasser fields are

    v = (cos y + (1+e^t) sin y,  sin x + (1+e^t) cos x)
    w = (cos y - (1+e^t) sin y,  sin x - (1+e^t) cos x)
    q = r = (1+e^t) sin(x+y)

Both velocity-like fields are divergence-free identically (each component
depends only on the other coordinate) and satisfy Delta v = -v and
Delta w = -w, which keeps the hand-derived forcing compact.  Member j uses
the base fields scaled by the perturbation factor c_j(eps); the pressures
are left unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .ensemble import EnsembleConfig, perturbation_factor, perturbation_factors


def base_v(x, y, t):
    g = 1.0 + np.exp(t)
    return np.cos(y) + g * np.sin(y), np.sin(x) + g * np.cos(x)


def base_w(x, y, t):
    g = 1.0 + np.exp(t)
    return np.cos(y) - g * np.sin(y), np.sin(x) - g * np.cos(x)


def base_q(x, y, t):
    return (1.0 + np.exp(t)) * np.sin(x + y)


@dataclass(frozen=True)
class MmsDefinition:
    """Closed-form member fields of the manufactured problem."""

    eps: float

    def factor(self, j: int) -> float:
        return perturbation_factor(j, self.eps)

    def v(self, j, x, y, t):
        c = self.factor(j)
        vx, vy = base_v(x, y, t)
        return c * vx, c * vy

    def w(self, j, x, y, t):
        c = self.factor(j)
        wx, wy = base_w(x, y, t)
        return c * wx, c * wy

    def q(self, j, x, y, t):
        return base_q(x, y, t)


def mms_exact(j: int, eps: float, t: float):
    """Member j's exact fields at time t as callables of (x, y)."""
    mms = MmsDefinition(eps)

    def v_fn(x, y):
        return mms.v(j, x, y, t)

    def w_fn(x, y):
        return mms.w(j, x, y, t)

    def q_fn(x, y):
        return mms.q(j, x, y, t)

    return v_fn, w_fn, q_fn


def _forcing_values(x, y, t, c, nu, nu_m):
    """Both forcing fields of one member at given points.

    Derived by substituting the scaled fields into the Elsasser momentum
    equations: f1 = v_t + (w.grad)v + ((nu+nu_m)/2) v + ((nu-nu_m)/2) w
    + grad q (using Delta v = -v, Delta w = -w), and f2 with v and w
    swapped.  Arguments broadcast; c, nu, nu_m may carry a leading member
    axis.
    """
    g = 1.0 + np.exp(t)
    et = np.exp(t)
    sx, cx = np.sin(x), np.cos(x)
    sy, cy = np.sin(y), np.cos(y)

    v1, v2 = cy + g * sy, sx + g * cx
    w1, w2 = cy - g * sy, sx - g * cx
    dv1_dy = -sy + g * cy
    dv2_dx = cx - g * sx
    dw1_dy = -sy - g * cy
    dw2_dx = cx + g * sx
    grad_q = g * np.cos(x + y)

    mean_c = 0.5 * (nu + nu_m) * c
    diff_c = 0.5 * (nu - nu_m) * c

    f1x = c * et * sy + c**2 * w2 * dv1_dy + mean_c * v1 + diff_c * w1 + grad_q
    f1y = c * et * cx + c**2 * w1 * dv2_dx + mean_c * v2 + diff_c * w2 + grad_q
    f2x = -c * et * sy + c**2 * v2 * dw1_dy + mean_c * w1 + diff_c * v1 + grad_q
    f2y = -c * et * cx + c**2 * v1 * dw2_dx + mean_c * w2 + diff_c * v2 + grad_q
    return (f1x, f1y), (f2x, f2y)


def mms_forcing(j: int, config: EnsembleConfig, t: float):
    """Member j's forcing fields at time t as callables of (x, y)."""
    c = perturbation_factor(j, config.perturbation)
    member = config.members[j - 1]

    def f1_fn(x, y):
        return _forcing_values(x, y, t, c, member.nu, member.nu_m)[0]

    def f2_fn(x, y):
        return _forcing_values(x, y, t, c, member.nu, member.nu_m)[1]

    return f1_fn, f2_fn


class MmsForcing:
    """Assembled forcing load vectors for all members at once."""

    def loads(self, t, disc, config):
        pts = disc.velocity.quad_coords
        x, y = pts[..., 0], pts[..., 1]
        c = perturbation_factors(config.num_members, config.perturbation)[:, None, None]
        nu = config.nu[:, None, None]
        nu_m = config.nu_m[:, None, None]
        (f1x, f1y), (f2x, f2y) = _forcing_values(x, y, t, c, nu, nu_m)
        f1 = np.stack([f1x, f1y], axis=-1)
        f2 = np.stack([f2x, f2y], axis=-1)
        return fem.assemble_load(disc.velocity, f1), fem.assemble_load(disc.velocity, f2)


class MmsBoundary:
    """Time-dependent Dirichlet data: the exact member fields on the boundary."""

    def values(self, t, disc, config):
        factors = perturbation_factors(config.num_members, config.perturbation)
        bv = fem.interpolate(base_v, t, disc.velocity)[disc.bdofs]
        bw = fem.interpolate(base_w, t, disc.velocity)[disc.bdofs]
        return np.outer(factors, bv), np.outer(factors, bw)


def mms_initial_fields(disc, config: EnsembleConfig):
    """Nodal interpolants of the member fields at t=0, shape (J, n_vel)."""
    factors = perturbation_factors(config.num_members, config.perturbation)
    v0 = fem.interpolate(base_v, 0.0, disc.velocity)
    w0 = fem.interpolate(base_w, 0.0, disc.velocity)
    return np.outer(factors, v0), np.outer(factors, w0)
