"""Ensemble parameterization, Elsasser transforms and statistics.

An ensemble is J members with individual kinematic viscosity nu_j and
magnetic diffusivity nu_m_j, all advanced through the shared-matrix
scheme.  This module holds the pure bookkeeping: member parameters,
coefficient-level Elsasser/primitive transforms, means and fluctuations,
the eddy-viscosity stabilization field, the stability margins alpha_j,
and the member perturbation factors used in the verification problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import FeSpace, eval_at_quadrature


class DegenerateCouplingError(ValueError):
    """Magnetic field recovery is impossible at zero coupling."""


@dataclass(frozen=True)
class MemberParams:
    """Viscosity pair of a single ensemble member (dimensionless)."""

    nu: float
    nu_m: float

    def __post_init__(self):
        if self.nu <= 0.0 or self.nu_m <= 0.0:
            raise ValueError(f"viscosities must be positive, got ({self.nu}, {self.nu_m})")


@dataclass(frozen=True)
class EnsembleConfig:
    """Run parameters shared by all members.

    Attributes
    ----------
    members : tuple of MemberParams
    coupling : float
        Lorentz-force coefficient s >= 0 (s=0 switches magnetic feedback off).
    mu : float
        Eddy-viscosity tuning parameter; the stability theory needs mu > 1/2.
    dt, t_end : float
        Time-step size and end time.
    perturbation : float
        Scale eps of the member perturbation factors (>= 0).
    seed : int
        Seed recorded for reproducibility of sampled viscosities.
    """

    members: tuple
    coupling: float
    mu: float
    dt: float
    t_end: float
    perturbation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        if self.coupling < 0.0:
            raise ValueError("coupling must be >= 0")
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ValueError("dt and t_end must be positive")
        if self.perturbation < 0.0:
            raise ValueError("perturbation must be >= 0")

    @property
    def num_members(self) -> int:
        return len(self.members)

    @property
    def nu(self) -> np.ndarray:
        return np.array([m.nu for m in self.members])

    @property
    def nu_m(self) -> np.ndarray:
        return np.array([m.nu_m for m in self.members])


@dataclass(frozen=True)
class ViscosityStats:
    """Means, fluctuations and stability margins of the viscosity sample."""

    nu_bar: float
    nu_m_bar: float
    nu_fluct: np.ndarray
    nu_m_fluct: np.ndarray
    alpha: np.ndarray

    @property
    def nonpositive_alpha(self) -> np.ndarray:
        """Member indices (0-based) whose stability margin is <= 0."""
        return np.nonzero(self.alpha <= 0.0)[0]


def viscosity_stats(config: EnsembleConfig) -> ViscosityStats:
    """Sample means, fluctuations and alpha_j for every member.

    alpha_j = nu_bar + nu_m_bar - |nu_j - nu_m_j| - |nu_j' + nu_m_j'|;
    positivity of all alpha_j (with mu > 1/2) is the premise of the
    unconditional stability bound.
    """
    nu, nu_m = config.nu, config.nu_m
    nu_bar, nu_m_bar = float(nu.mean()), float(nu_m.mean())
    nu_f, nu_m_f = nu - nu_bar, nu_m - nu_m_bar
    alpha = nu_bar + nu_m_bar - np.abs(nu - nu_m) - np.abs(nu_f + nu_m_f)
    return ViscosityStats(nu_bar, nu_m_bar, nu_f, nu_m_f, alpha)


def sample_viscosities(nu_range, nu_m_range, count: int, seed=None, deterministic_grid: bool = False):
    """Draw `count` viscosity pairs from a rectangle of admissible values.

    Default: i.i.d. uniform pairs from nu_range x nu_m_range (seeded).
    With ``deterministic_grid`` the pairs are the midpoints of `count`
    equal subintervals in each direction, zipped in order; this keeps the
    sample strictly inside the rectangle (the closed corners sit exactly
    on the alpha=0 boundary for the reference ranges) and makes runs
    bitwise reproducible.
    """
    lo, hi = float(nu_range[0]), float(nu_range[1])
    lo_m, hi_m = float(nu_m_range[0]), float(nu_m_range[1])
    if not (0.0 < lo <= hi and 0.0 < lo_m <= hi_m):
        raise ValueError("viscosity ranges must be nonempty with positive bounds")
    if count < 1:
        raise ValueError("member count must be >= 1")
    if deterministic_grid:
        offs = (np.arange(count) + 0.5) / count
        nu = lo + offs * (hi - lo)
        nu_m = lo_m + offs * (hi_m - lo_m)
    else:
        rng = np.random.default_rng(seed)
        nu = rng.uniform(lo, hi, size=count)
        nu_m = rng.uniform(lo_m, hi_m, size=count)
    return tuple(MemberParams(float(a), float(b)) for a, b in zip(nu, nu_m))


# ----------------------------------------------------------------------
# Elsasser <-> primitive transforms (pure coefficient arithmetic)
# ----------------------------------------------------------------------


def elsasser_from_primitive(u: np.ndarray, b: np.ndarray, coupling: float):
    """(u, B) -> (v, w) = (u + sqrt(s) B, u - sqrt(s) B)."""
    if coupling < 0.0:
        raise ValueError("coupling must be >= 0")
    u = np.asarray(u, dtype=float)
    b = np.asarray(b, dtype=float)
    if u.shape != b.shape:
        raise ValueError(f"mismatched field shapes {u.shape} vs {b.shape}")
    rs = math.sqrt(coupling)
    return u + rs * b, u - rs * b


def primitive_from_elsasser(v: np.ndarray, w: np.ndarray, coupling: float):
    """(v, w) -> (u, B) = ((v + w)/2, (v - w)/(2 sqrt(s)))."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"mismatched field shapes {v.shape} vs {w.shape}")
    u = 0.5 * (v + w)
    if coupling == 0.0:
        if not np.array_equal(v, w):
            raise DegenerateCouplingError("cannot recover B from v != w at zero coupling")
        return u, np.zeros_like(u)
    if coupling < 0.0:
        raise ValueError("coupling must be >= 0")
    return u, (v - w) / (2.0 * math.sqrt(coupling))


# ----------------------------------------------------------------------
# ensemble state and statistics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleState:
    """Per-member coefficient vectors at one time level, with cached stats.

    ``v``/``w`` have shape (J, n_vel), ``q``/``r`` shape (J, n_pres).
    The mean and fluctuation caches are filled on construction and the
    arrays are treated as immutable afterwards.
    """

    v: np.ndarray
    w: np.ndarray
    q: np.ndarray
    r: np.ndarray
    step: int
    time: float
    mean_v: np.ndarray = field(default=None, repr=False)
    mean_w: np.ndarray = field(default=None, repr=False)
    fluct_v: np.ndarray = field(default=None, repr=False)
    fluct_w: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mean_v is None:
            mv, mw, fv, fw = ensemble_stats(self)
            object.__setattr__(self, "mean_v", mv)
            object.__setattr__(self, "mean_w", mw)
            object.__setattr__(self, "fluct_v", fv)
            object.__setattr__(self, "fluct_w", fw)

    @property
    def num_members(self) -> int:
        return self.v.shape[0]


def ensemble_stats(state) -> tuple:
    """Means over members and fluctuations about them for v and w.

    Accepts anything with ``v`` and ``w`` arrays of shape (J, n).  The
    fluctuations of each field sum to zero over members by construction.
    """
    mean_v = state.v.mean(axis=0)
    mean_w = state.w.mean(axis=0)
    return mean_v, mean_w, state.v - mean_v, state.w - mean_w


def eddy_viscosity_at_quadrature(space: FeSpace, fluctuations: np.ndarray, mu: float, dt: float) -> np.ndarray:
    """Eddy viscosity mu dt max_j |z_j'|^2, sampled at quadrature points.

    ``fluctuations`` is the (J, n_vel) block of member fluctuation fields;
    |.| is the Euclidean vector length, and the max is taken pointwise over
    members.  The result (nt, nq) is nonnegative by construction.
    """
    if mu <= 0.0 or dt <= 0.0:
        raise ValueError("mu and dt must be positive")
    vals = eval_at_quadrature(space, fluctuations)  # (J, nt, nq, 2)
    sq = np.einsum("jeqd,jeqd->jeq", vals, vals)
    return mu * dt * sq.max(axis=0)


# ----------------------------------------------------------------------
# member perturbations (verification problems)
# ----------------------------------------------------------------------


def perturbation_factor(j: int, eps: float) -> float:
    """Scale factor 1 + (-1)^(j+1) ceil(j/2) eps / 5 for member j (1-based).

    For even member counts the factors average to exactly 1, so perturbed
    ensembles keep the unperturbed ensemble mean.
    """
    if j < 1:
        raise ValueError("member index is 1-based")
    return 1.0 + ((-1) ** (j + 1)) * math.ceil(j / 2) * eps / 5.0


def perturbation_factors(count: int, eps: float) -> np.ndarray:
    return np.array([perturbation_factor(j, eps) for j in range(1, count + 1)])


def perturbed_member_field(base: np.ndarray, j: int, eps: float) -> np.ndarray:
    """Member j's copy of a base coefficient field, scaled by its factor."""
    return perturbation_factor(j, eps) * np.asarray(base, dtype=float)
