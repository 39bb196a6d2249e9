"""Decoupled ensemble time-stepping with one shared matrix per sub-step.

Each time-step solves two saddle-point sub-steps: V_STEP advances all
members' v fields against a single coefficient matrix built from the
ensemble mean of w and the eddy viscosity of the w fluctuations; W_STEP
mirrors it with the roles of v and w swapped.  The matrix of each sub-step
is independent of the member index, so it is assembled and factorized once
and all J right-hand sides are solved as a block.

Both sub-steps consume ensemble quantities from the previous level only,
so they are mutually independent within a step.  Pressure uniqueness is
handled by pinning one pressure dof during the solve and subtracting the
discrete mean afterwards.  Dirichlet conditions are imposed by row
replacement with boundary data evaluated at the new time level.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import fem
from .ensemble import EnsembleConfig, EnsembleState, eddy_viscosity_at_quadrature, viscosity_stats
from .fem import FeKind, FeSpace
from .linalg import Factorization, factorize, relative_residual

logger = logging.getLogger(__name__)


class StepKind(Enum):
    V_STEP = "v"
    W_STEP = "w"


class StepFailure(RuntimeError):
    """Solver failure wrapped with the step index and sub-step kind."""

    def __init__(self, step: int, kind: StepKind, cause: Exception):
        super().__init__(f"step {step} ({kind.value}-substep) failed: {cause}")
        self.step = step
        self.kind = kind


@dataclass
class Discretization:
    """Mesh, spaces and time-independent operators for one domain."""

    mesh: object
    velocity: FeSpace
    pressure: FeSpace
    mass_s: sp.csr_matrix
    stiff_s: sp.csr_matrix
    divergence: sp.csr_matrix
    pressure_integrals: np.ndarray
    area: float
    bdofs: np.ndarray  # velocity Dirichlet dofs, vector-expanded
    saddle_symbolic: object = None  # reusable symbolic analysis (pattern is step-invariant)

    @classmethod
    def from_mesh(cls, mesh) -> "Discretization":
        vel = FeSpace(FeKind.VECTOR_P2, mesh)
        pres = FeSpace(FeKind.SCALAR_P1_DISC, mesh)
        mass_s = fem.mass_scalar(vel)
        stiff_s = fem.stiffness_scalar(vel)
        div = fem.assemble_divergence(vel, pres)
        ones = np.ones_like(pres.wdet)
        pintg = fem.assemble_load(pres, ones)
        return cls(
            mesh=mesh,
            velocity=vel,
            pressure=pres,
            mass_s=mass_s,
            stiff_s=stiff_s,
            divergence=div,
            pressure_integrals=pintg,
            area=mesh.total_area,
            bdofs=vel.boundary_dofs(),
        )

    @property
    def n_scalar(self) -> int:
        return self.velocity.num_scalar_dofs

    @property
    def n_vel(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pres(self) -> int:
        return self.pressure.num_scalar_dofs

    @property
    def n_total(self) -> int:
        return self.n_vel + self.n_pres

    @property
    def pin_row(self) -> int:
        """Global row of the pinned pressure dof (first pressure dof)."""
        return self.n_vel

    def apply_componentwise(self, scalar_mat: sp.csr_matrix, fields: np.ndarray) -> np.ndarray:
        """Apply a scalar-space operator to both components of (..., n_vel) fields."""
        x = np.asarray(fields, dtype=float)
        comp = x.reshape(-1, 2, self.n_scalar)
        out = (scalar_mat @ comp.reshape(-1, self.n_scalar).T).T
        return out.reshape(x.shape)

    def apply_mass(self, fields: np.ndarray) -> np.ndarray:
        return self.apply_componentwise(self.mass_s, fields)

    def apply_stiffness(self, fields: np.ndarray) -> np.ndarray:
        return self.apply_componentwise(self.stiff_s, fields)

    def mean_zero_pressure(self, p: np.ndarray) -> np.ndarray:
        """Subtract the discrete mean from (..., n_pres) pressure fields."""
        p = np.asarray(p, dtype=float)
        means = (p @ self.pressure_integrals) / self.area
        return p - means[..., None]


@dataclass
class StepSystem:
    """Shared saddle-point system of one sub-step.

    The matrix depends on the ensemble means/fluctuations and the config,
    never on the member index: reassembling it per member reproduces it
    bitwise.
    """

    step_kind: StepKind
    matrix: sp.csr_matrix
    factorization: Factorization
    rhs: np.ndarray  # (n_total, J), filled by the rhs assembly


@dataclass(frozen=True)
class PreconditionReport:
    """Outcome of the stability-precondition check (warn, never abort)."""

    alpha: np.ndarray
    mu: float
    bad_members: np.ndarray  # 0-based indices with alpha_j <= 0
    mu_ok: bool
    messages: tuple

    @property
    def ok(self) -> bool:
        return self.mu_ok and self.bad_members.size == 0


def check_preconditions(config: EnsembleConfig) -> PreconditionReport:
    """Check alpha_j > 0 for all members and mu > 1/2.

    Violations are reported as warnings: the scheme stays well defined and
    computable, only the unconditional-stability guarantee is lost.
    """
    stats = viscosity_stats(config)
    bad = stats.nonpositive_alpha
    mu_ok = config.mu > 0.5
    messages = []
    if bad.size:
        vals = ", ".join(f"j={j + 1}: alpha={stats.alpha[j]:.3e}" for j in bad)
        messages.append(f"stability margin alpha_j <= 0 for {bad.size} member(s): {vals}")
    if not mu_ok:
        messages.append(f"eddy tuning mu={config.mu} is not > 1/2")
    for msg in messages:
        logger.warning("%s", msg)
    return PreconditionReport(stats.alpha, config.mu, bad, mu_ok, tuple(messages))


# ----------------------------------------------------------------------
# shared matrix and member right-hand sides
# ----------------------------------------------------------------------


def assemble_shared_lhs(
    step_kind: StepKind,
    mean_advecting: np.ndarray,
    fluctuations: np.ndarray,
    config: EnsembleConfig,
    disc: Discretization,
) -> StepSystem:
    """Build and factorize the shared sub-step matrix.

    Velocity block: M/dt + N(mean advecting field)
    + (nu_bar + nu_m_bar)/2 K + K(2 nu_T(fluctuations)); divergence
    constraint blocks appended, Dirichlet rows replaced, one pressure dof
    pinned.  For V_STEP the advecting mean and the fluctuations are those
    of w; for W_STEP those of v.
    """
    stats = viscosity_stats(config)
    vel = disc.velocity

    conv = fem.convection_scalar(vel, mean_advecting)
    nu_t = eddy_viscosity_at_quadrature(vel, fluctuations, config.mu, config.dt)
    a_s = (
        disc.mass_s / config.dt
        + conv
        + 0.5 * (stats.nu_bar + stats.nu_m_bar) * disc.stiff_s
        + fem.stiffness_scalar(vel, 2.0 * nu_t)
    )

    ns = disc.n_scalar
    bx = disc.divergence[:, :ns]
    by = disc.divergence[:, ns:]
    full = sp.bmat(
        [[a_s, None, -bx.T], [None, a_s, -by.T], [bx, by, None]], format="csr"
    )
    full = fem.replace_rows_with_identity(full, disc.bdofs)
    full = fem.replace_rows_with_identity(full, np.array([disc.pin_row]))
    fact = factorize(full, symbolic=disc.saddle_symbolic)
    if disc.saddle_symbolic is None:
        disc.saddle_symbolic = fact.symbolic
    rhs = np.zeros((disc.n_total, config.num_members))
    return StepSystem(step_kind, full, fact, rhs)


def _rhs_block(
    step_kind: StepKind,
    state: EnsembleState,
    loads,
    boundary_values: np.ndarray,
    config: EnsembleConfig,
    disc: Discretization,
) -> np.ndarray:
    """Right-hand-side columns for all members of one sub-step, (n_total, J)."""
    if step_kind is StepKind.V_STEP:
        same, other, fluct = state.v, state.w, state.fluct_w
    else:
        same, other, fluct = state.w, state.v, state.fluct_v

    stats = viscosity_stats(config)
    lag_cross = 0.5 * (config.nu - config.nu_m)  # coefficient of K * other
    lag_same = 0.5 * (stats.nu_fluct + stats.nu_m_fluct)  # coefficient of K * same

    r = disc.apply_mass(same) / config.dt
    r -= fem.convection_apply(disc.velocity, fluct, same)
    r -= lag_cross[:, None] * disc.apply_stiffness(other)
    r -= lag_same[:, None] * disc.apply_stiffness(same)
    if loads is not None:
        r = r + loads

    rhs = np.zeros((disc.n_total, config.num_members))
    rhs[: disc.n_vel] = r.T
    rhs[disc.bdofs] = boundary_values.T
    rhs[disc.pin_row] = 0.0
    return rhs


def assemble_member_rhs(
    step_kind: StepKind,
    member: int,
    state: EnsembleState,
    load,
    boundary_values: np.ndarray,
    config: EnsembleConfig,
    disc: Discretization,
) -> np.ndarray:
    """Right-hand-side column of one member (0-based index).

    ``load`` is the member's assembled forcing vector at the new time level
    (or None); ``boundary_values`` its Dirichlet values on ``disc.bdofs``.
    """
    if load is None:
        loads = None
    else:
        load = np.asarray(load, dtype=float)
        if load.shape != (disc.n_vel,):
            raise ValueError(f"load vector shape {load.shape} != ({disc.n_vel},)")
        loads = np.tile(load, (config.num_members, 1))
    bvals = np.tile(np.asarray(boundary_values, dtype=float), (config.num_members, 1))
    block = _rhs_block(step_kind, state, loads, bvals, config, disc)
    return block[:, member]


# ----------------------------------------------------------------------
# forcing and boundary data
# ----------------------------------------------------------------------


class ZeroForcing:
    """No body forces."""

    def loads(self, t, disc, config):
        return None, None


class ZeroBoundary:
    """Homogeneous Dirichlet data for both Elsasser fields."""

    def values(self, t, disc, config):
        nb = disc.bdofs.size
        z = np.zeros((config.num_members, nb))
        return z, z


class ScaledProfileBoundary:
    """Shared boundary profiles scaled per member.

    ``v_profile`` and ``w_profile`` are callables f(x, y, t) -> (fx, fy)
    evaluated at the velocity dof coordinates; member j's data is
    factors[j] times the profile.
    """

    def __init__(self, v_profile, w_profile, factors):
        self.v_profile = v_profile
        self.w_profile = w_profile
        self.factors = np.asarray(factors, dtype=float)

    def values(self, t, disc, config):
        base_v = fem.interpolate(self.v_profile, t, disc.velocity)[disc.bdofs]
        base_w = fem.interpolate(self.w_profile, t, disc.velocity)[disc.bdofs]
        return np.outer(self.factors, base_v), np.outer(self.factors, base_w)


@dataclass
class Problem:
    """Initial data plus forcing and boundary data objects for one run."""

    disc: Discretization
    initial_v: np.ndarray  # (J, n_vel)
    initial_w: np.ndarray
    forcing: object
    boundary: object

    def initial_state(self, config: EnsembleConfig) -> EnsembleState:
        j = config.num_members
        zeros_p = np.zeros((j, self.disc.n_pres))
        return EnsembleState(
            v=np.array(self.initial_v, dtype=float),
            w=np.array(self.initial_w, dtype=float),
            q=zeros_p,
            r=zeros_p.copy(),
            step=0,
            time=0.0,
        )


# ----------------------------------------------------------------------
# time stepping
# ----------------------------------------------------------------------


def _solve_substep(kind, state, loads, bvals, config, disc):
    if kind is StepKind.V_STEP:
        mean_adv, fluct = state.mean_w, state.fluct_w
    else:
        mean_adv, fluct = state.mean_v, state.fluct_v
    system = assemble_shared_lhs(kind, mean_adv, fluct, config, disc)
    system.rhs = _rhs_block(kind, state, loads, bvals, config, disc)
    solution = system.factorization.solve_block(system.rhs)
    return system, solution


def advance(state: EnsembleState, config: EnsembleConfig, disc: Discretization, forcing, boundary):
    """One full time-step: both sub-steps for all members.

    Returns (new_state, residual) where the residual is the max relative
    solver residual over members and sub-steps.  Both sub-steps use the
    level-n ensemble quantities, so their order is immaterial.
    """
    t_next = state.time + config.dt
    loads_v, loads_w = forcing.loads(t_next, disc, config)
    bvals_v, bvals_w = boundary.values(t_next, disc, config)

    try:
        sys_v, sol_v = _solve_substep(StepKind.V_STEP, state, loads_v, bvals_v, config, disc)
    except Exception as exc:  # noqa: BLE001 - annotate and re-raise
        raise StepFailure(state.step, StepKind.V_STEP, exc) from exc
    try:
        sys_w, sol_w = _solve_substep(StepKind.W_STEP, state, loads_w, bvals_w, config, disc)
    except Exception as exc:  # noqa: BLE001
        raise StepFailure(state.step, StepKind.W_STEP, exc) from exc

    residual = max(
        relative_residual(sys_v.matrix, sol_v, sys_v.rhs),
        relative_residual(sys_w.matrix, sol_w, sys_w.rhs),
    )

    nv = disc.n_vel
    new_state = EnsembleState(
        v=np.ascontiguousarray(sol_v[:nv].T),
        w=np.ascontiguousarray(sol_w[:nv].T),
        q=disc.mean_zero_pressure(sol_v[nv:].T),
        r=disc.mean_zero_pressure(sol_w[nv:].T),
        step=state.step + 1,
        time=t_next,
    )
    return new_state, residual


def energy(state: EnsembleState, disc: Discretization) -> float:
    """E = 1/2 (||<v>||^2 + ||<w>||^2), L2 norms of the ensemble means."""
    ev = state.mean_v @ disc.apply_mass(state.mean_v)
    ew = state.mean_w @ disc.apply_mass(state.mean_w)
    return 0.5 * float(ev + ew)


@dataclass
class RunReport:
    """Per-step diagnostics of a full run.

    All series have length (number of steps + 1); entry 0 describes the
    initial state (wall clock and residual are zero there).  Divergence
    entries are maxima over members.
    """

    times: np.ndarray
    energy: np.ndarray
    div_v: np.ndarray
    div_w: np.ndarray
    residuals: np.ndarray
    wall_clock: np.ndarray
    alpha: np.ndarray
    mu: float
    dt: float
    member_l2v_sq: np.ndarray  # (M+1, J): ||v_j^n||^2
    member_l2w_sq: np.ndarray
    member_gradv_sq: np.ndarray  # (M+1, J): ||grad v_j^n||^2
    member_gradw_sq: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.times) - 1


def _record(report: RunReport, n: int, state: EnsembleState, disc: Discretization):
    report.energy[n] = energy(state, disc)
    report.div_v[n] = float(np.max(fem.divergence_l2(disc.velocity, state.v)))
    report.div_w[n] = float(np.max(fem.divergence_l2(disc.velocity, state.w)))
    report.member_l2v_sq[n] = np.einsum("ji,ji->j", state.v, disc.apply_mass(state.v))
    report.member_l2w_sq[n] = np.einsum("ji,ji->j", state.w, disc.apply_mass(state.w))
    report.member_gradv_sq[n] = np.einsum("ji,ji->j", state.v, disc.apply_stiffness(state.v))
    report.member_gradw_sq[n] = np.einsum("ji,ji->j", state.w, disc.apply_stiffness(state.w))


def run(
    config: EnsembleConfig,
    problem: Problem,
    observer=None,
    snapshot_steps=(),
):
    """Integrate from t=0 to t_end with M = round(t_end / dt) steps.

    ``observer(step, time, state)`` is called at every level including the
    initial one; states at ``snapshot_steps`` are collected and returned.
    Returns (report, final_state, snapshots).
    """
    ratio = config.t_end / config.dt
    num_steps = int(round(ratio))
    if num_steps < 1 or abs(ratio - num_steps) > 0.5:
        raise ValueError(f"t_end/dt = {ratio} does not round to a positive step count")
    if abs(ratio - num_steps) > 1e-9:
        logger.warning("t_end/dt = %.6g rounded to %d steps", ratio, num_steps)

    check_preconditions(config)
    stats = viscosity_stats(config)
    disc = problem.disc
    j = config.num_members

    shape = (num_steps + 1,)
    report = RunReport(
        times=np.arange(num_steps + 1) * config.dt,
        energy=np.zeros(shape),
        div_v=np.zeros(shape),
        div_w=np.zeros(shape),
        residuals=np.zeros(shape),
        wall_clock=np.zeros(shape),
        alpha=stats.alpha,
        mu=config.mu,
        dt=config.dt,
        member_l2v_sq=np.zeros((num_steps + 1, j)),
        member_l2w_sq=np.zeros((num_steps + 1, j)),
        member_gradv_sq=np.zeros((num_steps + 1, j)),
        member_gradw_sq=np.zeros((num_steps + 1, j)),
    )

    state = problem.initial_state(config)
    _record(report, 0, state, disc)
    snapshots = {}
    if 0 in snapshot_steps:
        snapshots[0] = state
    if observer is not None:
        observer(0, 0.0, state)

    for n in range(num_steps):
        tic = _time.perf_counter()
        state, residual = advance(state, config, disc, problem.forcing, problem.boundary)
        report.wall_clock[n + 1] = _time.perf_counter() - tic
        report.residuals[n + 1] = residual
        _record(report, n + 1, state, disc)
        if state.step in snapshot_steps:
            snapshots[state.step] = state
        if observer is not None:
            observer(state.step, state.time, state)

    return report, state, snapshots


# ----------------------------------------------------------------------
# stability bound
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityCheck:
    """Both sides of the per-member energy stability inequality."""

    lhs: np.ndarray
    rhs: np.ndarray
    holds: bool


def verify_stability_bound(
    report: RunReport,
    config: EnsembleConfig,
    disc: Discretization,
    forcing=None,
) -> StabilityCheck:
    """Evaluate the unconditional-stability inequality for every member.

    LHS: final L2 energies plus the (nu_bar+nu_m_bar)/2 dt gradient terms
    plus alpha_j dt / 2 times the summed gradient history (levels 0..M-1).
    RHS: the same quantities at level 0 plus 2 dt / alpha_j times the
    summed squared discrete dual norms of the forcing.  Returns both sides
    and whether LHS <= RHS (1 + 1e-8) holds for all members.
    """
    stats = viscosity_stats(config)
    m = report.num_steps
    half_visc = 0.5 * (stats.nu_bar + stats.nu_m_bar)

    grad_hist = report.member_gradv_sq[:m].sum(axis=0) + report.member_gradw_sq[:m].sum(axis=0)
    lhs = (
        report.member_l2v_sq[m]
        + report.member_l2w_sq[m]
        + half_visc * config.dt * (report.member_gradv_sq[m] + report.member_gradw_sq[m])
        + 0.5 * stats.alpha * config.dt * grad_hist
    )
    rhs = (
        report.member_l2v_sq[0]
        + report.member_l2w_sq[0]
        + half_visc * config.dt * (report.member_gradv_sq[0] + report.member_gradw_sq[0])
    )

    if forcing is not None:
        dual_sum = _forcing_dual_sums(report, config, disc, forcing)
        rhs = rhs + (2.0 * config.dt / stats.alpha) * dual_sum

    holds = bool(np.all(lhs <= rhs * (1.0 + 1e-8)))
    return StabilityCheck(lhs, rhs, holds)


def _forcing_dual_sums(report, config, disc, forcing) -> np.ndarray:
    """Sum over steps of ||f1||_-1^2 + ||f2||_-1^2 per member.

    The discrete dual norm is sqrt(F^T K0^-1 F) with K0 the interior
    scalar stiffness; F restricted to interior dofs componentwise.
    """
    interior = disc.velocity.interior_scalar_dofs()
    fact = None
    ns = disc.n_scalar
    total = np.zeros(config.num_members)
    for n in range(report.num_steps):
        t_next = report.times[n + 1]
        for load in forcing.loads(t_next, disc, config):
            if load is None:
                continue
            if fact is None:
                fact = factorize(disc.stiff_s[interior][:, interior].tocsc())
            comp = np.asarray(load).reshape(config.num_members, 2, ns)[:, :, interior]
            flat = comp.reshape(-1, interior.size).T
            sol = fact.solve_block(flat)
            total += np.einsum("ij,ij->j", flat, sol).reshape(config.num_members, 2).sum(axis=1)
    return total
