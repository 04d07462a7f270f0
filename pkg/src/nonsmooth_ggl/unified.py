"""Unified implicit timestepping: impact law and non-penetration solved
together.

One step determines (q_next, v_next, lam, psi) from a single system of
nonsmooth equations.  The constraint matrix and the force vector are
evaluated implicitly at the state midpoint, the mass matrix explicitly at
the forecast midpoint.  The four residual blocks are

  1. position update, including the non-penetration correction W @ psi,
  2. velocity update, with the mean contact impulse W @ lam,
  3. prox residual of the impact law on the impact-active contacts,
  4. prox residual of the non-penetration condition,

with the end-of-step gaps and gap velocities replaced by midpoint-gradient
linearizations so that no extra gap evaluations are needed inside the
loop.  The system is solved by plain semismooth Newton with the analytic
Jacobian; a finite-difference Jacobian is kept as a fallback for singular
corner cases.

For the step itself, the impact rows are restricted to the contacts whose
midpoint-forecast gap is below ``active_tol``, while the non-penetration
rows are carried for all contacts: a row with an open gap solves to
psi = 0 identically, and keeping it closes the one-step blind spot of the
forecast (a contact crossing zero within a step that the forecast missed
is still pushed back to the surface).  The "reference" variant drops the
non-penetration rows and the W @ psi term entirely and thus enforces the
impact law only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GeneralizedState, MechanicalModel
from .prox import prox_nonneg
from .steppers import SolverConfig, StepOutcome, predict_active_set

__all__ = [
    "UnifiedUnknowns",
    "NewtonReport",
    "StepBasis",
    "step_basis",
    "assemble_residual",
    "assemble_jacobian",
    "gap_linearization",
    "unified_step",
    "reference_step",
    "UnifiedStepper",
    "ReferenceStepper",
]


@dataclass
class UnifiedUnknowns:
    """Newton unknowns, packed in the fixed order (q, v, lam, psi)."""

    q_next: np.ndarray
    v_next: np.ndarray
    lambda_red: np.ndarray
    psi_red: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.q_next, self.v_next, self.lambda_red, self.psi_red]
        )

    @staticmethod
    def unpack(x: np.ndarray, dof: int, n_lam: int, n_psi: int) -> "UnifiedUnknowns":
        if x.size != 2 * dof + n_lam + n_psi:
            raise ValueError("unknown vector has wrong length")
        return UnifiedUnknowns(
            q_next=x[:dof],
            v_next=x[dof : 2 * dof],
            lambda_red=x[2 * dof : 2 * dof + n_lam],
            psi_red=x[2 * dof + n_lam :],
        )


@dataclass
class NewtonReport:
    iterations: int
    final_residual: float
    converged: bool
    jacobian_mode: str = "analytic"


@dataclass
class StepBasis:
    """Per-step constants of the implicit system.

    ``impact_set`` indexes the contacts carrying impact-law rows,
    ``position_set`` those carrying non-penetration rows.
    """

    dt: float
    q0: np.ndarray
    v0: np.ndarray
    mass_inv: np.ndarray
    g0: np.ndarray
    gd0: np.ndarray
    impact_set: np.ndarray
    position_set: np.ndarray
    eps_red: np.ndarray
    r_impact: np.ndarray
    r_position: np.ndarray


def step_basis(
    model: MechanicalModel,
    prev: GeneralizedState,
    cfg: SolverConfig,
    impact_set: np.ndarray | None = None,
    position_set: np.ndarray | None = None,
) -> StepBasis:
    """Evaluate the step constants: explicit-midpoint mass matrix, gaps and
    gap velocities at the step start, active sets and prox row weights."""
    dt = cfg.dt
    q_mid = prev.q + 0.5 * dt * prev.v
    mass = model.mass_matrix(q_mid)
    try:
        mass_inv = np.linalg.inv(mass)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular mass matrix") from exc
    if impact_set is None:
        impact_set = predict_active_set(model, prev, dt, cfg.active_tol)
    if position_set is None:
        position_set = impact_set
    w_mid = model.constraint_matrix(q_mid)
    return StepBasis(
        dt=dt,
        q0=prev.q.copy(),
        v0=prev.v.copy(),
        mass_inv=mass_inv,
        g0=model.gaps(prev.q),
        gd0=model.constraint_matrix(prev.q).T @ prev.v,
        impact_set=np.asarray(impact_set, dtype=int),
        position_set=np.asarray(position_set, dtype=int),
        eps_red=model.eps[np.asarray(impact_set, dtype=int)],
        r_impact=(
            cfg.velocity_weights(mass, w_mid[:, impact_set])
            if len(impact_set)
            else np.zeros(0)
        ),
        r_position=cfg.position_weights(len(position_set)),
    )


def _evaluate(model, basis, x):
    """Implicit-midpoint evaluations shared by residual and Jacobian."""
    q_mid = 0.5 * (x.q_next + basis.q0)
    v_mid = 0.5 * (x.v_next + basis.v0)
    w = model.constraint_matrix(q_mid)
    h = model.force(q_mid, v_mid)
    w_imp = w[:, basis.impact_set]
    w_pos = w[:, basis.position_set]
    impulse = basis.mass_inv @ (h * basis.dt + w_imp @ x.lambda_red)
    return q_mid, v_mid, w, h, w_imp, w_pos, impulse


def _linearized_contacts(basis, w, w_pos, x, impulse):
    """Midpoint-gradient forecasts of the end-of-step gaps and velocities."""
    g_next = (
        basis.g0
        + 0.5 * basis.dt * (w.T @ (x.v_next + basis.v0))
        + w.T @ (w_pos @ x.psi_red)
    )
    gd_next = basis.gd0 + w.T @ impulse
    return g_next, gd_next


def _residual(model, basis, x):
    _, _, w, _, _, w_pos, impulse = _evaluate(model, basis, x)
    g_next, gd_next = _linearized_contacts(basis, w, w_pos, x, impulse)
    r1 = (
        x.q_next
        - basis.q0
        - 0.5 * basis.dt * (x.v_next + basis.v0)
        - w_pos @ x.psi_red
    )
    r2 = x.v_next - basis.v0 - impulse
    ai, ap = basis.impact_set, basis.position_set
    arg3 = x.lambda_red - basis.r_impact * (gd_next[ai] + basis.eps_red * basis.gd0[ai])
    r3 = x.lambda_red - prox_nonneg(arg3)
    arg4 = x.psi_red - basis.r_position * g_next[ap]
    r4 = x.psi_red - prox_nonneg(arg4)
    res = np.concatenate([r1, r2, r3, r4])
    if not np.all(np.isfinite(res)):
        raise FloatingPointError("non-finite residual in implicit step")
    return res


def _jacobian(model, basis, x):
    dof = model.dof
    ai, ap = basis.impact_set, basis.position_set
    nai, nap = ai.size, ap.size
    dt = basis.dt
    minv = basis.mass_inv

    q_mid, v_mid, w, _, w_imp, w_pos, impulse = _evaluate(model, basis, x)
    g_next, gd_next = _linearized_contacts(basis, w, w_pos, x, impulse)

    # chain rule: quantities evaluated at the state midpoint pick up a
    # factor 1/2 when differentiated with respect to the end-of-step state
    tens = model.constraint_tensor(q_mid)
    hq = 0.5 * model.force_jacobian_q(q_mid, v_mid)
    hv = 0.5 * model.force_jacobian_v(q_mid, v_mid)

    lam_full = np.zeros(model.n_contacts)
    lam_full[ai] = x.lambda_red
    psi_full = np.zeros(model.n_contacts)
    psi_full[ap] = x.psi_red

    d_wlam_dq = 0.5 * np.einsum("ijk,j->ik", tens, lam_full)
    d_wpsi_dq = 0.5 * np.einsum("ijk,j->ik", tens, psi_full)
    d_wt_impulse_dq = 0.5 * np.einsum("ijk,i->jk", tens, impulse)
    d_wt_vsum_dq = 0.5 * np.einsum("ijk,i->jk", tens, x.v_next + basis.v0)
    d_wt_wpsi_dq = 0.5 * np.einsum("ijk,i->jk", tens, w_pos @ x.psi_red)

    n = 2 * dof + nai + nap
    jac = np.zeros((n, n))
    eye = np.eye(dof)
    sl_q = slice(0, dof)
    sl_v = slice(dof, 2 * dof)
    sl_l = slice(2 * dof, 2 * dof + nai)
    sl_p = slice(2 * dof + nai, n)

    # row 1: position update
    jac[sl_q, sl_q] = eye - d_wpsi_dq
    jac[sl_q, sl_v] = -0.5 * dt * eye
    jac[sl_q, sl_p] = -w_pos

    # row 2: velocity update
    jac[sl_v, sl_q] = -minv @ (dt * hq + d_wlam_dq)
    jac[sl_v, sl_v] = eye - dt * (minv @ hv)
    jac[sl_v, sl_l] = -minv @ w_imp

    # row 3: impact law; the prox branch decides between the derivative of
    # the linearized gap velocity and an identity row on lam
    if nai:
        minv_wimp = minv @ w_imp
        dgd_dq = d_wt_impulse_dq[ai, :] + w_imp.T @ minv @ (dt * hq + d_wlam_dq)
        dgd_dv = dt * (w_imp.T @ minv @ hv)
        dgd_dl = w_imp.T @ minv_wimp
        arg3 = x.lambda_red - basis.r_impact * (
            gd_next[ai] + basis.eps_red * basis.gd0[ai]
        )
        for i in range(nai):
            row = 2 * dof + i
            if arg3[i] >= 0.0:
                jac[row, sl_q] = basis.r_impact[i] * dgd_dq[i]
                jac[row, sl_v] = basis.r_impact[i] * dgd_dv[i]
                jac[row, sl_l] = basis.r_impact[i] * dgd_dl[i]
            else:
                jac[row, row] = 1.0

    # row 4: non-penetration; same branch structure on psi
    if nap:
        dg_dq = (
            0.5 * dt * d_wt_vsum_dq[ap, :]
            + d_wt_wpsi_dq[ap, :]
            + w_pos.T @ d_wpsi_dq
        )
        dg_dv = 0.5 * dt * w_pos.T
        dg_dp = w_pos.T @ w_pos
        arg4 = x.psi_red - basis.r_position * g_next[ap]
        for i in range(nap):
            row = 2 * dof + nai + i
            if arg4[i] >= 0.0:
                jac[row, sl_q] = basis.r_position[i] * dg_dq[i]
                jac[row, sl_v] = basis.r_position[i] * dg_dv[i]
                jac[row, sl_p] = basis.r_position[i] * dg_dp[i]
            else:
                jac[row, row] = 1.0

    if not np.all(np.isfinite(jac)):
        raise FloatingPointError("non-finite Jacobian in implicit step")
    return jac


def _fd_jacobian(model, basis, x_vec, dof, nai, nap):
    """Central finite differences of the residual, column by column."""
    n = x_vec.size
    jac = np.empty((n, n))
    step = 1e-7 * max(1.0, float(np.max(np.abs(x_vec))))
    for k in range(n):
        dx = np.zeros(n)
        dx[k] = step
        rp = _residual(model, basis, UnifiedUnknowns.unpack(x_vec + dx, dof, nai, nap))
        rm = _residual(model, basis, UnifiedUnknowns.unpack(x_vec - dx, dof, nai, nap))
        jac[:, k] = (rp - rm) / (2.0 * step)
    return jac


def assemble_residual(model, prev, x, active, cfg, basis=None) -> np.ndarray:
    """Stacked residual of the implicit system for given unknowns.

    ``active`` reduces both the impact and the non-penetration rows, as in
    the reduced system the Newton loop of :func:`unified_step` solves for
    its impact rows.
    """
    if basis is None:
        basis = step_basis(model, prev, cfg, impact_set=active, position_set=active)
    return _residual(model, basis, x)


def assemble_jacobian(model, prev, x, active, cfg, basis=None) -> np.ndarray:
    """Analytic block Jacobian of :func:`assemble_residual` at x."""
    if basis is None:
        basis = step_basis(model, prev, cfg, impact_set=active, position_set=active)
    return _jacobian(model, basis, x)


def gap_linearization(model, prev, x, cfg, active=None, basis=None):
    """Midpoint-gradient forecast of end-of-step gaps and gap velocities.

    Returns the full-length vectors (g_next, gdot_next); multipliers off
    the reduced set ``active`` (default: the leading contacts) are treated
    as zero.
    """
    if basis is None:
        if active is None:
            active = np.arange(x.lambda_red.size)
        basis = step_basis(model, prev, cfg, impact_set=active, position_set=active)
    _, _, w, _, _, w_pos, impulse = _evaluate(model, basis, x)
    return _linearized_contacts(basis, w, w_pos, x, impulse)


def _newton_solve(model, basis, cfg, x0: UnifiedUnknowns):
    dof = model.dof
    nai, nap = basis.impact_set.size, basis.position_set.size
    x_vec = x0.pack()
    x = UnifiedUnknowns.unpack(x_vec, dof, nai, nap)
    res = _residual(model, basis, x)
    err = float(np.max(np.abs(res))) if res.size else 0.0
    iters = 0
    jac_mode = "analytic"
    while err > cfg.newton_tol and iters < cfg.max_iter:
        try:
            jac = _jacobian(model, basis, x)
            dx = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            jac_mode = "finite-difference"
            jac = _fd_jacobian(model, basis, x_vec, dof, nai, nap)
            try:
                dx = np.linalg.solve(jac, res)
            except np.linalg.LinAlgError:
                break
        x_new = UnifiedUnknowns.unpack(x_vec - dx, dof, nai, nap)
        try:
            res = _residual(model, basis, x_new)
        except FloatingPointError:
            iters += 1
            err = float("inf")
            break
        x_vec = x_vec - dx
        x = x_new
        err = float(np.max(np.abs(res)))
        iters += 1
    report = NewtonReport(
        iterations=iters,
        final_residual=err,
        converged=bool(err <= cfg.newton_tol),
        jacobian_mode=jac_mode,
    )
    return x, report


def _initial_guess(model, basis) -> UnifiedUnknowns:
    return UnifiedUnknowns(
        q_next=basis.q0 + basis.dt * basis.v0,
        v_next=basis.v0.copy(),
        lambda_red=np.zeros(basis.impact_set.size),
        psi_red=np.zeros(basis.position_set.size),
    )


def _outcome(model, prev, cfg, basis, x, report) -> StepOutcome:
    lam = np.zeros(model.n_contacts)
    lam[basis.impact_set] = prox_nonneg(x.lambda_red)
    psi = np.zeros(model.n_contacts)
    if basis.position_set.size:
        psi[basis.position_set] = prox_nonneg(x.psi_red)
    return StepOutcome(
        state=GeneralizedState(prev.t + cfg.dt, x.q_next.copy(), x.v_next.copy()),
        lam=lam,
        psi=psi,
        active=basis.impact_set,
        iterations=report.iterations,
        converged=report.converged,
    )


def unified_step(model, prev, cfg):
    """One step of the unified scheme; returns (StepOutcome, NewtonReport)."""
    basis = step_basis(
        model, prev, cfg, position_set=np.arange(model.n_contacts)
    )
    x, report = _newton_solve(model, basis, cfg, _initial_guess(model, basis))
    return _outcome(model, prev, cfg, basis, x, report), report


def reference_step(model, prev, cfg) -> StepOutcome:
    """Unified scheme without the non-penetration rows (impact law only)."""
    basis = step_basis(model, prev, cfg, position_set=np.zeros(0, dtype=int))
    x, report = _newton_solve(model, basis, cfg, _initial_guess(model, basis))
    return _outcome(model, prev, cfg, basis, x, report)


@dataclass
class UnifiedStepper:
    model: MechanicalModel
    cfg: SolverConfig

    def __post_init__(self):
        self.last_report: NewtonReport | None = None

    def step(self, state: GeneralizedState) -> StepOutcome:
        outcome, report = unified_step(self.model, state, self.cfg)
        self.last_report = report
        return outcome


@dataclass
class ReferenceStepper:
    model: MechanicalModel
    cfg: SolverConfig

    def step(self, state: GeneralizedState) -> StepOutcome:
        return reference_step(self.model, state, self.cfg)
