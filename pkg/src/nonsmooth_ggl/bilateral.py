"""Bilaterally constrained slider-crank integrated at different constraint
levels.

All four schemes share the explicit-midpoint skeleton of the contact
steppers (M, h and the multiplier direction W evaluated at
q_n + dt/2 * v_n) and differ only in which constraint equation is
appended:

- "position":      g(q_next) = 0                       (index 3)
- "velocity":      W(q_next)^T v_next = 0              (index 2)
- "acceleration":  multiplier from the second gap derivative, then a
                   plain unconstrained update           (index 1)
- "ggl":           both g(q_next) = 0 and W(q_next)^T v_next = 0, with a
                   second multiplier on the position update

The appended constraints are evaluated at the implicit end-of-step state,
so the enforced quantity is exactly the recorded one.  Velocity- and
acceleration-level enforcement drift in position (linearly and
parabolically); the combined formulation keeps both levels tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GeneralizedState, MechanicalModel
from .steppers import SolverConfig, StepOutcome

__all__ = [
    "BILATERAL_SCHEMES",
    "bilateral_step",
    "drift_series",
    "BilateralStepper",
]

BILATERAL_SCHEMES = ("position", "velocity", "acceleration", "ggl")


def _midpoint_terms(model, prev, dt):
    q_mid = prev.q + 0.5 * dt * prev.v
    mass = model.mass_matrix(q_mid)
    h_mid = model.force(q_mid, prev.v)
    w_mid = model.constraint_matrix(q_mid)
    return q_mid, mass, h_mid, w_mid


def _acceleration_step(model, prev, cfg) -> StepOutcome:
    """Index-1 elimination: solve the reduced mass-matrix equation for the
    constraint force, then update without further iteration.

    The second gap derivative is zeroed at a half-step velocity predictor
    rather than at v_n; with the centripetal terms of this mechanism the
    v_n evaluation leaves an O(dt^2) gap-velocity error per step whose
    parabolic accumulation folds the mechanism within seconds.
    """
    dt = cfg.dt
    q_mid, mass, _, w_mid = _midpoint_terms(model, prev, dt)
    minv = np.linalg.inv(mass)
    minv_w = minv @ w_mid
    g_red = w_mid.T @ minv_w

    def force_balance(v):
        h = model.force(q_mid, v)
        # directional finite difference of W^T v along v
        d = 1e-7 * max(1.0, float(np.max(np.abs(q_mid))))
        wdot_v = (
            model.constraint_matrix(q_mid + d * v).T @ v
            - model.constraint_matrix(q_mid - d * v).T @ v
        ) / (2.0 * d)
        try:
            lam = np.linalg.solve(g_red, -(w_mid.T @ (minv @ h) + wdot_v))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular constraint Jacobian") from exc
        return lam, h

    lam0, h0 = force_balance(prev.v)
    v_half = prev.v + 0.5 * dt * (minv @ (h0 + w_mid @ lam0))
    lam_force, h_half = force_balance(v_half)
    v_next = prev.v + dt * (minv @ (h_half + w_mid @ lam_force))
    q_next = prev.q + 0.5 * dt * (prev.v + v_next)
    return StepOutcome(
        state=GeneralizedState(prev.t + dt, q_next, v_next),
        lam=lam_force * dt,
        psi=np.zeros(model.n_contacts),
        active=np.arange(model.n_contacts),
        iterations=0,
        converged=True,
    )


def bilateral_step(
    model: MechanicalModel,
    prev: GeneralizedState,
    scheme: str,
    cfg: SolverConfig,
) -> StepOutcome:
    """One midpoint step with the constraint enforced at the given level."""
    if scheme not in BILATERAL_SCHEMES:
        raise ValueError(f"unknown bilateral scheme {scheme!r}")
    if scheme == "acceleration":
        return _acceleration_step(model, prev, cfg)

    dt = cfg.dt
    dof = model.dof
    nc = model.n_contacts
    _, mass, h_mid, w_mid = _midpoint_terms(model, prev, dt)
    minv = np.linalg.inv(mass)
    minv_w = minv @ w_mid

    with_psi = scheme == "ggl"
    n = 2 * dof + nc + (nc if with_psi else 0)

    def unpack(z):
        q = z[:dof]
        v = z[dof : 2 * dof]
        lam = z[2 * dof : 2 * dof + nc]
        psi = z[2 * dof + nc :] if with_psi else np.zeros(0)
        return q, v, lam, psi

    def residual(z):
        q, v, lam, psi = unpack(z)
        r1 = q - prev.q - 0.5 * dt * (v + prev.v)
        if with_psi:
            r1 = r1 - w_mid @ psi
        r2 = v - prev.v - minv @ (h_mid * dt + w_mid @ lam)
        rows = [r1, r2]
        if scheme in ("velocity", "ggl"):
            rows.append(model.constraint_matrix(q).T @ v)
        if scheme in ("position", "ggl"):
            rows.append(model.gaps(q))
        return np.concatenate(rows)

    def jacobian(z):
        q, v, lam, psi = unpack(z)
        jac = np.zeros((n, n))
        eye = np.eye(dof)
        jac[:dof, :dof] = eye
        jac[:dof, dof : 2 * dof] = -0.5 * dt * eye
        if with_psi:
            jac[:dof, 2 * dof + nc :] = -w_mid
        jac[dof : 2 * dof, dof : 2 * dof] = eye
        jac[dof : 2 * dof, 2 * dof : 2 * dof + nc] = -minv_w
        w_q = model.constraint_matrix(q)
        row = 2 * dof
        if scheme in ("velocity", "ggl"):
            tens = model.constraint_tensor(q)
            jac[row : row + nc, :dof] = np.einsum("ijk,i->jk", tens, v)
            jac[row : row + nc, dof : 2 * dof] = w_q.T
            row += nc
        if scheme in ("position", "ggl"):
            jac[row : row + nc, :dof] = w_q.T
        return jac

    z = np.concatenate(
        [prev.q + dt * prev.v, prev.v, np.zeros(nc), np.zeros(nc if with_psi else 0)]
    )
    res = residual(z)
    err = float(np.max(np.abs(res)))
    iters = 0
    while err > cfg.newton_tol and iters < cfg.max_iter:
        try:
            dz = np.linalg.solve(jacobian(z), res)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular constraint Jacobian") from exc
        z = z - dz
        res = residual(z)
        err = float(np.max(np.abs(res)))
        iters += 1

    q, v, lam, psi = unpack(z)
    return StepOutcome(
        state=GeneralizedState(prev.t + dt, q.copy(), v.copy()),
        lam=lam.copy(),
        psi=psi.copy() if with_psi else np.zeros(nc),
        active=np.arange(nc),
        iterations=iters,
        converged=bool(err <= cfg.newton_tol),
    )


def drift_series(model, scheme, cfg, horizon):
    """Times and constraint values g(q_n) of a run over ``horizon``."""
    n_steps = int(round(horizon / cfg.dt))
    if abs(n_steps * cfg.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a multiple of dt")
    state = model.initial_state()
    times = np.empty(n_steps + 1)
    gaps = np.empty(n_steps + 1)
    times[0] = state.t
    gaps[0] = model.gaps(state.q)[0]
    for k in range(n_steps):
        out = bilateral_step(model, state, scheme, cfg)
        state = out.state
        times[k + 1] = state.t
        gaps[k + 1] = model.gaps(state.q)[0]
    return times, gaps


@dataclass
class BilateralStepper:
    model: MechanicalModel
    cfg: SolverConfig
    scheme: str = "ggl"

    def __post_init__(self):
        if self.scheme not in BILATERAL_SCHEMES:
            raise ValueError(f"unknown bilateral scheme {self.scheme!r}")

    def step(self, state: GeneralizedState) -> StepOutcome:
        return bilateral_step(self.model, state, self.scheme, self.cfg)
