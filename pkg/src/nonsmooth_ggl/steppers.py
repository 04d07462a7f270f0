"""Explicit-midpoint timestepping: the classic rule and its decoupled
position-corrected extension.

Both schemes evaluate M, h and W once at the explicit midpoint
q_n + dt/2 * v_n and treat contacts through mean impulses over the step.
The impulse subproblem on the predicted active set is solved by a
semismooth Newton iteration on the prox reformulation; the decoupled
variant afterwards projects the positions onto the admissible set with a
second multiplier, which is cheap but, deliberately, not energy
consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GeneralizedState, MechanicalModel
from .prox import delassus_row_scaling, prox_nonneg

__all__ = [
    "SolverConfig",
    "StepOutcome",
    "predict_active_set",
    "moreau_step",
    "decoupled_ggl_step",
    "MoreauStepper",
    "DecoupledGGLStepper",
]


@dataclass
class SolverConfig:
    """Numerical settings shared by all steppers.

    ``r_mode`` selects the prox row weights: "delassus" uses 1/diag(G)
    for the velocity rows and 1 for the position rows, "unit" uses 1
    everywhere, "scalar" uses ``r_scale`` everywhere.
    """

    dt: float
    newton_tol: float = 1e-10
    max_iter: int = 50
    active_tol: float = 0.0
    scheme: str = ""
    r_mode: str = "delassus"
    r_scale: float = 1.0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("time step dt must be positive")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.r_mode not in ("delassus", "unit", "scalar"):
            raise ValueError(f"unknown r_mode {self.r_mode!r}")
        if self.r_mode == "scalar" and self.r_scale <= 0.0:
            raise ValueError("scalar prox weight must be positive")

    def velocity_weights(self, mass: np.ndarray, w_active: np.ndarray) -> np.ndarray:
        n = w_active.shape[1]
        if self.r_mode == "delassus":
            return delassus_row_scaling(mass, w_active)
        if self.r_mode == "unit":
            return np.ones(n)
        return np.full(n, self.r_scale)

    def position_weights(self, n: int) -> np.ndarray:
        if self.r_mode == "scalar":
            return np.full(n, self.r_scale)
        return np.ones(n)


@dataclass
class StepOutcome:
    """Result of one step: new state, multipliers and solver statistics.

    ``lam`` and ``psi`` are given in the full contact layout with zeros
    off the active set.
    """

    state: GeneralizedState
    lam: np.ndarray
    psi: np.ndarray
    active: np.ndarray
    iterations: int
    converged: bool


def _scatter(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    if idx.size:
        out[idx] = prox_nonneg(values)
    return out


def predict_active_set(
    model: MechanicalModel,
    state: GeneralizedState,
    dt: float,
    active_tol: float = 0.0,
) -> np.ndarray:
    """Contacts whose midpoint-forecast gap falls below ``active_tol``."""
    if dt <= 0.0:
        raise ValueError("time step dt must be positive")
    g_mid = model.gaps(state.q + 0.5 * dt * state.v)
    return np.flatnonzero(g_mid < active_tol)


def _solve_impulse(g_mat, bias, r, tol, max_iter):
    """Semismooth Newton for lam = prox(lam - r*(G lam + bias)).

    The residual is piecewise linear in lam, so the iteration typically
    terminates in a handful of steps.  Returns (lam, iterations, converged).
    """
    n = bias.size
    lam = np.zeros(n)
    res = lam - prox_nonneg(lam - r * (g_mat @ lam + bias))
    iters = 0
    while np.max(np.abs(res)) > tol and iters < max_iter:
        arg = lam - r * (g_mat @ lam + bias)
        jac = np.eye(n)
        branch = arg >= 0.0
        if np.any(branch):
            jac[branch, :] = r[branch, None] * g_mat[branch, :]
        lam = lam - np.linalg.solve(jac, res)
        res = lam - prox_nonneg(lam - r * (g_mat @ lam + bias))
        iters += 1
    return lam, iters, bool(np.max(np.abs(res)) <= tol)


def _velocity_stage(model, state, cfg):
    """Shared velocity update; returns the step internals."""
    dt = cfg.dt
    q_mid = state.q + 0.5 * dt * state.v
    mass = model.mass_matrix(q_mid)
    w_mid = model.constraint_matrix(q_mid)
    h_mid = model.force(q_mid, state.v)
    free = np.linalg.solve(mass, h_mid * dt)
    active = predict_active_set(model, state, dt, cfg.active_tol)

    if active.size == 0:
        v_next = state.v + free
        return q_mid, mass, w_mid, active, np.zeros(0), v_next, 0, True

    w_act = w_mid[:, active]
    minv_w = np.linalg.solve(mass, w_act)
    g_mat = w_act.T @ minv_w
    gdot_now = w_mid.T @ state.v
    # gdot_next(lam) = G lam + gdot_now + W^T M^-1 h dt
    bias = gdot_now[active] + w_act.T @ free + model.eps[active] * gdot_now[active]
    r = cfg.velocity_weights(mass, w_act)
    lam, iters, ok = _solve_impulse(g_mat, bias, r, cfg.newton_tol, cfg.max_iter)
    v_next = state.v + free + minv_w @ lam
    return q_mid, mass, w_mid, active, lam, v_next, iters, ok


def moreau_step(model, state, cfg) -> StepOutcome:
    """One step of the explicit-midpoint rule with velocity-level contacts."""
    _, _, _, active, lam, v_next, iters, ok = _velocity_stage(model, state, cfg)
    q_next = state.q + 0.5 * cfg.dt * (state.v + v_next)
    return StepOutcome(
        state=GeneralizedState(state.t + cfg.dt, q_next, v_next),
        lam=_scatter(lam, active, model.n_contacts),
        psi=np.zeros(model.n_contacts),
        active=active,
        iterations=iters,
        converged=ok,
    )


def decoupled_ggl_step(model, state, cfg) -> StepOutcome:
    """Velocity stage as above, then projection of the positions.

    The position correction q_next = q_forecast + W_mid[:, act] @ psi is
    driven to 0 <= g(q_next) | psi >= 0 on the same active set, starting
    from psi = 0 at the explicit forecast.
    """
    _, _, w_mid, active, lam, v_next, iters, ok = _velocity_stage(model, state, cfg)
    q_bar = state.q + 0.5 * cfg.dt * (state.v + v_next)

    psi = np.zeros(0)
    if active.size:
        w_act = w_mid[:, active]
        r = cfg.position_weights(active.size)
        psi = np.zeros(active.size)
        q_next = q_bar
        res = psi - prox_nonneg(psi - r * model.gaps(q_next)[active])
        pos_iters = 0
        while np.max(np.abs(res)) > cfg.newton_tol and pos_iters < cfg.max_iter:
            arg = psi - r * model.gaps(q_next)[active]
            jac = np.eye(active.size)
            branch = arg >= 0.0
            if np.any(branch):
                dg = model.constraint_matrix(q_next)[:, active].T @ w_act
                jac[branch, :] = r[branch, None] * dg[branch, :]
            psi = psi - np.linalg.solve(jac, res)
            q_next = q_bar + w_act @ psi
            res = psi - prox_nonneg(psi - r * model.gaps(q_next)[active])
            pos_iters += 1
        iters += pos_iters
        ok = ok and bool(np.max(np.abs(res)) <= cfg.newton_tol)
        q_next = q_bar + w_act @ psi
    else:
        q_next = q_bar

    return StepOutcome(
        state=GeneralizedState(state.t + cfg.dt, q_next, v_next),
        lam=_scatter(lam, active, model.n_contacts),
        psi=_scatter(psi, active, model.n_contacts),
        active=active,
        iterations=iters,
        converged=ok,
    )


@dataclass
class MoreauStepper:
    model: MechanicalModel
    cfg: SolverConfig

    def step(self, state: GeneralizedState) -> StepOutcome:
        return moreau_step(self.model, state, self.cfg)


@dataclass
class DecoupledGGLStepper:
    model: MechanicalModel
    cfg: SolverConfig

    def step(self, state: GeneralizedState) -> StepOutcome:
        return decoupled_ggl_step(self.model, state, self.cfg)
