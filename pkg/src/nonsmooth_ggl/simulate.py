"""Fixed-step simulation loop producing a :class:`TrajectoryRecord`."""

from __future__ import annotations

import numpy as np

from .diagnostics import TrajectoryRecord
from .models import GeneralizedState, MechanicalModel

__all__ = ["run_simulation"]


def _mask(active: np.ndarray) -> int:
    code = 0
    for i in active:
        code |= 1 << int(i)
    return code


def run_simulation(
    model: MechanicalModel,
    stepper,
    state0: GeneralizedState,
    n_steps: int,
) -> TrajectoryRecord:
    """Advance ``stepper`` from ``state0`` for ``n_steps`` fixed steps.

    Every step is recorded at full resolution; gaps, gap velocities and
    energies are exact evaluations at the recorded states.  Non-converged
    steps are kept and flagged, so long runs can report failure counts.
    """
    nc = model.n_contacts
    dof = model.dof
    n = n_steps + 1
    times = np.empty(n)
    qs = np.empty((n, dof))
    vs = np.empty((n, dof))
    gaps = np.empty((n, nc))
    gap_vels = np.empty((n, nc))
    lams = np.zeros((n, nc))
    psis = np.zeros((n, nc))
    energies = np.empty(n)
    active_mask = np.zeros(n, dtype=int)
    iters = np.zeros(n, dtype=int)
    converged = np.ones(n, dtype=bool)

    state = state0.copy()
    times[0] = state.t
    qs[0] = state.q
    vs[0] = state.v
    gaps[0] = model.gaps(state.q)
    gap_vels[0] = model.gap_velocities(state.q, state.v)
    energies[0] = model.energy(state.q, state.v)

    for k in range(n_steps):
        out = stepper.step(state)
        state = out.state
        i = k + 1
        times[i] = state.t
        qs[i] = state.q
        vs[i] = state.v
        gaps[i] = model.gaps(state.q)
        gap_vels[i] = model.gap_velocities(state.q, state.v)
        lams[i] = out.lam
        psis[i] = out.psi
        energies[i] = model.energy(state.q, state.v)
        active_mask[i] = _mask(out.active)
        iters[i] = out.iterations
        converged[i] = out.converged

    return TrajectoryRecord(
        times=times,
        qs=qs,
        vs=vs,
        gaps=gaps,
        gap_velocities=gap_vels,
        lambdas=lams,
        psis=psis,
        energies=energies,
        active_mask=active_mask,
        newton_iters=iters,
        converged=converged,
    )
