"""Post-processing of simulated trajectories: penetration statistics,
drift regression, energy series and contact-phase windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GeneralizedState, MechanicalModel

__all__ = [
    "TrajectoryRecord",
    "PenetrationStats",
    "DriftFit",
    "penetration_stats",
    "drift_fit",
    "energy_series",
    "single_contact_windows",
]


@dataclass
class TrajectoryRecord:
    """Uniformly sampled time series of a simulation.

    Gap values and gap velocities are exact evaluations at the recorded
    states (not the in-step linearizations); ``active_mask`` row k flags
    the contacts that carried impact rows in the step that produced state
    k, and ``lam``/``psi`` hold the multipliers of that step, scattered to
    the full contact layout.  Row 0 describes the initial state and has
    zero multipliers.
    """

    times: np.ndarray
    qs: np.ndarray
    vs: np.ndarray
    gaps: np.ndarray
    gap_velocities: np.ndarray
    lambdas: np.ndarray
    psis: np.ndarray
    energies: np.ndarray
    active_mask: np.ndarray
    newton_iters: np.ndarray
    converged: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        for name in (
            "qs",
            "vs",
            "gaps",
            "gap_velocities",
            "lambdas",
            "psis",
            "energies",
            "active_mask",
            "newton_iters",
            "converged",
        ):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} has inconsistent length")
        if n >= 2:
            spacing = np.diff(self.times)
            if np.any(spacing <= 0.0):
                raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        if len(self.times) < 2:
            raise ValueError("record has no spacing")
        return float(self.times[1] - self.times[0])

    def state(self, i: int) -> GeneralizedState:
        return GeneralizedState(float(self.times[i]), self.qs[i].copy(), self.vs[i].copy())


@dataclass
class PenetrationStats:
    min_gap: float
    violation_time: float
    per_contact_min: np.ndarray


def penetration_stats(rec: TrajectoryRecord) -> PenetrationStats:
    """Worst penetration and total violation time of a record.

    Violation time is counted in whole record steps: a row with any
    negative gap contributes one spacing dt.
    """
    if len(rec) == 0:
        raise ValueError("empty trajectory record")
    per_contact = rec.gaps.min(axis=0)
    violated_rows = int(np.count_nonzero(rec.gaps.min(axis=1) < 0.0))
    dt = rec.dt if len(rec) >= 2 else 0.0
    return PenetrationStats(
        min_gap=float(rec.gaps.min()),
        violation_time=violated_rows * dt,
        per_contact_min=per_contact,
    )


@dataclass
class DriftFit:
    """Least-squares polynomial fit; coefficients in descending degree."""

    coefficients: np.ndarray
    rms_residual: float
    stderr: np.ndarray


def drift_fit(times, values, model: str = "linear") -> DriftFit:
    """Ordinary least squares of a drift series against t or t^2.

    Returns the coefficients (descending powers), the root-mean-square
    residual and the standard error of each coefficient.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if model not in ("linear", "quadratic"):
        raise ValueError(f"unknown drift model {model!r}")
    deg = 1 if model == "linear" else 2
    if times.size < deg + 2:
        raise ValueError("too few points for a drift fit")
    if np.ptp(times) == 0.0:
        raise ValueError("degenerate drift series: constant time")
    design = np.vander(times, deg + 1)
    coeff, _, _, _ = np.linalg.lstsq(design, values, rcond=None)
    resid = values - design @ coeff
    rss = float(resid @ resid)
    dof = times.size - (deg + 1)
    sigma2 = rss / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return DriftFit(
        coefficients=coeff,
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        stderr=np.sqrt(np.maximum(np.diag(cov), 0.0)),
    )


def energy_series(model: MechanicalModel, rec: TrajectoryRecord):
    """Recompute E(q, v) for every recorded state.

    Returns (energies, max_step_increase); the increase is the largest
    E_{k+1} - E_k, zero for records without steps.
    """
    if rec.qs.shape[1] != model.dof:
        raise ValueError("record dimension does not match model")
    energies = np.array(
        [model.energy(rec.qs[i], rec.vs[i]) for i in range(len(rec))]
    )
    max_increase = float(np.max(np.diff(energies))) if len(rec) >= 2 else 0.0
    return energies, max_increase


def single_contact_windows(rec: TrajectoryRecord, min_steps: int = 10):
    """Maximal index ranges where exactly one contact is continuously active.

    Returns a list of (start, stop, contact) with stop exclusive; used to
    restrict drift regressions to closed-contact phases.
    """
    mask = np.asarray(rec.active_mask, dtype=int)
    n = len(mask)
    windows = []
    start = None
    current = -1
    for i in range(n + 1):
        code = mask[i] if i < n else -1
        single = code >= 0 and bin(code).count("1") == 1
        if single and code == current:
            continue
        if start is not None and i - start >= min_steps:
            windows.append((start, i, int(np.log2(current))))
        start = i if single else None
        current = code if single else -1
    return windows
