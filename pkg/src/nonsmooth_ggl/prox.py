"""Projection onto the nonnegative cone and the nonsmooth contact residuals.

Complementarity conditions of the form 0 <= y | x >= 0 are rewritten as
roots of x - prox(x - r*y) with a positive per-row weight r.  The root set
does not depend on r; r only scales the rows, which matters for Newton
conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProxParams",
    "prox_nonneg",
    "impact_residual",
    "position_residual",
    "delassus",
    "delassus_row_scaling",
]


@dataclass
class ProxParams:
    """Positive diagonal row weights for the prox reformulation."""

    r: np.ndarray

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if np.any(self.r <= 0.0):
            raise ValueError("prox weights must be positive")


def _weights(r) -> np.ndarray:
    return r.r if isinstance(r, ProxParams) else np.asarray(r, dtype=float)


def prox_nonneg(x):
    """Projection of x onto [0, inf); elementwise on arrays."""
    return np.maximum(x, 0.0)


def impact_residual(lam, gdot_next, gdot_now, eps, r):
    """Residual of the discrete impact law on the active contacts.

    Zero exactly when 0 <= gdot_next + eps*gdot_now  |  lam >= 0 holds
    componentwise.
    """
    lam = np.asarray(lam, dtype=float)
    gdot_next = np.asarray(gdot_next, dtype=float)
    gdot_now = np.asarray(gdot_now, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if not lam.shape == gdot_next.shape == gdot_now.shape == eps.shape:
        raise ValueError("impact residual arguments must share one shape")
    return lam - prox_nonneg(lam - _weights(r) * (gdot_next + eps * gdot_now))


def position_residual(psi, g_next, r):
    """Residual of the non-penetration condition 0 <= g | psi >= 0."""
    psi = np.asarray(psi, dtype=float)
    g_next = np.asarray(g_next, dtype=float)
    if psi.shape != g_next.shape:
        raise ValueError("position residual arguments must share one shape")
    return psi - prox_nonneg(psi - _weights(r) * g_next)


def delassus(mass: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Contact-space effective inverse mass G = W^T M^-1 W."""
    return w.T @ np.linalg.solve(mass, w)


def delassus_row_scaling(mass: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-contact weights 1/diag(G); unit-scales the velocity rows."""
    g = np.einsum("ij,ij->j", w, np.linalg.solve(mass, w))
    if np.any(g <= 0.0):
        raise np.linalg.LinAlgError("Delassus diagonal not positive")
    return 1.0 / g
