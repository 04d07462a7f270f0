"""Mechanical models with unilateral or bilateral constraints.

A model bundles the ingredients of a constrained rigid multibody system:
mass matrix M(q), generalized force vector h(q, v), gap functions g(q)
with their gradient matrix W(q), restitution coefficients and the total
mechanical energy.  Conventions used throughout the package:

- ``q`` and ``v`` are generalized positions and velocities of equal length
  (``dof``).
- ``W(q)`` has shape ``(dof, n_contacts)``; column ``i`` is the gradient of
  gap ``i``, so gap velocities are ``W(q).T @ v`` and a contact impulse
  ``L`` enters the momentum balance as ``W(q) @ L``.

Three concrete models are provided: a planar slider-crank whose slider
moves inside a notch with clearance (four corner contacts), the same
mechanism with the slider pinned to a fixed height (one bilateral
constraint), and a point mass bouncing on a flat floor, which serves as an
analytically tractable benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeneralizedState",
    "MechanicalModel",
    "SliderCrankParams",
    "BouncingBallParams",
    "UnilateralSliderCrank",
    "BilateralSliderCrank",
    "BouncingBall",
]


@dataclass
class GeneralizedState:
    """Snapshot (t, q, v) of a trajectory."""

    t: float
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if self.q.shape != self.v.shape:
            raise ValueError(
                f"state dimension mismatch: q has shape {self.q.shape}, "
                f"v has shape {self.v.shape}"
            )
        if not math.isfinite(self.t):
            raise ValueError("state time must be finite")

    @property
    def dof(self) -> int:
        return self.q.size

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.t, self.q.copy(), self.v.copy())


class MechanicalModel:
    """Evaluation interface for a constrained mechanical system.

    Subclasses must set ``dof``, ``n_contacts`` and ``eps`` and implement
    the closed-form evaluations.  All evaluations are pure functions of
    their arguments; instances carry no mutable state and can be shared
    freely between simulation workers.

    The derivative hooks (``constraint_tensor``, ``force_jacobian_q``,
    ``force_jacobian_v``) have central finite-difference fallbacks with
    step ``1e-7 * max(1, |q|_inf)``; models with cheap closed forms
    override them.
    """

    dof: int = 0
    n_contacts: int = 0
    eps: np.ndarray

    # -- closed-form evaluations ------------------------------------------

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        """Symmetric positive definite M(q), shape (dof, dof)."""
        raise NotImplementedError

    def force(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Generalized force vector h(q, v), shape (dof,)."""
        raise NotImplementedError

    def gaps(self, q: np.ndarray) -> np.ndarray:
        """Gap functions g(q), shape (n_contacts,)."""
        raise NotImplementedError

    def constraint_matrix(self, q: np.ndarray) -> np.ndarray:
        """Gap gradients W(q), shape (dof, n_contacts)."""
        raise NotImplementedError

    def potential(self, q: np.ndarray) -> float:
        """Potential energy V(q); gradient must cancel the gravity part of h."""
        raise NotImplementedError

    # -- derived quantities ------------------------------------------------

    def gap_velocities(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        self._check_qv(q, v)
        return self.constraint_matrix(q).T @ v

    def energy(self, q: np.ndarray, v: np.ndarray) -> float:
        self._check_qv(q, v)
        return 0.5 * float(v @ (self.mass_matrix(q) @ v)) + self.potential(q)

    # -- derivative hooks (finite-difference fallbacks) ---------------------

    def _fd_step(self, q: np.ndarray) -> float:
        return 1e-7 * max(1.0, float(np.max(np.abs(q))))

    def constraint_tensor(self, q: np.ndarray) -> np.ndarray:
        """dW/dq as an array T with T[i, j, k] = d W[i, j] / d q[k]."""
        self._check_q(q)
        d = self._fd_step(q)
        t = np.empty((self.dof, self.n_contacts, self.dof))
        for k in range(self.dof):
            dq = np.zeros(self.dof)
            dq[k] = d
            t[:, :, k] = (
                self.constraint_matrix(q + dq) - self.constraint_matrix(q - dq)
            ) / (2.0 * d)
        return t

    def force_jacobian_q(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        self._check_qv(q, v)
        d = self._fd_step(q)
        jac = np.empty((self.dof, self.dof))
        for k in range(self.dof):
            dq = np.zeros(self.dof)
            dq[k] = d
            jac[:, k] = (self.force(q + dq, v) - self.force(q - dq, v)) / (2.0 * d)
        return jac

    def force_jacobian_v(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        self._check_qv(q, v)
        d = 1e-7 * max(1.0, float(np.max(np.abs(v))))
        jac = np.empty((self.dof, self.dof))
        for k in range(self.dof):
            dv = np.zeros(self.dof)
            dv[k] = d
            jac[:, k] = (self.force(q, v + dv) - self.force(q, v - dv)) / (2.0 * d)
        return jac

    # -- contract checks -----------------------------------------------------

    def _check_q(self, q) -> None:
        if np.shape(q) != (self.dof,):
            raise ValueError(
                f"position vector has shape {np.shape(q)}, expected ({self.dof},)"
            )

    def _check_qv(self, q, v) -> None:
        self._check_q(q)
        if np.shape(v) != (self.dof,):
            raise ValueError(
                f"velocity vector has shape {np.shape(v)}, expected ({self.dof},)"
            )


@dataclass
class SliderCrankParams:
    """Geometry, inertia and load data of the slider-crank mechanism.

    Lengths in m, masses in kg, inertias in kg m^2.  The slider (body 3,
    half-length ``a``, half-height ``b``) runs in a notch of height ``d``
    with total vertical clearance ``c``; the geometric relation
    ``d = 2 b + c`` ties the three together, so ``d`` is normally derived.
    """

    l1: float = 0.1530
    l2: float = 0.3060
    a: float = 0.0500
    b: float = 0.0250
    c: float = 0.0010
    d: float | None = None
    m1: float = 0.0380
    m2: float = 0.0380
    m3: float = 0.0760
    J1: float = 7.4e-5
    J2: float = 5.9e-4
    J3: float = 2.7e-6
    grav: float = 9.81
    unilateral: bool = True

    def __post_init__(self):
        for name in ("l1", "l2", "a", "b", "c", "m1", "m2", "m3", "J1", "J2", "J3"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"slider-crank parameter {name} must be positive")
        derived = 2.0 * self.b + self.c
        if self.d is None:
            self.d = derived
        elif not math.isclose(self.d, derived, rel_tol=1e-12):
            raise ValueError(f"notch height d must equal 2*b + c = {derived}")


@dataclass
class BouncingBallParams:
    """Point mass dropped on a flat floor; the gap is the height itself."""

    mass: float = 1.0
    grav: float = 9.81
    height: float = 0.1
    eps: float = 0.5

    def __post_init__(self):
        if self.mass <= 0.0 or self.grav <= 0.0:
            raise ValueError("ball mass and gravity must be positive")
        if self.height < 0.0:
            raise ValueError("drop height must be nonnegative")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")


class _SliderCrankBase(MechanicalModel):
    """Shared closed forms of the crank (1) / rod (2) / slider (3) chain."""

    def __init__(self, params: SliderCrankParams | None):
        self.params = params if params is not None else SliderCrankParams()
        p = self.params
        # recurring coefficients of M, h and V
        self._m11 = p.J1 + p.l1**2 * (p.m1 / 4.0 + p.m2 + p.m3)
        self._m22 = p.J2 + p.l2**2 * (p.m2 / 4.0 + p.m3)
        self._k12 = p.l1 * p.l2 * (p.m2 / 2.0 + p.m3)
        self._c1 = p.m1 / 2.0 + p.m2 + p.m3
        self._c2 = p.m2 / 2.0 + p.m3

    def _mass_2x2(self, th1: float, th2: float) -> tuple[float, float, float]:
        m12 = self._k12 * math.cos(th1 - th2)
        return self._m11, m12, self._m22

    def _force_2(self, th1, th2, w1, w2) -> tuple[float, float]:
        p = self.params
        s12 = math.sin(th1 - th2)
        h1 = -self._k12 * s12 * w2**2 - p.grav * p.l1 * math.cos(th1) * self._c1
        h2 = self._k12 * s12 * w1**2 - p.grav * p.l2 * math.cos(th2) * self._c2
        return h1, h2

    def _potential_2(self, th1: float, th2: float) -> float:
        p = self.params
        return p.grav * (
            p.l1 * math.sin(th1) * self._c1 + p.l2 * math.sin(th2) * self._c2
        )

    def slider_height(self, q: np.ndarray) -> float:
        """Vertical position of the slider's center of gravity."""
        p = self.params
        return p.l1 * math.sin(q[0]) + p.l2 * math.sin(q[1])


class UnilateralSliderCrank(_SliderCrankBase):
    """Slider-crank whose slider rattles in a notch: four corner contacts.

    Coordinates are the absolute angles (theta1, theta2, theta3) of crank,
    rod and slider.  Contacts 0 and 1 guard the upper wall (leading and
    trailing slider corner), contacts 2 and 3 the lower wall.
    """

    dof = 3
    n_contacts = 4

    def __init__(self, params: SliderCrankParams | None = None, eps=0.1):
        super().__init__(params)
        self.eps = np.broadcast_to(np.asarray(eps, dtype=float), (4,)).copy()
        if np.any(self.eps < 0.0) or np.any(self.eps > 1.0):
            raise ValueError("restitution coefficients must lie in [0, 1]")

    @staticmethod
    def initial_state() -> GeneralizedState:
        """Reference initial condition: zero angles, spinning crank."""
        return GeneralizedState(0.0, np.zeros(3), np.array([150.0, -75.0, 0.0]))

    def mass_matrix(self, q):
        self._check_q(q)
        m11, m12, m22 = self._mass_2x2(q[0], q[1])
        return np.array([[m11, m12, 0.0], [m12, m22, 0.0], [0.0, 0.0, self.params.J3]])

    def force(self, q, v):
        self._check_qv(q, v)
        h1, h2 = self._force_2(q[0], q[1], v[0], v[1])
        return np.array([h1, h2, 0.0])

    def gaps(self, q):
        self._check_q(q)
        p = self.params
        y = p.l1 * math.sin(q[0]) + p.l2 * math.sin(q[1])
        sa = p.a * math.sin(q[2])
        cb = p.b * math.cos(q[2])
        half = p.d / 2.0
        return np.array(
            [
                half - y + sa - cb,
                half - y - sa - cb,
                half + y - sa - cb,
                half + y + sa - cb,
            ]
        )

    def constraint_matrix(self, q):
        self._check_q(q)
        p = self.params
        c1 = p.l1 * math.cos(q[0])
        c2 = p.l2 * math.cos(q[1])
        ac = p.a * math.cos(q[2])
        bs = p.b * math.sin(q[2])
        return np.array(
            [
                [-c1, -c1, c1, c1],
                [-c2, -c2, c2, c2],
                [ac + bs, -ac + bs, -ac + bs, ac + bs],
            ]
        )

    def potential(self, q):
        self._check_q(q)
        return self._potential_2(q[0], q[1])

    def constraint_tensor(self, q):
        self._check_q(q)
        p = self.params
        s1 = p.l1 * math.sin(q[0])
        s2 = p.l2 * math.sin(q[1])
        as3 = p.a * math.sin(q[2])
        bc3 = p.b * math.cos(q[2])
        t = np.zeros((3, 4, 3))
        t[0, :, 0] = (s1, s1, -s1, -s1)
        t[1, :, 1] = (s2, s2, -s2, -s2)
        t[2, :, 2] = (-as3 + bc3, as3 + bc3, as3 + bc3, -as3 + bc3)
        return t

    def force_jacobian_q(self, q, v):
        self._check_qv(q, v)
        p = self.params
        c12 = self._k12 * math.cos(q[0] - q[1])
        jac = np.zeros((3, 3))
        jac[0, 0] = -c12 * v[1] ** 2 + p.grav * p.l1 * math.sin(q[0]) * self._c1
        jac[0, 1] = c12 * v[1] ** 2
        jac[1, 0] = c12 * v[0] ** 2
        jac[1, 1] = -c12 * v[0] ** 2 + p.grav * p.l2 * math.sin(q[1]) * self._c2
        return jac

    def force_jacobian_v(self, q, v):
        self._check_qv(q, v)
        s12 = self._k12 * math.sin(q[0] - q[1])
        jac = np.zeros((3, 3))
        jac[0, 1] = -2.0 * s12 * v[1]
        jac[1, 0] = 2.0 * s12 * v[0]
        return jac


class BilateralSliderCrank(_SliderCrankBase):
    """Slider-crank with the slider pinned at a fixed height.

    The single two-sided constraint g = l1 sin(theta1) + l2 sin(theta2) = 0
    replaces the notch; there is no impact dynamics and ``eps`` is unused.
    """

    dof = 2
    n_contacts = 1

    def __init__(self, params: SliderCrankParams | None = None):
        if params is None:
            params = SliderCrankParams(unilateral=False)
        elif params.unilateral:
            params = dataclasses.replace(params, unilateral=False)
        super().__init__(params)
        self.eps = np.zeros(1)

    @staticmethod
    def initial_state() -> GeneralizedState:
        # consistent with g = 0 and g' = l1*150 - l2*75 = 0
        return GeneralizedState(0.0, np.zeros(2), np.array([150.0, -75.0]))

    def mass_matrix(self, q):
        self._check_q(q)
        m11, m12, m22 = self._mass_2x2(q[0], q[1])
        return np.array([[m11, m12], [m12, m22]])

    def force(self, q, v):
        self._check_qv(q, v)
        return np.array(self._force_2(q[0], q[1], v[0], v[1]))

    def gaps(self, q):
        self._check_q(q)
        p = self.params
        return np.array([p.l1 * math.sin(q[0]) + p.l2 * math.sin(q[1])])

    def constraint_matrix(self, q):
        self._check_q(q)
        p = self.params
        return np.array([[p.l1 * math.cos(q[0])], [p.l2 * math.cos(q[1])]])

    def potential(self, q):
        self._check_q(q)
        return self._potential_2(q[0], q[1])

    def constraint_tensor(self, q):
        self._check_q(q)
        p = self.params
        t = np.zeros((2, 1, 2))
        t[0, 0, 0] = -p.l1 * math.sin(q[0])
        t[1, 0, 1] = -p.l2 * math.sin(q[1])
        return t

    def force_jacobian_q(self, q, v):
        self._check_qv(q, v)
        p = self.params
        c12 = self._k12 * math.cos(q[0] - q[1])
        return np.array(
            [
                [
                    -c12 * v[1] ** 2 + p.grav * p.l1 * math.sin(q[0]) * self._c1,
                    c12 * v[1] ** 2,
                ],
                [
                    c12 * v[0] ** 2,
                    -c12 * v[0] ** 2 + p.grav * p.l2 * math.sin(q[1]) * self._c2,
                ],
            ]
        )

    def force_jacobian_v(self, q, v):
        self._check_qv(q, v)
        s12 = self._k12 * math.sin(q[0] - q[1])
        return np.array([[0.0, -2.0 * s12 * v[1]], [2.0 * s12 * v[0], 0.0]])


class BouncingBall(MechanicalModel):
    """Point mass over a flat floor; the coordinate is the gap itself."""

    dof = 1
    n_contacts = 1

    def __init__(self, params: BouncingBallParams | None = None):
        self.params = params if params is not None else BouncingBallParams()
        self.eps = np.array([self.params.eps])

    def initial_state(self) -> GeneralizedState:
        return GeneralizedState(0.0, np.array([self.params.height]), np.zeros(1))

    def mass_matrix(self, q):
        self._check_q(q)
        return np.array([[self.params.mass]])

    def force(self, q, v):
        self._check_qv(q, v)
        return np.array([-self.params.mass * self.params.grav])

    def gaps(self, q):
        self._check_q(q)
        return np.array([q[0]])

    def constraint_matrix(self, q):
        self._check_q(q)
        return np.array([[1.0]])

    def potential(self, q):
        self._check_q(q)
        return self.params.mass * self.params.grav * q[0]

    def constraint_tensor(self, q):
        self._check_q(q)
        return np.zeros((1, 1, 1))

    def force_jacobian_q(self, q, v):
        self._check_qv(q, v)
        return np.zeros((1, 1))

    def force_jacobian_v(self, q, v):
        self._check_qv(q, v)
        return np.zeros((1, 1))
