"""Analytic contact-free dynamics: pendulum, cartpole, acrobot, planar reacher.

All step functions are pure and vectorized: ``q``/``v`` may be shaped
``(dof,)`` for a single system or ``(batch, dof)`` for a batch. Integration is
semi-implicit (symplectic) Euler with the velocity updated first.

Angle conventions: pendulum theta = 0 hanging, theta = pi upright; cartpole
pole angle measured from upright; acrobot/reacher link angles measured from
straight down (reacher is gravity-free so the reference is arbitrary).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mathcore import InvalidInputError


@dataclass(frozen=True)
class SystemState:
    """Generalized positions/velocities plus accumulated time."""

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.q.shape != self.v.shape:
            raise InvalidInputError("q and v must have matching shapes")


@dataclass(frozen=True)
class DynamicsParams:
    """Physical constants shared by the analytic tasks (config-overridable)."""

    dt: float = 0.01
    gravity: float = 9.81
    # pendulum
    pend_mass: float = 1.0
    pend_length: float = 0.5
    pend_damping: float = 0.05
    pend_torque_limit: float = 2.5
    # cartpole
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5
    rail_limit: float = 1.8
    cart_force_limit: float = 10.0
    # two-link (acrobot / reacher)
    link1_mass: float = 1.0
    link2_mass: float = 1.0
    link1_length: float = 1.0
    link2_length: float = 1.0
    link_damping: float = 0.0
    elbow_torque_limit: float = 8.0
    reacher_torque_limit: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        for name in ("pend_mass", "pend_length", "cart_mass", "pole_mass",
                     "pole_length", "link1_mass", "link2_mass",
                     "link1_length", "link2_length"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")

    def with_dt(self, dt: float) -> "DynamicsParams":
        return replace(self, dt=dt)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite value in dynamics input")


# ---------------------------------------------------------------------------
# pendulum


def pendulum_accel(theta, omega, torque, p: DynamicsParams):
    m, l, g = p.pend_mass, p.pend_length, p.gravity
    return (torque - p.pend_damping * omega - m * g * l * np.sin(theta)) / (m * l * l)


def step_pendulum(s: SystemState, torque, p: DynamicsParams) -> SystemState:
    _check_finite(s.q, s.v, torque)
    torque = np.clip(torque, -p.pend_torque_limit, p.pend_torque_limit)
    theta = s.q[..., 0]
    omega = s.v[..., 0]
    omega_new = omega + p.dt * pendulum_accel(theta, omega, np.asarray(torque).reshape(theta.shape), p)
    theta_new = theta + p.dt * omega_new
    return SystemState(q=theta_new[..., None], v=omega_new[..., None], t=s.t + p.dt)


def pendulum_energy(s: SystemState, p: DynamicsParams):
    m, l, g = p.pend_mass, p.pend_length, p.gravity
    theta = s.q[..., 0]
    omega = s.v[..., 0]
    return 0.5 * m * l * l * omega**2 + m * g * l * (1.0 - np.cos(theta))


# ---------------------------------------------------------------------------
# cartpole


def cartpole_accel(x, theta, xdot, thetadot, force, p: DynamicsParams):
    """(xddot, thetaddot) for a cart with a point-mass pole, angle from upright."""
    mc, mp, l, g = p.cart_mass, p.pole_mass, p.pole_length, p.gravity
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    # M [xddot, thetaddot] = rhs, from the planar Lagrangian
    m11 = mc + mp
    m12 = mp * l * cos_t
    m22 = mp * l * l * np.ones_like(theta)
    r1 = force + mp * l * thetadot**2 * sin_t
    r2 = mp * g * l * sin_t
    det = m11 * m22 - m12 * m12
    xddot = (m22 * r1 - m12 * r2) / det
    thetaddot = (m11 * r2 - m12 * r1) / det
    return xddot, thetaddot


def step_cartpole(s: SystemState, force, p: DynamicsParams) -> SystemState:
    _check_finite(s.q, s.v, force)
    force = np.clip(force, -p.cart_force_limit, p.cart_force_limit)
    x, theta = s.q[..., 0], s.q[..., 1]
    xdot, thetadot = s.v[..., 0], s.v[..., 1]
    xddot, thetaddot = cartpole_accel(
        x, theta, xdot, thetadot, np.asarray(force).reshape(x.shape), p
    )
    xdot_new = xdot + p.dt * xddot
    thetadot_new = thetadot + p.dt * thetaddot
    x_new = x + p.dt * xdot_new
    theta_new = theta + p.dt * thetadot_new
    # inelastic rail stop
    hit_lo = x_new < -p.rail_limit
    hit_hi = x_new > p.rail_limit
    x_new = np.clip(x_new, -p.rail_limit, p.rail_limit)
    xdot_new = np.where(hit_lo | hit_hi, 0.0, xdot_new)
    return SystemState(
        q=np.stack([x_new, theta_new], axis=-1),
        v=np.stack([xdot_new, thetadot_new], axis=-1),
        t=s.t + p.dt,
    )


# ---------------------------------------------------------------------------
# two-link (acrobot and reacher share the solver)


def _twolink_accel(q, v, tau, p: DynamicsParams, gravity: float):
    """Accelerations for a two-link chain with point masses at the link ends."""
    m1, m2 = p.link1_mass, p.link2_mass
    l1, l2 = p.link1_length, p.link2_length
    t1, t2 = q[..., 0], q[..., 1]
    d1, d2 = v[..., 0], v[..., 1]
    c2 = np.cos(t2)
    s2 = np.sin(t2)

    m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c2
    m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2
    m22 = m2 * l2 * l2 * np.ones_like(t1)

    h = m2 * l1 * l2 * s2
    c1 = -h * (2 * d1 * d2 + d2 * d2)
    cc2 = h * d1 * d1

    g1 = (m1 + m2) * gravity * l1 * np.sin(t1) + m2 * gravity * l2 * np.sin(t1 + t2)
    g2 = m2 * gravity * l2 * np.sin(t1 + t2)

    rhs1 = tau[..., 0] - c1 - g1 - p.link_damping * d1
    rhs2 = tau[..., 1] - cc2 - g2 - p.link_damping * d2
    det = m11 * m22 - m12 * m12
    a1 = (m22 * rhs1 - m12 * rhs2) / det
    a2 = (m11 * rhs2 - m12 * rhs1) / det
    return np.stack([a1, a2], axis=-1)


def _step_twolink(s: SystemState, tau, p: DynamicsParams, gravity: float) -> SystemState:
    _check_finite(s.q, s.v, tau)
    a = _twolink_accel(s.q, s.v, np.asarray(tau, dtype=float), p, gravity)
    v_new = s.v + p.dt * a
    q_new = s.q + p.dt * v_new
    return SystemState(q=q_new, v=v_new, t=s.t + p.dt)


def step_acrobot(s: SystemState, torque_elbow, p: DynamicsParams) -> SystemState:
    torque_elbow = np.clip(torque_elbow, -p.elbow_torque_limit, p.elbow_torque_limit)
    te = np.asarray(torque_elbow, dtype=float).reshape(s.q[..., 0].shape)
    tau = np.stack([np.zeros_like(te), te], axis=-1)
    return _step_twolink(s, tau, p, gravity=p.gravity)


def step_reacher(s: SystemState, torques, p: DynamicsParams) -> SystemState:
    tau = np.clip(np.asarray(torques, dtype=float), -p.reacher_torque_limit, p.reacher_torque_limit)
    return _step_twolink(s, tau, p, gravity=0.0)


def twolink_energy(s: SystemState, p: DynamicsParams):
    """Kinetic plus gravitational energy of the acrobot (zero at hanging rest)."""
    m1, m2 = p.link1_mass, p.link2_mass
    l1, l2 = p.link1_length, p.link2_length
    g = p.gravity
    t1, t2 = s.q[..., 0], s.q[..., 1]
    d1, d2 = s.v[..., 0], s.v[..., 1]
    c2 = np.cos(t2)
    m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c2
    m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2
    m22 = m2 * l2 * l2
    kin = 0.5 * (m11 * d1 * d1 + 2 * m12 * d1 * d2 + m22 * d2 * d2)
    pot = -(m1 + m2) * g * l1 * np.cos(t1) - m2 * g * l2 * np.cos(t1 + t2)
    pot0 = -(m1 + m2) * g * l1 - m2 * g * l2
    return kin + pot - pot0


def fingertip_position(q, p: DynamicsParams):
    """Forward kinematics of the two-link fingertip; q=(0,0) points along +x."""
    q = np.asarray(q, dtype=float)
    t1 = q[..., 0]
    t12 = q[..., 0] + q[..., 1]
    x = p.link1_length * np.cos(t1) + p.link2_length * np.cos(t12)
    y = p.link1_length * np.sin(t1) + p.link2_length * np.sin(t12)
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------------------
# reference integrator (oracle support; not used by the env path)


def rk4_step(state: SystemState, deriv, dt: float) -> SystemState:
    """Classic RK4 over (q, v) given deriv(q, v) -> (qdot, vdot)."""

    def f(q, v):
        return deriv(q, v)

    q, v = state.q, state.v
    k1q, k1v = f(q, v)
    k2q, k2v = f(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, v + dt * k3v)
    return SystemState(
        q=q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q),
        v=v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
        t=state.t + dt,
    )
