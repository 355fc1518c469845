"""Synthetic kinematic gait generator.

Produces scripted LocomotionFrame sequences (a walking-like trajectory with
consistent contact, airtime, and phase bookkeeping) so the observation and
reward code paths can run without a contact simulator. This is a test and
demo fixture, not a physics model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathcore import PhaseState, advance_phase, quat_from_axis_angle
from .rewards import LocomotionFrame, swing_height_profile


@dataclass
class GaitGeneratorConfig:
    num_joints: int = 8
    num_feet: int = 2
    dt: float = 0.02
    frequency: float = 1.5
    swing_height: float = 0.08
    command: tuple = (0.5, 0.0, 0.0)
    base_wobble: float = 0.02  # rad, roll/pitch oscillation amplitude


class GaitGenerator:
    """Stateful frame source; tracks touchdown edges and per-foot airtime."""

    def __init__(self, cfg: GaitGeneratorConfig | None = None, seed: int = 0):
        self.cfg = cfg or GaitGeneratorConfig()
        self.rng = np.random.default_rng(seed)
        self.reset()

    def reset(self):
        c = self.cfg
        self.phase = PhaseState(
            phi=np.linspace(0.0, -math.pi, c.num_feet, endpoint=c.num_feet > 1),
            frequency=c.frequency,
            dt=c.dt,
        )
        self.t = 0.0
        self.airtime = np.zeros(c.num_feet)
        self.prev_contact = np.ones(c.num_feet, dtype=bool)
        self.prev_action = np.zeros(c.num_joints)
        self.q_default = np.zeros(c.num_joints)

    def step(self) -> LocomotionFrame:
        c = self.cfg
        phi = self.phase.phi
        foot_height = swing_height_profile(phi, c.swing_height)
        contact = foot_height <= 1e-9
        touchdown = contact & ~self.prev_contact
        in_flight = ~contact
        airtime_report = self.airtime + np.where(in_flight, c.dt, 0.0)
        self.airtime = np.where(contact & ~touchdown, 0.0, airtime_report)

        joint_q = 0.3 * np.sin(
            phi[0] + np.linspace(0.0, math.pi, c.num_joints)
        )
        joint_v = (
            0.3 * 2 * math.pi * c.frequency
            * np.cos(phi[0] + np.linspace(0.0, math.pi, c.num_joints))
        )
        torque = 0.5 * (self.q_default - joint_q) - 0.05 * joint_v
        action = joint_q / 0.5

        roll = c.base_wobble * math.sin(phi[0])
        orientation = quat_from_axis_angle([1.0, 0.0, 0.0], roll)
        foot_speed = np.where(in_flight, abs(c.command[0]) * 1.5, 0.0)

        frame = LocomotionFrame(
            base_orientation=orientation,
            base_lin_vel=np.array([c.command[0], c.command[1], 0.01 * math.sin(phi[0])]),
            base_ang_vel=np.array([0.0, 0.0, c.command[2]]),
            joint_pos=joint_q,
            joint_vel=joint_v,
            joint_torque=torque,
            foot_height=foot_height,
            foot_height_des=swing_height_profile(phi, c.swing_height),
            foot_vel_xy=np.stack([foot_speed, np.zeros(c.num_feet)], axis=-1),
            foot_contact=contact,
            airtime=airtime_report,
            touchdown=touchdown,
            phase=phi.copy(),
            command=np.asarray(c.command, dtype=float),
            action=action,
            prev_action=self.prev_action.copy(),
            joint_nominal=self.q_default.copy(),
            joint_default=self.q_default.copy(),
            done=False,
        )
        self.prev_action = action
        self.prev_contact = contact
        self.phase = advance_phase(self.phase)
        self.t += c.dt
        return frame


def random_frame(rng: np.random.Generator, num_joints: int = 8, num_feet: int = 2,
                 done_prob: float = 0.1) -> LocomotionFrame:
    """Fully random (not kinematically consistent) frame for property tests."""
    from .mathcore import sample_uniform_quaternion

    return LocomotionFrame(
        base_orientation=sample_uniform_quaternion(rng),
        base_lin_vel=rng.normal(0, 1, 3),
        base_ang_vel=rng.normal(0, 1, 3),
        joint_pos=rng.normal(0, 1, num_joints),
        joint_vel=rng.normal(0, 2, num_joints),
        joint_torque=rng.normal(0, 5, num_joints),
        foot_height=rng.uniform(0, 0.15, num_feet),
        foot_height_des=rng.uniform(0, 0.15, num_feet),
        foot_vel_xy=rng.normal(0, 0.5, (num_feet, 2)),
        foot_contact=rng.uniform(size=num_feet) < 0.5,
        airtime=rng.uniform(0, 0.8, num_feet),
        touchdown=rng.uniform(size=num_feet) < 0.3,
        phase=rng.uniform(-math.pi, math.pi, num_feet),
        command=rng.normal(0, 0.5, 3),
        action=rng.uniform(-1, 1, num_joints),
        prev_action=rng.uniform(-1, 1, num_joints),
        joint_nominal=rng.normal(0, 0.2, num_joints),
        joint_default=rng.normal(0, 0.2, num_joints),
        done=bool(rng.uniform() < done_prob),
    )
