"""Locomotion reward terms and the weighted, non-negative aggregate.

Term weights carry their own sign (penalties use negative weights); the
aggregator sums the weighted contributions and clips the total at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mathcore import project_gravity


@dataclass
class LocomotionFrame:
    """One rigid-body snapshot consumed by the reward terms.

    Velocities are expressed in the body frame; foot arrays are indexed per
    foot. ``touchdown`` flags are edge indicators (contact now, airborne on
    the previous step), tracked by the environment.
    """

    base_orientation: np.ndarray  # unit quaternion [w, x, y, z]
    base_lin_vel: np.ndarray      # (3,) m/s
    base_ang_vel: np.ndarray      # (3,) rad/s
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    joint_torque: np.ndarray
    foot_height: np.ndarray       # (n_feet,) m
    foot_height_des: np.ndarray   # (n_feet,) m
    foot_vel_xy: np.ndarray       # (n_feet, 2) m/s
    foot_contact: np.ndarray      # (n_feet,) bool
    airtime: np.ndarray           # (n_feet,) s since last touchdown
    touchdown: np.ndarray         # (n_feet,) bool, edge-triggered
    phase: np.ndarray             # (n_feet,) rad
    command: np.ndarray           # (3,) = (cmd_vx, cmd_vy, cmd_wz)
    action: np.ndarray
    prev_action: np.ndarray
    joint_nominal: np.ndarray
    joint_default: np.ndarray
    done: bool = False


@dataclass
class RewardTermConfig:
    """Weights, kernel scales, and gait constants for the reward table."""

    w_lin_vel: float = 1.0
    sigma_lin_vel: float = 0.25
    w_ang_vel: float = 0.5
    sigma_ang_vel: float = 0.25
    w_airtime: float = 1.0
    airtime_min: float = 0.1
    airtime_max: float = 0.5
    w_clearance: float = -1.0
    w_phase: float = 1.0
    sigma_phase: float = 0.001
    swing_height: float = 0.08
    w_slip: float = -0.1
    w_orientation: float = -1.0
    w_torque: float = -1e-4
    w_joint_pos: float = -0.1
    w_action_rate: float = -0.01
    w_energy: float = -1e-3
    w_pose: float = 0.5
    w_termination: float = -1.0
    w_standstill: float = -0.1
    w_lin_vel_z: float = -0.5
    w_ang_vel_xy: float = -0.05
    # literal table reading penalizes the command magnitude; the gated
    # variant penalizes joint motion only when the command is near zero
    standstill_gated: bool = False

    def __post_init__(self):
        if self.sigma_lin_vel <= 0 or self.sigma_ang_vel <= 0 or self.sigma_phase <= 0:
            raise ValueError("kernel scales must be positive")
        if self.airtime_min > self.airtime_max:
            raise ValueError("airtime_min must not exceed airtime_max")


@dataclass
class RewardBreakdown:
    terms: dict = field(default_factory=dict)
    weighted: dict = field(default_factory=dict)
    unclipped_total: float = 0.0
    total: float = 0.0


def swing_height_profile(phase, h_max: float):
    """Desired foot height over the gait cycle: half-sine in the swing half."""
    return h_max * np.maximum(0.0, np.sin(np.asarray(phase, dtype=float)))


def term_lin_vel_tracking(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    err = frame.command[:2] - frame.base_lin_vel[:2]
    return math.exp(-float(err @ err) / cfg.sigma_lin_vel)


def term_ang_vel_tracking(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    err = frame.command[2] - frame.base_ang_vel[2]
    return math.exp(-float(err * err) / cfg.sigma_ang_vel)


def term_feet_airtime(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    gain = (frame.airtime - cfg.airtime_min) * frame.touchdown.astype(float)
    return float(np.sum(np.clip(gain, 0.0, cfg.airtime_max - cfg.airtime_min)))


def term_feet_clearance(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    err = frame.foot_height - frame.foot_height_des
    speed = np.sqrt(np.sum(frame.foot_vel_xy**2, axis=-1))
    return float(np.sum(err**2 * np.sqrt(speed)))


def term_feet_phase(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    target = swing_height_profile(frame.phase, cfg.swing_height)
    err2 = float(np.sum((frame.foot_height - target) ** 2))
    return math.exp(-err2 / cfg.sigma_phase)


def term_feet_slip(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    contact_vel = frame.foot_vel_xy * frame.foot_contact.astype(float)[:, None]
    return float(np.sum(contact_vel**2))


def term_orientation(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    tilt = project_gravity(frame.base_orientation)[:2]
    return float(tilt @ tilt)


def term_joint_torque(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    return float(frame.joint_torque @ frame.joint_torque)


def term_joint_position(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    err = frame.joint_pos - frame.joint_nominal
    return float(err @ err)


def term_action_rate(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    d = frame.action - frame.prev_action
    return float(d @ d)


def term_energy(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    # L1 of per-joint mechanical power magnitudes
    return float(np.sum(np.abs(frame.joint_vel * frame.joint_torque)))


def term_pose(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    err = frame.joint_pos - frame.joint_default
    return math.exp(-float(err @ err))


def term_termination(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    return 1.0 if frame.done else 0.0


def term_standstill(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    cmd_norm = float(np.linalg.norm(frame.command[:2]))
    if not cfg.standstill_gated:
        return cmd_norm
    if cmd_norm > 0.1:
        return 0.0
    return float(np.linalg.norm(frame.joint_vel))


def term_lin_vel_z(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    return float(frame.base_lin_vel[2] ** 2)


def term_ang_vel_xy(frame: LocomotionFrame, cfg: RewardTermConfig) -> float:
    w = frame.base_ang_vel[:2]
    return float(w @ w)


# name -> (term function, weight attribute)
TERM_REGISTRY = {
    "lin_vel_tracking": (term_lin_vel_tracking, "w_lin_vel"),
    "ang_vel_tracking": (term_ang_vel_tracking, "w_ang_vel"),
    "feet_airtime": (term_feet_airtime, "w_airtime"),
    "feet_clearance": (term_feet_clearance, "w_clearance"),
    "feet_phase": (term_feet_phase, "w_phase"),
    "feet_slip": (term_feet_slip, "w_slip"),
    "orientation": (term_orientation, "w_orientation"),
    "joint_torque": (term_joint_torque, "w_torque"),
    "joint_position": (term_joint_position, "w_joint_pos"),
    "action_rate": (term_action_rate, "w_action_rate"),
    "energy": (term_energy, "w_energy"),
    "pose": (term_pose, "w_pose"),
    "termination": (term_termination, "w_termination"),
    "standstill": (term_standstill, "w_standstill"),
    "lin_vel_z": (term_lin_vel_z, "w_lin_vel_z"),
    "ang_vel_xy": (term_ang_vel_xy, "w_ang_vel_xy"),
}


def total_reward(frame: LocomotionFrame, cfg: RewardTermConfig) -> RewardBreakdown:
    """Evaluate every registered term and aggregate with non-negative clipping."""
    out = RewardBreakdown()
    for name, (fn, weight_attr) in TERM_REGISTRY.items():
        raw = fn(frame, cfg)
        w = getattr(cfg, weight_attr)
        out.terms[name] = raw
        out.weighted[name] = w * raw
    out.unclipped_total = float(sum(out.weighted.values()))
    out.total = max(out.unclipped_total, 0.0)
    return out
