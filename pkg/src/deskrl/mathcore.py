"""Rotation, gait-phase, shaping, normalization, and actuator math.

Quaternions are stored as length-4 numpy arrays ``[w, x, y, z]`` (Hamilton
convention). ``R(q)`` maps body-frame vectors into the world frame, so
projecting a world vector into the body frame uses the conjugate rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
TWO_PI = 2.0 * math.pi

# World gravity direction (unit vector, magnitude factored out).
GRAVITY_DIR = np.array([0.0, 0.0, -1.0])


class InvalidInputError(ValueError):
    """Raised when an operation receives out-of-contract input."""


class InternalError(RuntimeError):
    """Raised when an internal invariant breaks (should never happen)."""


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidInputError("cannot normalize zero/non-finite quaternion")
    return q / n


def quat_check_unit(q, tol: float = 1e-6) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have shape (4,), got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise InvalidInputError("quaternion is not unit length")
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q (body -> world for an attitude q)."""
    p = np.concatenate([[0.0], np.asarray(v, dtype=float)])
    return quat_mul(quat_mul(q, p), quat_conj(q))[1:]


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def project_gravity(orientation) -> np.ndarray:
    """World gravity direction (0, 0, -1) expressed in the body frame."""
    q = quat_check_unit(orientation)
    out = quat_rotate(quat_conj(q), GRAVITY_DIR)
    return out / np.linalg.norm(out)


def quat_geodesic_angle(a, b) -> float:
    """Angle of the relative rotation between two unit quaternions, in [0, pi].

    Double-cover aware: angle(q, -q) == 0.
    """
    a = quat_check_unit(a)
    b = quat_check_unit(b)
    dot = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(dot, 1.0))


def sample_uniform_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via Marsaglia's method."""
    while True:
        x1, y1 = rng.uniform(-1.0, 1.0, 2)
        s1 = x1 * x1 + y1 * y1
        if s1 < 1.0:
            break
    while True:
        x2, y2 = rng.uniform(-1.0, 1.0, 2)
        s2 = x2 * x2 + y2 * y2
        if s2 < 1.0:
            break
    scale = math.sqrt((1.0 - s1) / s2)
    return np.array([x1, y1, x2 * scale, y2 * scale])


def sample_goal_orientation(
    rng: np.random.Generator, previous, min_angle: float = math.pi / 2
) -> np.ndarray:
    """Uniform unit quaternion at least ``min_angle`` away from ``previous``."""
    previous = quat_check_unit(previous)
    for _ in range(10_000):
        q = sample_uniform_quaternion(rng)
        if quat_geodesic_angle(q, previous) >= min_angle:
            return q
    raise InternalError("goal-orientation rejection sampling failed to terminate")


# ---------------------------------------------------------------------------
# gait phase


def wrap_angle(phi):
    """Wrap angle(s) into [-pi, pi)."""
    return np.mod(np.asarray(phi, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class PhaseState:
    """Per-foot gait phase, cycling in [-pi, pi)."""

    phi: np.ndarray
    frequency: float = 1.5
    dt: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=float)))
        if self.frequency <= 0:
            raise InvalidInputError("phase frequency must be positive")
        if np.any(self.phi < -math.pi) or np.any(self.phi >= math.pi):
            raise InvalidInputError("phase must lie in [-pi, pi)")

    @classmethod
    def two_feet(cls, frequency: float = 1.5, dt: float = 0.01) -> "PhaseState":
        # opposing feet start pi out of phase
        return cls(phi=np.array([0.0, -math.pi]), frequency=frequency, dt=dt)


def advance_phase(state: PhaseState) -> PhaseState:
    phi = wrap_angle(state.phi + TWO_PI * state.frequency * state.dt)
    return PhaseState(phi=phi, frequency=state.frequency, dt=state.dt)


def phase_encode(phi):
    """(cos phi, sin phi) pair(s) for observation encoding."""
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


# ---------------------------------------------------------------------------
# shaping


def tolerance(
    x,
    lower: float = 0.0,
    upper: float = 0.0,
    margin: float = 0.0,
    value_at_margin: float = 0.1,
) -> np.ndarray:
    """Shaping kernel: 1 inside [lower, upper], Gaussian falloff outside.

    At distance ``margin`` from the nearest bound the value equals
    ``value_at_margin``; with margin 0 the kernel degenerates to an indicator.
    """
    if lower > upper:
        raise InvalidInputError("tolerance: lower must not exceed upper")
    if margin < 0:
        raise InvalidInputError("tolerance: margin must be non-negative")
    if not 0.0 < value_at_margin < 1.0:
        raise InvalidInputError("tolerance: value_at_margin must be in (0, 1)")
    x = np.asarray(x, dtype=float)
    inside = (x >= lower) & (x <= upper)
    if margin == 0:
        out = inside.astype(float)
    else:
        d = np.where(x < lower, lower - x, x - upper) / margin
        scale = math.sqrt(-2.0 * math.log(value_at_margin))
        out = np.where(inside, 1.0, np.exp(-0.5 * (d * scale) ** 2))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# running normalization (Welford batched merge)


@dataclass
class RunningNormalizer:
    """Streaming per-dimension mean/variance for observation normalization."""

    dim: int
    count: float = 0.0
    mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    var: np.ndarray = field(default=None)  # type: ignore[assignment]
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.var is None:
            self.var = np.zeros(self.dim)


def normalizer_update(n: RunningNormalizer, batch) -> RunningNormalizer:
    """Merge a batch of samples (rows) into the running statistics."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != n.dim:
        raise InvalidInputError(
            f"normalizer dim mismatch: expected {n.dim}, got {batch.shape[1]}"
        )
    b_count = batch.shape[0]
    b_mean = batch.mean(axis=0)
    b_var = batch.var(axis=0)

    total = n.count + b_count
    delta = b_mean - n.mean
    mean = n.mean + delta * (b_count / total)
    m_a = n.var * n.count
    m_b = b_var * b_count
    var = (m_a + m_b + delta**2 * n.count * b_count / total) / total
    return RunningNormalizer(dim=n.dim, count=total, mean=mean, var=np.maximum(var, 0.0), epsilon=n.epsilon)


def normalizer_apply(n: RunningNormalizer, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.shape[-1] != n.dim:
        raise InvalidInputError(
            f"normalizer dim mismatch: expected {n.dim}, got {batch.shape[-1]}"
        )
    if n.count == 0:
        return batch.copy()
    # clip so that dimensions with near-zero variance cannot blow up the
    # network inputs when they later start to move
    return np.clip((batch - n.mean) / np.sqrt(n.var + n.epsilon), -10.0, 10.0)


def normalizer_invert(n: RunningNormalizer, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if n.count == 0:
        return batch.copy()
    return batch * np.sqrt(n.var + n.epsilon) + n.mean


# ---------------------------------------------------------------------------
# actuator system identification


@dataclass(frozen=True)
class ActuatorSysId:
    """Servo actuator constants: gear ratio plus rotor mass and radius."""

    gear_ratio: float
    rotor_mass: float
    rotor_radius: float

    def __post_init__(self):
        if self.gear_ratio <= 0 or self.rotor_mass <= 0 or self.rotor_radius <= 0:
            raise InvalidInputError("actuator constants must be strictly positive")


def armature_inertia(s: ActuatorSysId) -> tuple[float, float]:
    """(rotor inertia, armature inertia) for a uniform-disk rotor.

    I_r = 1/2 m_r r_r^2; the armature value reflects it through the gearbox,
    I_a = k_g^2 I_r.
    """
    i_r = 0.5 * s.rotor_mass * s.rotor_radius**2
    return i_r, s.gear_ratio**2 * i_r
