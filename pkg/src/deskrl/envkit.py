"""Environment abstraction: reset/step, observation building, action mapping,
action repeat, reward wiring, and deterministic batched execution.

Randomness is counter-based: every draw comes from a Philox stream keyed by
(global seed, env index, episode index, step index), so batched execution is
bitwise independent of worker count and scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from .mathcore import (
    InvalidInputError,
    phase_encode,
    project_gravity,
    tolerance,
)
from .randomization import ConfigError, RandomizationSpec
from .rewards import LocomotionFrame
from .pixelrender import (
    FrameStack,
    VisualBounds,
    VisualParams,
    batch_render,
    brightness_postprocess,
    randomize_visuals,
    rgb_to_gray,
)


class UsageError(RuntimeError):
    """Raised when the env API is driven out of contract (e.g. step after done)."""


def stream_rng(seed: int, env_index: int, episode: int, step: int) -> np.random.Generator:
    """Counter-based RNG stream; identical keys give identical streams."""
    key = np.array(
        [np.uint64(seed), np.uint64(env_index) << np.uint64(32) | np.uint64(episode % (1 << 32))],
        dtype=np.uint64,
    )
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = np.uint64(step)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


# ---------------------------------------------------------------------------
# config / results


@dataclass(frozen=True)
class EnvConfig:
    task: str = "cartpole-balance"
    episode_length: int = 1000          # control steps
    action_repeat: int = 1
    dt: float | None = None             # None: task default
    obs_mode: str = "state"             # state | pixels
    seed: int = 0
    image_size: int = 64
    visual_randomization: bool = False
    wide_init: bool = False             # widened initial-state distribution
    randomization: RandomizationSpec = RandomizationSpec()

    def __post_init__(self):
        if self.episode_length <= 0:
            raise ConfigError("episode_length must be positive")
        if self.action_repeat < 1:
            raise ConfigError("action_repeat must be >= 1")
        if self.obs_mode not in ("state", "pixels"):
            raise ConfigError(f"unknown obs_mode {self.obs_mode!r}")


@dataclass
class StepResult:
    observation: dict
    reward: float
    done: bool
    truncated: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# PD action mapping


@dataclass(frozen=True)
class PDParams:
    kp: float
    kd: float
    action_scale: float
    q_default: np.ndarray
    mode: str = "absolute"  # absolute | relative
    torque_limit: float = np.inf
    joint_range: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise InvalidInputError("PD gains must be non-negative")
        if self.action_scale <= 0:
            raise InvalidInputError("action scale must be positive")
        if self.mode not in ("absolute", "relative"):
            raise InvalidInputError(f"unknown PD mode {self.mode!r}")
        object.__setattr__(self, "q_default", np.asarray(self.q_default, dtype=float))


def action_to_target(a, prev_target, p: PDParams) -> np.ndarray:
    """Map a policy action to a desired joint position.

    absolute: q_default + k_a * a; relative: prev_target + k_a * a (clamped
    to the configured joint range).
    """
    a = np.asarray(a, dtype=float)
    if p.mode == "absolute":
        return p.q_default + p.action_scale * a
    target = np.asarray(prev_target, dtype=float) + p.action_scale * a
    return np.clip(target, p.joint_range[0], p.joint_range[1])


def pd_torque(q_des, q, v, p: PDParams) -> np.ndarray:
    q_des = np.asarray(q_des, dtype=float)
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q_des.shape != q.shape or q.shape != v.shape:
        raise InvalidInputError("pd_torque: mismatched dimensions")
    tau = p.kp * (q_des - q) - p.kd * v
    return np.clip(tau, -p.torque_limit, p.torque_limit)


# ---------------------------------------------------------------------------
# locomotion observation builder


@dataclass(frozen=True)
class ObservationNoise:
    gravity: float = 0.0
    lin_vel: float = 0.0
    ang_vel: float = 0.0
    joint_pos: float = 0.0
    joint_vel: float = 0.0


def build_locomotion_observation(
    frame: LocomotionFrame,
    prev_action,
    command,
    noise: ObservationNoise | None = None,
    noise_rng: np.random.Generator | None = None,
    perturbation_force=None,
) -> dict:
    """Observation slots for a locomotion frame.

    "state" is the (optionally noisy) policy view: [projected gravity, base
    linear velocity, base angular velocity, joint positions, joint
    velocities, previous action, command, phase cos/sin]. The privileged
    slot prefixes the same signals noise-free and appends contact flags,
    applied torques, and perturbation forces.
    """
    gravity = project_gravity(frame.base_orientation)
    phase_cs = phase_encode(frame.phase).ravel()
    clean = [
        gravity,
        np.asarray(frame.base_lin_vel, dtype=float),
        np.asarray(frame.base_ang_vel, dtype=float),
        np.asarray(frame.joint_pos, dtype=float),
        np.asarray(frame.joint_vel, dtype=float),
        np.asarray(prev_action, dtype=float),
        np.asarray(command, dtype=float),
        phase_cs,
    ]
    noisy = [part.copy() for part in clean]
    if noise is not None and noise_rng is not None:
        scales = [noise.gravity, noise.lin_vel, noise.ang_vel, noise.joint_pos, noise.joint_vel]
        for i, s in enumerate(scales):
            if s > 0:
                noisy[i] = noisy[i] + noise_rng.uniform(-s, s, size=noisy[i].shape)

    perturbation = (
        np.zeros(3) if perturbation_force is None else np.asarray(perturbation_force, dtype=float)
    )
    privileged = np.concatenate(
        clean
        + [
            frame.foot_contact.astype(float),
            np.asarray(frame.joint_torque, dtype=float),
            perturbation,
        ]
    )
    return {"state": np.concatenate(noisy), "privileged_state": privileged}


def progress_clip_reward(raw: float, history_max: float) -> tuple[float, float]:
    """Progress-only dense reward: clip(raw - running max, 0).

    ``history_max`` starts at 0 on reset so the first positive progress is
    rewarded in full.
    """
    return max(raw - history_max, 0.0), max(history_max, raw)


# ---------------------------------------------------------------------------
# tasks
#
# Internally a task's state is a flat tuple of python floats: per-env
# stepping is the training hot path and scalar math keeps it fast while
# staying bitwise independent of batching and worker count. The arithmetic
# mirrors the vectorized dynamics module step for step.

_SQRT_LOG = math.sqrt(-2.0 * math.log(0.1))


def _tol(x: float, lower: float, upper: float, margin: float) -> float:
    """Scalar shaping kernel: Gaussian falloff, value 0.1 at the margin."""
    if lower <= x <= upper:
        return 1.0
    d = (lower - x if x < lower else x - upper) / margin
    return math.exp(-0.5 * (d * _SQRT_LOG) ** 2)


class _Task:
    """Per-task dynamics, initial distribution, reward, and observation."""

    id: str
    action_dim: int
    state_dim: int
    default_action_repeat = 1
    default_dt = 0.01
    wide_init = False

    def __init__(self, params: dyn.DynamicsParams):
        self.params = params

    def sample_initial(self, rng) -> tuple:
        raise NotImplementedError

    def step_dynamics(self, s: tuple, action) -> tuple:
        raise NotImplementedError

    def state_obs(self, s: tuple) -> np.ndarray:
        raise NotImplementedError

    def reward(self, s: tuple, action) -> tuple[float, dict]:
        raise NotImplementedError

    def qv(self, s: tuple) -> tuple[np.ndarray, np.ndarray]:
        """(q, v) arrays for rendering and diagnostics."""
        half = self.state_dim // 2
        return np.array(s[:half]), np.array(s[half : 2 * half])


class PendulumSwingup(_Task):
    id = "pendulum-swingup"
    action_dim = 1
    state_dim = 2
    default_action_repeat = 4
    wide_init = False

    def sample_initial(self, rng):
        if self.wide_init:
            # full-circle starts: pure Gaussian torque noise never pumps the
            # pendulum out of the hanging state, but episodes that begin
            # near the top teach the catch, and the swing follows from there
            theta = rng.uniform(-math.pi, math.pi)
            omega = rng.uniform(-6.0, 6.0)
        else:
            theta = rng.uniform(-0.1, 0.1)
            omega = rng.uniform(-0.05, 0.05)
        return (float(theta), float(omega))

    def step_dynamics(self, s, action):
        p = self.params
        torque = min(max(action[0] * p.pend_torque_limit, -p.pend_torque_limit),
                     p.pend_torque_limit)
        theta, omega = s
        m, l = p.pend_mass, p.pend_length
        accel = (torque - p.pend_damping * omega - m * p.gravity * l * math.sin(theta)) / (m * l * l)
        omega = omega + p.dt * accel
        theta = theta + p.dt * omega
        return (theta, omega)

    def state_obs(self, s):
        theta, omega = s
        return np.array([math.cos(theta), math.sin(theta), omega / 10.0])

    def reward(self, s, action):
        upright = -math.cos(s[0])  # 1 when inverted
        # margin spans the full range so the hanging state still sees a
        # usable shaping gradient
        r = _tol(upright, 0.95, 1.0, 1.95)
        return r, {"upright": r}


class CartpoleBalance(_Task):
    id = "cartpole-balance"
    action_dim = 1
    state_dim = 4

    def sample_initial(self, rng):
        # wide cart-position band: starting all episodes from one narrow x
        # band lets a policy special-case the episode start instead of
        # learning a position-independent balance controller
        x = rng.uniform(-0.8, 0.8)
        theta = rng.uniform(-0.05, 0.05)
        v = rng.uniform(-0.01, 0.01, 2)
        return (float(x), float(theta), float(v[0]), float(v[1]))

    def step_dynamics(self, s, action):
        p = self.params
        force = min(max(action[0] * p.cart_force_limit, -p.cart_force_limit),
                    p.cart_force_limit)
        x, theta, xdot, thetadot = s
        mc, mp, l, g = p.cart_mass, p.pole_mass, p.pole_length, p.gravity
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        m11 = mc + mp
        m12 = mp * l * cos_t
        m22 = mp * l * l
        r1 = force + mp * l * thetadot * thetadot * sin_t
        r2 = mp * g * l * sin_t
        det = m11 * m22 - m12 * m12
        xddot = (m22 * r1 - m12 * r2) / det
        thetaddot = (m11 * r2 - m12 * r1) / det
        xdot = xdot + p.dt * xddot
        thetadot = thetadot + p.dt * thetaddot
        x = x + p.dt * xdot
        theta = theta + p.dt * thetadot
        if x < -p.rail_limit:
            x, xdot = -p.rail_limit, 0.0
        elif x > p.rail_limit:
            x, xdot = p.rail_limit, 0.0
        return (x, theta, xdot, thetadot)

    def state_obs(self, s):
        x, theta, xdot, thetadot = s
        return np.array([x, math.cos(theta), math.sin(theta), xdot, thetadot])

    def reward(self, s, action):
        # wide margins keep a usable gradient even from fallen poses; the
        # small-velocity factor rules out full pole revolutions, which would
        # otherwise score almost as well as holding still
        upright = _tol(math.cos(s[1]), 0.95, 1.0, 1.95)
        centered = _tol(s[0], -0.25, 0.25, 1.55)
        still = 0.5 * (1.0 + _tol(s[3], -1.0, 1.0, 5.0))
        return upright * centered * still, {
            "upright": upright, "centered": centered, "still": still,
        }


class _TwoLink(_Task):
    state_dim = 4

    def _accels(self, s, tau1, tau2, gravity):
        p = self.params
        m1, m2 = p.link1_mass, p.link2_mass
        l1, l2 = p.link1_length, p.link2_length
        t1, t2, d1, d2 = s
        c2 = math.cos(t2)
        s2 = math.sin(t2)
        m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c2
        m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2
        m22 = m2 * l2 * l2
        h = m2 * l1 * l2 * s2
        c1 = -h * (2 * d1 * d2 + d2 * d2)
        cc2 = h * d1 * d1
        g1 = (m1 + m2) * gravity * l1 * math.sin(t1) + m2 * gravity * l2 * math.sin(t1 + t2)
        g2 = m2 * gravity * l2 * math.sin(t1 + t2)
        rhs1 = tau1 - c1 - g1 - p.link_damping * d1
        rhs2 = tau2 - cc2 - g2 - p.link_damping * d2
        det = m11 * m22 - m12 * m12
        return (m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det

    def _advance(self, s, tau1, tau2, gravity):
        p = self.params
        a1, a2 = self._accels(s, tau1, tau2, gravity)
        d1 = s[2] + p.dt * a1
        d2 = s[3] + p.dt * a2
        return (s[0] + p.dt * d1, s[1] + p.dt * d2, d1, d2)


class AcrobotSwingup(_TwoLink):
    id = "acrobot-swingup"
    action_dim = 1

    def sample_initial(self, rng):
        q = rng.uniform(-0.1, 0.1, 2)
        v = rng.uniform(-0.05, 0.05, 2)
        return (float(q[0]), float(q[1]), float(v[0]), float(v[1]))

    def step_dynamics(self, s, action):
        p = self.params
        torque = min(max(action[0] * p.elbow_torque_limit, -p.elbow_torque_limit),
                     p.elbow_torque_limit)
        return self._advance(s, 0.0, torque, p.gravity)

    def state_obs(self, s):
        t1, t2, d1, d2 = s
        return np.array(
            [math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), d1 / 10.0, d2 / 10.0]
        )

    def reward(self, s, action):
        p = self.params
        tip_y = -(p.link1_length * math.cos(s[0]) + p.link2_length * math.cos(s[0] + s[1]))
        height = tip_y / (p.link1_length + p.link2_length)
        r = _tol(height, 0.95, 1.0, 1.0)
        return r, {"tip_height": height}


class ReacherEasy(_TwoLink):
    id = "reacher-easy"
    action_dim = 2
    default_dt = 0.005
    target_radius = 0.1

    def sample_initial(self, rng):
        q = rng.uniform(-math.pi, math.pi, 2)
        angle = rng.uniform(-math.pi, math.pi)
        radius = rng.uniform(0.5, 1.9)
        state = (float(q[0]), float(q[1]), 0.0, 0.0)
        target = radius * np.array([math.cos(angle), math.sin(angle)])
        return state, target

    def step_dynamics(self, s, action):
        lim = self.params.reacher_torque_limit
        t1 = min(max(action[0] * lim, -lim), lim)
        t2 = min(max(action[1] * lim, -lim), lim)
        return self._advance(s, t1, t2, 0.0)

    def _tip(self, s):
        p = self.params
        x = p.link1_length * math.cos(s[0]) + p.link2_length * math.cos(s[0] + s[1])
        y = p.link1_length * math.sin(s[0]) + p.link2_length * math.sin(s[0] + s[1])
        return x, y

    def state_obs(self, s, target):
        tx, ty = self._tip(s)
        t1, t2, d1, d2 = s
        return np.array(
            [
                math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2),
                d1 / 10.0, d2 / 10.0,
                target[0], target[1], target[0] - tx, target[1] - ty,
            ]
        )

    def reward(self, s, action, target):
        tx, ty = self._tip(s)
        dist = math.hypot(tx - target[0], ty - target[1])
        r = _tol(dist, 0.0, self.target_radius, 0.6)
        return r, {"distance": dist}


_TASKS = {
    t.id: t for t in (PendulumSwingup, CartpoleBalance, AcrobotSwingup, ReacherEasy)
}


def registered_tasks() -> list[str]:
    return sorted(_TASKS) + ["cartpole-balance-pixels"]


# ---------------------------------------------------------------------------
# environment


class Environment:
    """Single environment instance: deterministic in (config, seed)."""

    def __init__(self, config: EnvConfig, env_index: int = 0,
                 params: dyn.DynamicsParams | None = None):
        task_name = config.task
        self.pixels = config.obs_mode == "pixels" or task_name.endswith("-pixels")
        if task_name.endswith("-pixels"):
            task_name = task_name[: -len("-pixels")]
            if task_name != "cartpole-balance":
                raise ConfigError(f"no pixel variant for task {task_name!r}")
        if task_name not in _TASKS:
            raise ConfigError(f"unknown task id {config.task!r}")
        task_cls = _TASKS[task_name]
        self.config = config
        self.env_index = env_index
        base = params or dyn.DynamicsParams()
        dt = config.dt if config.dt is not None else task_cls.default_dt
        self.task = task_cls(base.with_dt(dt))
        self.task.wide_init = config.wide_init
        self.action_dim = self.task.action_dim
        self._episode = -1
        self._needs_reset = True
        self._target = None  # reacher only
        self._frame_stack = FrameStack(config.image_size, config.image_size)
        self._visuals = VisualParams()
        self._visual_bounds = VisualBounds()

    # -- rng ---------------------------------------------------------------
    def _rng(self, step: int) -> np.random.Generator:
        return stream_rng(self.config.seed, self.env_index, self._episode, step)

    # -- lifecycle ----------------------------------------------------------
    def reset(self, seed: int | None = None) -> dict:
        if seed is not None:
            self.config = replace(self.config, seed=seed)
            self._episode = -1
        self._episode += 1
        rng = self._rng(step=0)
        sampled = self.task.sample_initial(rng)
        if len(sampled) == 2 and isinstance(sampled[1], np.ndarray):
            self.state, self._target = sampled
        else:
            self.state, self._target = sampled, None
        self.steps = 0
        self._needs_reset = False
        if self.pixels and self.config.visual_randomization:
            self._visuals = randomize_visuals(rng, self._visual_bounds)
        elif self.pixels:
            self._visuals = VisualParams()
        return self._observe(first=True)

    def _task_reward(self, action):
        if self._target is not None:
            return self.task.reward(self.state, action, self._target)
        return self.task.reward(self.state, action)

    def step(self, action) -> StepResult:
        if self._needs_reset:
            raise UsageError("environment must be reset before stepping")
        flat = np.asarray(action, dtype=float).reshape(self.action_dim)
        if not np.all(np.isfinite(flat)):
            raise InvalidInputError("action contains non-finite values")
        action = tuple(min(max(float(a), -1.0), 1.0) for a in flat)
        reward = 0.0
        info: dict = {}
        for _ in range(self.config.action_repeat):
            self.state = self.task.step_dynamics(self.state, action)
            r, terms = self._task_reward(action)
            reward += r
            info = terms
        reward /= self.config.action_repeat
        self.steps += 1
        truncated = self.steps >= self.config.episode_length
        done = False
        if truncated or done:
            self._needs_reset = True
        return StepResult(
            observation=self._observe(),
            reward=float(reward),
            done=done,
            truncated=truncated,
            info=info,
        )

    # -- observations ---------------------------------------------------------
    def _observe(self, first: bool = False) -> dict:
        if self._target is not None:
            state_vec = self.task.state_obs(self.state, self._target)
        else:
            state_vec = self.task.state_obs(self.state)
        obs = {"state": state_vec, "privileged_state": state_vec.copy()}
        if self.pixels:
            q, v = self.task.qv(self.state)
            img = batch_render(
                dyn.SystemState(q=q[None, :], v=v[None, :]),
                [self._visuals],
                self.config.image_size,
                self.config.image_size,
                self.task.params,
            )[0]
            img = brightness_postprocess(img, self._visuals.brightness)
            gray = rgb_to_gray(img)
            if first:
                self._frame_stack.reset(gray)
            else:
                self._frame_stack.push(gray)
            obs["pixels"] = self._frame_stack.stacked()
        return obs

    def observation_shapes(self) -> dict:
        saved = (self.state, self._target, self.steps, self._episode, self._needs_reset)
        obs = self.reset() if self._needs_reset else self._observe()
        shapes = {k: tuple(v.shape) for k, v in obs.items()}
        self.state, self._target, self.steps, self._episode, self._needs_reset = saved
        return shapes


def make_env(task: str, **kwargs) -> Environment:
    return Environment(EnvConfig(task=task, **kwargs))


# ---------------------------------------------------------------------------
# batched execution


class BatchEnv:
    """N environments stepped together; worker-count independent results."""

    def __init__(self, config: EnvConfig, num_envs: int, num_workers: int = 1,
                 params: dyn.DynamicsParams | None = None):
        if num_envs < 1 or num_workers < 1:
            raise ConfigError("num_envs and num_workers must be >= 1")
        self.config = config
        self.num_envs = num_envs
        self.num_workers = num_workers
        self.envs = [Environment(config, env_index=i, params=params) for i in range(num_envs)]
        self.action_dim = self.envs[0].action_dim
        self._pool = (
            ThreadPoolExecutor(max_workers=num_workers) if num_workers > 1 else None
        )

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def reset(self, seed: int | None = None) -> dict:
        if seed is not None:
            self.config = replace(self.config, seed=seed)
            for i, env in enumerate(self.envs):
                env.config = replace(env.config, seed=seed)
                env._episode = -1
        obs_list = self._map(lambda i: self.envs[i].reset(), range(self.num_envs))
        return {k: np.stack([o[k] for o in obs_list]) for k in obs_list[0]}

    def step(self, actions, autoreset: bool = True):
        actions = np.asarray(actions, dtype=float)
        if actions.shape[0] != self.num_envs:
            raise InvalidInputError("actions batch size mismatch")

        def one(i):
            res = self.envs[i].step(actions[i])
            if autoreset and (res.done or res.truncated):
                res.info["terminal_observation"] = res.observation
                res.observation = self.envs[i].reset()
            return res

        results = self._map(one, range(self.num_envs))
        obs = {
            k: np.stack([r.observation[k] for r in results])
            for k in results[0].observation
        }
        rewards = np.array([r.reward for r in results])
        dones = np.array([r.done for r in results])
        truncs = np.array([r.truncated for r in results])
        infos = [r.info for r in results]
        return obs, rewards, dones, truncs, infos

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
