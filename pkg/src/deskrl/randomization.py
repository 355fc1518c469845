"""Sim-to-real randomization toolkit.

Delay lines, sensor noise, physical-parameter perturbation, pose injection,
and success-gated curricula. All stochastic behavior is driven by explicit
numpy Generators so callers can key streams by (seed, env index, step index).
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .mathcore import InvalidInputError


class ConfigError(ValueError):
    """Raised for malformed randomization specs."""


# ---------------------------------------------------------------------------
# delay lines


class DelayLine:
    """Ring buffer emulating sensor/actuation latency of min..max steps.

    The delay is resampled once per episode by default (``per_step=True``
    switches to per-step resampling). Before the buffer holds enough history
    the oldest available value is returned.
    """

    def __init__(self, min_delay: int, max_delay: int, per_step: bool = False):
        if min_delay < 0 or max_delay < min_delay:
            raise ConfigError("delay bounds must satisfy 0 <= min <= max")
        self.min_delay = min_delay
        self.max_delay = max_delay
        self.per_step = per_step
        self._buf: deque = deque(maxlen=max_delay + 1)
        self._episode_delay: int | None = None

    def reset(self, rng: np.random.Generator):
        self._buf.clear()
        self._episode_delay = int(rng.integers(self.min_delay, self.max_delay + 1))

    def _sample_delay(self, rng: np.random.Generator) -> int:
        if self.per_step:
            return int(rng.integers(self.min_delay, self.max_delay + 1))
        if self._episode_delay is None:
            raise ConfigError("delay line used before reset")
        return self._episode_delay

    def push_pop(self, value, rng: np.random.Generator):
        """Push the newest value and return one aged min..max steps."""
        self._buf.append(value)
        d = self._sample_delay(rng)
        idx = len(self._buf) - 1 - d
        if idx < 0:
            idx = 0  # warm-up: oldest available
        return self._buf[idx]


def delay_push_pop(line: DelayLine, value, rng: np.random.Generator):
    return line.push_pop(value, rng)


# ---------------------------------------------------------------------------
# sensor noise


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise scale for one observation slot."""

    slot: str
    scale: float
    kind: str = "uniform"  # uniform: U(-scale, scale); gaussian: N(0, scale)

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError("noise scale must be non-negative")
        if self.kind not in ("uniform", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")


def apply_sensor_noise(obs: dict, specs, rng: np.random.Generator) -> dict:
    """Corrupt named slots with additive noise; untouched slots pass through.

    Slots named ``privileged*`` may not be listed: they stay noise-free by
    contract.
    """
    out = dict(obs)
    for spec in specs:
        if spec.slot.startswith("privileged"):
            raise ConfigError("privileged slots must stay noise-free")
        if spec.slot not in obs:
            raise ConfigError(f"unknown observation slot {spec.slot!r}")
        x = np.asarray(obs[spec.slot], dtype=float)
        if spec.scale == 0.0:
            continue
        if spec.kind == "uniform":
            noise = rng.uniform(-spec.scale, spec.scale, size=x.shape)
        else:
            noise = rng.normal(0.0, spec.scale, size=x.shape)
        out[spec.slot] = x + noise
    return out


# ---------------------------------------------------------------------------
# physical parameter randomization


@dataclass(frozen=True)
class ParamRange:
    """One randomized parameter: dataclass field path plus a distribution."""

    path: str
    distribution: str  # uniform_additive | uniform_multiplicative | log_uniform
    low: float
    high: float

    def __post_init__(self):
        if self.low > self.high:
            raise ConfigError(f"bounds out of order for {self.path!r}")
        if self.distribution not in (
            "uniform_additive",
            "uniform_multiplicative",
            "log_uniform",
        ):
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if self.distribution in ("uniform_multiplicative", "log_uniform") and self.low <= 0:
            raise ConfigError("multiplicative/log bounds must be positive")


@dataclass(frozen=True)
class RandomizationSpec:
    params: tuple = ()
    noise: tuple = ()
    action_delay: tuple = (0, 0)       # (min, max) steps
    observation_delay: tuple = (0, 0)  # (min, max) steps
    pose_injection_prob: float = 0.0

    def __post_init__(self):
        for lo, hi in (self.action_delay, self.observation_delay):
            if lo < 0 or hi < lo:
                raise ConfigError("delay bounds must satisfy 0 <= min <= max")
        if not 0.0 <= self.pose_injection_prob <= 1.0:
            raise ConfigError("pose_injection_prob must lie in [0, 1]")


_MAX_RESAMPLE = 100


def randomize_params(nominal, spec: RandomizationSpec, rng: np.random.Generator):
    """Perturb the listed dataclass fields; everything else is untouched.

    Non-physical draws (a field that must stay positive going non-positive)
    are resampled, with a retry cap.
    """
    perturbed = copy.deepcopy(nominal)
    updates = {}
    for pr in spec.params:
        if not hasattr(nominal, pr.path):
            raise ConfigError(f"unknown parameter path {pr.path!r}")
        base = getattr(nominal, pr.path)
        must_be_positive = base > 0
        for attempt in range(_MAX_RESAMPLE):
            if pr.distribution == "uniform_additive":
                value = base + rng.uniform(pr.low, pr.high)
            elif pr.distribution == "uniform_multiplicative":
                value = base * rng.uniform(pr.low, pr.high)
            else:
                value = base * np.exp(rng.uniform(np.log(pr.low), np.log(pr.high)))
            if not must_be_positive or value > 0:
                break
        else:
            raise ConfigError(f"could not draw a physical value for {pr.path!r}")
        updates[pr.path] = value
    return replace(perturbed, **updates) if updates else perturbed


# ---------------------------------------------------------------------------
# pose injection


def pose_injection(pose, rng: np.random.Generator, prob: float, bounds) -> np.ndarray:
    """With probability ``prob`` replace the pose by a uniform draw in bounds.

    ``bounds`` is an (n, 2) array of per-dimension (low, high).
    """
    if not 0.0 <= prob <= 1.0:
        raise InvalidInputError("prob must lie in [0, 1]")
    pose = np.asarray(pose, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if rng.uniform() < prob:
        return rng.uniform(bounds[:, 0], bounds[:, 1])
    return pose


# ---------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class CurriculumState:
    """Success-gated difficulty schedule: bounds widen, never shrink."""

    level: int = 0
    max_level: int = 10
    successes_at_level: int = 0
    promotion_threshold: int = 1
    base_range: float = 0.1
    range_per_level: float = 0.1
    episodes: int = 0
    total_successes: int = 0

    @property
    def active_range(self) -> float:
        return self.base_range + self.level * self.range_per_level


def curriculum_update(c: CurriculumState, episode_success: bool) -> CurriculumState:
    episodes = c.episodes + 1
    if not episode_success:
        return replace(c, episodes=episodes)
    successes = c.successes_at_level + 1
    total = c.total_successes + 1
    if successes >= c.promotion_threshold and c.level < c.max_level:
        return replace(
            c,
            level=c.level + 1,
            successes_at_level=0,
            episodes=episodes,
            total_successes=total,
        )
    return replace(c, successes_at_level=successes, episodes=episodes, total_successes=total)
