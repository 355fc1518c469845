"""Throughput measurement and amortized cost decomposition.

Stages are cumulative: EnvStep (physics with random actions), WithPixels
(adds rendering), WithInference (random actions replaced by policy
inference), AndTraining (full PPO update amortized per rollout step).
Medians over repetitions with bootstrap confidence intervals; absolute
numbers are machine-specific, only orderings and the breakdown arithmetic
are contract.
"""

from __future__ import annotations

import csv
import enum
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .envkit import BatchEnv, EnvConfig
from .ppo import PPOConfig, TrainerState, build_networks, collect_rollout, ppo_update, policy_forward, _prep_policy_obs, asymmetric_route
from .randomization import ConfigError


class Stage(enum.Enum):
    ENV_STEP = "EnvStep"
    WITH_PIXELS = "WithPixels"
    WITH_INFERENCE = "WithInference"
    AND_TRAINING = "AndTraining"


CSV_COLUMNS = [
    "stage",
    "batch_size",
    "resolution",
    "reps",
    "median_sps",
    "ci_low",
    "ci_high",
    "t_per_step",
]


@dataclass
class StageResult:
    stage: str
    batch_size: int
    resolution: int
    reps: int
    median_sps: float
    ci_low: float
    ci_high: float
    degenerate_ci: bool = False

    @property
    def t_per_step(self) -> float:
        return 1.0 / self.median_sps


@dataclass
class ThroughputReport:
    results: list = field(default_factory=list)

    def by_stage(self) -> dict:
        return {r.stage: r for r in self.results}


_WARMUP = 3


def _bootstrap_ci(samples, rng, n_boot: int = 1000, level: float = 0.95):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return float(samples[0]), float(samples[0]), True
    meds = np.median(
        rng.choice(samples, size=(n_boot, samples.size), replace=True), axis=1
    )
    lo, hi = np.percentile(meds, [(1 - level) / 2 * 100, (1 + level) / 2 * 100])
    return float(lo), float(hi), False


def _time_batches(fn, batch_steps: int, repetitions: int):
    """steps/sec samples for fn(), warm-up batches excluded."""
    rates = []
    for i in range(_WARMUP + repetitions):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        if i >= _WARMUP:
            rates.append(batch_steps / dt)
    return rates


def measure_stage(
    stage: Stage,
    env_config: EnvConfig,
    num_envs: int = 128,
    repetitions: int = 20,
    steps_per_batch: int = 16,
    ppo_cfg: PPOConfig | None = None,
    seed: int = 0,
) -> StageResult:
    """Median steps/sec (with 95% bootstrap CI) for one pipeline stage."""
    env_is_pixel = env_config.obs_mode == "pixels" or env_config.task.endswith("-pixels")
    if stage == Stage.WITH_PIXELS and not env_is_pixel:
        raise ConfigError("WithPixels stage requested for a state-only environment")
    pixels = stage != Stage.ENV_STEP and env_is_pixel
    cfg = env_config
    if stage == Stage.ENV_STEP and env_is_pixel:
        # physics only: strip the rendering
        cfg = replace(env_config, task="cartpole-balance", obs_mode="state")

    rng = np.random.default_rng(seed)
    env = BatchEnv(cfg, num_envs=num_envs)
    obs = env.reset(seed=seed)
    batch_steps = num_envs * steps_per_batch * cfg.action_repeat

    if stage in (Stage.ENV_STEP, Stage.WITH_PIXELS):

        def run():
            for _ in range(steps_per_batch):
                actions = rng.uniform(-1, 1, (num_envs, env.action_dim))
                env.step(actions)

        rates = _time_batches(run, batch_steps, repetitions)
    elif stage == Stage.WITH_INFERENCE:
        pcfg = ppo_cfg or _default_bench_ppo(cfg, num_envs, steps_per_batch)
        torch.manual_seed(seed)
        policy, value = build_networks(
            pcfg, {k: v.shape[1:] for k, v in obs.items()}, env.action_dim,
            image_size=cfg.image_size,
        )
        state = TrainerState(policy=policy, value=value, cfg=pcfg)
        gen = torch.Generator()
        gen.manual_seed(seed)

        def run():
            nonlocal obs
            for _ in range(steps_per_batch):
                pol_in, _ = asymmetric_route(obs, pcfg)
                with torch.no_grad():
                    _, _, _, action, _ = policy_forward(
                        state.policy, _prep_policy_obs(state, pol_in), generator=gen
                    )
                obs, *_ = env.step(action.numpy())

        rates = _time_batches(run, batch_steps, repetitions)
    else:  # AndTraining: rollout + update, amortized per rollout step
        pcfg = ppo_cfg or _default_bench_ppo(cfg, num_envs, steps_per_batch)
        torch.manual_seed(seed)
        policy, value = build_networks(
            pcfg, {k: v.shape[1:] for k, v in obs.items()}, env.action_dim,
            image_size=cfg.image_size,
        )
        state = TrainerState(policy=policy, value=value, cfg=pcfg)
        gen = torch.Generator()
        gen.manual_seed(seed)
        batch_steps = num_envs * pcfg.unroll_length * cfg.action_repeat

        def run():
            nonlocal obs
            batch, obs, _ = collect_rollout(env, state, obs, gen)
            ppo_update(batch, state, gen)

        rates = _time_batches(run, batch_steps, repetitions)

    env.close()
    median = float(np.median(rates))
    lo, hi, degen = _bootstrap_ci(rates, np.random.default_rng(seed + 1))
    return StageResult(
        stage=stage.value,
        batch_size=num_envs,
        resolution=cfg.image_size if pixels else 0,
        reps=repetitions,
        median_sps=median,
        ci_low=lo,
        ci_high=hi,
        degenerate_ci=degen,
    )


def _default_bench_ppo(cfg: EnvConfig, num_envs: int, unroll: int) -> PPOConfig:
    pixels = cfg.obs_mode == "pixels" or cfg.task.endswith("-pixels")
    return PPOConfig(
        num_timesteps=num_envs * unroll,
        num_envs=num_envs,
        unroll_length=unroll,
        num_minibatches=1,
        num_updates_per_batch=1,
        batch_size=num_envs * unroll,
        action_repeat=cfg.action_repeat,
        policy_obs_key="pixels" if pixels else "state",
        value_obs_key="privileged_state" if pixels else "state",
        num_evals=1,
    )


# ---------------------------------------------------------------------------
# amortized breakdown


@dataclass(frozen=True)
class Breakdown:
    physics: float
    rendering: float
    inference: float
    update: float

    @property
    def total(self) -> float:
        return self.physics + self.rendering + self.inference + self.update

    @property
    def fractions(self) -> tuple:
        t = self.total
        return (self.physics / t, self.rendering / t, self.inference / t, self.update / t)


class MeasurementAnomaly(RuntimeError):
    """Stage timings out of order; the decomposition is not meaningful."""


def amortized_breakdown(t1: float, t2: float, t3: float, t4: float) -> Breakdown:
    """Split per-step time t4 into physics / rendering / inference / update.

    t1..t4 are cumulative per-env-step times of the four stages.
    """
    if not (t1 <= t2 <= t3 <= t4):
        raise MeasurementAnomaly(
            f"stage timings out of order: t1={t1} t2={t2} t3={t3} t4={t4}"
        )
    return Breakdown(
        physics=t1, rendering=t2 - t1, inference=t3 - t2, update=t4 - t3
    )


# Published per-env-step stage timings (seconds) for the two pixel tasks,
# used by the pure-arithmetic fraction check and the --paper-arith flag.
PUBLISHED_TIMINGS = {
    "CartpoleBalance": (7.30e-7, 2.48e-6, 2.93e-6, 3.20e-5),
    "PandaPickCubeCartesian": (1.56e-5, 2.71e-5, 2.78e-5, 6.39e-5),
}
PUBLISHED_FRACTIONS = {
    "CartpoleBalance": (0.02, 0.06, 0.01, 0.91),
    "PandaPickCubeCartesian": (0.24, 0.18, 0.01, 0.57),
}


# ---------------------------------------------------------------------------
# report emission


def report_rows(report: ThroughputReport) -> list[dict]:
    rows = []
    for r in report.results:
        rows.append(
            {
                "stage": r.stage,
                "batch_size": r.batch_size,
                "resolution": r.resolution,
                "reps": r.reps,
                "median_sps": repr(r.median_sps),
                "ci_low": repr(r.ci_low),
                "ci_high": repr(r.ci_high),
                "t_per_step": repr(r.t_per_step),
            }
        )
    return rows


def report_emit(report: ThroughputReport, path) -> str:
    """Write the CSV (fixed column order) and return a human-readable table."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(report_rows(report))

    buf = io.StringIO()
    buf.write(f"{'stage':<16}{'batch':>8}{'res':>6}{'median sps':>16}{'95% CI':>28}\n")
    for r in report.results:
        note = " (degenerate CI)" if r.degenerate_ci else ""
        buf.write(
            f"{r.stage:<16}{r.batch_size:>8}{r.resolution:>6}"
            f"{r.median_sps:>16.1f}   [{r.ci_low:>10.1f}, {r.ci_high:>10.1f}]{note}\n"
        )
    return buf.getvalue()


def report_parse(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV schema: {reader.fieldnames}")
        return list(reader)
