"""Command-line entry points: train, eval, bench, render-preview, serve-stdio.

Experiment configs are YAML with strict schema validation (unknown keys are
rejected) and every default materialized into the resolved copy saved next to
the run outputs. Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import shutil
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import bench as benchmod
from .dynamics import SystemState
from .envkit import BatchEnv, EnvConfig, registered_tasks
from .pixelrender import VisualBounds, VisualParams, batch_render, randomize_visuals, write_ppm
from .ppo import (
    PPOConfig,
    TrainerState,
    asymmetric_route,
    build_networks,
    evaluate,
    load_checkpoint,
    policy_forward,
    read_checkpoint_header,
    save_checkpoint,
    train,
    _prep_policy_obs,
)
from .randomization import ConfigError, RandomizationSpec

import torch

METRICS_COLUMNS = [
    "wall_time",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "sps",
    "policy_loss",
    "value_loss",
    "entropy",
    "total_loss",
    "rollout_reward_mean",
]

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


# ---------------------------------------------------------------------------
# configuration


def _dataclass_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            v = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            v = f.default_factory()
        else:
            continue
        if isinstance(v, tuple):
            v = list(v)
        if dataclasses.is_dataclass(v):
            continue
        out[f.name] = v
    return out


def default_config() -> dict:
    env = _dataclass_defaults(EnvConfig)
    env.pop("seed", None)
    env["randomization"] = {
        "action_delay": [0, 0],
        "observation_delay": [0, 0],
        "pose_injection_prob": 0.0,
    }
    ppo = _dataclass_defaults(PPOConfig)
    ppo.pop("seed", None)
    return {
        "env": env,
        "ppo": ppo,
        "seed": 0,
        "output_dir": "runs",
        "eval_policy_deterministic": True,
    }


def _merge_validate(defaults: dict, user: dict, path: str = "") -> dict:
    merged = {}
    for key, dval in defaults.items():
        if isinstance(dval, dict):
            sub = user.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config key {path}{key} must be a mapping")
            merged[key] = _merge_validate(dval, sub, f"{path}{key}.")
        else:
            merged[key] = user.get(key, dval)
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return merged


def _apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like dotted.path=value")
        dotted, raw = item.split("=", 1)
        node = cfg
        parts = dotted.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config path {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config path {dotted!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def load_config(path, overrides=()) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    user = yaml.safe_load(p.read_text()) or {}
    if not isinstance(user, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _merge_validate(default_config(), user)
    return _apply_overrides(cfg, overrides)


def build_env_config(cfg: dict) -> EnvConfig:
    env = dict(cfg["env"])
    rnd = env.pop("randomization")
    spec = RandomizationSpec(
        action_delay=tuple(rnd["action_delay"]),
        observation_delay=tuple(rnd["observation_delay"]),
        pose_injection_prob=rnd["pose_injection_prob"],
    )
    return EnvConfig(seed=cfg["seed"], randomization=spec, **{
        k: (v if not isinstance(v, list) else tuple(v)) for k, v in env.items()
    })


def build_ppo_config(cfg: dict) -> PPOConfig:
    ppo = {
        k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg["ppo"].items()
    }
    return PPOConfig(seed=cfg["seed"], **ppo)


def output_root() -> Path:
    return Path(os.environ.get("DESKRL_OUTPUT_ROOT", "."))


# ---------------------------------------------------------------------------
# checkpoint helpers


def _net_extra(ppo_cfg: PPOConfig, obs_shapes: dict, action_dim: int, image_size: int) -> dict:
    return {
        "obs_shapes": {k: list(v) for k, v in obs_shapes.items()},
        "action_dim": action_dim,
        "image_size": image_size,
        "policy_obs_key": ppo_cfg.policy_obs_key,
        "value_obs_key": ppo_cfg.value_obs_key,
        "policy_hidden": list(ppo_cfg.policy_hidden),
        "value_hidden": list(ppo_cfg.value_hidden),
        "cnn_dense": list(ppo_cfg.cnn_dense),
    }


def restore_trainer(checkpoint_path) -> TrainerState:
    header = read_checkpoint_header(checkpoint_path)
    extra = header.get("extra") or {}
    if "obs_shapes" not in extra:
        raise ConfigError("checkpoint lacks network metadata; cannot rebuild")
    cfg = PPOConfig(
        policy_obs_key=extra["policy_obs_key"],
        value_obs_key=extra["value_obs_key"],
        policy_hidden=tuple(extra["policy_hidden"]),
        value_hidden=tuple(extra["value_hidden"]),
        cnn_dense=tuple(extra["cnn_dense"]),
    )
    obs_shapes = {k: tuple(v) for k, v in extra["obs_shapes"].items()}
    policy, value = build_networks(
        cfg, obs_shapes, extra["action_dim"], image_size=extra["image_size"]
    )
    state = TrainerState(policy=policy, value=value, cfg=cfg)
    return load_checkpoint(checkpoint_path, state)


# ---------------------------------------------------------------------------
# CLI


@click.group()
def main():
    """Batched RL environments, PPO training, rendering, and benchmarks."""


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


@main.command("train")
@click.argument("config_path", type=click.Path())
@click.option("--set", "overrides", multiple=True, help="dotted.path=value override")
def cmd_train(config_path, overrides):
    """Run PPO training from an experiment config."""
    try:
        cfg = load_config(config_path, overrides)
        env_cfg = build_env_config(cfg)
        ppo_cfg = build_ppo_config(cfg)
    except (ConfigError, yaml.YAMLError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    run_dir = output_root() / cfg["output_dir"]
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved_config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))

    metrics_path = run_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as f:
        csv.DictWriter(f, fieldnames=METRICS_COLUMNS).writeheader()

    env = BatchEnv(env_cfg, num_envs=ppo_cfg.num_envs, num_workers=ppo_cfg.num_workers)
    eval_env = BatchEnv(env_cfg, num_envs=ppo_cfg.num_eval_envs)
    checkpoints: list[Path] = []
    best = {"ret": -np.inf}
    extra_holder: dict = {}

    def on_metrics(row):
        with open(metrics_path, "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, extrasaction="ignore")
            writer.writerow({k: _fmt(row.get(k, "")) for k in METRICS_COLUMNS})

    def on_state(state, row):
        # checkpoint every eval interval; retain last 3 plus best-by-return
        ck = run_dir / f"checkpoint_{state.env_steps:012d}.ckpt"
        save_checkpoint(state, ck, extra=extra_holder["extra"])
        checkpoints.append(ck)
        ret = row.get("eval_return_mean", -np.inf)
        if ret >= best["ret"]:
            best["ret"] = ret
            shutil.copy(ck, run_dir / "checkpoint_best.ckpt")
        while len(checkpoints) > 3:
            checkpoints.pop(0).unlink(missing_ok=True)

    try:
        obs = env.reset(seed=ppo_cfg.seed)
        obs_shapes = {k: v.shape[1:] for k, v in obs.items()}
        extra_holder["extra"] = _net_extra(ppo_cfg, obs_shapes, env.action_dim, env_cfg.image_size)
        state, metrics = train(
            env, ppo_cfg, eval_env=eval_env,
            metrics_callback=on_metrics, state_callback=on_state,
        )
        save_checkpoint(state, run_dir / "checkpoint_final.ckpt", extra=extra_holder["extra"])
        click.echo(f"run complete: {len(metrics)} eval rows in {metrics_path}")
    except (ConfigError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except Exception as e:  # noqa: BLE001
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)
    finally:
        env.close()
        eval_env.close()


@main.command("eval")
@click.argument("checkpoint", type=click.Path(), required=False)
@click.option("--env-id", default="cartpole-balance", help="environment id")
@click.option("--episodes", default=8, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--episode-length", default=1000, type=int)
@click.option("--policy", "policy_kind", default="checkpoint",
              type=click.Choice(["checkpoint", "zero", "random"]))
@click.option("--dump-trajectory", type=click.Path(), default=None,
              help="write the per-step trajectory of episode 0 as JSON")
def cmd_eval(checkpoint, env_id, episodes, seed, episode_length, policy_kind, dump_trajectory):
    """Deterministic-policy rollout; prints mean/median return."""
    if episodes <= 0:
        click.echo("config error: episodes must be positive", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    if policy_kind == "checkpoint" and not checkpoint:
        click.echo("config error: checkpoint path required", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        env_cfg = EnvConfig(task=env_id, seed=seed, episode_length=episode_length)
        returns, trajectory = run_rollouts(
            env_cfg, episodes, seed, policy_kind, checkpoint,
            record_trajectory=dump_trajectory is not None,
        )
    except (ConfigError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    if dump_trajectory:
        Path(dump_trajectory).write_text(json.dumps(trajectory))
    click.echo(
        f"episodes={episodes} mean_return={np.mean(returns)!r} "
        f"median_return={np.median(returns)!r} std={np.std(returns)!r}"
    )


def run_rollouts(env_cfg: EnvConfig, episodes: int, seed: int, policy_kind: str,
                 checkpoint=None, record_trajectory: bool = False):
    """Roll out `episodes` single-env episodes; optionally record episode 0.

    The trajectory record stores full-precision floats so external bindings
    can check bitwise parity.
    """
    state = restore_trainer(checkpoint) if policy_kind == "checkpoint" else None
    env = BatchEnv(env_cfg, num_envs=1)
    returns = []
    trajectory = []
    rng = np.random.default_rng(seed)
    for ep in range(episodes):
        obs = env.reset() if ep else env.reset(seed=seed)
        total = 0.0
        for t in range(env_cfg.episode_length):
            if policy_kind == "zero":
                action = np.zeros((1, env.action_dim))
            elif policy_kind == "random":
                action = rng.uniform(-1, 1, (1, env.action_dim))
            else:
                pol_in, _ = asymmetric_route(obs, state.cfg)
                with torch.no_grad():
                    _, _, _, act, _ = policy_forward(
                        state.policy, _prep_policy_obs(state, pol_in), deterministic=True
                    )
                action = act.numpy()
            obs, reward, done, trunc, infos = env.step(action, autoreset=True)
            total += float(reward[0])
            if record_trajectory and ep == 0:
                final = bool(done[0] or trunc[0])
                step_obs = (
                    infos[0]["terminal_observation"] if final else
                    {k: v[0] for k, v in obs.items()}
                )
                trajectory.append(
                    {
                        "step": t,
                        "action": action[0].tolist(),
                        "reward": float(reward[0]),
                        "done": bool(done[0]),
                        "truncated": bool(trunc[0]),
                        "state": step_obs["state"].ravel().tolist(),
                    }
                )
            if done[0] or trunc[0]:
                break
        returns.append(total)
    env.close()
    return returns, trajectory


@main.command("bench")
@click.argument("config_path", type=click.Path(), required=False)
@click.option("--set", "overrides", multiple=True)
@click.option("--paper-arith", is_flag=True,
              help="recompute the published fraction table from published timings")
@click.option("--repetitions", default=20, type=int)
@click.option("--num-envs", default=128, type=int)
@click.option("--out", default="throughput.csv", type=click.Path())
def cmd_bench(config_path, overrides, paper_arith, repetitions, num_envs, out):
    """Measure staged throughput; optionally rerun the published arithmetic."""
    if paper_arith:
        click.echo(f"{'task':<26}{'physics':>9}{'render':>9}{'infer':>9}{'update':>9}")
        for task, (t1, t2, t3, t4) in benchmod.PUBLISHED_TIMINGS.items():
            b = benchmod.amortized_breakdown(t1, t2, t3, t4)
            f = b.fractions
            click.echo(f"{task:<26}{f[0]:>9.2f}{f[1]:>9.2f}{f[2]:>9.2f}{f[3]:>9.2f}")
        if not config_path:
            return
    try:
        if config_path:
            cfg = load_config(config_path, overrides)
            env_cfg = build_env_config(cfg)
        else:
            env_cfg = EnvConfig(task="cartpole-balance-pixels", obs_mode="pixels")
    except (ConfigError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        report = benchmod.ThroughputReport()
        for stage in benchmod.Stage:
            report.results.append(
                benchmod.measure_stage(
                    stage, env_cfg, num_envs=num_envs, repetitions=repetitions
                )
            )
        table = benchmod.report_emit(report, output_root() / out)
        click.echo(table)
    except Exception as e:  # noqa: BLE001
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)


@main.command("render-preview")
@click.option("--env-id", default="cartpole-balance-pixels")
@click.option("--seed", default=0, type=int)
@click.option("--frames", default=8, type=int)
@click.option("--out-dir", default="preview", type=click.Path())
@click.option("--randomize-visuals", "randomize", is_flag=True)
@click.option("--size", default=64, type=int)
def cmd_render_preview(env_id, seed, frames, out_dir, randomize, size):
    """Dump rendered frames as PPM images (debug aid)."""
    if frames <= 0:
        click.echo("config error: frames must be positive", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        env_cfg = EnvConfig(
            task=env_id, obs_mode="pixels", seed=seed, image_size=size,
            visual_randomization=randomize,
        )
        env = BatchEnv(env_cfg, num_envs=1)
        env.reset(seed=seed)
        out = output_root() / out_dir
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(seed)
        inner = env.envs[0]
        for i in range(frames):
            q, v = inner.task.qv(inner.state)
            img = batch_render(
                SystemState(q=q[None, :], v=v[None, :]),
                [inner._visuals], size, size, inner.task.params,
            )[0]
            write_ppm(img, out / f"frame_{i:04d}.ppm")
            env.step(rng.uniform(-1, 1, (1, env.action_dim)))
        env.close()
        click.echo(f"wrote {frames} frames to {out}")
    except (ConfigError, ValueError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)


@main.command("serve-stdio")
def cmd_serve_stdio():
    """JSON-lines request/response server over stdin/stdout (binding backend).

    Requests: {"op": "make_env", "id": ..., "config": {...}} ->
    {"ok": true, "shapes": ...}; then "reset", "step", "train", "close".
    Floats are serialized with full round-trip precision.
    """
    from .serve import serve_stdio

    serve_stdio()


if __name__ == "__main__":
    main()
