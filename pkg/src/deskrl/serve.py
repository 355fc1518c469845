"""JSON-lines stdio server backing the scripting-language bindings.

Protocol: one JSON object per line on stdin, one JSON reply per line on
stdout. Numbers use Python repr round-trip serialization, so a host reading
them as IEEE-754 doubles reconstructs bit-identical values.

Ops:
  {"op": "version"}
  {"op": "make_env", "task": id, "config": {...}}   -> handle + slot shapes
  {"op": "reset", "handle": h, "seed": s?}          -> observation arrays
  {"op": "step", "handle": h, "actions": [[...]]}   -> obs/reward/done arrays
  {"op": "close", "handle": h}
  {"op": "train", "config": {...}}                  -> metrics rows
"""

from __future__ import annotations

import json
import sys

import numpy as np

from . import __version__
from .envkit import BatchEnv, EnvConfig
from .ppo import PPOConfig, train
from .randomization import ConfigError

_ENV_KEYS = {
    "episode_length",
    "action_repeat",
    "obs_mode",
    "image_size",
    "visual_randomization",
    "seed",
    "num_envs",
}


def _obs_payload(obs: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in obs.items()}


class _Server:
    def __init__(self):
        self._envs: dict[int, BatchEnv] = {}
        self._next = 1

    def handle(self, req: dict) -> dict:
        op = req.get("op")
        if op == "version":
            return {"ok": True, "version": __version__}
        if op == "make_env":
            cfg_in = dict(req.get("config") or {})
            unknown = set(cfg_in) - _ENV_KEYS
            if unknown:
                raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
            num_envs = int(cfg_in.pop("num_envs", 1))
            env = BatchEnv(EnvConfig(task=req["task"], **cfg_in), num_envs=num_envs)
            h = self._next
            self._next += 1
            self._envs[h] = env
            shapes = self._envs[h].envs[0].observation_shapes()
            return {
                "ok": True,
                "handle": h,
                "num_envs": num_envs,
                "action_dim": env.action_dim,
                "shapes": {k: list(v) for k, v in shapes.items()},
            }
        if op in ("reset", "step", "close"):
            h = req.get("handle")
            env = self._envs.get(h)
            if env is None:
                raise ConfigError(f"invalid handle {h!r}")
            if op == "reset":
                obs = env.reset(seed=req.get("seed"))
                return {"ok": True, "observation": _obs_payload(obs)}
            if op == "step":
                actions = np.asarray(req["actions"], dtype=float)
                if actions.shape != (env.num_envs, env.action_dim):
                    raise ConfigError(
                        f"actions must have shape {(env.num_envs, env.action_dim)}"
                    )
                obs, reward, done, trunc, _ = env.step(actions)
                return {
                    "ok": True,
                    "observation": _obs_payload(obs),
                    "reward": reward.tolist(),
                    "done": done.tolist(),
                    "truncated": trunc.tolist(),
                }
            env.close()
            del self._envs[h]
            return {"ok": True}
        if op == "train":
            cfg = dict(req.get("config") or {})
            env_part = dict(cfg.pop("env", {}))
            task = env_part.pop("task", "cartpole-balance")
            ppo_cfg = PPOConfig(**cfg.get("ppo", {}))
            env = BatchEnv(EnvConfig(task=task, **env_part), num_envs=ppo_cfg.num_envs)
            eval_env = BatchEnv(EnvConfig(task=task, **env_part), num_envs=ppo_cfg.num_eval_envs)
            try:
                _, metrics = train(env, ppo_cfg, eval_env=eval_env)
            finally:
                env.close()
                eval_env.close()
            return {"ok": True, "metrics": metrics}
        raise ConfigError(f"unknown op {op!r}")


class _ReprFloat(float):
    def __repr__(self):  # full round-trip precision
        return float.__repr__(self)


def _dumps(obj) -> str:
    return json.dumps(obj)


def serve_stdio(stdin=None, stdout=None):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    server = _Server()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = server.handle(json.loads(line))
        except (ConfigError, ValueError, KeyError) as e:
            reply = {"ok": False, "error": str(e)}
        except Exception as e:  # noqa: BLE001
            reply = {"ok": False, "error": f"internal: {e}"}
        stdout.write(_dumps(reply) + "\n")
        stdout.flush()
