"""PPO with GAE, observation normalization, and asymmetric actor-critic.

Networks are small torch modules (MLP, or a lightweight CNN trunk for pixel
observations) with Swish activations. Rollout collection drives a BatchEnv;
updates use the clipped-surrogate objective with gradient-norm clipping and
Adam.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .envkit import BatchEnv
from .mathcore import InvalidInputError, RunningNormalizer, normalizer_apply, normalizer_update
from .randomization import ConfigError

_LOG_2 = math.log(2.0)


@dataclass
class PPOConfig:
    num_timesteps: int = 60_000_000
    num_envs: int = 2048
    unroll_length: int = 30
    num_minibatches: int = 32
    num_updates_per_batch: int = 16
    batch_size: int = 1024
    discounting: float = 0.995
    gae_lambda: float = 0.95
    learning_rate: float = 1e-3
    entropy_cost: float = 1e-2
    reward_scaling: float = 10.0
    clipping_epsilon: float = 0.2
    max_grad_norm: float = 0.5
    action_repeat: int = 1
    normalize_observations: bool = True
    normalize_advantages: bool = True
    policy_obs_key: str = "state"
    value_obs_key: str = "state"
    policy_hidden: tuple = (128, 128, 128, 128)
    value_hidden: tuple = (256, 256, 256, 256, 256)
    cnn_dense: tuple = (256, 256)
    num_evals: int = 10
    num_eval_envs: int = 16
    seed: int = 0
    num_workers: int = 1
    torch_threads: int = 0  # 0: leave torch default
    lr_decay: bool = False  # linear decay of the learning rate to 0 over num_timesteps

    def __post_init__(self):
        if not 0.0 < self.discounting <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError("discounting and gae_lambda must be in (0, 1]")
        if self.clipping_epsilon <= 0:
            raise ConfigError("clipping_epsilon must be positive")
        total = self.num_envs * self.unroll_length
        if total % (self.num_minibatches * self.batch_size) != 0:
            raise ConfigError(
                "num_envs * unroll_length must be divisible by "
                "num_minibatches * batch_size"
            )

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# GAE


def compute_gae(rewards, values, bootstrap, dones, gamma: float, lam: float):
    """Advantages and value targets from time-major arrays.

    delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise InvalidInputError("compute_gae: mismatched shapes")
    T = rewards.shape[0]
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    next_values = np.concatenate([values[1:], bootstrap[None]], axis=0)

    advantages = np.zeros_like(rewards)
    last = np.zeros_like(bootstrap)
    for t in range(T - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * nonterm * next_values[t] - values[t]
        last = delta + gamma * lam * nonterm * last
        advantages[t] = last
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# networks


class Swish(nn.SiLU):
    pass


def _mlp(sizes, out_dim):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b), Swish()]
    layers.append(nn.Linear(sizes[-1], out_dim))
    return nn.Sequential(*layers)


class MLPPolicy(nn.Module):
    def __init__(self, obs_dim: int, action_dim: int, hidden=(128, 128, 128, 128),
                 init_std: float = 0.5):
        super().__init__()
        self.trunk = _mlp((obs_dim, *hidden), action_dim)
        self.log_std = nn.Parameter(torch.full((action_dim,), math.log(init_std)))
        self.action_dim = action_dim

    def forward(self, obs):
        mean = self.trunk(obs)
        return mean, self.log_std.expand_as(mean)


class MLPValue(nn.Module):
    def __init__(self, obs_dim: int, hidden=(256, 256, 256, 256, 256)):
        super().__init__()
        self.trunk = _mlp((obs_dim, *hidden), 1)

    def forward(self, obs):
        return self.trunk(obs).squeeze(-1)


class CNNTrunk(nn.Module):
    """Lightweight conv stack: 32@8x8/4, 64@4x4/2, 64@3x3/1, then dense."""

    def __init__(self, in_channels: int, image_size: int, dense=(256, 256)):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(in_channels, 32, 8, stride=4), Swish(),
            nn.Conv2d(32, 64, 4, stride=2), Swish(),
            nn.Conv2d(64, 64, 3, stride=1, padding=1), Swish(),
            nn.Flatten(),
        )
        with torch.no_grad():
            flat = self.convs(torch.zeros(1, in_channels, image_size, image_size)).shape[1]
        layers = []
        sizes = (flat, *dense)
        for a, b in zip(sizes[:-1], sizes[1:]):
            layers += [nn.Linear(a, b), Swish()]
        self.dense = nn.Sequential(*layers)
        self.out_dim = dense[-1]

    def forward(self, img):
        return self.dense(self.convs(img))


class CNNPolicy(nn.Module):
    def __init__(self, in_channels: int, image_size: int, action_dim: int,
                 dense=(256, 256), init_std: float = 0.5):
        super().__init__()
        self.trunk = CNNTrunk(in_channels, image_size, dense)
        self.head = nn.Linear(self.trunk.out_dim, action_dim)
        self.log_std = nn.Parameter(torch.full((action_dim,), math.log(init_std)))
        self.action_dim = action_dim

    def forward(self, img):
        mean = self.head(self.trunk(img))
        return mean, self.log_std.expand_as(mean)


# ---------------------------------------------------------------------------
# tanh-Gaussian distribution helpers


def tanh_gaussian_log_prob(mean, log_std, pre_tanh):
    """log-density of tanh(u) with u ~ N(mean, std), including the squash
    correction log|d tanh(u)/du| = log(1 - tanh(u)^2)."""
    std = torch.exp(log_std)
    base = -0.5 * (((pre_tanh - mean) / std) ** 2) - log_std - 0.5 * math.log(2 * math.pi)
    # numerically stable log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    correction = 2.0 * (_LOG_2 - pre_tanh - torch.nn.functional.softplus(-2.0 * pre_tanh))
    return (base - correction).sum(-1)


def tanh_gaussian_entropy(mean, log_std, eps):
    """Entropy estimate with fixed standard-normal draws ``eps`` (common
    random numbers keep the estimate smooth and monotone in std)."""
    pre_tanh = mean.unsqueeze(0) + torch.exp(log_std).unsqueeze(0) * eps
    gaussian = (log_std + 0.5 * math.log(2 * math.pi * math.e)).sum(-1)
    corr = 2.0 * (_LOG_2 - pre_tanh - torch.nn.functional.softplus(-2.0 * pre_tanh))
    return gaussian + corr.sum(-1).mean(0)


def policy_forward(policy: nn.Module, obs: torch.Tensor, generator=None,
                   deterministic: bool = False):
    """Action distribution plus a (squashed) sample and its log-prob."""
    mean, log_std = policy(obs)
    if torch.isnan(mean).any():
        raise RuntimeError("policy produced NaN mean")
    if deterministic:
        pre_tanh = mean
    else:
        eps = torch.randn(mean.shape, generator=generator)
        pre_tanh = mean + torch.exp(log_std) * eps
    action = torch.tanh(pre_tanh)
    log_prob = tanh_gaussian_log_prob(mean, log_std, pre_tanh)
    return mean, log_std, pre_tanh, action, log_prob


# ---------------------------------------------------------------------------
# observation routing / pixel normalization


def asymmetric_route(obs: dict, cfg: PPOConfig):
    """(policy input, value input) per configured slot keys."""
    for key in (cfg.policy_obs_key, cfg.value_obs_key):
        if key not in obs:
            raise ConfigError(f"observation slot {key!r} missing")
    return obs[cfg.policy_obs_key], obs[cfg.value_obs_key]


def pixel_normalize(img):
    """Per-sample, per-channel standardization; constant channels map to 0."""
    img = np.asarray(img, dtype=np.float64)
    axes = tuple(range(1, img.ndim - 1))  # (N, H, W, C) -> stats over H, W
    mean = img.mean(axis=axes, keepdims=True)
    std = img.std(axis=axes, keepdims=True)
    return np.where(std > 0, (img - mean) / np.where(std > 0, std, 1.0), 0.0)


# ---------------------------------------------------------------------------
# rollout and update


@dataclass
class RolloutBatch:
    policy_obs: np.ndarray    # [T, N, ...]
    value_obs: np.ndarray
    actions: np.ndarray       # squashed actions
    pre_tanh: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray       # post reward-scaling
    dones: np.ndarray
    values: np.ndarray
    bootstrap: np.ndarray


@dataclass
class TrainerState:
    policy: nn.Module
    value: nn.Module
    cfg: PPOConfig
    policy_normalizer: RunningNormalizer | None = None
    value_normalizer: RunningNormalizer | None = None
    optimizer: torch.optim.Optimizer = None  # type: ignore[assignment]
    env_steps: int = 0

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = torch.optim.Adam(
                list(self.policy.parameters()) + list(self.value.parameters()),
                lr=self.cfg.learning_rate,
                betas=(0.9, 0.999),
                eps=1e-8,
            )


def _prep_policy_obs(state: TrainerState, obs_np: np.ndarray) -> torch.Tensor:
    cfg = state.cfg
    if cfg.policy_obs_key == "pixels":
        x = pixel_normalize(obs_np)
        # (N, H, W, C) -> (N, C, H, W)
        return torch.as_tensor(np.moveaxis(x, -1, 1), dtype=torch.float32)
    if state.policy_normalizer is not None:
        obs_np = normalizer_apply(state.policy_normalizer, obs_np)
    return torch.as_tensor(obs_np, dtype=torch.float32)


def _prep_value_obs(state: TrainerState, obs_np: np.ndarray) -> torch.Tensor:
    if state.value_normalizer is not None:
        obs_np = normalizer_apply(state.value_normalizer, obs_np)
    return torch.as_tensor(obs_np, dtype=torch.float32)


def collect_rollout(env: BatchEnv, state: TrainerState, obs: dict,
                    generator: torch.Generator) -> tuple[RolloutBatch, dict, float]:
    """Unroll the policy for cfg.unroll_length control steps across the batch.

    Returns the batch, the observation to resume from, and the mean raw
    (unscaled) reward over the rollout.
    """
    cfg = state.cfg
    T, N = cfg.unroll_length, env.num_envs
    p_obs, v_obs, acts, pres, lps, rews, dns, vals = [], [], [], [], [], [], [], []
    raw_p, raw_v = [], []
    raw_reward_sum = 0.0

    for _ in range(T):
        pol_in_np, val_in_np = asymmetric_route(obs, cfg)
        pol_t = _prep_policy_obs(state, pol_in_np)
        val_t = _prep_value_obs(state, val_in_np)
        if state.policy_normalizer is not None:
            raw_p.append(pol_in_np)
        if state.value_normalizer is not None:
            raw_v.append(val_in_np)
        with torch.no_grad():
            _, _, pre_tanh, action, log_prob = policy_forward(
                state.policy, pol_t, generator=generator
            )
            value = state.value(val_t)
        action_np = action.numpy().astype(np.float64)
        next_obs, reward, done, trunc, infos = env.step(action_np)
        raw_reward_sum += float(reward.mean())

        # truncation bootstraps through the terminal observation; the
        # bootstrap is added after reward scaling because the value net is
        # trained on scaled returns
        boundary = done | trunc
        term_val = np.zeros(N)
        if trunc.any():
            term_obs = [infos[i].get("terminal_observation") for i in range(N)]
            idx = [i for i in range(N) if trunc[i] and not done[i] and term_obs[i] is not None]
            if idx:
                _, tv_np = asymmetric_route(
                    {k: np.stack([term_obs[i][k] for i in idx]) for k in term_obs[idx[0]]},
                    cfg,
                )
                with torch.no_grad():
                    tv = state.value(_prep_value_obs(state, tv_np)).numpy()
                term_val[idx] = tv

        # store the observations as the networks saw them at sampling time:
        # later updates must evaluate the "old" policy on identical inputs
        # even though the running normalizer statistics keep moving
        p_obs.append(pol_t.numpy())
        v_obs.append(val_t.numpy())
        acts.append(action_np)
        pres.append(pre_tanh.numpy())
        lps.append(log_prob.numpy())
        rews.append(reward * cfg.reward_scaling + cfg.discounting * term_val)
        dns.append(boundary.astype(np.float64))
        vals.append(value.numpy().astype(np.float64))
        obs = next_obs

    _, val_in_np = asymmetric_route(obs, cfg)
    with torch.no_grad():
        bootstrap = state.value(_prep_value_obs(state, val_in_np)).numpy().astype(np.float64)

    batch = RolloutBatch(
        policy_obs=np.stack(p_obs),
        value_obs=np.stack(v_obs),
        actions=np.stack(acts),
        pre_tanh=np.stack(pres),
        log_probs=np.stack(lps),
        rewards=np.stack(rews),
        dones=np.stack(dns),
        values=np.stack(vals),
        bootstrap=bootstrap,
    )
    # fold this phase's raw observations into the running statistics only
    # after everything above was normalized with the pre-phase statistics
    if raw_p:
        flat = np.concatenate(raw_p, axis=0)
        state.policy_normalizer = normalizer_update(state.policy_normalizer, flat)
    if raw_v:
        flat = np.concatenate(raw_v, axis=0)
        state.value_normalizer = normalizer_update(state.value_normalizer, flat)
    return batch, obs, raw_reward_sum / T


def ppo_loss(state: TrainerState, minibatch: dict, entropy_eps: torch.Tensor):
    """Clipped-surrogate loss with value MSE and entropy bonus.

    Deterministic given (parameters, minibatch, entropy_eps), which makes
    every component finite-difference checkable.
    """
    cfg = state.cfg
    mean, log_std = state.policy(minibatch["policy_obs"])
    new_log_prob = tanh_gaussian_log_prob(mean, log_std, minibatch["pre_tanh"])
    ratio = torch.exp(new_log_prob - minibatch["log_probs"])
    adv = minibatch["advantages"]
    surrogate = torch.minimum(
        ratio * adv,
        torch.clamp(ratio, 1.0 - cfg.clipping_epsilon, 1.0 + cfg.clipping_epsilon) * adv,
    )
    policy_loss = -surrogate.mean()

    value_pred = state.value(minibatch["value_obs"])
    value_loss = 0.5 * ((value_pred - minibatch["value_targets"]) ** 2).mean()

    entropy = tanh_gaussian_entropy(mean, log_std, entropy_eps).mean()
    entropy_loss = -cfg.entropy_cost * entropy

    total = policy_loss + value_loss + entropy_loss
    return total, {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "total_loss": float(total.detach()),
    }


def ppo_update(batch: RolloutBatch, state: TrainerState,
               generator: torch.Generator) -> dict:
    """Run num_updates_per_batch epochs of shuffled minibatch updates."""
    cfg = state.cfg
    advantages, targets = compute_gae(
        batch.rewards, batch.values, batch.bootstrap, batch.dones,
        cfg.discounting, cfg.gae_lambda,
    )

    def flat(x):
        return x.reshape(-1, *x.shape[2:])

    data_np = {
        "policy_obs": flat(batch.policy_obs).astype(np.float32),
        "value_obs": flat(batch.value_obs).astype(np.float32),
        "pre_tanh": flat(batch.pre_tanh).astype(np.float32),
        "log_probs": flat(batch.log_probs).astype(np.float32),
        "advantages": advantages.reshape(-1).astype(np.float32),
        "value_targets": targets.reshape(-1).astype(np.float32),
    }
    total = data_np["advantages"].shape[0]
    mb_size = cfg.batch_size
    diagnostics: dict = {}

    for _ in range(cfg.num_updates_per_batch):
        perm = torch.randperm(total, generator=generator).numpy()
        for start in range(0, total - mb_size + 1, mb_size):
            idx = perm[start : start + mb_size]
            # batch.policy_obs / value_obs are already normalized network
            # inputs captured at collection time
            mb = {
                "policy_obs": torch.as_tensor(data_np["policy_obs"][idx]),
                "value_obs": torch.as_tensor(data_np["value_obs"][idx]),
                "pre_tanh": torch.as_tensor(data_np["pre_tanh"][idx]),
                "log_probs": torch.as_tensor(data_np["log_probs"][idx]),
                "advantages": torch.as_tensor(data_np["advantages"][idx]),
                "value_targets": torch.as_tensor(data_np["value_targets"][idx]),
            }
            if cfg.normalize_advantages:
                adv = mb["advantages"]
                mb["advantages"] = (adv - adv.mean()) / (adv.std() + 1e-8)
            eps = torch.randn(
                (4, mb_size, state.policy.action_dim), generator=generator
            )
            loss, diagnostics = ppo_loss(state, mb, eps)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite PPO loss: {diagnostics}")
            state.optimizer.zero_grad()
            loss.backward()
            # policy and value live on very different loss scales; clipping
            # them jointly would let value-MSE gradients crush the policy
            # gradient after renormalization
            if cfg.max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(
                    state.policy.parameters(), cfg.max_grad_norm
                )
                torch.nn.utils.clip_grad_norm_(
                    state.value.parameters(), cfg.max_grad_norm
                )
            state.optimizer.step()
    return diagnostics


# ---------------------------------------------------------------------------
# evaluation


def evaluate(state: TrainerState, eval_env: BatchEnv, episodes: int | None = None,
             max_steps: int | None = None) -> dict:
    """Deterministic-policy rollout; one episode per eval env."""
    cfg = state.cfg
    obs = eval_env.reset()
    n = eval_env.num_envs
    returns = np.zeros(n)
    finished = np.zeros(n, dtype=bool)
    steps = 0
    limit = max_steps or eval_env.config.episode_length
    while not finished.all() and steps < limit:
        pol_in_np, _ = asymmetric_route(obs, cfg)
        with torch.no_grad():
            _, _, _, action, _ = policy_forward(
                state.policy, _prep_policy_obs(state, pol_in_np), deterministic=True
            )
        obs, reward, done, trunc, _ = eval_env.step(action.numpy(), autoreset=True)
        returns += reward * (~finished)
        finished |= done | trunc
        steps += 1
    return {
        "eval_return_mean": float(returns.mean()),
        "eval_return_std": float(returns.std()),
        "eval_episode_steps": steps,
    }


# ---------------------------------------------------------------------------
# training loop


def build_networks(cfg: PPOConfig, obs_shapes: dict, action_dim: int,
                   image_size: int = 64):
    if cfg.policy_obs_key == "pixels":
        channels = obs_shapes["pixels"][-1]
        policy = CNNPolicy(channels, image_size, action_dim, dense=cfg.cnn_dense)
    else:
        policy = MLPPolicy(obs_shapes[cfg.policy_obs_key][0], action_dim, cfg.policy_hidden)
    value = MLPValue(obs_shapes[cfg.value_obs_key][0], cfg.value_hidden)
    return policy, value


def train(env: BatchEnv, cfg: PPOConfig, eval_env: BatchEnv | None = None,
          target_return: float | None = None, metrics_callback=None,
          state_callback=None):
    """Alternate rollout collection and PPO updates; returns (state, metrics).

    ``target_return`` stops training early once a deterministic eval reaches
    it. ``metrics_callback(row)`` fires after every evaluation.
    """
    if cfg.torch_threads > 0:
        torch.set_num_threads(cfg.torch_threads)
    torch.manual_seed(cfg.seed)
    generator = torch.Generator()
    generator.manual_seed(cfg.seed + 1)

    obs = env.reset(seed=cfg.seed)
    obs_shapes = {k: v.shape[1:] for k, v in obs.items()}
    policy, value = build_networks(
        cfg, obs_shapes, env.action_dim, image_size=env.config.image_size
    )
    state = TrainerState(policy=policy, value=value, cfg=cfg)
    if cfg.normalize_observations:
        if cfg.policy_obs_key != "pixels":
            state.policy_normalizer = RunningNormalizer(dim=obs_shapes[cfg.policy_obs_key][0])
        state.value_normalizer = RunningNormalizer(dim=obs_shapes[cfg.value_obs_key][0])

    steps_per_phase = cfg.num_envs * cfg.unroll_length * cfg.action_repeat
    num_phases = max(1, math.ceil(cfg.num_timesteps / steps_per_phase))
    eval_every = max(1, num_phases // max(cfg.num_evals, 1))

    metrics: list[dict] = []
    start = time.perf_counter()

    def run_eval(diag):
        row = {"env_steps": state.env_steps, "wall_time": time.perf_counter() - start}
        if eval_env is not None:
            row.update(evaluate(state, eval_env))
        elapsed = row["wall_time"]
        row["sps"] = state.env_steps / elapsed if elapsed > 0 else 0.0
        row.update(diag)
        metrics.append(row)
        if metrics_callback is not None:
            metrics_callback(row)
        if state_callback is not None:
            state_callback(state, row)
        return row

    diag: dict = {}
    for phase in range(num_phases):
        if cfg.lr_decay:
            frac = 1.0 - phase / num_phases
            for group in state.optimizer.param_groups:
                group["lr"] = cfg.learning_rate * frac
        batch, obs, raw_reward = collect_rollout(env, state, obs, generator)
        diag = ppo_update(batch, state, generator)
        diag["rollout_reward_mean"] = raw_reward
        state.env_steps += steps_per_phase
        if (phase + 1) % eval_every == 0 or phase == num_phases - 1:
            row = run_eval(diag)
            if (
                target_return is not None
                and "eval_return_mean" in row
                and row["eval_return_mean"] >= target_return
            ):
                break
    return state, metrics


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"DSKRLCK1"


def save_checkpoint(state: TrainerState, path, extra: dict | None = None):
    """Versioned header + flat little-endian float32 parameter blocks."""
    tensors = []
    blobs = []
    for prefix, module in (("policy", state.policy), ("value", state.value)):
        for name, param in module.state_dict().items():
            arr = param.detach().numpy().astype("<f4")
            tensors.append({"name": f"{prefix}.{name}", "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = json.dumps(
        {
            "format_version": 1,
            "config_hash": state.cfg.config_hash(),
            "tensors": tensors,
            "extra": extra or {},
        }
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
        if state.policy_normalizer is not None or state.value_normalizer is not None:
            norm = {}
            for key, n in (
                ("policy", state.policy_normalizer),
                ("value", state.value_normalizer),
            ):
                if n is not None:
                    norm[key] = {
                        "dim": n.dim,
                        "count": n.count,
                        "mean": n.mean.tolist(),
                        "var": n.var.tolist(),
                    }
            trailer = json.dumps(norm).encode()
            f.write(trailer)
            f.write(struct.pack("<I", len(trailer)))


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ConfigError("not a deskrl checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(hlen))


def load_checkpoint(path, state: TrainerState, strict_hash: bool = False):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MAGIC:
        raise ConfigError("not a deskrl checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen])
    if header["format_version"] != 1:
        raise ConfigError(f"unsupported checkpoint version {header['format_version']}")
    if strict_hash and header["config_hash"] != state.cfg.config_hash():
        raise ConfigError("checkpoint config hash mismatch")
    offset = 12 + hlen
    loaded = {"policy": {}, "value": {}}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(
            spec["shape"]
        )
        offset += count * 4
        prefix, name = spec["name"].split(".", 1)
        loaded[prefix][name] = torch.as_tensor(arr.copy())
    state.policy.load_state_dict(loaded["policy"])
    state.value.load_state_dict(loaded["value"])
    if offset < len(data):
        (tlen,) = struct.unpack("<I", data[-4:])
        norm = json.loads(data[len(data) - 4 - tlen : len(data) - 4])
        for key, attr in (("policy", "policy_normalizer"), ("value", "value_normalizer")):
            if key in norm:
                n = norm[key]
                setattr(
                    state,
                    attr,
                    RunningNormalizer(
                        dim=n["dim"],
                        count=n["count"],
                        mean=np.array(n["mean"]),
                        var=np.array(n["var"]),
                    ),
                )
    return state
