"""deskrl: batched RL environments, PPO training, tiny batch rendering,
sim-to-real randomization, and throughput benchmarking on CPU."""

__version__ = "0.1.0"

from .envkit import BatchEnv, EnvConfig, Environment, make_env, registered_tasks  # noqa: F401
from .ppo import PPOConfig, train  # noqa: F401
