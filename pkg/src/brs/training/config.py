"""Hyperparameters for the best-response-shaping training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..detectives import QaConfig
from ..errors import ConfigError


@dataclass
class BrsConfig:
    """One iteration = detective step, agent step, optional self-play, buffer push.

    Defaults follow the published Coin Game setup: batch 128, Adam 3e-4
    everywhere except the no-self-play agent variant (1e-3, set by the CLI),
    GAE lambda 1, buffer 512 (2048 without self-play), noise std 0.1
    (variance 0.01).
    """

    batch_size: int = 128
    agent_lr: float = 3e-4            # term 1; term 2 mirrors these settings
    agent_optimizer: str = "adam"
    critic_lr: float = 3e-4
    detective_lr: float = 3e-4
    detective_critic_lr: float = 3e-4
    detective_optimizer: str = "adam"
    self_play: bool = True
    self_play_lr: float = 3e-4
    self_play_optimizer: str = "adam"
    self_play_use_critic_baseline: bool = True
    replay_buffer: bool = True
    buffer_capacity: int = 512
    noise_std: float = 0.1
    agent_entropy_beta: float = 1.0
    detective_entropy_beta: float = 1.0
    gae_lambda: float = 1.0
    huber_delta: float = 1.0
    qa: QaConfig = field(default_factory=QaConfig)

    def __post_init__(self):
        for name in ("agent_lr", "critic_lr", "detective_lr",
                     "detective_critic_lr", "self_play_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
