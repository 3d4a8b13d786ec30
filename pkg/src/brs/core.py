"""Two-player Markov game core: rollouts, returns, and gradient surrogates.

Environments are pure transition functions over explicit state, so a rollout
is fully determined by (seed, parameters, env config) and safe to run in
parallel batches. Policies used here follow the evaluation protocol:

    memory = policy.reset()
    action, log_prob, memory = policy.act(obs, state, memory, rng)

``state`` is the true environment state; scripted opponents and tree-search
players need it, neural policies only read ``obs``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, magic_box  # noqa: F401  (re-exported surface)
from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class GameSpec:
    """Static description of a two-player simultaneous-move game."""

    num_actions: int
    episode_length: int
    discount: float
    obs_dim: int
    num_players: int = 2

    def __post_init__(self):
        if self.episode_length < 0:
            raise ConfigError("episode_length must be >= 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must lie in [0, 1]")
        if self.num_actions < 2:
            raise ConfigError("need at least two actions per player")


@dataclass
class Trajectory:
    """Time-indexed record of one episode (both players)."""

    observations: list  # per step: (obs_player1, obs_player2)
    actions: list[tuple[int, int]]
    rewards: list[tuple[float, float]]
    log_probs: list[tuple[float, float]]
    events: list | None = None

    def __post_init__(self):
        n = len(self.actions)
        if not (len(self.observations) == len(self.rewards) == len(self.log_probs) == n):
            raise ConfigError("trajectory arrays must share one length")
        if self.events is not None and len(self.events) != n:
            raise ConfigError("trajectory events must share the episode length")
        for lp in self.log_probs:
            if lp[0] > 1e-12 or lp[1] > 1e-12:
                raise ConfigError("log-probabilities must be <= 0")
        if n and not np.all(np.isfinite(np.asarray(self.rewards))):
            raise NumericError("non-finite reward in trajectory")

    def __len__(self) -> int:
        return len(self.actions)

    def player_rewards(self, player: int) -> np.ndarray:
        return np.asarray([r[player] for r in self.rewards])


@dataclass
class ReturnSummary:
    """Aggregate returns over a batch of episodes."""

    discounted_return: tuple[float, float]
    per_step_mean_return: tuple[float, float]
    episode_count: int
    per_step_se: tuple[float, float] = (0.0, 0.0)


def summarize_returns(trajectories: Sequence[Trajectory], discount: float) -> ReturnSummary:
    if not trajectories:
        return ReturnSummary((0.0, 0.0), (0.0, 0.0), 0)
    disc = np.zeros((len(trajectories), 2))
    per_step = np.zeros((len(trajectories), 2))
    for i, traj in enumerate(trajectories):
        for p in (0, 1):
            rewards = traj.player_rewards(p)
            disc[i, p] = discounted_return(rewards, discount)
            per_step[i, p] = rewards.mean() if len(traj) else 0.0
    n = len(trajectories)
    se = per_step.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(2)
    return ReturnSummary(tuple(disc.mean(axis=0)), tuple(per_step.mean(axis=0)),
                         n, tuple(se))


# -- sampling -----------------------------------------------------------------

# Tests may monkeypatch these two functions to enumerate outcome trees; all
# action sampling in the package goes through them.


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a probability vector via inverse CDF."""
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(probs), u, side="right")),
               len(probs) - 1)


def sample_index_vec(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise draws from a (rows, actions) probability matrix."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    return np.minimum((cum < u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


# -- rollouts -------------------------------------------------------------------


def rollout(env, policy_a, policy_b, horizon: int, seed: int | np.random.Generator) -> Trajectory:
    """Play one episode; identical (seed, params, env) gives identical output."""
    if horizon > env.spec.episode_length:
        raise ConfigError(f"horizon {horizon} exceeds episode length "
                          f"{env.spec.episode_length}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state, (obs_a, obs_b) = env.reset(rng)
    mem_a, mem_b = policy_a.reset(), policy_b.reset()
    observations, actions, rewards, log_probs, events = [], [], [], [], []
    for _ in range(horizon):
        a, lp_a, mem_a = policy_a.act(obs_a, state, mem_a, rng)
        b, lp_b, mem_b = policy_b.act(obs_b, state, mem_b, rng)
        state, (obs_a, obs_b), (r_a, r_b), ev = env.step(state, a, b, rng)
        # policies with an ``update`` hook see the step's events (e.g. grim triggers)
        if hasattr(policy_a, "update"):
            mem_a = policy_a.update(ev, mem_a)
        if hasattr(policy_b, "update"):
            mem_b = policy_b.update(ev, mem_b)
        observations.append((np.asarray(obs_a).copy(), np.asarray(obs_b).copy()))
        actions.append((int(a), int(b)))
        rewards.append((float(r_a), float(r_b)))
        log_probs.append((float(lp_a), float(lp_b)))
        events.append(ev)
    has_events = any(e is not None for e in events)
    return Trajectory(observations, actions, rewards, log_probs,
                      events if has_events else None)


# -- returns and advantages -------------------------------------------------------


def discounted_return(rewards: Sequence[float], discount: float) -> float:
    """sum_t discount^t * r_t, t starting at 0."""
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + discount * total
    return total


def discounted_returns_to_go(rewards: np.ndarray, discount: float,
                             bootstrap: float = 0.0) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def gae_advantages(rewards: Sequence[float], values: Sequence[float],
                   bootstrap_value: float, discount: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates; lam=1 is the Monte-Carlo advantage."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ConfigError(f"rewards shape {rewards.shape} != values shape {values.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lambda must lie in [0, 1]")
    next_values = np.concatenate([values[1:], [bootstrap_value]])
    deltas = rewards + discount * next_values - values
    advantages = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + discount * lam * acc
        advantages[t] = acc
    return advantages


def gae_advantages_batch(rewards: np.ndarray, values: np.ndarray,
                         bootstrap: np.ndarray, discount: float,
                         lam: float) -> np.ndarray:
    """GAE over a (steps, batch) reward/value matrix, one recursion per column."""
    if rewards.shape != values.shape:
        raise ConfigError("rewards and values must share shape (steps, batch)")
    next_values = np.concatenate([values[1:], bootstrap[None, :]], axis=0)
    deltas = rewards + discount * next_values - values
    advantages = np.empty_like(deltas)
    acc = np.zeros(rewards.shape[1])
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + discount * lam * acc
        advantages[t] = acc
    return advantages


def reinforce_surrogate(log_prob_terms: Tensor, weights, baseline=0.0,
                        num_episodes: int = 1) -> Tensor:
    """Scalar whose gradient is the score-function estimator.

    ``weights`` (per episode, or per element when using per-step advantages)
    and ``baseline`` are constants; subtracting the baseline leaves the
    gradient's expectation unchanged. The sum is divided by ``num_episodes``.
    """
    if not np.all(np.isfinite(log_prob_terms.value)):
        raise NumericError("non-finite log-probabilities in surrogate")
    w = np.asarray(ad.detach(weights), dtype=np.float64) - baseline
    return (log_prob_terms * w).sum() * (1.0 / num_episodes)


class EmaBaseline:
    """Scalar exponential-moving-average baseline for REINFORCE."""

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self._value: float | None = None

    @property
    def value(self) -> float:
        return 0.0 if self._value is None else self._value

    def update(self, observed_mean: float) -> None:
        if self._value is None:
            self._value = float(observed_mean)
        else:
            self._value = self.decay * self._value + (1 - self.decay) * float(observed_mean)


# -- trajectory export -------------------------------------------------------------


def _event_to_jsonable(event):
    if event is None:
        return None
    if hasattr(event, "to_jsonable"):
        return event.to_jsonable()
    return event


def write_trajectories_jsonl(path: str | Path, trajectories: Sequence[Trajectory],
                             meta: dict | None = None) -> None:
    """One episode per line; observations stored as flat float lists."""
    with open(path, "w") as fh:
        for traj in trajectories:
            record = {
                "length": len(traj),
                "observations": [[np.asarray(o).reshape(-1).tolist() for o in pair]
                                 for pair in traj.observations],
                "actions": [list(a) for a in traj.actions],
                "rewards": [list(r) for r in traj.rewards],
                "log_probs": [list(lp) for lp in traj.log_probs],
                "events": ([_event_to_jsonable(e) for e in traj.events]
                           if traj.events is not None else None),
            }
            if meta:
                record["meta"] = meta
            fh.write(json.dumps(record) + "\n")


def read_trajectories_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
