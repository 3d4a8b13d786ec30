"""Iterated Prisoner's Dilemma with 5-state observations.

Observations are one of {START, CC, CD, DC, DD}, one-hot encoded from the
observing player's perspective with their own last action first, so a
perspective swap maps CD <-> DC and fixes the rest. Payoffs: mutual
cooperation (-1, -1), mutual defection (-2, -2), and a unilateral defector
gets 0 while the cooperator gets -3.

Also provides the exact infinite-horizon discounted value of a pair of
memory-one policies via the 4-state joint chain (ordered CC, CD, DC, DD
from player 1's perspective), differentiable with respect to both policies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..core import (GameSpec, ReturnSummary, rollout, sample_index,
                    summarize_returns)
from ..errors import ConfigError

COOPERATE, DEFECT = 0, 1

START, CC, CD, DC, DD = 0, 1, 2, 3, 4
STATE_NAMES = ("START", "CC", "CD", "DC", "DD")

# payoff to player 1 indexed by (own action, opponent action)
PAYOFF = np.array([[-1.0, -3.0],
                   [0.0, -2.0]])


def obs_index(own_last: int, opp_last: int) -> int:
    return 1 + 2 * own_last + opp_last


def swap_perspective(state: int) -> int:
    """Observation index of the same joint outcome seen by the other player."""
    if state == START:
        return START
    own, opp = divmod(state - 1, 2)
    return obs_index(opp, own)


def one_hot(state: int) -> np.ndarray:
    v = np.zeros(5)
    v[state] = 1.0
    return v


def ipd_step(state: int, action_pair: tuple[int, int]) -> tuple[tuple[float, float], tuple[int, int]]:
    """Rewards and next per-player observation indices for a joint action."""
    a, b = action_pair
    rewards = (float(PAYOFF[a, b]), float(PAYOFF[b, a]))
    return rewards, (obs_index(a, b), obs_index(b, a))


class IpdEnv:
    """Finite IPD in the shared environment protocol (state = player-1 obs index)."""

    def __init__(self, episode_length: int = 6, discount: float = 1.0):
        self.spec = GameSpec(num_actions=2, episode_length=episode_length,
                             discount=discount, obs_dim=5)

    def reset(self, rng=None):
        return START, (one_hot(START), one_hot(START))

    def step(self, state, a, b, rng=None):
        (r1, r2), (s1, s2) = ipd_step(state, (a, b))
        return s1, (one_hot(s1), one_hot(s2)), (r1, r2), None


class IpdVecEnv:
    """Batched IPD over integer state arrays; transitions are deterministic."""

    def __init__(self, episode_length: int = 6, discount: float = 1.0):
        self.spec = GameSpec(num_actions=2, episode_length=episode_length,
                             discount=discount, obs_dim=5)

    def reset(self, batch: int, rng=None) -> np.ndarray:
        return np.full(batch, START, dtype=np.int64)

    def step(self, states, a, b, rng=None):
        r1 = PAYOFF[a, b]
        r2 = PAYOFF[b, a]
        return 1 + 2 * a + b, r1, r2, None

    def observe(self, states: np.ndarray, player: int) -> np.ndarray:
        idx = states if player == 0 else _SWAP[states]
        return np.eye(5)[idx]

    def tile_state(self, states: np.ndarray, k: int) -> np.ndarray:
        return np.repeat(states, k)


_SWAP = np.array([swap_perspective(s) for s in range(5)])


# -- memory-one policies ---------------------------------------------------------


@dataclass(frozen=True)
class MemoryOnePolicy:
    """Cooperation probability per observation (START, CC, CD, DC, DD)."""

    probs: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.probs) != 5 or any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ConfigError("memory-one policy needs 5 probabilities in [0, 1]")

    def cooperation_prob(self, state: int) -> float:
        return self.probs[state]

    # evaluation-protocol adapter
    def reset(self):
        return None

    def act(self, obs, state, memory, rng):
        idx = int(np.argmax(obs))
        p = self.probs[idx]
        action = sample_index(np.array([p, 1.0 - p]), rng)
        prob = p if action == COOPERATE else 1.0 - p
        return action, float(np.log(max(prob, 1e-300))), memory


def tit_for_tat() -> MemoryOnePolicy:
    return MemoryOnePolicy((1.0, 1.0, 0.0, 1.0, 0.0))


def cynic_tit_for_tat() -> MemoryOnePolicy:
    return MemoryOnePolicy((0.0, 1.0, 0.0, 1.0, 0.0))


def always_cooperate() -> MemoryOnePolicy:
    return MemoryOnePolicy((1.0,) * 5)


def always_defect() -> MemoryOnePolicy:
    return MemoryOnePolicy((0.0,) * 5)


def finite_ipd_game(policy1, policy2, length: int = 6, discount: float = 1.0,
                    seed: int = 0, episodes: int = 1) -> ReturnSummary:
    """Roll out the finite IPD and summarize returns (defaults: length 6, no discount)."""
    if length < 1:
        raise ConfigError("length must be >= 1")
    env = IpdEnv(episode_length=length, discount=discount)
    trajectories = [rollout(env, policy1, policy2, length, seed + i)
                    for i in range(episodes)]
    return summarize_returns(trajectories, discount)


# -- exact values -----------------------------------------------------------------

_REWARD_P1 = np.array([-1.0, -3.0, 0.0, -2.0])  # joint states CC, CD, DC, DD
_REWARD_P2 = np.array([-1.0, 0.0, -3.0, -2.0])
_JOINT_OBS_P1 = np.array([CC, CD, DC, DD])
_JOINT_OBS_P2 = np.array([CC, DC, CD, DD])


def _coop_probs(policy):
    if isinstance(policy, MemoryOnePolicy):
        return np.asarray(policy.probs)
    return policy  # Tensor or array of 5 cooperation probabilities


def _joint_distribution(p_coop1, p_coop2):
    return ad.stack([p_coop1 * p_coop2,
                     p_coop1 * (1.0 - p_coop2),
                     (1.0 - p_coop1) * p_coop2,
                     (1.0 - p_coop1) * (1.0 - p_coop2)])


def exact_memory_one_value(p, q, discount: float):
    """Exact infinite-horizon discounted values (V1, V2) for memory-one play.

    Solves V = d0^T (I - discount * M)^{-1} r on the joint-action chain.
    Accepts probability 5-vectors as Tensors for differentiation, plain
    arrays, or MemoryOnePolicy instances.
    """
    if not 0.0 <= discount < 1.0:
        raise ConfigError("exact value requires discount in [0, 1)")
    pv, qv = _coop_probs(p), _coop_probs(q)
    d0 = _joint_distribution(pv[0], qv[0])
    rows = [_joint_distribution(pv[int(o1)], qv[int(o2)])
            for o1, o2 in zip(_JOINT_OBS_P1, _JOINT_OBS_P2)]
    m = ad.stack(rows)
    system = np.eye(4) - discount * m if not isinstance(m, ad.Tensor) \
        else np.eye(4) + (m * (-discount))
    u1 = ad.linear_solve(system, _REWARD_P1)
    u2 = ad.linear_solve(system, _REWARD_P2)
    v1 = (d0 * u1).sum()
    v2 = (d0 * u2).sum()
    if isinstance(v1, ad.Tensor):
        return v1, v2
    return float(v1), float(v2)


# -- policy-table export ------------------------------------------------------------


def write_policy_table_csv(path: str | Path, rows: list[dict]) -> None:
    """Cooperation probabilities per observation, one row per checkpoint/label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", *STATE_NAMES])
        for row in rows:
            probs = row["probs"]
            writer.writerow([row.get("label", ""),
                             *[f"{float(p):.6f}" for p in probs]])


def read_policy_table_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[1:] != list(STATE_NAMES):
            raise ConfigError(f"{path}: unexpected policy-table columns {header}")
        return [{"label": r[0], "probs": [float(x) for x in r[1:]]} for r in reader]
