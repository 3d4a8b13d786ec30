"""Policy adapters for the two rollout protocols.

Scalar (evaluation) protocol, used by core.rollout, matchups, and leagues:

    memory = policy.reset()
    action, log_prob, memory = policy.act(obs, state, memory, rng)

Vectorized (training) protocol, used by trainers and the QA simulator:

    memory = policy.initial_mem(n)
    probs, logits, memory = policy.act_vec(env, state, player, memory)

``probs`` is always a plain (n, actions) array used for sampling; ``logits``
is a Tensor when the policy is differentiable (gradients flow through its
log-probs) and None for scripted opponents, whose sampling measure carries
no parameters.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import sample_index
from .envs import coin as coin_env
from .nn import GruAgent


def _probs_of(logits) -> np.ndarray:
    values = logits.value if isinstance(logits, Tensor) else logits
    return ad.softmax(values)


def tile_mem(mem, k: int):
    if mem is None:
        return None
    return ad.repeat_rows(mem, k)


# -- neural policies ---------------------------------------------------------------


class GruPolicyAdapter:
    """Recurrent actor-critic agent in both protocols."""

    def __init__(self, net: GruAgent, weights):
        self.net = net
        self.weights = weights
        self.num_actions = net.spec.num_actions

    # vectorized protocol
    def initial_mem(self, n: int):
        return self.net.initial_hidden((n,))

    def act_vec(self, env, state, player, mem):
        obs = env.observe(state, player)
        logits, _, mem = self.net.step(self.weights, obs, mem)
        differentiable = isinstance(logits, Tensor)
        return _probs_of(logits), (logits if differentiable else None), mem

    # scalar protocol
    def reset(self):
        return self.net.initial_hidden((1,))

    def act(self, obs, state, memory, rng):
        logits, _, memory = self.net.step(self.weights, np.asarray(obs)[None, :], memory)
        probs = _probs_of(logits)[0]
        action = sample_index(probs, rng)
        return action, float(np.log(probs[action])), memory


class StackedGruPolicyAdapter:
    """GRU agent with per-episode stacked weights; rows are grouped by episode.

    Input rows (episodes * group, ...) are reshaped to (episodes, group, ...)
    so each episode's rows run under its own parameters.
    """

    def __init__(self, net: GruAgent, stacked_weights, episodes: int):
        self.net = net
        self.stacked = stacked_weights
        self.episodes = episodes
        self.num_actions = net.spec.num_actions

    def initial_mem(self, n: int):
        group = n // self.episodes
        return self.net.initial_hidden((self.episodes, group))

    def act_vec(self, env, state, player, mem):
        obs = env.observe(state, player)
        group = obs.shape[0] // self.episodes
        obs = obs.reshape(self.episodes, group, obs.shape[-1])
        logits, _, mem = self.net.step(self.stacked, obs, mem)
        probs = _probs_of(logits).reshape(self.episodes * group, -1)
        return probs, None, mem


class TabularPolicy:
    """Logit table indexed by a discrete observation (argmax of one-hot).

    The table may be a Tensor, in which ]case log-probs of sampled actions
    are differentiable; used for IPD agents and enumerable test games.
    """

    def __init__(self, logit_table):
        self.table = logit_table
        shape = logit_table.value.shape if isinstance(logit_table, Tensor) \
            else np.asarray(logit_table).shape
        self.num_actions = shape[-1]

    def initial_mem(self, n: int):
        return None

    def act_vec(self, env, state, player, mem):
        obs = env.observe(state, player)
        idx = np.argmax(obs, axis=-1)
        logits = self.table[idx]
        differentiable = isinstance(logits, Tensor)
        return _probs_of(logits), (logits if differentiable else None), mem

    def reset(self):
        return None

    def act(self, obs, state, memory, rng):
        idx = int(np.argmax(obs))
        logits = self.table[idx]
        probs = _probs_of(logits)
        action = sample_index(probs, rng)
        return action, float(np.log(probs[action])), memory


# -- scripted opponents --------------------------------------------------------------


class UniformRandomPolicy:
    def __init__(self, num_actions: int):
        self.num_actions = num_actions

    def initial_mem(self, n: int):
        return None

    def act_vec(self, env, state, player, mem):
        n = env.observe(state, player).shape[0]
        probs = np.full((n, self.num_actions), 1.0 / self.num_actions)
        return probs, None, mem

    def reset(self):
        return None

    def act(self, obs, state, memory, rng):
        probs = np.full(self.num_actions, 1.0 / self.num_actions)
        action = sample_index(probs, rng)
        return action, float(np.log(probs[action])), memory


def _one_hot_rows(actions: np.ndarray, num_actions: int) -> np.ndarray:
    return np.eye(num_actions)[actions]


class CoinScriptedPolicy:
    """Base for shortest-path Coin Game scripts (vectorized + scalar)."""

    num_actions = 4

    def initial_mem(self, n: int):
        return None

    def reset(self):
        return None

    def _actions_vec(self, state, player) -> np.ndarray:
        raise NotImplementedError

    def act_vec(self, env, state, player, mem):
        actions = self._actions_vec(state, player)
        return _one_hot_rows(actions, 4), None, mem

    def act(self, obs, state, memory, rng):
        vec = _scalar_to_vec_state(state)
        action = int(self._actions_vec(vec, self.player)[0])
        return action, 0.0, memory


def _scalar_to_vec_state(state: coin_env.CoinState) -> coin_env.CoinVecState:
    return coin_env.CoinVecState(
        np.array([state.red_pos]), np.array([state.blue_pos]),
        np.array([state.coin_pos]), np.array([state.coin_color]),
        state.t, state.grid)


class AlwaysDefectCoin(CoinScriptedPolicy):
    """Shortest path to the coin regardless of its color."""

    def __init__(self, player: int = 1):
        self.player = player

    def _actions_vec(self, state, player=None):
        player = self.player if player is None else player
        self_pos = state.red_pos if player == 0 else state.blue_pos
        return coin_env.shortest_path_action_vec(self_pos, state.coin_pos,
                                                 grid=state.grid)


class AlwaysCooperateCoin(CoinScriptedPolicy):
    """Shortest path to own-color coins; never steps onto the other's coin."""

    def __init__(self, player: int = 1):
        self.player = player

    def _actions_vec(self, state, player=None):
        player = self.player if player is None else player
        self_pos = state.red_pos if player == 0 else state.blue_pos
        own = coin_env.RED if player == 0 else coin_env.BLUE
        toward = coin_env.shortest_path_action_vec(self_pos, state.coin_pos,
                                                   grid=state.grid)
        avoid = coin_env.shortest_path_action_vec(self_pos, state.coin_pos,
                                                  forbidden_target=state.coin_pos,
                                                  grid=state.grid)
        return np.where(state.coin_color == own, toward, avoid)


class GrimRetaliatorCoin(CoinScriptedPolicy):
    """Cooperates until its coin is taken once, then defects forever."""

    def __init__(self, player: int = 1):
        self.player = player
        self._ac = AlwaysCooperateCoin(player)
        self._ad = AlwaysDefectCoin(player)

    def initial_mem(self, n: int):
        return np.zeros(n, dtype=bool)  # triggered flag

    def reset(self):
        return np.zeros(1, dtype=bool)

    def observe_events(self, events, mem):
        """Feed step events back so the trigger can latch (vectorized)."""
        opponent = 1 - self.player
        return mem | events["picked_other"][:, opponent]

    def act_vec(self, env, state, player, mem):
        coop = self._ac._actions_vec(state, player)
        defect = self._ad._actions_vec(state, player)
        actions = np.where(mem, defect, coop)
        return _one_hot_rows(actions, 4), None, mem

    def act(self, obs, state, memory, rng):
        vec = _scalar_to_vec_state(state)
        probs, _, _ = self.act_vec(None, vec, self.player, memory)
        return int(np.argmax(probs[0])), 0.0, memory

    def update(self, event, memory):
        """Scalar-protocol event feedback (called by matchup runners)."""
        if event is None:
            return memory
        opponent = 1 - self.player
        taken = event.picked_other[opponent]
        return memory | np.array([taken])
