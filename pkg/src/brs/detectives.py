"""Best-response-approximating opponents.

Two kinds: the neural detective for the Coin Game, conditioned on the
agent's policy through Monte-Carlo question answering, and the exhaustive
tree-search detective for short IPD games.

The QA feature for opponent action A is the mean return of a scripted
opponent that plays A once and then uniformly at random, over short
simulated continuations of the game against the agent. Each sample is
multiplied by a magic-box factor of the agent's log-prob sum along the
simulation, so forward values are plain Monte-Carlo means while gradients
with respect to the agent's parameters follow the score function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import sample_index, sample_index_vec
from .envs.ipd import PAYOFF, START, obs_index
from .errors import ConfigError
from .nn import MlpSpec, ParameterVector, gru_cell, init_gru, init_mlp, mlp_forward
from .policies import tile_mem


@dataclass(frozen=True)
class QaConfig:
    """Monte-Carlo question-answering hyperparameters."""

    num_samples: int = 16
    inner_length: int = 4
    discount: float = 0.96
    normalize_by_length: bool = True

    def __post_init__(self):
        if self.num_samples < 1 or self.inner_length < 1:
            raise ConfigError("QA needs num_samples >= 1 and inner_length >= 1")


@dataclass
class QaRecord:
    """Everything needed to rebuild one QA evaluation on the tape."""

    steps: list  # per inner step: (state copy before the step, agent actions, opponent actions)
    returns: np.ndarray  # discounted probe-opponent return per simulation row
    batch: int
    num_actions: int
    num_samples: int


class SimulationQa:
    """Monte-Carlo question answering with DiCE-weighted samples.

    The QA feature vector for a batch of B current states has shape
    (B, num_actions): entry A estimates the return of a probe opponent that
    plays A once and then uniformly, over ``num_samples`` simulated
    continuations of length ``inner_length`` against the agent (seat 0).
    """

    def __init__(self, config: QaConfig):
        self.config = config

    def _rollout(self, agent, env, state, agent_mem, rng, recorder=None):
        config = self.config
        num_actions = env.spec.num_actions
        batch = env.observe(state, 0).shape[0]
        rows_per_episode = num_actions * config.num_samples
        sim_state = env.tile_state(state, rows_per_episode)
        sim_mem = tile_mem(agent_mem, rows_per_episode)
        forced = np.tile(np.repeat(np.arange(num_actions), config.num_samples), batch)

        total_rows = batch * rows_per_episode
        opponent_return = np.zeros(total_rows)
        log_prob_sum = None
        weight = 1.0
        uniform = np.full((total_rows, num_actions), 1.0 / num_actions)
        for t in range(config.inner_length):
            probs, logits, sim_mem = agent.act_vec(env, sim_state, 0, sim_mem)
            a = sample_index_vec(probs, rng)
            if logits is not None:
                lp = ad.take_last(ad.log_softmax(logits),
                                  a.reshape(logits.shape[:-1]))
                lp = lp.reshape(total_rows)
                log_prob_sum = lp if log_prob_sum is None else log_prob_sum + lp
            b = forced if t == 0 else sample_index_vec(uniform, rng)
            if recorder is not None:
                recorder.append((sim_state.copy(), a, b))
            sim_state, _, r_opponent, _ = env.step(sim_state, a, b, rng)
            opponent_return = opponent_return + weight * r_opponent
            weight *= config.discount
        return opponent_return, log_prob_sum, batch, num_actions

    def _combine(self, returns, log_prob_sum, batch, num_actions):
        config = self.config
        if log_prob_sum is None:
            delta = returns.reshape(batch, num_actions,
                                    config.num_samples).mean(axis=-1)
        else:
            weighted = ad.magic_box(log_prob_sum) * returns
            delta = weighted.reshape(batch, num_actions,
                                     config.num_samples).mean(axis=-1)
        if config.normalize_by_length:
            delta = delta * (1.0 / config.inner_length)
        return delta

    def evaluate(self, agent, env, state, agent_mem, rng):
        """QA features; a Tensor when the agent exposes differentiable logits."""
        returns, logp, batch, num_actions = self._rollout(agent, env, state,
                                                          agent_mem, rng)
        return self._combine(returns, logp, batch, num_actions)

    def evaluate_recorded(self, agent, env, state, agent_mem, rng):
        """Forward values plus a record sufficient for an exact tape rebuild."""
        steps: list = []
        returns, logp, batch, num_actions = self._rollout(
            agent, env, state, agent_mem, rng, recorder=steps)
        delta = self._combine(returns, logp, batch, num_actions)
        record = QaRecord(steps, returns, batch, num_actions,
                          self.config.num_samples)
        return delta, record

    def replay(self, agent, env, record: QaRecord, agent_mem):
        """Rebuild the QA value on the tape from a recorded evaluation.

        Forward values equal the recorded ones exactly (the magic-box factor
        is exactly 1); gradients flow into the agent adapter's parameters and
        into ``agent_mem`` when it is a Tensor.
        """
        rows_per_episode = record.num_actions * record.num_samples
        sim_mem = tile_mem(agent_mem, rows_per_episode)
        log_prob_sum = None
        for sim_state, a, b in record.steps:
            _, logits, sim_mem = agent.act_vec(env, sim_state, 0, sim_mem)
            if logits is not None:
                lp = ad.take_last(ad.log_softmax(logits),
                                  a.reshape(logits.shape[:-1]))
                lp = lp.reshape(len(record.returns))
                log_prob_sum = lp if log_prob_sum is None else log_prob_sum + lp
        return self._combine(record.returns, log_prob_sum, record.batch,
                             record.num_actions)


def qa_simulation(agent, env, state, agent_mem, config: QaConfig,
                  rng: np.random.Generator):
    """Per-action return estimates of a forced-first-action random opponent."""
    return SimulationQa(config).evaluate(agent, env, state, agent_mem, rng)


# -- neural detective -----------------------------------------------------------------


@dataclass(frozen=True)
class DetectiveSpec:
    """Recurrent observation encoder fused with the QA vector."""

    obs_dim: int
    num_actions: int
    mlp_hidden: tuple[int, int] = (64, 64)
    gru_dim: int = 64
    fusion_hidden: tuple[int, int] = (64, 64)


class DetectiveNet:
    """GRU state encoder + QA fusion trunk + linear actor/critic heads."""

    def __init__(self, spec: DetectiveSpec):
        self.spec = spec
        h1, h2 = spec.mlp_hidden
        self._obs_mlp = MlpSpec(spec.obs_dim, (h1,), h2, activation="relu",
                                head="linear")
        f1, f2 = spec.fusion_hidden
        self._fusion_mlp = MlpSpec(spec.gru_dim + spec.num_actions, (f1,), f2,
                                   activation="relu", head="linear")

    def init_params(self, rng: np.random.Generator) -> ParameterVector:
        spec = self.spec
        arrays = init_mlp(self._obs_mlp, rng, prefix="obs.", zero_head=False)
        arrays.update(init_gru(rng, spec.mlp_hidden[1], spec.gru_dim))
        arrays.update(init_mlp(self._fusion_mlp, rng, prefix="fuse.",
                               zero_head=False))
        arrays["actor.w"] = np.zeros((self.spec.fusion_hidden[1], spec.num_actions))
        arrays["actor.b"] = np.zeros(spec.num_actions)
        arrays["critic.w"] = np.zeros((self.spec.fusion_hidden[1], 1))
        arrays["critic.b"] = np.zeros(1)
        return ParameterVector(arrays)

    def initial_hidden(self, batch_shape) -> np.ndarray:
        return np.zeros((*batch_shape, self.spec.gru_dim))

    def encode(self, weights, obs, hidden):
        x = mlp_forward(weights, self._obs_mlp, obs, prefix="obs.")
        x = ad.relu(x)
        return gru_cell(weights, x, hidden)

    def heads(self, weights, hidden, qa_vector):
        """Actor logits and critic value from the fused trunk."""
        fused = ad.concat([hidden, qa_vector], axis=-1)
        trunk = ad.relu(mlp_forward(weights, self._fusion_mlp, fused, prefix="fuse."))
        logits = trunk @ weights["actor.w"] + weights["actor.b"]
        value = trunk @ weights["critic.w"] + weights["critic.b"]
        return logits, value


def detective_act(det_weights, net: DetectiveNet, det_hidden, obs, qa_vector):
    """One detective step: encode the observation, fuse QA, return the policy.

    Returns (action_probs, logits, value, next_hidden); differentiable both
    toward the detective weights and, through ``qa_vector``, the agent.
    """
    hidden = net.encode(det_weights, obs, det_hidden)
    logits, value = net.heads(det_weights, hidden, qa_vector)
    probs = ad.softmax(logits)
    return probs, logits, value, hidden


# -- tree-search detective ----------------------------------------------------------------


@dataclass
class TsdResult:
    """Outcome of one tree-search best-response evaluation."""

    detective_actions: tuple[int, ...]
    detective_return: float
    agent_return: float
    log_prob_sum: object  # Tensor when a logit table is supplied, else float
    num_agent_samples: int
    tie: bool


_MAX_TSD_DEPTH = 12


def tsd_best_response(coop_probs, depth: int = 6,
                      rng: np.random.Generator | int = 0,
                      logp_table=None) -> TsdResult:
    """Exhaustive best response over all 2^depth detective action sequences.

    The agent's action at every tree node is sampled once from its policy
    (``coop_probs``: cooperation probability per IPD observation); the
    detective branches on both of its actions and takes the return-maximizing
    path, cooperate-first on ties. The log-prob sum counts every node in the
    tree, not only the chosen path; passing a (5, 2) logit-table Tensor as
    ``logp_table`` makes it differentiable.
    """
    if depth > _MAX_TSD_DEPTH:
        raise ConfigError(f"TSD depth {depth} exceeds the 2^depth budget cap "
                          f"({_MAX_TSD_DEPTH})")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    coop = np.asarray(coop_probs, dtype=np.float64)
    counts = np.zeros((5, 2))

    def recurse(agent_obs: int, remaining: int):
        if remaining == 0:
            return 0.0, 0.0, (), False
        p = coop[agent_obs]
        a = sample_index(np.array([p, 1.0 - p]), rng)
        counts[agent_obs, a] += 1
        best = None
        tie = False
        for b in (0, 1):  # cooperate branch explored first; ties keep it
            r_agent = float(PAYOFF[a, b])
            r_det = float(PAYOFF[b, a])
            sub_det, sub_agent, sub_actions, sub_tie = recurse(
                obs_index(a, b), remaining - 1)
            det_total = r_det + sub_det
            candidate = (det_total, r_agent + sub_agent, (b, *sub_actions), sub_tie)
            if best is None:
                best = candidate
            elif det_total == best[0]:
                tie = True
            elif det_total > best[0]:
                best = candidate
        return best[0], best[1], best[2], tie or best[3]

    det_return, agent_return, actions, tie = recurse(START, depth)
    if logp_table is not None:
        log_prob_sum = (logp_table * counts).sum()
    else:
        with np.errstate(divide="ignore"):
            logp = np.log(np.stack([coop, 1.0 - coop], axis=1))
        log_prob_sum = float(np.sum(counts * np.where(counts > 0, logp, 0.0)))
    return TsdResult(actions, det_return, agent_return, log_prob_sum,
                     int(counts.sum()), tie)


def tsd_batch(coop_probs, batch: int, depth: int, rng: np.random.Generator):
    """Vectorized TSD over a batch of episodes.

    Returns (agent_returns (B,), detective_returns (B,), counts (B, 5, 2)).
    Node visit order matches the scalar recursion (depth-first, cooperate
    branch first), so a batch of one consumes the same draws.
    """
    if depth > _MAX_TSD_DEPTH:
        raise ConfigError(f"TSD depth {depth} exceeds the cap ({_MAX_TSD_DEPTH})")
    coop = np.asarray(coop_probs, dtype=np.float64)
    counts = np.zeros((batch, 5, 2))
    rows = np.arange(batch)

    def walk(agent_obs: np.ndarray, remaining: int):
        if remaining == 0:
            zero = np.zeros(batch)
            return zero, zero
        p = coop[agent_obs]
        a = sample_index_vec(np.stack([p, 1.0 - p], axis=1), rng)
        counts[rows, agent_obs, a] += 1
        det_by_branch = []
        agent_by_branch = []
        for b in (0, 1):
            r_agent = PAYOFF[a, b]
            r_det = PAYOFF[b, a]
            sub_det, sub_agent = walk(obs_index(a, b), remaining - 1)
            det_by_branch.append(r_det + sub_det)
            agent_by_branch.append(r_agent + sub_agent)
        take_coop = det_by_branch[0] >= det_by_branch[1]
        det = np.where(take_coop, det_by_branch[0], det_by_branch[1])
        agent = np.where(take_coop, agent_by_branch[0], agent_by_branch[1])
        return det, agent

    det_returns, agent_returns = walk(np.full(batch, START, dtype=np.int64), depth)
    return agent_returns, det_returns, counts
