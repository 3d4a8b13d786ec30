"""Best-response-shaping training loop for recurrent actor-critic agents.

One iteration runs, in order: detective training against a sampled batch of
(perturbed) past agents, agent training against the frozen detective with
the two-term update, optional self-play regularization, and a buffer push.

The agent step differentiates through the detective: the detective's action
log-probs depend on the agent's parameters via the QA features, so each
step's log-prob carries a second gradient path. The rollout is executed
twice: a cheap forward pass that samples everything and records it, then a
tape rebuild from the records that computes both gradient terms, one step's
QA subgraph at a time (keeping the whole episode's QA graphs alive at once
would be prohibitively large).
"""

from __future__ import annotations

import logging

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, gradients
from ..core import gae_advantages_batch, sample_index_vec
from ..detectives import DetectiveNet, SimulationQa
from ..nn import (GruAgent, OptimizerState, entropy_from_logits, huber_value_loss,
                  make_optimizer, optimizer_step, stack_parameters)
from ..params import ParameterVector
from ..policies import GruPolicyAdapter, StackedGruPolicyAdapter
from .buffer import ReplayBuffer
from .config import BrsConfig

logger = logging.getLogger(__name__)


def tensor_leaves(params: ParameterVector) -> dict[str, Tensor]:
    return {name: Tensor(arr) for name, arr in params.arrays().items()}


def grads_dict(root: Tensor, leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    names = list(leaves)
    grads = gradients(root, [leaves[n] for n in names])
    return dict(zip(names, grads))


def _returns_to_go_batch(rewards: np.ndarray, discount: float) -> np.ndarray:
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[1])
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def _grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g ** 2))
    return float(np.sqrt(total))


def _accumulate(into: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name in into:
            into[name] = into[name] + g
        else:
            into[name] = g


class NeuralBrsTrainer:
    """Owns agent/detective parameters, optimizer states, and the buffer."""

    def __init__(self, env, agent_net: GruAgent, detective_net: DetectiveNet,
                 config: BrsConfig, rng: np.random.Generator,
                 qa_provider=None):
        self.env = env
        self.agent_net = agent_net
        self.detective_net = detective_net
        self.config = config
        self.qa = qa_provider if qa_provider is not None else SimulationQa(config.qa)
        self.agent_params = agent_net.init_params(rng)
        self.detective_params = detective_net.init_params(rng)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.opt_term1 = make_optimizer(config.agent_optimizer, config.agent_lr)
        self.opt_term2 = make_optimizer(config.agent_optimizer, config.agent_lr)
        self.opt_agent_critic = make_optimizer("adam", config.critic_lr)
        self.opt_self_play = make_optimizer(config.self_play_optimizer,
                                            config.self_play_lr)
        self.opt_det_actor = make_optimizer(config.detective_optimizer,
                                            config.detective_lr)
        self.opt_det_critic = make_optimizer("adam", config.detective_critic_lr)
        self.iteration = 0

    # -- detective block ----------------------------------------------------

    def sample_opponents(self, rng: np.random.Generator) -> list[ParameterVector] | None:
        config = self.config
        if config.replay_buffer:
            if len(self.buffer) == 0:
                return None
            return self.buffer.sample(config.batch_size, config.noise_std, rng)
        # no-replay-buffer ablation: current agent, no noise
        return [self.agent_params] * config.batch_size

    def train_detective_step(self, rng: np.random.Generator) -> dict:
        """Actor-critic update of the detective; agent parameters untouched."""
        config, env = self.config, self.env
        opponents = self.sample_opponents(rng)
        if opponents is None:
            logger.warning("replay buffer empty; skipping detective step")
            return {"skipped": True}
        batch, horizon = config.batch_size, env.spec.episode_length
        stacked = stack_parameters(opponents)
        agent = StackedGruPolicyAdapter(self.agent_net, stacked, episodes=batch)
        det_w = tensor_leaves(self.detective_params)

        state = env.reset(batch, rng)
        agent_mem = agent.initial_mem(batch)
        det_hidden = self.detective_net.initial_hidden((batch,))
        logps, values, entropies, rewards = [], [], [], []
        for _ in range(horizon):
            delta = self.qa.evaluate(agent, env, state, agent_mem, rng)
            obs_det = env.observe(state, 1)
            det_hidden = self.detective_net.encode(det_w, obs_det, det_hidden)
            logits, value = self.detective_net.heads(det_w, det_hidden, delta)
            b = sample_index_vec(ad.softmax(logits.value), rng)
            probs_a, _, agent_mem = agent.act_vec(env, state, 0, agent_mem)
            a = sample_index_vec(probs_a, rng)
            state, _, r_det, _ = env.step(state, a, b, rng)
            logps.append(ad.take_last(ad.log_softmax(logits), b))
            values.append(value.reshape(batch))
            entropies.append(entropy_from_logits(logits, 1.0))
            rewards.append(r_det)

        rewards = np.stack(rewards)
        value_estimates = np.stack([v.value for v in values])
        advantages = gae_advantages_batch(rewards, value_estimates,
                                          np.zeros(batch), env.spec.discount,
                                          config.gae_lambda)
        policy_obj = sum((lp * adv).sum() for lp, adv in zip(logps, advantages))
        policy_obj = policy_obj * (1.0 / batch)
        if config.detective_entropy_beta:
            mean_entropy = sum(entropies) * (1.0 / horizon)
            policy_obj = policy_obj + config.detective_entropy_beta * mean_entropy
        g_actor = grads_dict(policy_obj, det_w)

        targets = _returns_to_go_batch(rewards, env.spec.discount)
        critic_obj = -huber_value_loss(ad.stack(values), targets,
                                       config.huber_delta)
        g_critic = grads_dict(critic_obj, det_w)

        self.detective_params = optimizer_step(self.opt_det_actor,
                                               self.detective_params, g_actor)
        self.detective_params = optimizer_step(self.opt_det_critic,
                                               self.detective_params, g_critic)
        per_step = rewards.sum(axis=0).mean() / horizon
        return {"detective_return": float(per_step),
                "actor_grad_norm": _grad_norm(g_actor)}

    # -- agent block ----------------------------------------------------------

    def _rollout_vs_detective(self, rng: np.random.Generator):
        """Forward pass (no tape): sample the episode batch and record it."""
        config, env = self.config, self.env
        batch, horizon = config.batch_size, env.spec.episode_length
        agent_np = GruPolicyAdapter(self.agent_net, self.agent_params.arrays())
        det_w = self.detective_params.arrays()

        state = env.reset(batch, rng)
        agent_mem = agent_np.initial_mem(batch)
        det_hidden = self.detective_net.initial_hidden((batch,))
        records = []
        agent_rewards, agent_values = [], []
        for _ in range(horizon):
            delta, qa_record = self.qa.evaluate_recorded(agent_np, env, state,
                                                         agent_mem, rng)
            obs_det = env.observe(state, 1)
            det_hidden = self.detective_net.encode(det_w, obs_det, det_hidden)
            logits_det, _ = self.detective_net.heads(det_w, det_hidden, delta)
            b = sample_index_vec(ad.softmax(logits_det), rng)
            obs_agent = env.observe(state, 0)
            logits_a, value_a, agent_mem = self.agent_net.step(
                self.agent_params.arrays(), obs_agent, agent_mem)
            a = sample_index_vec(ad.softmax(logits_a), rng)
            state, r_agent, _, _ = env.step(state, a, b, rng)
            records.append({"qa": qa_record, "det_hidden": det_hidden,
                            "obs_agent": obs_agent, "a": a, "b": b})
            agent_rewards.append(r_agent)
            agent_values.append(value_a.reshape(batch))
        return records, np.stack(agent_rewards), np.stack(agent_values)

    def train_agent_step(self, rng: np.random.Generator) -> dict:
        """Two-term update (own log-probs + detective log-probs through QA)."""
        config, env = self.config, self.env
        batch, horizon = config.batch_size, env.spec.episode_length
        records, rewards, values = self._rollout_vs_detective(rng)
        advantages = gae_advantages_batch(rewards, values, np.zeros(batch),
                                          env.spec.discount, config.gae_lambda)
        targets = _returns_to_go_batch(rewards, env.spec.discount)

        det_w = self.detective_params.arrays()
        leaves = tensor_leaves(self.agent_params)
        agent_tape = GruPolicyAdapter(self.agent_net, leaves)
        mem = self.agent_net.initial_hidden((batch,))
        term2_grads: dict[str, np.ndarray] = {}
        logp1, values1, entropies = [], [], []
        for t, rec in enumerate(records):
            # term 2: detective log-prob at step t, rebuilt on the tape
            delta = self.qa.replay(agent_tape, env, rec["qa"], mem)
            logits_det, _ = self.detective_net.heads(det_w, rec["det_hidden"],
                                                     delta)
            lp2 = ad.take_last(ad.log_softmax(logits_det), rec["b"])
            scalar2 = (lp2 * advantages[t]).sum() * (1.0 / batch)
            _accumulate(term2_grads, grads_dict(scalar2, leaves))
            # term 1 path: replay the agent's own step on the tape
            logits_a, value_a, mem = self.agent_net.step(leaves,
                                                         rec["obs_agent"], mem)
            logp1.append(ad.take_last(ad.log_softmax(logits_a), rec["a"]))
            values1.append(value_a.reshape(batch))
            entropies.append(entropy_from_logits(logits_a, 1.0))

        term1_obj = sum((lp * adv).sum() for lp, adv in zip(logp1, advantages))
        term1_obj = term1_obj * (1.0 / batch)
        if config.agent_entropy_beta:
            term1_obj = term1_obj + config.agent_entropy_beta * (
                sum(entropies) * (1.0 / horizon))
        g_term1 = grads_dict(term1_obj, leaves)
        critic_obj = -huber_value_loss(ad.stack(values1), targets,
                                       config.huber_delta)
        g_critic = grads_dict(critic_obj, leaves)

        self.agent_params = optimizer_step(self.opt_term1, self.agent_params,
                                           g_term1)
        self.agent_params = optimizer_step(self.opt_term2, self.agent_params,
                                           term2_grads)
        self.agent_params = optimizer_step(self.opt_agent_critic,
                                           self.agent_params, g_critic)
        per_step = rewards.sum(axis=0).mean() / horizon
        return {"agent_return": float(per_step),
                "term1_grad_norm": _grad_norm(g_term1),
                "term2_grad_norm": _grad_norm(term2_grads)}

    # -- self-play block ----------------------------------------------------------

    def self_play_step(self, rng: np.random.Generator) -> dict:
        """REINFORCE on a parameter-tied self-play rollout (both seats' log-probs)."""
        config, env = self.config, self.env
        batch, horizon = config.batch_size, env.spec.episode_length
        leaves = tensor_leaves(self.agent_params)
        state = env.reset(batch, rng)
        mem0 = self.agent_net.initial_hidden((batch,))
        mem1 = self.agent_net.initial_hidden((batch,))
        logp_terms, rewards, values = [], [], []
        for _ in range(horizon):
            obs0 = env.observe(state, 0)
            logits0, value0, mem0 = self.agent_net.step(leaves, obs0, mem0)
            a = sample_index_vec(ad.softmax(logits0.value), rng)
            obs1 = env.observe(state, 1)
            logits1, _, mem1 = self.agent_net.step(leaves, obs1, mem1)
            b = sample_index_vec(ad.softmax(logits1.value), rng)
            state, r0, _, _ = env.step(state, a, b, rng)
            logp_terms.append(ad.take_last(ad.log_softmax(logits0), a)
                              + ad.take_last(ad.log_softmax(logits1), b))
            rewards.append(r0)
            values.append(value0.value.reshape(batch))
        rewards = np.stack(rewards)
        if config.self_play_use_critic_baseline:
            weights = gae_advantages_batch(rewards, np.stack(values),
                                           np.zeros(batch), env.spec.discount,
                                           config.gae_lambda)
        else:
            # per-episode weight R^1(tau), batch mean as baseline
            total = (rewards * (env.spec.discount
                                ** np.arange(len(rewards)))[:, None]).sum(axis=0)
            weights = np.tile(total - total.mean(), (horizon, 1))
        objective = sum((lp * w).sum() for lp, w in zip(logp_terms, weights))
        objective = objective * (1.0 / batch)
        grads = grads_dict(objective, leaves)
        self.agent_params = optimizer_step(self.opt_self_play, self.agent_params,
                                           grads)
        per_step = rewards.sum(axis=0).mean() / horizon
        return {"self_play_return": float(per_step),
                "self_play_grad_norm": _grad_norm(grads)}

    # -- one full iteration ----------------------------------------------------------

    def run_iteration(self, rng: np.random.Generator) -> dict:
        stats: dict = {"iteration": self.iteration}
        stats.update(self.train_detective_step(rng))
        stats.update(self.train_agent_step(rng))
        if self.config.self_play:
            stats.update(self.self_play_step(rng))
        if self.config.replay_buffer:
            self.buffer.push(self.agent_params)
            stats["buffer_size"] = len(self.buffer)
        self.iteration += 1
        return stats
