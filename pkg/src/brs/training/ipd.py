"""IPD trainers: tree-search-detective REINFORCE, naive learners, analytic loop.

The IPD agent is a small tanh MLP mapping the five one-hot observations to a
cooperation probability. All rollouts here are tabular: one forward pass per
iteration evaluates the five cooperation probabilities, and episode batches
reduce to per-(state, action) visit counts, so the surrogate is a tiny graph
regardless of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, gradients
from ..core import EmaBaseline, sample_index_vec
from ..detectives import tsd_batch
from ..envs.ipd import _SWAP, PAYOFF, exact_memory_one_value
from ..errors import ConfigError
from ..nn import MlpSpec, init_mlp_policy, make_optimizer, mlp_forward, optimizer_step
from ..params import ParameterVector
from .neural import grads_dict, tensor_leaves


@dataclass
class IpdTrainConfig:
    iterations: int = 4000
    batch_size: int = 128
    depth: int = 6
    hidden: int = 16
    learning_rate: float = 3e-4
    optimizer: str = "sgd"
    self_play: bool = True
    self_play_lr: float = 3e-4
    self_play_optimizer: str = "sgd"
    baseline_decay: float = 0.99


def ipd_agent_spec(hidden: int) -> MlpSpec:
    return MlpSpec(5, (hidden,), 1, activation="tanh", head="sigmoid")


def ipd_policy_table(params: ParameterVector, spec: MlpSpec) -> np.ndarray:
    """Cooperation probability for each of the five observations."""
    logits = mlp_forward(params.arrays(), spec, np.eye(5)).reshape(5)
    return ad.sigmoid(logits)


def _coop_logits(leaves: dict, spec: MlpSpec) -> Tensor:
    return mlp_forward(leaves, spec, np.eye(5)).reshape(5)


def _logp_table(logits: Tensor) -> Tensor:
    """(5, 2) log-probabilities: column 0 cooperate, column 1 defect."""
    return ad.stack([ad.log_sigmoid(logits), ad.log_sigmoid(-logits)], axis=1)


def _count_weighted_update(logits: Tensor, counts: np.ndarray,
                           weights: np.ndarray, leaves: dict) -> dict:
    """Gradient of (1/B) sum_i w_i * sum_{s,a} counts_i[s,a] log pi(a|s)."""
    coeff = np.einsum("i,isa->sa", weights, counts)
    objective = (_logp_table(logits) * coeff).sum() * (1.0 / len(weights))
    return grads_dict(objective, leaves)


def ipd_self_play_rollout(coop: np.ndarray, batch: int, length: int,
                          rng: np.random.Generator):
    """Parameter-tied self-play episodes; returns (R1, visit counts both seats)."""
    states = np.zeros(batch, dtype=np.int64)
    counts = np.zeros((batch, 5, 2))
    returns = np.zeros(batch)
    rows = np.arange(batch)
    for _ in range(length):
        idx0, idx1 = states, _SWAP[states]
        p0, p1 = coop[idx0], coop[idx1]
        a = sample_index_vec(np.stack([p0, 1 - p0], axis=1), rng)
        b = sample_index_vec(np.stack([p1, 1 - p1], axis=1), rng)
        counts[rows, idx0, a] += 1
        counts[rows, idx1, b] += 1
        returns += PAYOFF[a, b]
        states = 1 + 2 * a + b
    return returns, counts


def self_play_step_ipd(params: ParameterVector, spec: MlpSpec, optimizer,
                       baseline: EmaBaseline, batch: int, length: int,
                       rng: np.random.Generator) -> tuple[ParameterVector, float]:
    """One self-play update: R1 weights both players' log-prob sums."""
    leaves = tensor_leaves(params)
    logits = _coop_logits(leaves, spec)
    returns, counts = ipd_self_play_rollout(ad.sigmoid(logits.value), batch,
                                            length, rng)
    grads = _count_weighted_update(logits, counts, returns - baseline.value,
                                   leaves)
    baseline.update(returns.mean())
    return optimizer_step(optimizer, params, grads), float(returns.mean())


def train_ipd_brs_tsd(config: IpdTrainConfig, seed: int,
                      log_every: int = 0, log_fn=None) -> dict:
    """Train the MLP agent against the tree-search detective.

    With self-play enabled this is the full method; without it, the
    no-self-play ablation. Returns final parameters, the cooperation table,
    and a per-iteration history of returns.
    """
    rng = np.random.default_rng(seed)
    spec = ipd_agent_spec(config.hidden)
    params = init_mlp_policy(spec, rng)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    opt_sp = make_optimizer(config.self_play_optimizer, config.self_play_lr)
    baseline = EmaBaseline(config.baseline_decay)
    baseline_sp = EmaBaseline(config.baseline_decay)
    history = {"agent_return": [], "detective_return": [], "self_play_return": []}

    for iteration in range(config.iterations):
        leaves = tensor_leaves(params)
        logits = _coop_logits(leaves, spec)
        coop = ad.sigmoid(logits.value)
        agent_returns, det_returns, counts = tsd_batch(coop, config.batch_size,
                                                       config.depth, rng)
        grads = _count_weighted_update(logits, counts,
                                       agent_returns - baseline.value, leaves)
        baseline.update(agent_returns.mean())
        params = optimizer_step(opt, params, grads)

        sp_return = np.nan
        if config.self_play:
            params, sp_return = self_play_step_ipd(
                params, spec, opt_sp, baseline_sp, config.batch_size,
                config.depth, rng)

        history["agent_return"].append(float(agent_returns.mean()))
        history["detective_return"].append(float(det_returns.mean()))
        history["self_play_return"].append(float(sp_return))
        if log_fn is not None and log_every and (iteration + 1) % log_every == 0:
            log_fn(iteration + 1, {
                "agent_return": float(agent_returns.mean()),
                "policy_table": ipd_policy_table(params, spec).tolist(),
            })

    return {"params": params, "spec": spec,
            "policy_table": ipd_policy_table(params, spec), "history": history}


def naive_learner_duel(config: IpdTrainConfig, seed: int) -> dict:
    """Two independent REINFORCE learners trained against each other."""
    rng = np.random.default_rng(seed)
    spec = ipd_agent_spec(config.hidden)
    params = [init_mlp_policy(spec, rng) for _ in range(2)]
    opts = [make_optimizer(config.optimizer, config.learning_rate)
            for _ in range(2)]
    baselines = [EmaBaseline(config.baseline_decay) for _ in range(2)]
    history = {"return_0": [], "return_1": []}
    batch = config.batch_size
    rows = np.arange(batch)

    for _ in range(config.iterations):
        leaves = [tensor_leaves(p) for p in params]
        logits = [_coop_logits(lv, spec) for lv in leaves]
        coop = [ad.sigmoid(lg.value) for lg in logits]
        states = np.zeros(batch, dtype=np.int64)
        counts = [np.zeros((batch, 5, 2)) for _ in range(2)]
        returns = [np.zeros(batch) for _ in range(2)]
        for _t in range(config.depth):
            idx = [states, _SWAP[states]]
            acts = []
            for player in range(2):
                p = coop[player][idx[player]]
                act = sample_index_vec(np.stack([p, 1 - p], axis=1), rng)
                counts[player][rows, idx[player], act] += 1
                acts.append(act)
            returns[0] += PAYOFF[acts[0], acts[1]]
            returns[1] += PAYOFF[acts[1], acts[0]]
            states = 1 + 2 * acts[0] + acts[1]
        for player in range(2):
            grads = _count_weighted_update(
                logits[player], counts[player],
                returns[player] - baselines[player].value, leaves[player])
            baselines[player].update(returns[player].mean())
            params[player] = optimizer_step(opts[player], params[player], grads)
        history["return_0"].append(float(returns[0].mean()))
        history["return_1"].append(float(returns[1].mean()))

    return {"params": params, "spec": spec,
            "policy_tables": [ipd_policy_table(p, spec) for p in params],
            "history": history}


# -- analytic variant -----------------------------------------------------------------


@dataclass
class AnalyticConfig:
    discount: float = 0.96
    outer_iterations: int = 1200
    outer_lr: float = 0.05
    inner_lr: float = 0.3
    inner_tol: float = 1e-6
    inner_max_iters: int = 3000
    fd_eps: float = 1e-3


def exact_best_response(p_probs: np.ndarray, config: AnalyticConfig,
                        q_logits: np.ndarray | None = None):
    """Opponent maximizing its exact value against fixed memory-one p.

    Inner gradient ascent (Adam on logits) until the value change falls
    below ``inner_tol``; non-convergence is reported and the last iterate
    used. Returns (q_probs, q_logits, converged).
    """
    if q_logits is None:
        q_logits = np.zeros(5)
    else:
        q_logits = np.array(q_logits, dtype=np.float64)
    opt = make_optimizer("adam", config.inner_lr)
    pv = ParameterVector({"q": q_logits})
    previous = -np.inf
    converged = False
    for _ in range(config.inner_max_iters):
        leaf = Tensor(pv["q"])
        q_probs = ad.sigmoid(leaf)
        _, v2 = exact_memory_one_value(p_probs, q_probs, config.discount)
        (g,) = gradients(v2, [leaf])
        pv = optimizer_step(opt, pv, {"q": g})
        value = float(v2.value)
        if abs(value - previous) < config.inner_tol:
            converged = True
            break
        previous = value
    q = pv["q"]
    return ad.sigmoid(q), q, converged


def _analytic_objective(p_logits: np.ndarray, config: AnalyticConfig,
                        warm_q: np.ndarray):
    p_probs = ad.sigmoid(p_logits)
    q_probs, q_logits, converged = exact_best_response(p_probs, config, warm_q)
    v1, v2 = exact_memory_one_value(p_probs, np.asarray(q_probs), config.discount)
    return float(v1), float(v2), q_logits, converged


def train_ipd_brs_analytic(config: AnalyticConfig, seed: int = 0) -> dict:
    """No-self-play variant on exact values: ascend V1(p, best_response(p)).

    The best response is re-converged per evaluation (warm-started), and the
    outer gradient is a central finite difference of the bi-level objective,
    which captures the response of the inner solution to the agent.
    """
    if not 0.0 <= config.discount < 1.0:
        raise ConfigError("analytic trainer requires discount in [0, 1)")
    rng = np.random.default_rng(seed)
    p_logits = 0.1 * rng.normal(size=5)
    opt = make_optimizer("adam", config.outer_lr)
    pv = ParameterVector({"p": p_logits})
    _, _, warm_q, _ = _analytic_objective(pv["p"], config, np.zeros(5))
    history = {"agent_value": [], "opponent_value": []}
    inner_failures = 0

    for _ in range(config.outer_iterations):
        grad = np.zeros(5)
        base_q = warm_q.copy()
        for i in range(5):
            bumped = pv["p"].copy()
            bumped[i] += config.fd_eps
            v_plus, _, _, ok_p = _analytic_objective(bumped, config, base_q)
            bumped[i] -= 2 * config.fd_eps
            v_minus, _, _, ok_m = _analytic_objective(bumped, config, base_q)
            grad[i] = (v_plus - v_minus) / (2 * config.fd_eps)
            inner_failures += (not ok_p) + (not ok_m)
        pv = optimizer_step(opt, pv, {"p": grad})
        v1, v2, warm_q, _ = _analytic_objective(pv["p"], config, base_q)
        history["agent_value"].append(v1)
        history["opponent_value"].append(v2)

    p_probs = ad.sigmoid(pv["p"])
    q_probs, q_logits, converged = exact_best_response(p_probs, config, warm_q)
    return {"policy": np.asarray(p_probs), "logits": pv["p"],
            "best_response": np.asarray(q_probs),
            "best_response_converged": converged,
            "inner_failures": inner_failures, "history": history}
