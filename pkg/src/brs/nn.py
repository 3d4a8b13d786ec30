"""Small differentiable function approximators and their optimizers.

Two model families cover every policy in the package: feed-forward MLPs
(IPD agents, fusion trunks) and GRU agents (Coin Game actor-critic). The
forward functions take a dict name -> Tensor-or-ndarray, so the same code
runs in-tape for training and tape-free for evaluation. Weight dicts may
also hold stacked per-episode parameters with one extra leading dim; see
``stack_parameters``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .params import ParameterVector

Arrayish = "Tensor | np.ndarray"


# -- specs ------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Feed-forward net: ``hidden`` widths, then a head of ``out_dim`` units."""

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "tanh"  # tanh | relu
    head: str = "softmax"     # softmax | sigmoid | linear

    def __post_init__(self):
        if len(self.hidden) < 1 or any(w < 1 for w in self.hidden):
            raise ConfigError("MLP needs at least one hidden layer of width >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.head not in ("softmax", "sigmoid", "linear"):
            raise ConfigError(f"unknown head {self.head!r}")


@dataclass(frozen=True)
class GruAgentSpec:
    """Recurrent actor-critic: obs MLP -> GRU -> linear policy/value heads."""

    obs_dim: int
    num_actions: int
    mlp_hidden: tuple[int, int] = (64, 64)
    gru_dim: int = 64


# -- initialization -----------------------------------------------------------


def orthogonal(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    a = rng.normal(size=(max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return q[: shape[0], : shape[1]].copy()


def scaled_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str = "",
             zero_head: bool = True) -> dict[str, np.ndarray]:
    widths = (spec.in_dim, *spec.hidden, spec.out_dim)
    arrays: dict[str, np.ndarray] = {}
    last = len(widths) - 2
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        if i == last and zero_head:
            w = np.zeros((n_in, n_out))
        else:
            w = scaled_uniform(rng, (n_in, n_out))
        arrays[f"{prefix}w{i}"] = w
        arrays[f"{prefix}b{i}"] = np.zeros(n_out)
    return arrays


def init_gru(rng: np.random.Generator, in_dim: int, hidden: int,
             prefix: str = "gru.") -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for gate in ("z", "r", "n"):
        arrays[f"{prefix}w{gate}"] = scaled_uniform(rng, (in_dim, hidden))
        arrays[f"{prefix}u{gate}"] = orthogonal(rng, (hidden, hidden))
        arrays[f"{prefix}b{gate}"] = np.zeros(hidden)
    return arrays


def init_gru_agent(spec: GruAgentSpec, rng: np.random.Generator) -> ParameterVector:
    h1, h2 = spec.mlp_hidden
    arrays = init_mlp(MlpSpec(spec.obs_dim, (h1,), h2, activation="relu",
                              head="linear"), rng, prefix="obs.", zero_head=False)
    arrays.update(init_gru(rng, h2, spec.gru_dim))
    arrays["policy.w"] = np.zeros((spec.gru_dim, spec.num_actions))
    arrays["policy.b"] = np.zeros(spec.num_actions)
    arrays["value.w"] = np.zeros((spec.gru_dim, 1))
    arrays["value.b"] = np.zeros(1)
    return ParameterVector(arrays)


def init_mlp_policy(spec: MlpSpec, rng: np.random.Generator) -> ParameterVector:
    return ParameterVector(init_mlp(spec, rng))


# -- forward passes -----------------------------------------------------------


def _activate(x, kind: str):
    return ad.tanh(x) if kind == "tanh" else ad.relu(x)


def mlp_forward(weights, spec: MlpSpec, x, prefix: str = ""):
    """Pre-head output of the MLP; apply the head with ``apply_head``."""
    n_layers = len(spec.hidden) + 1
    for i in range(n_layers):
        x = x @ weights[f"{prefix}w{i}"] + weights[f"{prefix}b{i}"]
        if i < n_layers - 1:
            x = _activate(x, spec.activation)
    return x


def apply_head(logits, head: str):
    if head == "softmax":
        return ad.softmax(logits, axis=-1)
    if head == "sigmoid":
        return ad.sigmoid(logits)
    return logits


def forward_policy(params, spec: MlpSpec, observation):
    """Action distribution of an MLP policy for one or a batch of observations."""
    obs = observation.value if isinstance(observation, Tensor) else np.asarray(observation)
    if obs.shape[-1] != spec.in_dim:
        raise ConfigError(
            f"observation dim {obs.shape[-1]} does not match spec in_dim {spec.in_dim}")
    weights = params.arrays() if isinstance(params, ParameterVector) else params
    return apply_head(mlp_forward(weights, spec, observation), spec.head)


def gru_cell(weights, x, h, prefix: str = "gru."):
    """One GRU step. Reset gate multiplies the hidden contribution."""
    z = ad.sigmoid(x @ weights[f"{prefix}wz"] + h @ weights[f"{prefix}uz"]
                   + weights[f"{prefix}bz"])
    r = ad.sigmoid(x @ weights[f"{prefix}wr"] + h @ weights[f"{prefix}ur"]
                   + weights[f"{prefix}br"])
    n = ad.tanh(x @ weights[f"{prefix}wn"] + r * (h @ weights[f"{prefix}un"])
                + weights[f"{prefix}bn"])
    return (1.0 - z) * n + z * h


class GruAgent:
    """Stateless functional wrapper: callers thread the hidden state."""

    def __init__(self, spec: GruAgentSpec):
        self.spec = spec
        h1, h2 = spec.mlp_hidden
        self._obs_mlp = MlpSpec(spec.obs_dim, (h1,), h2, activation="relu",
                                head="linear")

    def init_params(self, rng: np.random.Generator) -> ParameterVector:
        return init_gru_agent(self.spec, rng)

    def initial_hidden(self, batch_shape: tuple[int, ...]) -> np.ndarray:
        return np.zeros((*batch_shape, self.spec.gru_dim))

    def step(self, weights, obs, h):
        """Returns (policy_logits, value, next_hidden)."""
        x = mlp_forward(weights, self._obs_mlp, obs, prefix="obs.")
        x = ad.relu(x)
        h = gru_cell(weights, x, h)
        logits = h @ weights["policy.w"] + weights["policy.b"]
        value = h @ weights["value.w"] + weights["value.b"]
        return logits, value, h


def stack_parameters(vectors: list[ParameterVector]) -> dict[str, np.ndarray]:
    """Stack per-episode parameters along a new leading axis.

    1-D arrays (biases) gain a broadcast axis so the stacked weights combine
    with inputs of shape (episodes, rows, features) in the same forward code.
    """
    names = vectors[0].names()
    out: dict[str, np.ndarray] = {}
    for name in names:
        stacked = np.stack([pv[name] for pv in vectors])
        if vectors[0][name].ndim == 1:
            stacked = stacked[:, None, :]
        out[name] = stacked
    return out


# -- losses and bonuses --------------------------------------------------------


def huber_value_loss(predicted, target, delta: float = 1.0):
    """Mean Huber loss between predictions and (constant) targets."""
    residual = predicted - ad.detach(ad.as_tensor(target)) if isinstance(predicted, Tensor) \
        else np.asarray(predicted) - np.asarray(target)
    return ad.huber(residual, delta).mean() if isinstance(residual, Tensor) \
        else float(np.mean(ad.huber(residual, delta)))


def entropy_bonus(distribution, beta: float):
    """``beta`` times the Shannon entropy; batches are averaged.

    ndarray inputs treat zero probabilities exactly (0 log 0 = 0); Tensor
    inputs must be strictly positive (softmax outputs always are).
    """
    if beta == 0.0:
        return 0.0
    if isinstance(distribution, Tensor):
        p = distribution
        h = -(p * p.log()).sum(axis=-1)
        return beta * h.mean()
    p = np.asarray(distribution, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return beta * float(np.mean(-terms.sum(axis=-1)))


def entropy_from_logits(logits, beta: float):
    """Entropy bonus computed stably from logits (used by the trainers)."""
    ls = ad.log_softmax(logits, axis=-1)
    p = ls.exp() if isinstance(ls, Tensor) else np.exp(ls)
    h = -(p * ls).sum(axis=-1)
    return beta * (h.mean() if isinstance(h, Tensor) else float(np.mean(h)))


# -- optimizers -----------------------------------------------------------------


@dataclass
class OptimizerState:
    """SGD or Adam moments; updates ascend the return objective."""

    algo: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def make_optimizer(algo: str, lr: float) -> OptimizerState:
    if algo not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {algo!r}")
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    return OptimizerState(algo=algo, lr=lr)


def optimizer_step(state: OptimizerState, params: ParameterVector,
                   grads: dict[str, np.ndarray]) -> ParameterVector:
    """One ascent step ``p <- p + lr * direction(gradient)``."""
    updated: dict[str, np.ndarray] = {}
    state.step += 1
    for name, p in params.arrays().items():
        g = grads.get(name)
        if g is None:
            updated[name] = p
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape "
                              f"{p.shape} for '{name}'")
        if state.algo == "sgd":
            updated[name] = p + state.lr * g
        else:
            m = state.m.get(name, np.zeros_like(p))
            v = state.v.get(name, np.zeros_like(p))
            m = state.beta1 * m + (1 - state.beta1) * g
            v = state.beta2 * v + (1 - state.beta2) * g ** 2
            state.m[name] = m
            state.v[name] = v
            m_hat = m / (1 - state.beta1 ** state.step)
            v_hat = v / (1 - state.beta2 ** state.step)
            updated[name] = p + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return ParameterVector(updated)
