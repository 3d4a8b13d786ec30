"""Function-approximator checks: forward oracles, gradient checks, optimizers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brs import autodiff as ad
from brs import nn
from brs.autodiff import Tensor, finite_difference, gradients
from brs.errors import ConfigError
from brs.params import (ParameterVector, add_gaussian_noise, export_debug_json,
                        load_checkpoint, save_checkpoint)

RNG = np.random.default_rng(11)


def tensorize(pv: ParameterVector) -> dict:
    return {k: Tensor(v) for k, v in pv.arrays().items()}


# -- forward passes ------------------------------------------------------------


def test_zero_initialized_head_gives_uniform_distribution():
    spec = nn.MlpSpec(4, (8,), 3, head="softmax")
    params = nn.init_mlp_policy(spec, RNG)
    probs = nn.forward_policy(params, spec, np.ones(4))
    assert np.allclose(probs, 1 / 3)


def test_forward_policy_matches_independent_oracle():
    spec = nn.MlpSpec(5, (7, 6), 3, activation="tanh", head="softmax")
    params = ParameterVector({
        "w0": RNG.normal(size=(5, 7)), "b0": RNG.normal(size=7),
        "w1": RNG.normal(size=(7, 6)), "b1": RNG.normal(size=6),
        "w2": RNG.normal(size=(6, 3)), "b2": RNG.normal(size=3),
    })
    obs = RNG.normal(size=5)
    got = nn.forward_policy(params, spec, obs)

    # straight-line reimplementation
    h = np.tanh(obs @ params["w0"] + params["b0"])
    h = np.tanh(h @ params["w1"] + params["b1"])
    logits = h @ params["w2"] + params["b2"]
    want = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(got, want, atol=1e-10)


def test_forward_policy_shape_mismatch_is_config_error():
    spec = nn.MlpSpec(4, (8,), 2)
    params = nn.init_mlp_policy(spec, RNG)
    with pytest.raises(ConfigError):
        nn.forward_policy(params, spec, np.ones(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_policy_outputs_valid_distribution_for_random_params(seed):
    rng = np.random.default_rng(seed)
    spec = nn.MlpSpec(3, (5,), 4, head="softmax")
    params = ParameterVector({
        "w0": 3 * rng.normal(size=(3, 5)), "b0": rng.normal(size=5),
        "w1": 3 * rng.normal(size=(5, 4)), "b1": rng.normal(size=4),
    })
    probs = nn.forward_policy(params, spec, rng.normal(size=3))
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) < 1e-9


def test_mlp_forward_gradient_check():
    spec = nn.MlpSpec(4, (6,), 2, activation="tanh", head="linear")
    arrays = {"w0": RNG.normal(size=(4, 6)), "b0": RNG.normal(size=6),
              "w1": RNG.normal(size=(6, 2)), "b1": RNG.normal(size=2)}
    obs = RNG.normal(size=(3, 4))
    names = list(arrays)

    def build(tensors):
        weights = dict(zip(names, tensors))
        return (nn.mlp_forward(weights, spec, Tensor(obs)).tanh()).sum()

    leaves = [Tensor(arrays[n]) for n in names]
    got = gradients(build(leaves), leaves)
    want = finite_difference(lambda xs: float(build([Tensor(x) for x in xs]).value),
                             [arrays[n] for n in names])
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=1e-4 * max(1.0, np.abs(w).max()))


def test_gru_cell_gradient_check():
    arrays = nn.init_gru(RNG, 3, 4)
    for k in arrays:
        arrays[k] = arrays[k] + 0.3 * RNG.normal(size=arrays[k].shape)
    x = RNG.normal(size=(2, 3))
    h0 = RNG.normal(size=(2, 4))
    names = list(arrays)

    def build(tensors):
        weights = dict(zip(names, tensors))
        h = nn.gru_cell(weights, Tensor(x), Tensor(h0))
        h = nn.gru_cell(weights, Tensor(x), h)  # two chained steps
        return (h * h).sum()

    leaves = [Tensor(arrays[n]) for n in names]
    got = gradients(build(leaves), leaves)
    want = finite_difference(lambda xs: float(build([Tensor(x_) for x_ in xs]).value),
                             [arrays[n] for n in names], eps=1e-5)
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=1e-4 * max(1.0, np.abs(w).max()))


def test_gru_agent_full_gradient_check():
    spec = nn.GruAgentSpec(obs_dim=5, num_actions=2, mlp_hidden=(4, 4), gru_dim=3)
    agent = nn.GruAgent(spec)
    pv = agent.init_params(np.random.default_rng(3))
    # perturb zero-initialized heads so gradients flow everywhere
    arrays = {k: v + 0.2 * RNG.normal(size=v.shape) for k, v in pv.arrays().items()}
    obs = RNG.normal(size=(2, 5))
    names = list(arrays)

    def build(tensors):
        weights = dict(zip(names, tensors))
        h = agent.initial_hidden((2,))
        logits, value, h = agent.step(weights, Tensor(obs), h)
        logits, value, h = agent.step(weights, Tensor(obs), h)
        logp = ad.log_softmax(logits)
        return ad.take_last(logp, np.array([0, 1])).sum() + (value * 0.5).sum()

    leaves = [Tensor(arrays[n]) for n in names]
    got = gradients(build(leaves), leaves)
    want = finite_difference(lambda xs: float(build([Tensor(x_) for x_ in xs]).value),
                             [arrays[n] for n in names], eps=1e-5)
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=1e-4 * max(1.0, np.abs(w).max()))


def test_gru_hidden_reset_makes_first_step_independent():
    spec = nn.GruAgentSpec(obs_dim=4, num_actions=3, mlp_hidden=(4, 4), gru_dim=5)
    agent = nn.GruAgent(spec)
    pv = agent.init_params(np.random.default_rng(0))
    weights = {k: v + 0.1 * RNG.normal(size=v.shape) for k, v in pv.arrays().items()}
    obs = RNG.normal(size=(1, 4))
    # fresh episode
    logits_fresh, _, _ = agent.step(weights, obs, agent.initial_hidden((1,)))
    # after a long previous episode, reset the hidden state
    h = agent.initial_hidden((1,))
    for _ in range(10):
        _, _, h = agent.step(weights, RNG.normal(size=(1, 4)), h)
    logits_reset, _, _ = agent.step(weights, obs, agent.initial_hidden((1,)))
    assert np.allclose(logits_fresh, logits_reset, atol=0.0)


def test_stacked_parameters_match_per_row_forward():
    spec = nn.GruAgentSpec(obs_dim=4, num_actions=3, mlp_hidden=(4, 4), gru_dim=5)
    agent = nn.GruAgent(spec)
    pvs = [agent.init_params(np.random.default_rng(i)) for i in range(3)]
    pvs = [ParameterVector({k: v + 0.3 * np.random.default_rng(77 + i).normal(size=v.shape)
                            for k, v in pv.arrays().items()})
           for i, pv in enumerate(pvs)]
    stacked = nn.stack_parameters(pvs)
    obs = RNG.normal(size=(3, 2, 4))  # 3 episodes x 2 rows
    h = agent.initial_hidden((3, 2))
    logits, value, _ = agent.step(stacked, obs, h)
    for i, pv in enumerate(pvs):
        li, vi, _ = agent.step(pv.arrays(), obs[i], agent.initial_hidden((2,)))
        assert np.allclose(logits[i], li, atol=1e-12)
        assert np.allclose(value[i], vi, atol=1e-12)


# -- losses ---------------------------------------------------------------------


def test_huber_value_loss_cases():
    assert nn.huber_value_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert nn.huber_value_loss(np.array([0.5]), np.array([0.0]), 1.0) == pytest.approx(0.125)
    assert nn.huber_value_loss(np.array([3.0]), np.array([0.0]), 1.0) == pytest.approx(2.5)


def test_entropy_bonus_cases():
    assert nn.entropy_bonus(np.ones(4) / 4, 1.0) == pytest.approx(np.log(4))
    assert nn.entropy_bonus(np.array([1.0, 0.0, 0.0]), 1.0) == pytest.approx(0.0)
    assert nn.entropy_bonus(RNG.dirichlet(np.ones(5)), 0.0) == 0.0


# -- optimizers --------------------------------------------------------------------


def test_sgd_zero_gradient_leaves_params():
    params = ParameterVector({"w": np.array([1.0, -2.0])})
    opt = nn.make_optimizer("sgd", 0.5)
    out = nn.optimizer_step(opt, params, {"w": np.zeros(2)})
    assert np.allclose(out["w"], params["w"])


def test_sgd_single_ascent_step():
    params = ParameterVector({"w": np.zeros(1)})
    opt = nn.make_optimizer("sgd", 1.0)
    out = nn.optimizer_step(opt, params, {"w": np.ones(1)})
    assert np.allclose(out["w"], [1.0])


def test_adam_first_step_magnitude_is_lr():
    # first-step bias correction makes the update exactly lr * sign(g)
    for c in (0.3, 5.0):
        params = ParameterVector({"w": np.zeros(3)})
        opt = nn.make_optimizer("adam", 1e-3)
        out = nn.optimizer_step(opt, params, {"w": np.full(3, c)})
        assert np.allclose(out["w"], 1e-3, rtol=1e-6)


def test_optimizer_shape_mismatch_raises():
    params = ParameterVector({"w": np.zeros(3)})
    opt = nn.make_optimizer("sgd", 0.1)
    with pytest.raises(ConfigError):
        nn.optimizer_step(opt, params, {"w": np.zeros(4)})


# -- parameter vector utilities -------------------------------------------------------


def test_add_gaussian_noise_sigma_zero_is_identity():
    pv = ParameterVector({"a": RNG.normal(size=(3, 3))})
    out = add_gaussian_noise(pv, 0.0, 0)
    assert out.allclose(pv)
    assert out is not pv


def test_add_gaussian_noise_std_matches_request():
    pv = ParameterVector({"a": np.zeros(10 ** 6)})
    out = add_gaussian_noise(pv, 0.1, np.random.default_rng(5))
    std = out["a"].std()
    assert 0.099 < std < 0.101


def test_add_gaussian_noise_same_seed_identical():
    pv = ParameterVector({"a": RNG.normal(size=50)})
    out1 = add_gaussian_noise(pv, 0.2, 123)
    out2 = add_gaussian_noise(pv, 0.2, 123)
    assert out1.allclose(out2)


def test_add_gaussian_noise_negative_sigma_rejected():
    with pytest.raises(ConfigError):
        add_gaussian_noise(ParameterVector({"a": np.zeros(2)}), -0.1, 0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    pv = ParameterVector({
        "w0": RNG.normal(size=(4, 3)),
        "b0": RNG.normal(size=3),
        "scalar": np.array(0.1234567890123456789),
    })
    path = tmp_path / "agent.ckpt"
    save_checkpoint(path, pv, meta={"kind": "test"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "test"}
    assert loaded.names() == pv.names()
    for name in pv.names():
        assert loaded[name].tobytes() == pv[name].tobytes()  # bit-exact
    export_debug_json(tmp_path / "agent.json", pv)
    assert (tmp_path / "agent.json").exists()


def test_corrupt_checkpoint_raises_config_error(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(ConfigError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(b"BRSCKPT1" + (999).to_bytes(4, "little") + b"xx")
    with pytest.raises(ConfigError):
        load_checkpoint(path)
