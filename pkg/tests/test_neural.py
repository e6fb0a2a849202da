import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from biped_mimic import checkpoint as ckpt
from biped_mimic.neural import (MLP, AdamState, GaussianPolicy, Normalizer, ShapeError, adam_step,
                                fit_normalizer, normalize)
from biped_mimic.ppo import Agent

from oracles import fd_gradients, two_pass, welford

VAR = 0.018


def oracle_forward(net, x):
    """Independent forward pass with explicit loops over layers and units."""
    h = list(map(float, x))
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for i in range(w.shape[0]):
            z = math.fsum(w[i, j] * h[j] for j in range(len(h))) + b[i]
            out.append(max(z, 0.0) if k < len(net.weights) - 1 else z)
        h = out
    if net.output == "tanh":
        h = [math.tanh(z) for z in h]
    return np.array(h)


def test_zero_network_outputs_zero():
    net = MLP([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(net.forward(np.ones(3)), np.zeros(2))


def test_single_linear_layer():
    rng = np.random.default_rng(0)
    W, b, x = rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=5)
    net = MLP([W], [b])
    assert np.allclose(net.forward(x), W @ x + b, atol=1e-15)


def test_forward_matches_oracle():
    rng = np.random.default_rng(1)
    net = MLP.init([43, 256, 256, 6], "tanh", rng)
    x = rng.normal(size=43)
    assert np.allclose(net.forward(x), oracle_forward(net, x), atol=1e-12)


def test_batched_forward_matches_rows():
    rng = np.random.default_rng(2)
    net = MLP.init([5, 7, 3], "identity", rng)
    X = rng.normal(size=(4, 5))
    assert np.allclose(net.forward(X), np.array([net.forward(x) for x in X]), atol=1e-14)


def test_shape_errors():
    net = MLP.init([4, 3, 2])
    with pytest.raises(ShapeError):
        net.forward(np.ones(5))
    with pytest.raises(ShapeError):
        MLP([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ShapeError):
        net.gradient(np.ones(4), np.ones(3))
    with pytest.raises(ValueError):
        MLP.init([2, 2], "sigmoid")


def test_init_bounds():
    net = MLP.init([42, 256, 6], "identity", np.random.default_rng(3))
    assert np.abs(net.weights[0]).max() <= 1 / math.sqrt(42)
    assert np.abs(net.weights[1]).max() <= 1 / 16


def test_zero_upstream_zero_gradient():
    net = MLP.init([5, 8, 3], "tanh", np.random.default_rng(4))
    for g in net.gradient(np.ones(5), np.zeros(3)):
        assert not g.any()


def test_scalar_layer_closed_form():
    w, b, x = 0.7, -0.2, 1.5
    net = MLP([np.array([[w]])], [np.array([b])], "tanh")
    gw, gb = net.gradient(np.array([x]), np.array([1.0]))
    dz = 1 - math.tanh(w * x + b) ** 2
    assert gw[0, 0] == pytest.approx(dz * x, rel=1e-14)
    assert gb[0] == pytest.approx(dz, rel=1e-14)


@pytest.mark.parametrize("output", ["tanh", "identity"])
def test_gradients_match_finite_differences(output):
    rng = np.random.default_rng(5)
    net = MLP.init([12, 32, 32, 3], output, rng)
    x, up = rng.normal(size=12), rng.normal(size=3)
    grads = net.gradient(x, up)
    idx = [(p, int(rng.integers(net.params[p].size))) for p in rng.integers(len(net.params), size=200)]
    analytic = np.array([grads[p].reshape(-1)[i] for p, i in idx])
    numeric = fd_gradients(net, x, up, idx)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    assert rel.max() <= 1e-5


def test_batched_gradient_is_sum_of_rows():
    rng = np.random.default_rng(6)
    net = MLP.init([4, 6, 2], "tanh", rng)
    X, U = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    total = net.gradient(X, U)
    rows = [net.gradient(x, u) for x, u in zip(X, U)]
    for k, g in enumerate(total):
        assert np.allclose(g, sum(r[k] for r in rows), atol=1e-14)


@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6))
def test_actor_outputs_strictly_inside_unit_box(x):
    net = MLP.init([6, 16, 4], "tanh", np.random.default_rng(7))
    net.weights[-1] *= 1e3
    y = net.forward(np.array(x))
    assert np.all(np.abs(y) < 1.0)


def test_log_prob_at_mean():
    rng = np.random.default_rng(8)
    pol = GaussianPolicy(MLP.init([5, 8, 6], "tanh", rng), VAR)
    obs = rng.normal(size=5)
    mu = pol.mean(obs)
    oracle = sum(norm.logpdf(m, loc=m, scale=math.sqrt(VAR)) for m in mu)
    assert pol.log_prob(obs, mu) == pytest.approx(oracle, rel=1e-12)
    assert pol.log_prob(obs, mu) == pytest.approx(6 * (-0.5 * math.log(2 * math.pi * VAR)), rel=1e-12)


def test_log_prob_symmetry_and_one_sigma():
    rng = np.random.default_rng(9)
    pol = GaussianPolicy(MLP.init([5, 8, 6], "tanh", rng), VAR)
    obs = rng.normal(size=5)
    mu = pol.mean(obs)
    d = rng.normal(size=6)
    assert pol.log_prob(obs, mu + d) == pytest.approx(pol.log_prob(obs, mu - d), rel=1e-13)
    e = np.zeros(6)
    e[2] = math.sqrt(VAR)
    assert pol.log_prob(obs, mu + e) == pytest.approx(pol.log_prob(obs, mu) - 0.5, rel=1e-13)
    a = mu + d * 0.1
    oracle = sum(norm.logpdf(ai, loc=mi, scale=math.sqrt(VAR)) for ai, mi in zip(a, mu))
    assert pol.log_prob(obs, a) == pytest.approx(oracle, rel=1e-12)


def test_sample_action_modes():
    rng = np.random.default_rng(10)
    pol = GaussianPolicy(MLP.init([5, 8, 6], "tanh", rng), VAR)
    obs = rng.normal(size=5)
    assert np.array_equal(pol.sample_action(obs, rng, deterministic=True), pol.mean(obs))
    a = pol.sample_action(obs, np.random.default_rng(1))
    b = pol.sample_action(obs, np.random.default_rng(1))
    assert np.array_equal(a, b)


def test_sample_variance_monte_carlo():
    rng = np.random.default_rng(11)
    pol = GaussianPolicy(MLP.init([3, 4, 6], "tanh", rng), VAR)
    obs = np.ones(3)
    mu = pol.mean(obs)
    draws = mu + pol.std * rng.standard_normal((1_000_000, 6))
    assert np.all(np.abs(draws.var(axis=0) / VAR - 1) < 0.01)
    one = np.array([pol.sample_action(obs, rng) for _ in range(2000)])
    assert np.all(np.abs(one.mean(axis=0) - mu) < 5 * pol.std / math.sqrt(2000))


def test_policy_variance_validation():
    with pytest.raises(ValueError):
        GaussianPolicy(MLP.init([2, 2]), 0.0)


def test_normalizer_two_point():
    n = fit_normalizer(np.array([[0.0, 5.0], [2.0, 5.0]]))
    assert n.mean[0] == 1.0 and n.std[0] == 1.0
    assert normalize(n, np.array([1.0, 5.0]))[0] == 0.0
    assert n.std[1] == 1e-6
    assert normalize(n, np.array([1.0, 5.0]))[1] == 0.0


def test_normalizer_errors():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((1, 3)))


def test_normalizer_matches_streaming_oracle():
    rng = np.random.default_rng(12)
    x = rng.normal(3.0, 2.0, size=(50_000, 7)) * np.arange(1, 8)
    n = fit_normalizer(x)
    mean, std = welford(x)
    assert np.allclose(n.mean, mean, rtol=1e-9, atol=1e-9)
    assert np.allclose(n.std, std, rtol=1e-9, atol=1e-9)
    mean2, std2 = two_pass(x)
    assert np.allclose(n.mean, mean2, rtol=1e-9, atol=1e-9)
    assert np.allclose(n.std, std2, rtol=1e-9, atol=1e-9)
    z = normalize(n, x)
    assert np.abs(z.mean(axis=0)).max() <= 1e-9
    assert np.abs(z.std(axis=0) - 1).max() <= 1e-6


def test_adam_zero_gradient_fixed_point():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.for_params(p, 0.1)
    adam_step(st_, p, [np.zeros(2)])
    assert np.array_equal(p[0], [1.0, -2.0]) and st_.t == 1


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    p = [np.zeros(3)]
    adam_step(AdamState.for_params(p, 0.01), p, [g])
    assert np.allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)


def scripted_adam(x0, target, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, trace = x0.copy(), np.zeros_like(x0), np.zeros_like(x0), []
    for t in range(1, steps + 1):
        g = 2 * (x - target)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(x.copy())
    return trace


def test_adam_quadratic_bowl_against_oracle_trace():
    target = np.array([1.0, -3.0, 0.5])
    x0 = np.array([4.0, 2.0, -1.0])
    oracle = scripted_adam(x0, target, 0.05, 100)
    p = [x0.copy()]
    st_ = AdamState.for_params(p, 0.05)
    dist = []
    for k in range(100):
        adam_step(st_, p, [2 * (p[0] - target)])
        assert np.allclose(p[0], oracle[k], atol=1e-12)
        dist.append(np.linalg.norm(p[0] - target))
    assert np.all(np.diff(dist) < 0)


def test_adam_shape_errors():
    p = [np.zeros(2)]
    with pytest.raises(ShapeError):
        adam_step(AdamState.for_params(p, 0.1), p, [np.zeros(3)])
    with pytest.raises(ShapeError):
        adam_step(AdamState.for_params(p, 0.1), p, [])


def test_checkpoint_round_trip_is_bit_exact():
    rng = np.random.default_rng(13)
    actor = MLP.init([42, 256, 256, 6], "tanh", rng)
    critic = MLP.init([42, 256, 256, 1], "identity", rng)
    normz = Normalizer(rng.normal(size=42), rng.uniform(0.1, 2, size=42), 50_000)
    opt = AdamState.for_params(actor.params, 1e-3)
    adam_step(opt, actor.params, [rng.normal(size=p.shape) for p in actor.params])
    c = ckpt.Checkpoint(Agent(actor, critic, normz, VAR), opt, None, 7, "a = 1\n", "")
    back = ckpt.loads(ckpt.dumps(c))
    x = rng.normal(size=(5, 42))
    assert np.array_equal(back.agent.actor.forward(x), actor.forward(x))
    assert np.array_equal(back.agent.critic.forward(x), critic.forward(x))
    assert np.array_equal(back.agent.normalizer.mean, normz.mean)
    assert np.array_equal(back.agent.normalizer.std, normz.std)
    assert back.agent.normalizer.count == 50_000
    assert back.actor_opt.t == 1 and back.critic_opt is None
    for a, b in zip(back.actor_opt.m + back.actor_opt.v, opt.m + opt.v):
        assert np.array_equal(a, b)
    assert back.iteration == 7 and back.config_text == "a = 1\n"
