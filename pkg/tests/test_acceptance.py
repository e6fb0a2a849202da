"""Acceptance criteria, one test each. Every test prints a ``criterion N: PASS|FAIL`` line."""
import math
import time

import numpy as np
import pytest

from biped_mimic import config as cfgmod
from biped_mimic import experiments as ex
from biped_mimic.env import DoubleIntegratorEnv
from biped_mimic.neural import MLP, fit_normalizer, normalize
from biped_mimic.ppo import Trainer, TrainConfig, evaluate, ppo_surrogate, step_size, value_targets
from biped_mimic.reward import RewardWeights, imitation_reward
from biped_mimic.sim import SimState, step
from biped_mimic.tvlqr import (LinearizedDynamics, linearize, riccati_backward, rollout_cost)

from conftest import rk4_pendulum
from oracles import dense_qp, double_loop, fd_gradients, pendulum_energy, two_pass


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_01_gradient_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for sizes, output in (([42, 256, 256, 6], "tanh"), ([42, 256, 256, 1], "identity")):
        net = MLP.init(sizes, output, rng)
        x = rng.normal(size=42)
        up = rng.normal(size=sizes[-1])
        grads = net.gradient(x, up)
        counts = np.array([p.size for p in net.params], dtype=float)
        picks = rng.choice(len(net.params), size=500, p=counts / counts.sum())
        # make sure every layer is covered, not only the large weight matrices
        picks[:len(net.params)] = np.arange(len(net.params))
        idx = [(int(p), int(rng.integers(net.params[p].size))) for p in picks]
        analytic = np.array([grads[p].reshape(-1)[i] for p, i in idx])
        numeric = fd_gradients(net, x, up, idx, eps=1e-6)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        nz = scale > 0
        rel = np.zeros_like(scale)
        rel[nz] = np.abs(analytic - numeric)[nz] / scale[nz]
        assert np.all(numeric[~nz] == 0.0)
        worst = max(worst, rel.max())
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-5 and elapsed < 60,
            f"1000 parameters, max relative error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_ppo_formulas(verdict):
    rho = np.linspace(0.01, 3.0, 101)
    adv = np.linspace(-2.0, 2.0, 101)
    R, A = np.meshgrid(rho, adv, indexing="ij")
    got = ppo_surrogate(R, A, 0.2)
    brute = np.array([[min(r * a, min(max(r, 0.8), 1.2) * a) for a in adv] for r in rho])
    surr_err = np.abs(got - brute).max()
    rng = np.random.default_rng(102)
    vt_err = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 301))
        r = rng.uniform(size=T)
        gamma = float(rng.choice([0.98, 0.99, 1.0, rng.uniform(0.5, 1.0)]))
        b = float(rng.choice([0.0, rng.uniform(0, 50)]))
        oracle = double_loop(r, gamma, b)
        vt_err = max(vt_err, np.abs(value_targets(r, gamma, b) - oracle).max())
    verdict(2, surr_err <= 1e-12 and vt_err <= 1e-12,
            f"surrogate grid error {surr_err:.1e}, value target error {vt_err:.1e}")


def test_criterion_03_tvlqr_oracle(verdict):
    rng = np.random.default_rng(103)
    worst_cost = 0.0
    for _ in range(20):
        lin = LinearizedDynamics(np.eye(3) + 0.4 * rng.normal(size=(5, 3, 3)) / math.sqrt(3),
                                 rng.normal(size=(5, 3, 1)))
        M = rng.normal(size=(3, 3))
        Q = M @ M.T + 0.1 * np.eye(3)
        R = np.array([[rng.uniform(0.1, 2.0)]])
        dx0 = rng.normal(size=3)
        gains = riccati_backward(lin, Q, R)
        cost = rollout_cost(lin, gains, Q, R, None, dx0)[2]
        qp = dense_qp(lin, Q, R, Q, dx0)[2]
        worst_cost = max(worst_cost, abs(cost - qp) / abs(qp))
    worst_lin = 0.0
    for _ in range(20):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        Mx, Nu = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        A, B = linearize(lambda x, u: Mx @ x + Nu @ u, rng.normal(size=n), rng.normal(size=m))
        worst_lin = max(worst_lin, np.abs(A - Mx).max(), np.abs(B - Nu).max())
    verdict(3, worst_cost <= 1e-8 and worst_lin <= 1e-9,
            f"cost relative error {worst_cost:.1e}, linearization error {worst_lin:.1e}")


def test_criterion_04_reward_contract(verdict, motion):
    at_ref = max(abs(imitation_reward(motion.q[k], motion.q[k]) - 1.0) for k in range(motion.n_frames))
    rng = np.random.default_rng(104)
    # random finite states within +-3 of a reference pose in every coordinate
    ref = motion.q[rng.integers(motion.n_frames, size=1_000_000)]
    q = ref + rng.uniform(-3, 3, size=ref.shape)
    r = imitation_reward(q, ref)
    in_range = bool(np.all((r > 0) & (r <= 1)))
    groups = ([3, 4, 5, 6, 7, 8], [0, 1], [2], [9, 10])
    base = ref[:40_000] + rng.uniform(-0.5, 0.5, size=(40_000, 11))
    mono = True
    for g in groups:
        a = base.copy()
        c = rng.choice(g, size=len(a))
        extra = rng.uniform(0.01, 1.0, size=len(a))
        rows = np.arange(len(a))
        err = a[rows, c] - ref[rows, c]
        a[rows, c] += np.sign(err + (err == 0)) * extra
        mono &= bool(np.all(imitation_reward(a, ref[:40_000]) < imitation_reward(base, ref[:40_000])))
    w = imitation_reward(q[:1000], ref[:1000], RewardWeights(1, 0, 0, 0))
    weight_ok = bool(np.allclose(w, np.exp(-np.sum((q[:1000, 3:9] - ref[:1000, 3:9]) ** 2, 1)),
                                 rtol=1e-15, atol=0))
    verdict(4, at_ref <= 1e-12 and in_range and mono and weight_ok,
            f"at-reference error {at_ref:.1e}, range ok {in_range}, monotone {mono}, "
            f"weight contract {weight_ok}, min reward {r.min():.2e}")


def test_criterion_05_tracking_task_learns(verdict):
    start = time.perf_counter()
    cfg = TrainConfig()
    trainer = Trainer(DoubleIntegratorEnv, cfg)
    trainer.fit_normalizer()
    env = DoubleIntegratorEnv()
    best, reached = 0.0, None
    while trainer.iteration < 300:
        trainer.train_iteration()
        if trainer.iteration % 5 == 0:
            trajs = evaluate(trainer.agent, env, cfg, 10, seed=5)
            score = float(np.mean([t.total_reward / cfg.max_steps for t in trajs]))
            best = max(best, score)
            if score >= 0.9:
                reached = trainer.iteration
                break
    elapsed = time.perf_counter() - start
    verdict(5, reached is not None and elapsed <= 600,
            f"per-step reward {best:.3f} at iteration {reached}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_06_biped_learns(verdict):
    start = time.perf_counter()
    cfg = cfgmod.Config()
    factory = ex.env_factory(cfg)
    eval_factory = ex.env_factory(cfg, factory.motion, evaluation=True)
    trainer = Trainer(factory, cfgmod.train_config(cfg))
    trainer.fit_normalizer()
    reached, last = None, (0.0, 0)
    while trainer.iteration < 1000 and time.perf_counter() - start < 6 * 3600:
        trainer.train_iteration()
        if trainer.iteration % 10 == 0:
            res = ex._episodes(trainer.agent, eval_factory, 0, 10, 300)
            per_step = sum(r.total_reward for r in res) / (10 * 300)
            full = sum(r.steps == 300 and r.survived for r in res)
            last = (per_step, full)
            if per_step >= 0.7 and full >= 8:
                reached = trainer.iteration
                break
    elapsed = time.perf_counter() - start
    verdict(6, reached is not None,
            f"2 kHz evaluation per-step reward {last[0]:.3f}, {last[1]}/10 full episodes, "
            f"iteration {reached}, {elapsed:.0f}s")


def test_criterion_07_determinism(verdict, tmp_path):
    cfg = cfgmod.Config({"train.iterations": 5})
    for name in ("a", "b"):
        ex.run_training(cfg, tmp_path / name, deterministic=True)
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    same_ckpt = ((tmp_path / "a" / "checkpoint.bin").read_bytes()
                 == (tmp_path / "b" / "checkpoint.bin").read_bytes())
    verdict(7, a == b and a.count(b"\n") == 6 and same_ckpt,
            f"metrics identical {a == b}, final checkpoints identical {same_ckpt}")


def test_criterion_08_integrator(verdict, pendulum):
    s = SimState([0.5], [0.0])
    e0 = pendulum_energy(s)
    drift, theta_1s = 0.0, None
    for k in range(1, 10_001):
        s = step(pendulum, s, np.zeros(0), dt=1e-3)
        drift = max(drift, abs(pendulum_energy(s) - e0) / e0)
        if k == 1000:
            theta_1s = s.q[0]
    th_rk4, _ = rk4_pendulum(0.5, 0.0, 1.0, dt=1e-5)
    err = abs(theta_1s - th_rk4)
    verdict(8, drift <= 0.01 and err <= 1e-2,
            f"energy drift {100 * drift:.3f}% over 10 s, |theta - RK4| at 1 s {err:.2e} rad")


def _same(a, b):
    return [(r.steps, r.total_reward, r.cause) for r in a] == [(r.steps, r.total_reward, r.cause) for r in b]


def test_criterion_09_protocol_fidelity(verdict, runs, policy):
    ev = [r for _, _, r in ex.cmd_eval(policy).rows]
    delay = _same(ev, ex.cmd_test_delay(policy, [0.0]).episodes(0.0))
    terrain = _same(ev, ex.cmd_test_terrain(policy, [0.0]).episodes(0.0))
    steps = ex.push_episode_steps(policy.config)
    plain = ex._episodes(policy.agent, policy.factory(max_steps=steps), 0, 3, steps)
    push = ex.cmd_test_push(policy, [1.0, -1.0], [0.0])
    push_ok = _same(plain, push.episodes("+x:0N")) and _same(plain, push.episodes("-x:0N"))
    fast = ex.LoadedPolicy.load(runs / "fast" / "checkpoint.bin")
    interp_err = 0.0
    for lam, ref in ((1.0, policy), (0.0, fast)):
        expect = [r.actions for _, _, r in ex.cmd_eval(ref, record_actions=True).rows]
        for k, e in enumerate(expect):
            res, _ = ex.interpolate_episode(policy, fast, "fixed", np.random.default_rng([0, k]),
                                            300, lam=lam)
            interp_err = max(interp_err, np.inf if res.actions.shape != e.shape
                             else np.abs(res.actions - e).max())
    verdict(9, delay and terrain and push_ok and interp_err <= 1e-12,
            f"delay 0 {delay}, flat terrain {terrain}, zero push {push_ok}, "
            f"interpolation endpoint error {interp_err:.1e}")


def test_criterion_10_schedules(verdict):
    ks = range(1500)
    actor = all(step_size(1e-3, 1e-4, 0.99, k) == max(1e-3 * 0.99 ** k, 1e-4) for k in ks)
    critic = all(step_size(1e-2, 1e-3, 0.99, k) == max(1e-2 * 0.99 ** k, 1e-3) for k in ks)
    floors = step_size(1e-3, 1e-4, 0.99, 1499) == 1e-4 and step_size(1e-2, 1e-3, 0.99, 1499) == 1e-3
    trainer = Trainer(DoubleIntegratorEnv, TrainConfig(hidden_sizes=(8,), samples_per_iter=50,
                                                       batch_size=16, updates_per_iter=1))
    live = []
    for _ in range(3):
        m = trainer.train_iteration()
        live.append((m.actor_lr, m.critic_lr) == (1e-3 * 0.99 ** m.iteration, 1e-2 * 0.99 ** m.iteration))
    lam_zero = ex.lambda_schedule(1.6) == 0.0 and ex.lambda_schedule(1.6 - 1e-9) > 0.0
    lam_shape = bool(np.all(ex.lambda_schedule(np.linspace(0, 1.6, 17))
                            == np.maximum(0.0, 1 - 0.625 * np.linspace(0, 1.6, 17))))
    ok = actor and critic and floors and all(live) and lam_zero and lam_shape
    verdict(10, ok, f"actor {actor}, critic {critic}, floors {floors}, trainer {all(live)}, "
                    f"lambda(1.6)=0 {lam_zero}")


def test_criterion_11_normalizer(verdict):
    cfg = cfgmod.Config()
    trainer = Trainer(ex.env_factory(cfg), cfgmod.train_config(cfg))
    states = trainer.collect_states(50_000)
    n = fit_normalizer(states)
    mean, std = two_pass(states)
    live = std > 1e-6
    err_mean = np.abs(n.mean - mean).max()
    err_std = np.abs(n.std[live] - std[live]).max()
    z = normalize(n, states)
    zmean = np.abs(z.mean(axis=0)).max()
    verdict(11, len(states) == 50_000 and err_mean <= 1e-9 and err_std <= 1e-9 and zmean <= 1e-9,
            f"mean error {err_mean:.1e}, std error {err_std:.1e}, normalized mean {zmean:.1e}")
