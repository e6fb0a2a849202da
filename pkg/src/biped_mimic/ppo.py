"""Clipped-surrogate PPO with reference-state initialization and early termination."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .env import CAUSES, FELL, LOW_REWARD, RUNNING, TIME_LIMIT
from .neural import (MLP, AdamState, GaussianPolicy, Normalizer, adam_step, fit_normalizer,
                     normalize)
from .sim import SimulationDiverged

log = logging.getLogger(__name__)

# SeedSequence stream tags
_ROLLOUT, _NORMALIZER, _MINIBATCH, _INIT = 1, 2, 3, 4


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.98
    clip_epsilon: float = 0.2
    max_steps: int = 300
    samples_per_iter: int = 3000
    batch_size: int = 128
    updates_per_iter: int = 64
    actor_lr: float = 1e-3
    actor_lr_floor: float = 1e-4
    critic_lr: float = 1e-2
    critic_lr_floor: float = 1e-3
    lr_decay_factor: float = 0.99
    exploration_var: float = 0.018
    hidden_sizes: tuple[int, ...] = (256, 256)
    normalizer_samples: int = 50_000
    normalizer_std_floor: float = 1e-6
    standardize_advantages: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        for name in ("max_steps", "samples_per_iter", "batch_size", "updates_per_iter",
                     "normalizer_samples", "workers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.actor_lr_floor < self.actor_lr and self.critic_lr_floor < self.critic_lr):
            raise ValueError("step-size floors must be below the initial step sizes")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


def step_size(initial: float, floor: float, factor: float, iteration: int) -> float:
    """Step size in effect during ``iteration`` (0-based): geometric decay with a floor."""
    return max(initial * factor ** iteration, floor)


# ---------------------------------------------------------------------------
# agent


@dataclass
class Agent:
    actor: MLP
    critic: MLP
    normalizer: Normalizer
    variance: float = 0.018

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, config: TrainConfig, normalizer: Normalizer | None = None):
        rng = np.random.default_rng([config.seed, _INIT])
        hidden = list(config.hidden_sizes)
        actor = MLP.init([obs_dim] + hidden + [act_dim], "tanh", rng)
        critic = MLP.init([obs_dim] + hidden + [1], "identity", rng)
        if normalizer is None:
            normalizer = Normalizer(np.zeros(obs_dim), np.ones(obs_dim), 0)
        return cls(actor, critic, normalizer, config.exploration_var)

    @property
    def policy(self) -> GaussianPolicy:
        return GaussianPolicy(self.actor, self.variance)

    def mean_action(self, obs) -> np.ndarray:
        return self.actor.forward(normalize(self.normalizer, obs))

    def value(self, obs):
        return self.critic.forward(normalize(self.normalizer, obs))[..., 0]

    def copy(self) -> "Agent":
        n = self.normalizer
        return Agent(self.actor.copy(), self.critic.copy(),
                     Normalizer(n.mean.copy(), n.std.copy(), n.count), self.variance)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    causes: list[str]
    final_obs: np.ndarray
    frame_index: int = 0
    failed: bool = False

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def cause(self) -> str:
        return self.causes[-1] if self.causes else RUNNING

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def rollout(agent: Agent, env, config: TrainConfig, rng: np.random.Generator,
            deterministic: bool = False, random_policy: bool = False) -> Trajectory:
    """Run one episode from a reference-state initialization until a done flag.

    ``random_policy`` draws actions uniformly from [-1, 1] (used for fitting
    the normalizer). Simulator divergence yields a trajectory with
    ``failed=True`` instead of raising.
    """
    obs = env.reset(rng)
    frame = env.frame_index
    policy = agent.policy
    o_list, a_list, lp_list, r_list, c_list = [], [], [], [], []
    try:
        for _ in range(config.max_steps):
            if random_policy:
                action = rng.uniform(-1.0, 1.0, env.act_dim)
                logp = 0.0
            else:
                mu = agent.mean_action(obs)
                action = mu if deterministic else mu + policy.std * rng.standard_normal(mu.shape)
                logp = float(policy.log_prob_from_mean(mu, action))
            next_obs, r, cause = env.step(action)
            o_list.append(obs)
            a_list.append(action)
            lp_list.append(logp)
            r_list.append(r)
            c_list.append(cause)
            obs = next_obs
            if cause != RUNNING:
                break
        else:
            c_list[-1] = TIME_LIMIT
    except SimulationDiverged as exc:
        log.warning("discarding diverged rollout (frame %d): %s", frame, exc)
        return Trajectory(np.zeros((0, env.obs_dim)), np.zeros((0, env.act_dim)), np.zeros(0),
                          np.zeros(0), [], obs, frame, failed=True)
    return Trajectory(np.array(o_list), np.array(a_list), np.array(lp_list), np.array(r_list),
                      c_list, obs, frame)


# ---------------------------------------------------------------------------
# estimators


def value_targets(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """Discounted reward-to-go; ``bootstrap`` is added to the final step's target."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + (gamma * acc if t < len(rewards) - 1 else acc)
        out[t] = acc
    return out


def compute_value_targets(traj: Trajectory, gamma: float, critic) -> np.ndarray:
    """Targets with a critic bootstrap only for time-limit truncation.

    ``critic`` maps a raw observation to a value. Failed episodes (fell,
    low-reward) get a zero bootstrap: their remaining rewards are zero.
    """
    if not len(traj):
        raise ValueError("empty trajectory")
    bootstrap = float(critic(traj.final_obs)) if traj.cause == TIME_LIMIT else 0.0
    return value_targets(traj.rewards, gamma, bootstrap)


def advantages(vhat, values, standardize: bool = False) -> np.ndarray:
    vhat = np.asarray(vhat, dtype=float)
    values = np.asarray(values, dtype=float)
    if vhat.shape != values.shape:
        raise ValueError(f"length mismatch: {vhat.shape} vs {values.shape}")
    adv = vhat - values
    if standardize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def ppo_surrogate(ratio, adv, eps: float = 0.2):
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def surrogate_ratio_grad(ratio, adv, eps: float = 0.2):
    """d surrogate / d ratio: the advantage where the unclipped branch is the minimum, else 0."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    unclipped = ratio * adv <= np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return np.where(unclipped, adv, 0.0)


def critic_loss(vhat, values) -> float:
    vhat = np.asarray(vhat, dtype=float)
    if not vhat.size:
        raise ValueError("empty batch")
    return float(np.mean((vhat - np.asarray(values, dtype=float)) ** 2))


def actor_update_grads(policy: GaussianPolicy, obs, actions, old_log_probs, adv, eps: float):
    """Loss ``-mean(surrogate)`` and its actor parameter gradients for one minibatch."""
    mu, cache = policy.actor.forward_cache(obs)
    logp = policy.log_prob_from_mean(mu, actions)
    ratio = np.exp(logp - old_log_probs)
    loss = -float(np.mean(ppo_surrogate(ratio, adv, eps)))
    d_logp = -surrogate_ratio_grad(ratio, adv, eps) * ratio / len(adv)
    upstream = d_logp[:, None] * (actions - mu) / policy.variance
    return loss, policy.actor.backward(cache, upstream)


def critic_update_grads(critic: MLP, obs, vhat):
    values, cache = critic.forward_cache(obs)
    err = vhat - values[:, 0]
    loss = float(np.mean(err ** 2))
    upstream = (-2.0 * err / len(err))[:, None]
    return loss, critic.backward(cache, upstream)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class IterationMetrics:
    iteration: int
    transitions: int
    episodes: int
    mean_return: float
    mean_episode_steps: float
    fraction_time_limit: float
    actor_loss: float
    critic_loss: float
    actor_lr: float
    critic_lr: float
    wall_seconds: float
    mean_step_reward: float = field(default=0.0, repr=False)

    CSV_FIELDS = ("iteration", "transitions", "episodes", "mean_return", "mean_episode_steps",
                  "fraction_time_limit", "actor_loss", "critic_loss", "actor_lr", "critic_lr",
                  "wall_seconds")

    def csv_row(self) -> list[str]:
        return [repr(getattr(self, f)) if isinstance(getattr(self, f), float) else str(getattr(self, f))
                for f in self.CSV_FIELDS]


_WORKER_ENVS: dict = {}


def _worker_rollouts(env_factory, agent, config, seeds):
    key = id(env_factory)
    env = _WORKER_ENVS.get(key)
    if env is None:
        env = _WORKER_ENVS[key] = env_factory()
    return [rollout(agent, env, config, np.random.default_rng(s)) for s in seeds]


class Trainer:
    """Owns the agent, optimizers and the iteration counter.

    ``env_factory`` builds a fresh environment; it must be picklable when
    ``config.workers > 1``. Episode ``k`` of iteration ``i`` always uses the
    seed ``(seed, i, k)``, and the kept episodes are the shortest prefix
    reaching ``samples_per_iter``, so results do not depend on the worker count.
    """

    def __init__(self, env_factory, config: TrainConfig, agent: Agent | None = None):
        self.env_factory = env_factory
        self.config = config
        self.env = env_factory()
        if agent is None:
            agent = Agent.init(self.env.obs_dim, self.env.act_dim, config)
        self.agent = agent
        self.actor_opt = AdamState.for_params(agent.actor.params, config.actor_lr)
        self.critic_opt = AdamState.for_params(agent.critic.params, config.critic_lr)
        self.iteration = 0
        self.deterministic_timing = False

    # schedule -----------------------------------------------------------------

    @property
    def actor_lr(self) -> float:
        c = self.config
        return step_size(c.actor_lr, c.actor_lr_floor, c.lr_decay_factor, self.iteration)

    @property
    def critic_lr(self) -> float:
        c = self.config
        return step_size(c.critic_lr, c.critic_lr_floor, c.lr_decay_factor, self.iteration)

    # normalizer ---------------------------------------------------------------

    def collect_states(self, n: int | None = None) -> np.ndarray:
        """Observations visited by a uniformly random policy from random reference poses."""
        n = self.config.normalizer_samples if n is None else n
        states: list[np.ndarray] = []
        k = 0
        while len(states) < n:
            rng = np.random.default_rng([self.config.seed, _NORMALIZER, k])
            traj = rollout(self.agent, self.env, self.config, rng, random_policy=True)
            states.extend(traj.obs)
            k += 1
        return np.array(states[:n])

    def fit_normalizer(self, n: int | None = None) -> Normalizer:
        self.agent.normalizer = fit_normalizer(self.collect_states(n), self.config.normalizer_std_floor)
        return self.agent.normalizer

    # iteration ----------------------------------------------------------------

    def _episode_seed(self, k: int):
        return [self.config.seed, _ROLLOUT, self.iteration, k]

    def collect(self) -> list[Trajectory]:
        cfg = self.config
        trajs: list[Trajectory] = []
        total = 0
        k = 0
        attempts_without_success = 0
        if cfg.workers == 1:
            while total < cfg.samples_per_iter:
                traj = rollout(self.agent, self.env, cfg, np.random.default_rng(self._episode_seed(k)))
                k += 1
                if traj.failed:
                    attempts_without_success += 1
                    if attempts_without_success > 100 and not trajs:
                        raise TrainingError("every rollout diverged")
                    continue
                trajs.append(traj)
                total += len(traj)
            return trajs
        snapshot = self.agent.copy()
        with ProcessPoolExecutor(cfg.workers) as pool:
            while total < cfg.samples_per_iter:
                wave = [[self._episode_seed(k + w)] for w in range(cfg.workers)]
                k += cfg.workers
                results = pool.map(_worker_rollouts, [self.env_factory] * cfg.workers,
                                   [snapshot] * cfg.workers, [cfg] * cfg.workers, wave)
                for traj in (t for batch in results for t in batch):
                    if total >= cfg.samples_per_iter:
                        break
                    if traj.failed:
                        attempts_without_success += 1
                        if attempts_without_success > 100 and not trajs:
                            raise TrainingError("every rollout diverged")
                        continue
                    trajs.append(traj)
                    total += len(traj)
        return trajs

    def train_iteration(self) -> IterationMetrics:
        cfg = self.config
        start = time.perf_counter()
        trajs = self.collect()
        if not trajs:
            raise TrainingError("no usable rollouts in this iteration")
        agent = self.agent
        obs = normalize(agent.normalizer, np.concatenate([t.obs for t in trajs]))
        actions = np.concatenate([t.actions for t in trajs])
        old_logp = np.concatenate([t.log_probs for t in trajs])
        vhat = np.concatenate([compute_value_targets(t, cfg.gamma, agent.value) for t in trajs])
        values = agent.critic.forward(obs)[:, 0]
        adv = advantages(vhat, values, cfg.standardize_advantages)

        actor_lr, critic_lr = self.actor_lr, self.critic_lr
        self.actor_opt.lr = actor_lr
        self.critic_opt.lr = critic_lr
        policy = agent.policy
        n = len(obs)
        rng = np.random.default_rng([cfg.seed, _MINIBATCH, self.iteration])
        perm = rng.permutation(n)
        pos = 0
        a_losses, c_losses = [], []
        for _ in range(cfg.updates_per_iter):
            if pos + cfg.batch_size > n:
                perm = rng.permutation(n)
                pos = 0
            idx = perm[pos:pos + cfg.batch_size]
            pos += cfg.batch_size
            a_loss, a_grads = actor_update_grads(policy, obs[idx], actions[idx], old_logp[idx],
                                                 adv[idx], cfg.clip_epsilon)
            adam_step(self.actor_opt, agent.actor.params, a_grads)
            c_loss, c_grads = critic_update_grads(agent.critic, obs[idx], vhat[idx])
            adam_step(self.critic_opt, agent.critic.params, c_grads)
            a_losses.append(a_loss)
            c_losses.append(c_loss)

        returns = np.array([t.total_reward for t in trajs])
        lengths = np.array([len(t) for t in trajs])
        metrics = IterationMetrics(
            iteration=self.iteration,
            transitions=int(lengths.sum()),
            episodes=len(trajs),
            mean_return=float(returns.mean()),
            mean_episode_steps=float(lengths.mean()),
            fraction_time_limit=float(np.mean([t.cause == TIME_LIMIT for t in trajs])),
            actor_loss=float(np.mean(a_losses)),
            critic_loss=float(np.mean(c_losses)),
            actor_lr=actor_lr,
            critic_lr=critic_lr,
            wall_seconds=0.0 if self.deterministic_timing else time.perf_counter() - start,
            mean_step_reward=float(returns.sum() / lengths.sum()),
        )
        self.iteration += 1
        return metrics


def evaluate(agent: Agent, env, config: TrainConfig, episodes: int, seed: int = 0,
             deterministic: bool = True) -> list[Trajectory]:
    """Episodes with seeds ``(seed, k)``; deterministic mode uses the actor mean."""
    return [rollout(agent, env, config, np.random.default_rng([seed, k]), deterministic)
            for k in range(episodes)]


__all__ = [
    "Agent", "CAUSES", "FELL", "IterationMetrics", "LOW_REWARD", "TIME_LIMIT", "TrainConfig",
    "Trainer", "TrainingError", "Trajectory", "advantages", "compute_value_targets",
    "critic_loss", "evaluate", "ppo_surrogate", "rollout", "step_size", "value_targets",
]
