"""Training pipeline and robustness protocols with CSV reports."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckptmod
from . import config as cfgmod
from . import reference as refmod
from .controller import compose_action
from .env import RUNNING, TIME_LIMIT, BipedEnv, DoubleIntegratorEnv
from .ppo import IterationMetrics, Trainer
from .sim import PushEvent, Terrain, terrain_height

log = logging.getLogger(__name__)

REPORT_FIELDS = ("kind", "param", "value", "episode", "survived", "steps", "total_reward", "cause",
                 "seed", "config_digest", "checkpoint_id", "sim_rate_hz")


# ---------------------------------------------------------------------------
# environments


@dataclass
class BipedEnvFactory:
    """Picklable constructor for walker environments (one per worker)."""

    model: object
    motion: refmod.ReferenceMotion
    config: object

    def __call__(self) -> BipedEnv:
        return BipedEnv(self.model, self.motion, self.config)


@dataclass
class TrackingEnvFactory:
    config: object

    def __call__(self) -> DoubleIntegratorEnv:
        return DoubleIntegratorEnv(self.config)


def env_factory(cfg: cfgmod.Config, motion=None, evaluation: bool = False, **overrides):
    if cfg["train.task"] == "tracking":
        tc = cfgmod.tracking_config(cfg)
        if evaluation:
            tc.dt = cfg["env.eval_dt"]
        return TrackingEnvFactory(tc)
    model = cfgmod.robot_model(cfg)
    motion = cfgmod.reference_motion(cfg, model) if motion is None else motion
    return BipedEnvFactory(model, motion, cfgmod.env_config(cfg, evaluation, **overrides))


# ---------------------------------------------------------------------------
# training


def _write_normalizer(path: Path, normalizer):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "mean", "std"])
        for i, (m, s) in enumerate(zip(normalizer.mean, normalizer.std)):
            w.writerow([i, repr(float(m)), repr(float(s))])


def _checkpoint(trainer: Trainer, cfg: cfgmod.Config, reference_csv: str) -> ckptmod.Checkpoint:
    return ckptmod.Checkpoint(trainer.agent, trainer.actor_opt, trainer.critic_opt, trainer.iteration,
                              cfg.text(), reference_csv)


def run_training(cfg: cfgmod.Config, out_dir, workers: int = 1, deterministic: bool = False,
                 progress=None) -> list[IterationMetrics]:
    """Fit the normalizer, train ``train.iterations`` iterations and write artifacts to ``out_dir``.

    Artifacts: ``config.txt``, ``reference.csv`` (walker task), ``normalizer.csv``,
    ``metrics.csv``, ``checkpoint_XXXX.bin`` every ``train.checkpoint_every``
    iterations and ``checkpoint.bin`` for the final state.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if deterministic:
        workers = 1
    factory = env_factory(cfg)
    reference_csv = refmod.dumps(factory.motion) if isinstance(factory, BipedEnvFactory) else ""
    tcfg = cfgmod.train_config(cfg, workers)
    trainer = Trainer(factory, tcfg)
    trainer.deterministic_timing = deterministic
    (out / "config.txt").write_text(cfg.text())
    if reference_csv:
        (out / "reference.csv").write_text(reference_csv)
    trainer.fit_normalizer()
    _write_normalizer(out / "normalizer.csv", trainer.agent.normalizer)
    ckptmod.save(_checkpoint(trainer, cfg, reference_csv), out / "checkpoint_0000.bin")

    history = []
    every = cfg["train.checkpoint_every"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IterationMetrics.CSV_FIELDS)
        for _ in range(cfg["train.iterations"]):
            m = trainer.train_iteration()
            history.append(m)
            w.writerow(m.csv_row())
            fh.flush()
            if progress is not None:
                progress(m)
            if trainer.iteration % every == 0:
                ckptmod.save(_checkpoint(trainer, cfg, reference_csv),
                             out / f"checkpoint_{trainer.iteration:04d}.bin")
    ckptmod.save(_checkpoint(trainer, cfg, reference_csv), out / "checkpoint.bin")
    return history


# ---------------------------------------------------------------------------
# reports


@dataclass
class EpisodeResult:
    survived: bool
    steps: int
    total_reward: float
    cause: str
    actions: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class ExperimentReport:
    kind: str
    param: str
    seed: int
    config_digest: str
    checkpoint_id: str
    sim_rate_hz: float
    rows: list[tuple[object, int, EpisodeResult]] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def values(self) -> list:
        seen = []
        for v, _, _ in self.rows:
            if v not in seen:
                seen.append(v)
        return seen

    def episodes(self, value) -> list[EpisodeResult]:
        return [r for v, _, r in self.rows if v == value]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for v, k, r in self.rows:
            w.writerow([self.kind, self.param, v, k, int(r.survived), r.steps, repr(r.total_reward),
                        r.cause, self.seed, self.config_digest, self.checkpoint_id, self.sim_rate_hz])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"experiment: {self.kind}", f"seed: {self.seed}",
                 f"config digest: {self.config_digest}", f"checkpoint: {self.checkpoint_id}",
                 f"simulation rate: {self.sim_rate_hz:g} Hz"]
        for v in self.values:
            eps = self.episodes(v)
            lines.append(f"{self.param}={v}: episodes={len(eps)} "
                         f"mean_reward={np.mean([e.total_reward for e in eps]):.3f} "
                         f"survival={np.mean([e.survived for e in eps]):.2f}")
        for k, v in self.notes.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str | None = None):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        (out / f"{stem}.csv").write_text(self.to_csv())
        (out / f"{stem}_summary.txt").write_text(self.summary())


# ---------------------------------------------------------------------------
# episodes


def run_episode(agent, env, rng: np.random.Generator, max_steps: int, setup=None,
                record_actions: bool = False) -> EpisodeResult:
    """One deterministic-policy episode from a reference-state initialization.

    ``setup(env, rng)`` runs right after reset (used to schedule pushes).
    """
    obs = env.reset(rng)
    if setup is not None:
        setup(env, rng)
    total, steps, cause = 0.0, 0, RUNNING
    actions = []
    for _ in range(max_steps):
        a = agent.mean_action(obs)
        if record_actions:
            actions.append(a)
        obs, r, cause = env.step(a)
        total += r
        steps += 1
        if cause != RUNNING:
            break
    if cause == RUNNING:
        cause = TIME_LIMIT
    return EpisodeResult(cause == TIME_LIMIT, steps, total, cause,
                         np.array(actions) if record_actions else None)


def _episodes(agent, factory, seed: int, episodes: int, max_steps: int, setup=None,
              record_actions: bool = False) -> list[EpisodeResult]:
    env = factory()
    return [run_episode(agent, env, np.random.default_rng([seed, k]), max_steps, setup,
                        record_actions) for k in range(episodes)]


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


@dataclass
class LoadedPolicy:
    agent: object
    config: cfgmod.Config
    motion: refmod.ReferenceMotion | None
    identity: str

    @classmethod
    def load(cls, path, overrides: cfgmod.Config | None = None, override_text: str = ""):
        ck = ckptmod.load(path)
        cfg = cfgmod.parse_config(ck.config_text)
        if override_text:
            cfg = cfgmod.parse_config(override_text, cfg)
        motion = refmod.loads(ck.reference_csv) if ck.reference_csv else None
        return cls(ck.agent, cfg, motion, ckptmod.identity(path)[:16])

    def factory(self, **overrides):
        return env_factory(self.config, self.motion, evaluation=True, **overrides)


def _report(kind, param, policy: LoadedPolicy, seed) -> ExperimentReport:
    return ExperimentReport(kind, param, seed, policy.config.digest, policy.identity,
                            1.0 / policy.config["env.eval_dt"])


def cmd_eval(policy: LoadedPolicy, episodes: int | None = None, seed: int | None = None,
             record_actions: bool = False) -> ExperimentReport:
    cfg = policy.config
    episodes = cfg["protocol.episodes"] if episodes is None else episodes
    seed = cfg["protocol.seed"] if seed is None else seed
    rep = _report("eval", "episodes", policy, seed)
    for k, r in enumerate(_episodes(policy.agent, policy.factory(), seed, episodes,
                                    cfg["train.max_steps"], record_actions=record_actions)):
        rep.rows.append(("all", k, r))
    return rep


def cmd_test_delay(policy: LoadedPolicy, delays=None, seed: int | None = None,
                   workers: int = 1) -> ExperimentReport:
    cfg = policy.config
    delays = cfg["protocol.delays"] if delays is None else tuple(delays)
    seed = cfg["protocol.seed"] if seed is None else seed
    cap = cfg["env.delay_capacity"]
    for d in delays:
        if d < 0 or d > cap:
            raise cfgmod.ConfigError(f"delay {d} outside [0, {cap}]", key="protocol.delays")
    rep = _report("delay", "delay_s", policy, seed)
    jobs = [(policy.agent, policy.factory(delay=float(d)), seed, cfg["protocol.episodes"],
             cfg["train.max_steps"]) for d in delays]
    for d, results in zip(delays, _map(_episodes, jobs, workers)):
        rep.rows += [(float(d), k, r) for k, r in enumerate(results)]
    return rep


def cmd_test_terrain(policy: LoadedPolicy, heights=None, seed: int | None = None,
                     workers: int = 1) -> ExperimentReport:
    cfg = policy.config
    heights = cfg["protocol.terrain_heights"] if heights is None else tuple(heights)
    if any(h < 0 for h in heights):
        raise cfgmod.ConfigError("terrain heights must be non-negative",
                                 key="protocol.terrain_heights")
    heights = sorted(float(h) for h in heights)
    seed = cfg["protocol.seed"] if seed is None else seed
    rep = _report("terrain", "h_m", policy, seed)
    jobs = [(policy.agent, policy.factory(terrain=Terrain.sinusoidal(h)), seed,
             cfg["protocol.episodes"], cfg["train.max_steps"]) for h in heights]
    largest, first_fail = None, None
    for h, results in zip(heights, _map(_episodes, jobs, workers)):
        rep.rows += [(h, k, r) for k, r in enumerate(results)]
        if all(r.survived for r in results):
            if first_fail is None:
                largest = h
        elif first_fail is None:
            first_fail = h
    rep.notes["largest_h_without_falls"] = largest
    rep.notes["first_failing_h"] = first_fail
    return rep


@dataclass
class PushSetup:
    """Schedules one pelvis push per episode at a fixed (or random) gait phase."""

    force: float
    duration: float
    earliest: float
    phase: float
    random_phase: bool = False

    def start_time(self, env: BipedEnv, rng: np.random.Generator) -> float:
        period = env.motion.stride_period
        phase = rng.uniform() if self.random_phase else self.phase
        lag = (phase * period - (env.ref_start + self.earliest)) % period
        return self.earliest + lag

    def __call__(self, env: BipedEnv, rng: np.random.Generator):
        env.pushes = []
        if self.force != 0.0:
            env.pushes = [PushEvent(np.array([self.force, 0.0]), self.start_time(env, rng),
                                    self.duration)]


def push_episode_steps(cfg: cfgmod.Config) -> int:
    """Episode length covering the latest possible push end plus the recovery window."""
    c = cfg
    latest_end = c["protocol.push_earliest"] + c["reference.stride_period"] + c["protocol.push_duration"]
    return int(math.ceil((latest_end + c["protocol.recovery_window"]) / c["env.control_dt"] - 1e-9))


def cmd_test_push(policy: LoadedPolicy, directions=None, magnitudes=None, seed: int | None = None,
                  workers: int = 1) -> ExperimentReport:
    """Recovery means no termination from reset until the recovery window after the push ends."""
    cfg = policy.config
    directions = cfg["protocol.push_directions"] if directions is None else tuple(directions)
    magnitudes = cfg["protocol.push_magnitudes"] if magnitudes is None else tuple(magnitudes)
    seed = cfg["protocol.seed"] if seed is None else seed
    steps = push_episode_steps(cfg)
    rep = _report("push", "push", policy, seed)
    labels, jobs = [], []
    for d in directions:
        for mag in magnitudes:
            setup = PushSetup(float(d) * float(mag), cfg["protocol.push_duration"],
                              cfg["protocol.push_earliest"], cfg["protocol.push_phase"],
                              cfg["protocol.push_random_phase"])
            labels.append(f"{'+' if d > 0 else '-'}x:{float(mag):g}N")
            jobs.append((policy.agent, policy.factory(max_steps=steps), seed,
                         cfg["protocol.episodes"], steps, setup))
    for label, results in zip(labels, _map(_episodes, jobs, workers)):
        rep.rows += [(label, k, r) for k, r in enumerate(results)]
    rep.notes["episode_steps"] = steps
    return rep


# ---------------------------------------------------------------------------
# interpolation


def lambda_schedule(t, rate: float = 0.625):
    """``max(0, 1 - rate * t)``, also clamped to at most 1."""
    return np.clip(1.0 - rate * np.asarray(t, dtype=float), 0.0, 1.0)


def speed_lambda(vx: float, v1: float, v2: float) -> float:
    """Weight on policy 1 from pelvis speed, linear between the nominal speeds and clamped."""
    if v1 == v2:
        raise ValueError("speed-adaptive blending needs distinct nominal speeds")
    return float(np.clip((v2 - vx) / (v2 - v1), 0.0, 1.0))


def interpolate_episode(p1: LoadedPolicy, p2: LoadedPolicy, mode: str, rng: np.random.Generator,
                        steps: int, rate: float = 0.625, lam: float = 1.0, factory=None):
    """Run one episode with the blended policy; returns the result and a (t, lambda, vx) trace."""
    ckptmod.check_compatible(ckptmod.Checkpoint(p1.agent, None, None, 0, "", ""),
                             ckptmod.Checkpoint(p2.agent, None, None, 0, "", ""))
    m1, m2 = p1.motion, p2.motion
    if m1 is None or m2 is None:
        raise ValueError("interpolation needs walker checkpoints with reference motions")
    if m1.n_frames != m2.n_frames or m1.stride_period != m2.stride_period:
        raise refmod.IncompatibleMotions("reference motions differ in stride structure")
    env = (p1.factory() if factory is None else factory)()
    dscale = env.config.delta_scale

    def weight():
        if mode == "fixed":
            return float(lam)
        if mode == "schedule":
            return float(lambda_schedule(env.state.t, rate))
        return speed_lambda(float(env.state.v[0]), m1.speed, m2.speed)

    env.reset(rng)
    l0 = weight()
    if l0 != 1.0:
        start = refmod.blend_frames(m1.frame(env.frame_index), m2.frame(env.frame_index), l0)
        env.state.q[:] = start.q
        env.state.q[1] += terrain_height(env.config.terrain, start.q[0])
        env.state.v[:] = start.v
        env.buffer.reset(env.state)
    total, cause, trace, actions = 0.0, RUNNING, [], []
    for _ in range(steps):
        lw = weight()
        f1, f2 = env.reference_frame(m1), env.reference_frame(m2)
        mu1 = p1.agent.mean_action(env.observation(f1))
        mu2 = p2.agent.mean_action(env.observation(f2))
        targets = lw * compose_action(mu1, f1, dscale) + (1.0 - lw) * compose_action(mu2, f2, dscale)
        actions.append(lw * mu1 + (1.0 - lw) * mu2)
        trace.append((env.state.t, lw, float(env.state.v[0])))
        env.advance(targets)
        frame = refmod.blend_frames(env.reference_frame(m1), env.reference_frame(m2), lw)
        r, cause = env.score(frame)
        total += r
        if cause != RUNNING:
            break
    if cause == RUNNING:
        cause = TIME_LIMIT
    res = EpisodeResult(cause == TIME_LIMIT, len(trace), total, cause, np.array(actions))
    return res, np.array(trace)


def cmd_interpolate(p1: LoadedPolicy, p2: LoadedPolicy, mode: str | None = None,
                    seed: int | None = None, episodes: int | None = None):
    cfg = p1.config
    mode = cfg["protocol.interp_mode"] if mode is None else mode
    seed = cfg["protocol.seed"] if seed is None else seed
    episodes = cfg["protocol.episodes"] if episodes is None else episodes
    rep = _report("interpolate", "mode", p1, seed)
    rep.checkpoint_id = f"{p1.identity}+{p2.identity}"
    traces = []
    for k in range(episodes):
        res, trace = interpolate_episode(p1, p2, mode, np.random.default_rng([seed, k]),
                                         cfg["protocol.interp_steps"], cfg["protocol.interp_rate"],
                                         cfg["protocol.interp_lambda"])
        rep.rows.append((mode, k, res))
        traces.append(trace)
    return rep, traces


def cmd_tvlqr(cfg: cfgmod.Config) -> ExperimentReport:
    """TVLQR baseline on the walker reference, reported like an evaluation."""
    from .tvlqr import biped_tvlqr_baseline

    model = cfgmod.robot_model(cfg)
    motion = cfgmod.reference_motion(cfg, model)
    n = 2 * len(model.system.coordinate_names)

    def diag(key, size):
        v = np.array(cfg[key])
        return np.diag(np.broadcast_to(v, (size,))) if v.size else None

    horizon = cfg["tvlqr.horizon"]
    ecfg = cfgmod.env_config(cfg, max_steps=horizon)
    res = biped_tvlqr_baseline(model, motion, horizon, diag("tvlqr.q_diag", n),
                               diag("tvlqr.r_diag", 6), diag("tvlqr.q_terminal_diag", n),
                               cfg["tvlqr.delta"], ecfg)
    rep = ExperimentReport("tvlqr", "baseline", cfg["protocol.seed"], cfg.digest, "none",
                           1.0 / cfg["env.dt"])
    rep.rows.append(("tvlqr", 0, EpisodeResult(res.cause == TIME_LIMIT, res.steps, res.total_reward,
                                               res.cause)))
    return rep
