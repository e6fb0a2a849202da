"""Imitation MDPs: the planar walker and a one-dimensional tracking task.

Both expose ``reset(rng) -> obs`` and ``step(action) -> (obs, reward, cause)``
where ``action`` is the raw policy output in [-1, 1] per actuator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import reference as refmod
from .controller import (ACT_DIM, OBS_DIM, DelayBuffer, PDGains, build_observation,
                         compose_action, run_pd)
from .reference import ReferenceFrame, ReferenceMotion
from .reward import RewardScales, RewardWeights, imitation_reward, tracking_term
from .sim import FLAT, PushEvent, RobotModel, SimState, Terrain, terrain_height

RUNNING = "running"
FELL = "fell"
LOW_REWARD = "low-reward"
TIME_LIMIT = "time-limit"
CAUSES = (RUNNING, FELL, LOW_REWARD, TIME_LIMIT)


@dataclass
class BipedEnvConfig:
    gains: PDGains = field(default_factory=PDGains.uniform)
    delta_scale: float = 0.3
    dt: float = 1e-3
    control_dt: float = 0.032
    delay: float = 0.0
    delay_capacity: float = 0.05
    terrain: Terrain = FLAT
    weights: RewardWeights = RewardWeights()
    scales: RewardScales = RewardScales()
    max_steps: int = 300
    z_min: float = 0.6
    z_max: float = 1.2
    reward_threshold: float = 0.6

    @property
    def substeps(self) -> int:
        n = round(self.control_dt / self.dt)
        if n < 1 or abs(n * self.dt - self.control_dt) > 1e-9:
            raise ValueError("control_dt must be an integer multiple of dt")
        return n


class BipedEnv:
    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, model: RobotModel, motion: ReferenceMotion, config: BipedEnvConfig | None = None):
        self.model = model
        self.motion = motion
        self.config = BipedEnvConfig() if config is None else config
        if self.config.delay > self.config.delay_capacity:
            raise ValueError("delay exceeds the delay buffer capacity")
        self.n_sub = self.config.substeps
        self.buffer = DelayBuffer(len(model.system.coordinate_names), self.config.delay_capacity,
                                  self.config.dt)
        self.pushes: list[PushEvent] = []
        self._no_push = np.zeros((self.n_sub, 2))
        self.state: SimState | None = None
        self.ref_start = 0.0
        self.frame_index = 0
        self.steps = 0

    # episode control ---------------------------------------------------------

    def reset(self, rng: np.random.Generator | None = None, frame_index: int | None = None):
        """Start from a reference frame drawn uniformly from the stored stride."""
        if frame_index is None:
            frame_index = int(rng.integers(self.motion.n_frames - 1))
        self.frame_index = frame_index
        frame = self.motion.frame(frame_index)
        q = frame.q.copy()
        q[1] += terrain_height(self.config.terrain, q[0])
        self.state = SimState(q, frame.v.copy(), 0.0)
        self.ref_start = float(self.motion.times[frame_index])
        self.steps = 0
        self.buffer.reset(self.state)
        return self.observation(self.reference_frame())

    @property
    def ref_time(self) -> float:
        return self.ref_start + self.state.t

    def reference_frame(self, motion: ReferenceMotion | None = None) -> ReferenceFrame:
        return refmod.sample(self.motion if motion is None else motion, self.ref_time)

    def observation(self, frame: ReferenceFrame) -> np.ndarray:
        snap = self.buffer.snapshot(self.config.delay) if self.config.delay else self.state
        return build_observation(snap.q, snap.v, frame)

    def _push_schedule(self) -> np.ndarray:
        if not self.pushes:
            return self._no_push
        f = np.zeros((self.n_sub, 2))
        t = self.state.t
        for k in range(self.n_sub):
            for p in self.pushes:
                if p.active(t):
                    f[k] += p.force
            t = t + self.config.dt
        return f

    def advance(self, targets):
        """Hold PD targets for one control period."""
        self.state = run_pd(self.model, self.state, self.buffer, targets, self.config.gains,
                            self.config.delay, self.n_sub, self.config.dt, self._push_schedule(),
                            self.config.terrain.amplitude)
        self.steps += 1

    def score(self, frame: ReferenceFrame) -> tuple[float, str]:
        c = self.config
        r = float(imitation_reward(self.state.q, frame.q, c.weights, c.scales))
        height = self.state.q[1] - terrain_height(c.terrain, self.state.q[0])
        if not c.z_min <= height <= c.z_max:
            return r, FELL
        if r < c.reward_threshold:
            return r, LOW_REWARD
        if self.steps >= c.max_steps:
            return r, TIME_LIMIT
        return r, RUNNING

    def step(self, action):
        action = np.clip(action, -1.0, 1.0)
        targets = compose_action(action, self.reference_frame(), self.config.delta_scale)
        self.advance(targets)
        frame = self.reference_frame()
        r, cause = self.score(frame)
        return self.observation(frame), r, cause


@dataclass
class TrackingTaskConfig:
    amplitude: float = 1.0
    period: float = 2.0
    mass: float = 1.0
    kp: float = 20.0
    kd: float = 4.0
    delta_scale: float = 1.0
    dt: float = 1e-3
    control_dt: float = 0.032
    max_steps: int = 300
    reward_threshold: float = 0.6


class DoubleIntegratorEnv:
    """Point mass on a line, PD-driven towards ``reference + delta_scale * action``.

    The reference is ``A sin(2 pi t / period)``. With the default gains the
    zero-correction policy lags badly, so a good score has to be learned.
    Reward ``exp(-(p - p_ref)^2)`` is the joint term of the imitation reward
    with weights (1, 0, 0, 0).
    """

    obs_dim = 4
    act_dim = 1

    def __init__(self, config: TrackingTaskConfig | None = None):
        self.config = TrackingTaskConfig() if config is None else config
        c = self.config
        self.n_sub = round(c.control_dt / c.dt)
        self.n_frames = int(math.ceil(c.period / c.control_dt - 1e-9))
        self.p = self.v = self.t = 0.0
        self.steps = 0
        self.frame_index = 0

    def reference(self, t: float) -> tuple[float, float]:
        c = self.config
        w = 2.0 * math.pi / c.period
        return c.amplitude * math.sin(w * t), c.amplitude * w * math.cos(w * t)

    def _obs(self):
        pr, vr = self.reference(self.t)
        return np.array([self.p, self.v, pr, vr])

    def reset(self, rng: np.random.Generator | None = None, frame_index: int | None = None):
        if frame_index is None:
            frame_index = int(rng.integers(self.n_frames))
        self.frame_index = frame_index
        self.t = frame_index * self.config.control_dt
        self.p, self.v = self.reference(self.t)
        self.steps = 0
        return self._obs()

    def step(self, action):
        c = self.config
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        target = self.reference(self.t)[0] + c.delta_scale * a
        for _ in range(self.n_sub):
            force = c.kp * (target - self.p) - c.kd * self.v
            self.v += c.dt * force / c.mass
            self.p += c.dt * self.v
            self.t += c.dt
        self.steps += 1
        r = float(tracking_term((self.p - self.reference(self.t)[0]) ** 2))
        if r < c.reward_threshold:
            cause = LOW_REWARD
        elif self.steps >= c.max_steps:
            cause = TIME_LIMIT
        else:
            cause = RUNNING
        return self._obs(), r, cause
