"""Low-level PD control, action composition, observations and sensory delay.

Observation layout (42 values), stable across the package::

    [0:10]   robot positions without pelvis x  (pelvis z, pitch, 6 active, 2 passive)
    [10:21]  robot velocities                   (11)
    [21:31]  reference positions without pelvis x
    [31:42]  reference velocities
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .reference import ReferenceFrame
from .sim import NDOF, N_ACTIVE, SimState, SimulationDiverged, _step

ROBOT_OBS = 2 * NDOF - 1
OBS_DIM = 2 * ROBOT_OBS
ACT_DIM = N_ACTIVE
SNAPSHOT_EPS = 1e-9


class DelayUnderrun(LookupError):
    """The requested delay reaches further back than the buffered history."""


@dataclass(frozen=True)
class PDGains:
    P: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        P = np.broadcast_to(np.asarray(self.P, dtype=float), (N_ACTIVE,)).copy()
        D = np.broadcast_to(np.asarray(self.D, dtype=float), (N_ACTIVE,)).copy()
        if not (P > 0).all() or not (D >= 0).all():
            raise ValueError("PD gains need P > 0 and D >= 0")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "D", D)

    @classmethod
    def uniform(cls, p: float = 300.0, d: float = 10.0) -> "PDGains":
        return cls(np.full(N_ACTIVE, p), np.full(N_ACTIVE, d))


def pd_torque(gains: PDGains, target, state: SimState) -> np.ndarray:
    """``P (target - q_active) - D v_active``; clamping is left to the simulator."""
    target = np.asarray(target, dtype=float)
    if target.shape != (N_ACTIVE,):
        raise ValueError(f"expected {N_ACTIVE} target angles")
    return gains.P * (target - state.q[3:9]) - gains.D * state.v[3:9]


def compose_action(policy_output, ref_frame: ReferenceFrame, delta_scale: float) -> np.ndarray:
    """PD targets: reference active angles plus the scaled policy correction."""
    return ref_frame.q[3:9] + delta_scale * np.asarray(policy_output, dtype=float)


def robot_features(q, v) -> np.ndarray:
    return np.concatenate([q[1:], v])


def build_observation(q, v, ref_frame: ReferenceFrame) -> np.ndarray:
    return np.concatenate([q[1:], v, ref_frame.q[1:], ref_frame.v])


class DelayBuffer:
    """Ring of timestamped state snapshots, one per simulator step."""

    def __init__(self, n: int, capacity: float, dt: float):
        if capacity < 0 or not dt > 0:
            raise ValueError("capacity must be >= 0 and dt > 0")
        self.capacity = float(capacity)
        self.dt = float(dt)
        size = int(math.ceil(capacity / dt - 1e-9)) + 2
        self.times = np.full(size, -np.inf)
        self.qs = np.zeros((size, n))
        self.vs = np.zeros((size, n))
        # [index of newest snapshot, number of valid snapshots]
        self.meta = np.zeros(2, dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self.times)

    def __len__(self) -> int:
        return int(self.meta[1])

    def reset(self, state: SimState, prefill: bool = True):
        """Start a new episode; with ``prefill`` the initial state is taken as held since
        ``t - capacity`` so that delayed reads are valid from the first step."""
        self.meta[:] = 0
        if prefill:
            n = self.size
            for k in range(n - 1, -1, -1):
                self.push(state.t - k * self.dt, state.q, state.v)
        else:
            self.push(state.t, state.q, state.v)

    def push(self, t: float, q, v):
        head, count = self.meta
        if count and not t > self.times[head]:
            raise ValueError("snapshot timestamps must increase strictly")
        head = (head + 1) % self.size if count else 0
        self.times[head] = t
        self.qs[head] = q
        self.vs[head] = v
        self.meta[0] = head
        self.meta[1] = min(count + 1, self.size)

    @property
    def now(self) -> float:
        return float(self.times[self.meta[0]])

    def snapshot(self, delay: float) -> SimState:
        """Newest snapshot with timestamp <= now - delay."""
        if delay > self.capacity + SNAPSHOT_EPS:
            raise DelayUnderrun(f"delay {delay}s exceeds buffer capacity {self.capacity}s")
        k = _find_snapshot(self.times, self.meta, delay)
        if k < 0:
            raise DelayUnderrun(f"no snapshot {delay}s old in the buffered history")
        return SimState(self.qs[k].copy(), self.vs[k].copy(), float(self.times[k]))


@njit(cache=True)
def _find_snapshot(times, meta, delay):
    head = meta[0]
    count = meta[1]
    size = times.shape[0]
    cutoff = times[head] - delay + SNAPSHOT_EPS
    for back in range(count):
        k = (head - back) % size
        if times[k] <= cutoff:
            return k
    return -1


def observe(buffer: DelayBuffer, delay: float, ref_frame: ReferenceFrame) -> np.ndarray:
    """Observation from the (possibly delayed) measured state and a reference frame."""
    snap = buffer.snapshot(delay)
    return build_observation(snap.q, snap.v, ref_frame)


@njit(cache=True)
def _advance(q, v, t, targets, kp, kd, delay, n_sub, dt, pushes, h, buf_t, buf_q, buf_v, meta,
             angle_map, segs, segf, n_points, floating, root, mass, inertia, dof_f, act,
             act_lim, spr, spr_f, contacts, push_point, gravity, contact):
    """Run ``n_sub`` PD + physics steps with measurements read through the delay buffer.

    Returns ``(q, v, t, status)``; status 0 ok, 1 delay underrun, 2 non-finite state.
    """
    tau = np.zeros(targets.shape[0])
    size = buf_t.shape[0]
    for k in range(n_sub):
        m = _find_snapshot(buf_t, meta, delay)
        if m < 0:
            return q, v, t, 1
        for i in range(targets.shape[0]):
            j = act[i]
            tau[i] = kp[i] * (targets[i] - buf_q[m, j]) - kd[i] * buf_v[m, j]
        q, v = _step(q, v, tau, pushes[k], h, dt, angle_map, segs, segf, n_points, floating,
                     root, mass, inertia, dof_f, act, act_lim, spr, spr_f, contacts,
                     push_point, gravity, contact)
        t = t + dt
        for i in range(q.shape[0]):
            if not (math.isfinite(q[i]) and math.isfinite(v[i])):
                return q, v, t, 2
        head = (meta[0] + 1) % size
        buf_t[head] = t
        buf_q[head] = q
        buf_v[head] = v
        meta[0] = head
        if meta[1] < size:
            meta[1] += 1
    return q, v, t, 0


def run_pd(model, state: SimState, buffer: DelayBuffer, targets, gains: PDGains, delay: float,
           n_sub: int, dt: float, pushes: np.ndarray, terrain_amplitude: float) -> SimState:
    """Hold ``targets`` for ``n_sub`` simulator steps with a per-step PD loop."""
    if delay > buffer.capacity + SNAPSHOT_EPS:
        raise DelayUnderrun(f"delay {delay}s exceeds buffer capacity {buffer.capacity}s")
    sys = model.system
    q, v, t, status = _advance(state.q, state.v, state.t, np.asarray(targets, dtype=float),
                               gains.P, gains.D, float(delay), int(n_sub), float(dt), pushes,
                               float(terrain_amplitude), buffer.times, buffer.qs, buffer.vs,
                               buffer.meta, *sys.args)
    if status == 1:
        raise DelayUnderrun(f"no snapshot {delay}s old in the buffered history")
    if status == 2:
        bad = int(np.flatnonzero(~(np.isfinite(q) & np.isfinite(v)))[0])
        raise SimulationDiverged(sys.coordinate_names[bad], t)
    return SimState(q, v, t)
