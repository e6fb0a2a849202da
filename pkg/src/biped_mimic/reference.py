"""Reference trajectories: generation, cyclic sampling, retiming and blending."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sim import COORDINATE_NAMES, NDOF, PELVIS_X, RobotModel

FRAME_DT = 0.032

_UNITS = {"pelvis_x": "m", "pelvis_z": "m"}
POSITION_COLUMNS = [f"{n}_{_UNITS.get(n, 'rad')}" for n in COORDINATE_NAMES]
VELOCITY_COLUMNS = [f"{n}_vel_{_UNITS.get(n, 'rad') + 'ps'}" for n in COORDINATE_NAMES]
CSV_COLUMNS = ["time_s"] + POSITION_COLUMNS + VELOCITY_COLUMNS


class KinematicsError(ValueError):
    """A foot target lies outside the leg's reachable workspace."""


class IncompatibleMotions(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceFrame:
    q: np.ndarray
    v: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.q[3:9]

    @property
    def passive(self) -> np.ndarray:
        return self.q[9:11]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.v])


@dataclass(frozen=True, eq=False)
class ReferenceMotion:
    """One stride of reference frames plus what is needed to repeat it.

    ``times`` starts at 0 and ends at ``stride_period``; the final frame is the
    first one shifted forward by ``stride_length``. Arrays are read-only.
    """

    times: np.ndarray
    q: np.ndarray
    v: np.ndarray
    frame_dt: float = FRAME_DT

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        q = np.array(self.q, dtype=float)
        v = np.array(self.v, dtype=float)
        if q.ndim != 2 or q.shape[1] != NDOF or q.shape != v.shape:
            raise ValueError(f"frames must have shape (n, {NDOF})")
        if len(times) != len(q) or len(times) < 2:
            raise ValueError("need at least two frames with one time stamp each")
        if times[0] != 0.0 or not np.all(np.diff(times) > 0):
            raise ValueError("frame times must start at 0 and increase strictly")
        if not (np.isfinite(q).all() and np.isfinite(v).all()):
            raise ValueError("frames must be finite")
        cyc = q[-1] - q[0]
        cyc[PELVIS_X] = 0.0
        if np.abs(cyc).max() > 1e-9 or np.abs(v[-1] - v[0]).max() > 1e-9:
            raise ValueError("first and last frame must agree except for pelvis x")
        for arr in (times, q, v):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def n_frames(self) -> int:
        return len(self.times)

    @property
    def stride_period(self) -> float:
        return float(self.times[-1])

    @property
    def stride_length(self) -> float:
        return float(self.q[-1, PELVIS_X] - self.q[0, PELVIS_X])

    @property
    def speed(self) -> float:
        return self.stride_length / self.stride_period

    def frame(self, i: int) -> ReferenceFrame:
        return ReferenceFrame(self.q[i].copy(), self.v[i].copy())

    def sample(self, t: float) -> ReferenceFrame:
        return sample(self, t)

    def __eq__(self, other):
        if not isinstance(other, ReferenceMotion):
            return NotImplemented
        return (np.array_equal(self.times, other.times) and np.array_equal(self.q, other.q)
                and np.array_equal(self.v, other.v))


def sample(motion: ReferenceMotion, t: float) -> ReferenceFrame:
    """Frame at time ``t`` on the cyclically extended motion.

    Poses repeat every stride; pelvis x accumulates one stride length per loop.
    Between stored frames the values are interpolated linearly.
    """
    if t < 0:
        raise ValueError("reference time must be non-negative")
    period = motion.stride_period
    cycle = math.floor(t / period)
    tau = t - cycle * period
    if tau >= period:
        cycle += 1
        tau -= period
    elif tau < 0.0:
        cycle -= 1
        tau += period
    times = motion.times
    i = int(np.searchsorted(times, tau, side="right")) - 1
    i = min(max(i, 0), len(times) - 2)
    w = (tau - times[i]) / (times[i + 1] - times[i])
    if w == 0.0:
        q = motion.q[i].copy()
        v = motion.v[i].copy()
    else:
        q = (1.0 - w) * motion.q[i] + w * motion.q[i + 1]
        v = (1.0 - w) * motion.v[i] + w * motion.v[i + 1]
    q[PELVIS_X] += cycle * motion.stride_length
    return ReferenceFrame(q, v)


def retime(motion: ReferenceMotion, speed_scale: float) -> ReferenceMotion:
    """Stretch pelvis x about its initial value; timing and joints stay put."""
    if speed_scale < 0:
        raise ValueError("speed_scale must be >= 0")
    if speed_scale == 1:
        return motion
    q = motion.q.copy()
    v = motion.v.copy()
    x0 = q[0, PELVIS_X]
    q[:, PELVIS_X] = x0 + speed_scale * (q[:, PELVIS_X] - x0)
    v[:, PELVIS_X] *= speed_scale
    return ReferenceMotion(motion.times, q, v, motion.frame_dt)


def blend(m1: ReferenceMotion, m2: ReferenceMotion, lam: float, t: float) -> ReferenceFrame:
    """Coordinate-wise ``lam * m1(t) + (1 - lam) * m2(t)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("blend weight must lie in [0, 1]")
    if m1.n_frames != m2.n_frames or m1.stride_period != m2.stride_period:
        raise IncompatibleMotions(
            f"stride structure differs: {m1.n_frames} frames/{m1.stride_period}s vs "
            f"{m2.n_frames} frames/{m2.stride_period}s")
    return blend_frames(sample(m1, t), sample(m2, t), lam)


def blend_frames(f1: ReferenceFrame, f2: ReferenceFrame, lam: float) -> ReferenceFrame:
    return ReferenceFrame(lam * f1.q + (1.0 - lam) * f2.q, lam * f1.v + (1.0 - lam) * f2.v)


# ---------------------------------------------------------------------------
# kinematic gait generator


def leg_ik(model: RobotModel, dx: float, dz: float) -> tuple[float, float]:
    """Absolute thigh angle and (non-positive) knee angle placing the ankle at (dx, dz) from the hip."""
    l1, l2 = model.thigh_length, model.shin_length
    dist = math.hypot(dx, dz)
    if dist > l1 + l2 or dist < abs(l1 - l2):
        raise KinematicsError(
            f"ankle target ({dx:.3f}, {dz:.3f}) is {dist:.3f} m from the hip; "
            f"reachable range is [{abs(l1 - l2):.3f}, {l1 + l2:.3f}] m")
    c = (dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    knee = -math.acos(min(1.0, max(-1.0, c)))
    psi = math.atan2(dx, -dz)
    beta = math.atan2(l2 * math.sin(knee), l1 + l2 * math.cos(knee))
    return psi - beta, knee


@dataclass(frozen=True)
class GaitSpec:
    stride_length: float = 0.5
    stride_period: float = 0.7
    step_height: float = 0.1
    pelvis_height: float | None = None
    model: RobotModel = RobotModel()

    def ankle_targets(self, t: float) -> tuple[float, np.ndarray]:
        """Pelvis x and the (left, right) ankle positions relative to the hip."""
        length, period = self.stride_length, self.stride_period
        cycle = math.floor(t / period)
        phase = t / period - cycle
        pelvis_x = length * t / period
        z_hip = self.model.nominal_height if self.pelvis_height is None else self.pelvis_height
        ankles = np.zeros((2, 2))
        for k, start in enumerate((0.0, 0.5)):
            # left swings in the first half of the stride, right in the second
            lift_off = (cycle + start - 0.25) * length
            s = phase - start
            if s < 0.0:
                x, lift = lift_off, 0.0
            elif s < 0.5:
                sigma = s / 0.5
                x = lift_off + length * 0.5 * (1.0 - math.cos(math.pi * sigma))
                lift = self.step_height * math.sin(math.pi * sigma)
            else:
                x, lift = lift_off + length, 0.0
            ankles[k] = (x - pelvis_x, self.model.foot_height + lift - z_hip)
        return pelvis_x, ankles

    def pose(self, t: float) -> np.ndarray:
        pelvis_x, ankles = self.ankle_targets(t)
        q = np.zeros(NDOF)
        q[0] = pelvis_x
        q[1] = self.model.nominal_height if self.pelvis_height is None else self.pelvis_height
        for k, (hip, knee, ankle) in enumerate(((3, 4, 5), (6, 7, 8))):
            thigh, bend = leg_ik(self.model, *ankles[k])
            q[hip] = thigh
            q[knee] = bend
            q[ankle] = -(thigh + bend)  # sole parallel to flat ground
        return q

    def velocity(self, t: float, h: float = 1e-6) -> np.ndarray:
        return (self.pose(t + h) - self.pose(t - h)) / (2.0 * h)


def generate_gait(stride_length: float = 0.5, stride_period: float = 0.7, step_height: float = 0.1,
                  model: RobotModel = RobotModel(), pelvis_height: float | None = None,
                  frame_dt: float = FRAME_DT) -> ReferenceMotion:
    """Two-step cyclic walking stride from swing-foot arcs and two-link IK.

    Frames are stored every ``frame_dt`` seconds plus one closing frame at
    ``stride_period``. The motion is kinematic only and need not be
    dynamically feasible.
    """
    if not stride_period > 0:
        raise ValueError("stride_period must be positive")
    if stride_length < 0:
        raise ValueError("stride_length must be >= 0")
    if not step_height > 0:
        raise ValueError("step_height must be positive")
    spec = GaitSpec(stride_length, stride_period, step_height, pelvis_height, model)
    n = int(math.ceil(stride_period / frame_dt - 1e-9))
    times = np.append(np.arange(n) * frame_dt, stride_period)
    q = np.array([spec.pose(t) for t in times[:-1]])
    v = np.array([spec.velocity(t) for t in times[:-1]])
    last_q = q[0].copy()
    last_q[PELVIS_X] += stride_length
    q = np.vstack([q, last_q])
    v = np.vstack([v, v[0]])
    return ReferenceMotion(times, q, v, frame_dt)


# ---------------------------------------------------------------------------
# file format


def dumps(motion: ReferenceMotion) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t, q, v in zip(motion.times, motion.q, motion.v):
        w.writerow([format(float(x), ".17g") for x in (t, *q, *v)])
    return buf.getvalue()


def loads(text: str, frame_dt: float = FRAME_DT) -> ReferenceMotion:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_COLUMNS:
        raise ValueError("reference CSV header does not match the expected columns")
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(CSV_COLUMNS):
        raise ValueError("reference CSV rows must have 23 columns")
    return ReferenceMotion(data[:, 0], data[:, 1:1 + NDOF], data[:, 1 + NDOF:], frame_dt)


def save(motion: ReferenceMotion, path) -> None:
    Path(path).write_text(dumps(motion))


def load(path) -> ReferenceMotion:
    return loads(Path(path).read_text())
