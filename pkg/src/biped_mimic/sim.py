"""Planar articulated rigid-body simulation.

The simulator handles any planar kinematic tree whose bodies hang off a root
point: either a floating base (x, z as the first two coordinates) or a fixed
pivot. Body orientations are linear combinations of the generalized
coordinates, which makes the Jacobians and velocity-product terms closed form.

Equations of motion::

    M(q) qdd = sum_b m_b J_b^T (g - Jdot_b v) + tau_joint + sum_c J_c^T F_c + J_p^T F_push

with ``M = sum_b m_b J_b^T J_b + I_b a_b a_b^T + diag(armature)``. There is no
gyroscopic term in the plane. Integration is semi-implicit Euler.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numba import njit

GRAVITY = 9.81

# Generalized coordinate layout of the walker; reference frames use the same order.
COORDINATE_NAMES = (
    "pelvis_x",
    "pelvis_z",
    "pelvis_pitch",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_spring",
    "right_spring",
)
NDOF = len(COORDINATE_NAMES)
PELVIS_X, PELVIS_Z, PELVIS_PITCH = 0, 1, 2
ACTIVE = slice(3, 9)
PASSIVE = slice(9, 11)
N_ACTIVE = 6
N_PASSIVE = 2


class SimulationDiverged(FloatingPointError):
    """Raised when integration produces a non-finite coordinate."""

    def __init__(self, coordinate: str, t: float):
        super().__init__(f"simulation diverged at t={t:.6f}s: non-finite {coordinate}")
        self.coordinate = coordinate
        self.t = t


@dataclass(frozen=True)
class Terrain:
    kind: str = "flat"
    h: float = 0.0

    def __post_init__(self):
        if self.kind not in ("flat", "sinusoidal"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if not self.h >= 0:
            raise ValueError(f"terrain height must be >= 0, got {self.h}")

    @classmethod
    def sinusoidal(cls, h: float) -> "Terrain":
        return cls("sinusoidal", float(h))

    @property
    def amplitude(self) -> float:
        """Height ratio actually used by the kernel (0 for flat ground)."""
        return self.h if self.kind == "sinusoidal" else 0.0


FLAT = Terrain()


def terrain_height(terrain: Terrain, x):
    """Ground height ``z = h sin(x)``; zero everywhere for flat terrain."""
    if terrain.kind == "flat":
        return np.zeros_like(x, dtype=float) if np.ndim(x) else 0.0
    return terrain.h * np.sin(x)


@dataclass(frozen=True)
class PushEvent:
    force: tuple[float, float]
    start: float
    duration: float = 0.2

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("push duration must be positive")

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


def push_force(pushes: Sequence[PushEvent], t: float) -> np.ndarray:
    f = np.zeros(2)
    for p in pushes:
        if p.active(t):
            f += p.force
    return f


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact constants (normal spring-damper, Coulomb-clamped viscous friction)."""

    stiffness: float = 1e5
    damping: float = 1e3
    friction: float = 1.0
    tangential_damping: float = 1e3

    def as_array(self) -> np.ndarray:
        return np.array([self.stiffness, self.damping, self.friction, self.tangential_damping])


@dataclass
class SimState:
    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.q.shape != self.v.shape:
            raise ValueError(f"q and v shapes differ: {self.q.shape} vs {self.v.shape}")

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.v.copy(), self.t)


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _kinematics(q, v, angle_map, segs, segf, n_points, floating, root):
    n = q.shape[0]
    nb = angle_map.shape[0]
    phi = np.zeros(nb)
    omega = np.zeros(nb)
    for b in range(nb):
        for j in range(n):
            phi[b] += angle_map[b, j] * q[j]
            omega[b] += angle_map[b, j] * v[j]
    pos = np.zeros((n_points, 2))
    jac = np.zeros((n_points, 2, n))
    bias = np.zeros((n_points, 2))
    for p in range(n_points):
        if floating:
            pos[p, 0] = q[0]
            pos[p, 1] = q[1]
            jac[p, 0, 0] = 1.0
            jac[p, 1, 1] = 1.0
        else:
            pos[p, 0] = root[0]
            pos[p, 1] = root[1]
    for s in range(segs.shape[0]):
        p = segs[s, 0]
        b = segs[s, 1]
        length = segf[s, 0]
        ang = phi[b] + segf[s, 1]
        sn = math.sin(ang)
        cs = math.cos(ang)
        pos[p, 0] += length * sn
        pos[p, 1] -= length * cs
        for j in range(n):
            a = angle_map[b, j]
            if a != 0.0:
                jac[p, 0, j] += length * cs * a
                jac[p, 1, j] += length * sn * a
        w2 = omega[b] * omega[b]
        bias[p, 0] -= length * sn * w2
        bias[p, 1] += length * cs * w2
    vel = np.zeros((n_points, 2))
    for p in range(n_points):
        for j in range(n):
            vel[p, 0] += jac[p, 0, j] * v[j]
            vel[p, 1] += jac[p, 1, j] * v[j]
    return pos, vel, jac, bias


@njit(cache=True)
def _point_contact(px, pz, vx, vz, h, contact):
    ground = h * math.sin(px)
    pen = ground - pz
    if pen <= 0.0:
        return 0.0, 0.0
    slope = h * math.cos(px)
    norm = math.sqrt(1.0 + slope * slope)
    nx = -slope / norm
    nz = 1.0 / norm
    tx = 1.0 / norm
    tz = slope / norm
    depth = pen / norm
    vn = vx * nx + vz * nz
    vt = vx * tx + vz * tz
    fn = contact[0] * depth - contact[1] * vn
    if fn <= 0.0:
        return 0.0, 0.0
    ft = -contact[3] * vt
    limit = contact[2] * fn
    if ft > limit:
        ft = limit
    elif ft < -limit:
        ft = -limit
    return fn * nx + ft * tx, fn * nz + ft * tz


@njit(cache=True)
def _dynamics_terms(q, v, tau_act, push, h, angle_map, segs, segf, n_points, floating, root,
                    mass, inertia, dof_f, act, act_lim, spr, spr_f, contacts, push_point,
                    gravity, contact):
    pos, vel, jac, bias = _kinematics(q, v, angle_map, segs, segf, n_points, floating, root)
    n = q.shape[0]
    nb = mass.shape[0]
    M = np.zeros((n, n))
    f = np.zeros(n)
    for b in range(nb):
        m = mass[b]
        inr = inertia[b]
        gx = -bias[b, 0]
        gz = -gravity - bias[b, 1]
        for i in range(n):
            f[i] += m * (jac[b, 0, i] * gx + jac[b, 1, i] * gz)
            for j in range(n):
                M[i, j] += m * (jac[b, 0, i] * jac[b, 0, j] + jac[b, 1, i] * jac[b, 1, j])
                M[i, j] += inr * angle_map[b, i] * angle_map[b, j]
    for i in range(n):
        M[i, i] += dof_f[i, 0]
        lo = dof_f[i, 1]
        hi = dof_f[i, 2]
        if q[i] > hi:
            f[i] += -dof_f[i, 3] * (q[i] - hi) - dof_f[i, 4] * v[i]
        elif q[i] < lo:
            f[i] += -dof_f[i, 3] * (q[i] - lo) - dof_f[i, 4] * v[i]
    for k in range(act.shape[0]):
        u = tau_act[k]
        if u > act_lim[k]:
            u = act_lim[k]
        elif u < -act_lim[k]:
            u = -act_lim[k]
        f[act[k]] += u
    for k in range(spr.shape[0]):
        d = spr[k]
        f[d] += -spr_f[k, 0] * (q[d] - spr_f[k, 2]) - spr_f[k, 1] * v[d]
    for c in range(contacts.shape[0]):
        p = contacts[c]
        fx, fz = _point_contact(pos[p, 0], pos[p, 1], vel[p, 0], vel[p, 1], h, contact)
        if fx != 0.0 or fz != 0.0:
            for i in range(n):
                f[i] += jac[p, 0, i] * fx + jac[p, 1, i] * fz
    if push_point >= 0:
        for i in range(n):
            f[i] += jac[push_point, 0, i] * push[0] + jac[push_point, 1, i] * push[1]
    return M, f


@njit(cache=True)
def _step(q, v, tau_act, push, h, dt, angle_map, segs, segf, n_points, floating, root,
          mass, inertia, dof_f, act, act_lim, spr, spr_f, contacts, push_point, gravity, contact):
    M, f = _dynamics_terms(q, v, tau_act, push, h, angle_map, segs, segf, n_points, floating,
                           root, mass, inertia, dof_f, act, act_lim, spr, spr_f, contacts,
                           push_point, gravity, contact)
    for i in range(f.shape[0]):
        if not math.isfinite(f[i]):
            # reported as divergence by the caller
            return np.full_like(q, np.nan), np.full_like(v, np.nan)
    qdd = np.linalg.solve(M, f)
    v_new = v + dt * qdd
    q_new = q + dt * v_new
    return q_new, v_new


# ---------------------------------------------------------------------------
# system description


class ArticulatedSystem:
    """Compiled description of a planar kinematic tree.

    Build one with :meth:`add_body` / :meth:`add_point` / :meth:`add_actuator` /
    :meth:`add_spring`, then pass it (or a :class:`RobotModel`) to :func:`step`.
    A *chain* is a list of ``(body, length, angle_offset)`` segments walked from
    the root; each segment adds ``length * (sin(phi+off), -cos(phi+off))`` where
    ``phi`` is the body's absolute angle (zero points straight down).
    """

    def __init__(self, coordinate_names: Sequence[str], floating: bool = True,
                 root: tuple[float, float] = (0.0, 0.0), gravity: float = GRAVITY,
                 contact: ContactParams = ContactParams()):
        self.coordinate_names = tuple(coordinate_names)
        self.n = len(self.coordinate_names)
        if floating and self.n < 2:
            raise ValueError("a floating root needs x and z coordinates")
        self.floating = floating
        self.root = np.array(root, dtype=float)
        self.gravity = float(gravity)
        self.contact = contact
        self.body_names: list[str] = []
        self._angles: list[np.ndarray] = []
        self._mass: list[float] = []
        self._inertia: list[float] = []
        self.point_names: list[str] = []
        self._segs: list[tuple[int, int]] = []
        self._segf: list[tuple[float, float]] = []
        self.dof_params = np.zeros((self.n, 5))
        self.dof_params[:, 1] = -np.inf
        self.dof_params[:, 2] = np.inf
        self.actuated: list[int] = []
        self.torque_limits: list[float] = []
        self.springs: list[int] = []
        self.spring_params: list[tuple[float, float, float]] = []
        self.contact_points: list[int] = []
        self.contact_groups: list[int] = []
        self.push_point = -1
        self._frozen = False

    def _angle_row(self, coords: dict[int, float] | Sequence[int]) -> np.ndarray:
        row = np.zeros(self.n)
        items = coords.items() if isinstance(coords, dict) else ((c, 1.0) for c in coords)
        for c, w in items:
            row[c] += w
        return row

    def add_body(self, name: str, angle_coords, mass: float, inertia: float, com_chain) -> int:
        """Add a body whose absolute angle is the sum of ``angle_coords``."""
        if mass <= 0 or inertia < 0:
            raise ValueError(f"body {name}: mass must be > 0 and inertia >= 0")
        if len(self.point_names) != len(self.body_names):
            raise RuntimeError("bodies must be added before auxiliary points")
        self.body_names.append(name)
        self._angles.append(self._angle_row(angle_coords))
        self._mass.append(float(mass))
        self._inertia.append(float(inertia))
        self._add_chain(name, com_chain)
        return len(self.body_names) - 1

    def add_point(self, name: str, chain) -> int:
        self._add_chain(name, chain)
        return len(self.point_names) - 1

    def _add_chain(self, name, chain):
        idx = len(self.point_names)
        self.point_names.append(name)
        for body, length, offset in chain:
            self._segs.append((idx, self.body_index(body)))
            self._segf.append((float(length), float(offset)))

    def body_index(self, body) -> int:
        return self.body_names.index(body) if isinstance(body, str) else int(body)

    def point_index(self, name: str) -> int:
        return self.point_names.index(name)

    def add_actuator(self, coord: int, torque_limit: float):
        if torque_limit <= 0:
            raise ValueError("torque limits must be positive")
        self.actuated.append(coord)
        self.torque_limits.append(float(torque_limit))

    def add_spring(self, coord: int, stiffness: float, damping: float, rest: float = 0.0):
        self.springs.append(coord)
        self.spring_params.append((float(stiffness), float(damping), float(rest)))

    def set_armature(self, coord: int, value: float):
        self.dof_params[coord, 0] = value

    def set_limits(self, coord: int, lower: float, upper: float, stiffness: float, damping: float):
        self.dof_params[coord, 1:5] = (lower, upper, stiffness, damping)

    def add_contact(self, point: str, group: int = 0):
        self.contact_points.append(self.point_index(point))
        self.contact_groups.append(group)

    def set_push_point(self, point: str):
        self.push_point = self.point_index(point)

    # compiled arrays -------------------------------------------------------

    @cached_property
    def args(self) -> tuple:
        """Positional kernel arguments following ``(q, v, tau, push, h, dt)``."""
        nb = len(self.body_names)
        angle_map = np.array(self._angles, dtype=float).reshape(nb, self.n)
        segs = np.array(self._segs, dtype=np.int64).reshape(-1, 2)
        segf = np.array(self._segf, dtype=float).reshape(-1, 2)
        spr_f = np.array(self.spring_params, dtype=float).reshape(-1, 3)
        return (
            angle_map, segs, segf, len(self.point_names), self.floating, self.root,
            np.array(self._mass), np.array(self._inertia), self.dof_params.copy(),
            np.array(self.actuated, dtype=np.int64), np.array(self.torque_limits, dtype=float),
            np.array(self.springs, dtype=np.int64), spr_f,
            np.array(self.contact_points, dtype=np.int64), self.push_point, self.gravity,
            self.contact.as_array(),
        )

    @property
    def kinematic_args(self) -> tuple:
        a = self.args
        return a[0], a[1], a[2], a[3], a[4], a[5]

    @property
    def n_actuated(self) -> int:
        return len(self.actuated)

    @property
    def system(self) -> "ArticulatedSystem":
        return self


# ---------------------------------------------------------------------------
# the walker


@dataclass(frozen=True)
class RobotModel:
    """Seven-link planar walker: torso/pelvis plus thigh, shin and foot per leg.

    The shin carries a passive spring joint part-way down its length, so each
    shin is simulated as two rigid segments. Values are plausible for a
    32 kg robot with a 1 m pelvis height; they are not measured from hardware.
    """

    torso_mass: float = 15.0
    torso_inertia: float = 0.5
    torso_com_height: float = 0.2
    thigh_length: float = 0.5
    thigh_mass: float = 4.0
    thigh_inertia: float = 0.08
    thigh_com: float = 0.2
    shin_length: float = 0.55
    spring_position: float = 0.5  # fraction of the shin above the spring joint
    upper_shin_mass: float = 2.0
    upper_shin_inertia: float = 0.0126
    lower_shin_mass: float = 1.5
    lower_shin_inertia: float = 0.0095
    foot_mass: float = 1.0
    foot_inertia: float = 0.005
    foot_height: float = 0.05
    heel_length: float = 0.05
    toe_length: float = 0.15
    hip_torque_limit: float = 100.0
    knee_torque_limit: float = 100.0
    ankle_torque_limit: float = 50.0
    spring_stiffness: float = 1500.0
    spring_damping: float = 5.0
    rotor_inertia: float = 0.05
    hip_range: tuple[float, float] = (-1.5, 1.5)
    knee_range: tuple[float, float] = (-2.5, 0.05)
    ankle_range: tuple[float, float] = (-1.0, 1.0)
    spring_range: tuple[float, float] = (-0.3, 0.3)
    limit_stiffness: float = 500.0
    limit_damping: float = 10.0
    nominal_height: float = 1.0
    contact: ContactParams = field(default_factory=ContactParams)

    def __post_init__(self):
        positive = ["torso_mass", "torso_inertia", "thigh_length", "thigh_mass", "thigh_inertia",
                    "shin_length", "upper_shin_mass", "upper_shin_inertia", "lower_shin_mass",
                    "lower_shin_inertia", "foot_mass", "foot_inertia", "foot_height",
                    "hip_torque_limit", "knee_torque_limit", "ankle_torque_limit",
                    "nominal_height"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"RobotModel.{name} must be positive")
        if not 0 < self.spring_position < 1:
            raise ValueError("spring_position must lie strictly inside the shin")

    @property
    def upper_shin_length(self) -> float:
        return self.shin_length * self.spring_position

    @property
    def lower_shin_length(self) -> float:
        return self.shin_length - self.upper_shin_length

    @property
    def leg_length(self) -> float:
        """Hip-to-sole distance with the leg straight."""
        return self.thigh_length + self.shin_length + self.foot_height

    @property
    def total_mass(self) -> float:
        leg = self.thigh_mass + self.upper_shin_mass + self.lower_shin_mass + self.foot_mass
        return self.torso_mass + 2 * leg

    @property
    def torque_limits(self) -> np.ndarray:
        side = [self.hip_torque_limit, self.knee_torque_limit, self.ankle_torque_limit]
        return np.array(side + side)

    @property
    def joints(self) -> list[tuple[str, str]]:
        kinds = ["floating-base"] * 3 + ["active"] * N_ACTIVE + ["passive-spring"] * N_PASSIVE
        return list(zip(COORDINATE_NAMES, kinds))

    def replace(self, **changes) -> "RobotModel":
        return dataclasses.replace(self, **changes)

    @cached_property
    def system(self) -> ArticulatedSystem:
        sys = ArticulatedSystem(COORDINATE_NAMES, floating=True, contact=self.contact)
        half_pi = 0.5 * math.pi
        lu, ll = self.upper_shin_length, self.lower_shin_length
        sys.add_body("torso", [PELVIS_PITCH], self.torso_mass, self.torso_inertia,
                     [("torso", self.torso_com_height, math.pi)])
        feet = {}
        for side, (hip, knee, ankle), spring in (("left", (3, 4, 5), 9), ("right", (6, 7, 8), 10)):
            thigh, upper, lower, foot = (f"{side}_thigh", f"{side}_upper_shin",
                                         f"{side}_lower_shin", f"{side}_foot")
            knee_chain = [(thigh, self.thigh_length, 0.0)]
            spring_chain = knee_chain + [(upper, lu, 0.0)]
            ankle_chain = spring_chain + [(lower, ll, 0.0)]
            sys.add_body(thigh, [PELVIS_PITCH, hip], self.thigh_mass, self.thigh_inertia,
                         [(thigh, self.thigh_com, 0.0)])
            sys.add_body(upper, [PELVIS_PITCH, hip, knee], self.upper_shin_mass,
                         self.upper_shin_inertia, knee_chain + [(upper, 0.5 * lu, 0.0)])
            sys.add_body(lower, [PELVIS_PITCH, hip, knee, spring], self.lower_shin_mass,
                         self.lower_shin_inertia, spring_chain + [(lower, 0.5 * ll, 0.0)])
            sys.add_body(foot, [PELVIS_PITCH, hip, knee, spring, ankle], self.foot_mass,
                         self.foot_inertia,
                         ankle_chain + [(foot, 0.5 * self.foot_height, 0.0),
                                        (foot, 0.5 * (self.toe_length - self.heel_length), half_pi)])
            sole = ankle_chain + [(foot, self.foot_height, 0.0)]
            feet[side] = (ankle_chain, sole + [(foot, self.heel_length, -half_pi)],
                          sole + [(foot, self.toe_length, half_pi)])
        sys.add_point("pelvis", [])
        for side, (ankle_chain, heel, toe) in feet.items():
            sys.add_point(f"{side}_ankle", ankle_chain)
            sys.add_point(f"{side}_heel", heel)
            sys.add_point(f"{side}_toe", toe)
        for group, side in enumerate(("left", "right")):
            sys.add_contact(f"{side}_heel", group)
            sys.add_contact(f"{side}_toe", group)
        sys.set_push_point("pelvis")
        limits = self.torque_limits
        ranges = [self.hip_range, self.knee_range, self.ankle_range] * 2
        for k, coord in enumerate(range(3, 9)):
            sys.add_actuator(coord, limits[k])
            sys.set_armature(coord, self.rotor_inertia)
            sys.set_limits(coord, *ranges[k], self.limit_stiffness, self.limit_damping)
        for coord in (9, 10):
            sys.add_spring(coord, self.spring_stiffness, self.spring_damping)
            sys.set_limits(coord, *self.spring_range, self.limit_stiffness, self.limit_damping)
        return sys


# ---------------------------------------------------------------------------
# public operations


def _system(model) -> ArticulatedSystem:
    return model.system


def step(model, state: SimState, torques, terrain: Terrain = FLAT,
         pushes: Sequence[PushEvent] = (), dt: float = 1e-3) -> SimState:
    """Advance ``state`` by one semi-implicit Euler step of length ``dt``.

    Torques are requested per actuated coordinate and clamped to the model's
    limits inside the kernel. Raises :class:`SimulationDiverged` if any
    coordinate of the result is non-finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    sys = _system(model)
    tau = np.asarray(torques, dtype=float)
    if tau.shape != (sys.n_actuated,):
        raise ValueError(f"expected {sys.n_actuated} torques, got shape {tau.shape}")
    if not (np.isfinite(state.q).all() and np.isfinite(state.v).all()):
        raise ValueError("state must be finite")
    q, v = _step(state.q, state.v, tau, push_force(pushes, state.t), terrain.amplitude, dt,
                 *sys.args)
    t = state.t + dt
    check_finite(sys, q, v, t)
    return SimState(q, v, t)


def check_finite(sys: ArticulatedSystem, q, v, t: float):
    if np.isfinite(q).all() and np.isfinite(v).all():
        return
    bad = int(np.flatnonzero(~(np.isfinite(q) & np.isfinite(v)))[0])
    raise SimulationDiverged(sys.coordinate_names[bad], t)


def clamp_torques(model, torques) -> np.ndarray:
    """Torques as actually applied by the simulator."""
    lim = np.asarray(_system(model).torque_limits)
    return np.clip(np.asarray(torques, dtype=float), -lim, lim)


def point_kinematics(model, state: SimState):
    """Positions, velocities and Jacobians of every tracked point.

    Returns ``(names, pos, vel, jac)``; body centres of mass come first.
    """
    sys = _system(model)
    pos, vel, jac, _ = _kinematics(state.q, state.v, *sys.kinematic_args)
    return sys.point_names, pos, vel, jac


def point_position(model, state: SimState, name: str) -> np.ndarray:
    names, pos, _, _ = point_kinematics(model, state)
    return pos[names.index(name)]


def mass_matrix(model, state: SimState) -> np.ndarray:
    sys = _system(model)
    M, _ = _dynamics_terms(state.q, state.v, np.zeros(sys.n_actuated), np.zeros(2), 0.0,
                           *sys.args)
    return M


def generalized_forces(model, state: SimState, torques, terrain: Terrain = FLAT,
                       pushes: Sequence[PushEvent] = ()) -> np.ndarray:
    """Right-hand side of ``M qdd = f`` for the given inputs."""
    sys = _system(model)
    _, f = _dynamics_terms(state.q, state.v, np.asarray(torques, dtype=float),
                           push_force(pushes, state.t), terrain.amplitude, *sys.args)
    return f


def point_contact_force(position, velocity, terrain: Terrain = FLAT,
                        contact: ContactParams = ContactParams()) -> np.ndarray:
    """Penalty force on a single contact point (zero above the ground)."""
    fx, fz = _point_contact(float(position[0]), float(position[1]), float(velocity[0]),
                            float(velocity[1]), terrain.amplitude, contact.as_array())
    return np.array([fx, fz])


def contact_force(model, state: SimState, terrain: Terrain = FLAT) -> np.ndarray:
    """Summed ground reaction per foot, shape ``(n_feet, 2)``."""
    sys = _system(model)
    _, pos, vel, _ = point_kinematics(model, state)
    groups = np.array(sys.contact_groups, dtype=int)
    out = np.zeros((groups.max() + 1 if groups.size else 0, 2))
    for p, g in zip(sys.contact_points, groups):
        out[g] += point_contact_force(pos[p], vel[p], terrain, sys.contact)
    return out


def standing_state(model: RobotModel, height: float | None = None) -> SimState:
    """Zero-angle pose with the soles resting on flat ground."""
    q = np.zeros(NDOF)
    q[PELVIS_Z] = model.leg_length if height is None else height
    return SimState(q, np.zeros(NDOF), 0.0)
