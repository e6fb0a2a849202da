"""Time-varying LQR tracking around a nominal trajectory.

The nominal trajectory and the dynamics are those of a discrete map
``x' = f(x, u)``. ``linearize`` gives the local ``(A_t, B_t)`` and
``riccati_backward`` solves the finite-horizon problem

    minimize  sum_t du_t' R du_t + dx_t' Q dx_t  +  dx_T' Q_T dx_T
    s.t.      dx_{t+1} = A_t dx_t + B_t du_t
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELTA = 1e-5


class LinearizationError(RuntimeError):
    pass


class RiccatiSingular(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearizedDynamics:
    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, n, m)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if B.ndim == 2:
            B = B[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"A must be (T, n, n), got {A.shape}")
        if B.ndim != 3 or B.shape[:2] != A.shape[:2]:
            raise ValueError(f"B must be (T, n, m) matching A, got {B.shape}")
        if not (np.isfinite(A).all() and np.isfinite(B).all()):
            raise ValueError("linearization contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]


@dataclass(frozen=True)
class TrackingGains:
    K: np.ndarray  # (T, m, n)
    P: np.ndarray  # (T + 1, n, n); P[T] is the terminal weight

    @property
    def horizon(self) -> int:
        return self.K.shape[0]


def linearize(dynamics, x_nom, u_nom, delta: float = DEFAULT_DELTA):
    """Central-difference Jacobians ``(A, B)`` of ``dynamics(x, u)`` at the nominal point.

    The stencil is even in ``delta``, so a negative step gives the same matrices.
    """
    if delta == 0 or not np.isfinite(delta):
        raise ValueError("delta must be finite and nonzero")
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if not (np.isfinite(x_nom).all() and np.isfinite(u_nom).all()):
        raise ValueError("nominal point must be finite")

    def column(x_plus, u_plus, x_minus, u_minus, label):
        try:
            hi = np.asarray(dynamics(x_plus, u_plus), dtype=float)
            lo = np.asarray(dynamics(x_minus, u_minus), dtype=float)
        except (FloatingPointError, ArithmeticError, RuntimeError) as exc:
            raise LinearizationError(f"dynamics failed when perturbing {label}: {exc}") from exc
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise LinearizationError(f"dynamics diverged when perturbing {label}")
        return (hi - lo) / (2.0 * delta)

    n, m = x_nom.size, u_nom.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for j in range(n):
        e = np.zeros(n)
        e[j] = delta
        A[:, j] = column(x_nom + e, u_nom, x_nom - e, u_nom, f"state column {j}")
    for j in range(m):
        e = np.zeros(m)
        e[j] = delta
        B[:, j] = column(x_nom, u_nom + e, x_nom, u_nom - e, f"input column {j}")
    return A, B


def linearize_trajectory(dynamics, xs, us, delta: float = DEFAULT_DELTA) -> LinearizedDynamics:
    pairs = [linearize(dynamics, x, u, delta) for x, u in zip(xs, us)]
    return LinearizedDynamics(np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]))


def riccati_backward(lin: LinearizedDynamics, Q, R, Q_terminal=None) -> TrackingGains:
    """Finite-horizon discrete Riccati recursion; ``Q_terminal`` defaults to ``Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Qf = Q if Q_terminal is None else np.atleast_2d(np.asarray(Q_terminal, dtype=float))
    n, m, T = lin.n, lin.m, lin.horizon
    if Q.shape != (n, n) or Qf.shape != (n, n) or R.shape != (m, m):
        raise ValueError("cost matrix shapes do not match the dynamics")
    P = np.empty((T + 1, n, n))
    K = np.empty((T, m, n))
    P[T] = Qf
    for t in range(T - 1, -1, -1):
        A, B, Pn = lin.A[t], lin.B[t], P[t + 1]
        S = R + B.T @ Pn @ B
        try:
            if np.linalg.cond(S) > 1e14:
                raise np.linalg.LinAlgError("ill-conditioned")
            K[t] = np.linalg.solve(S, B.T @ Pn @ A)
        except np.linalg.LinAlgError as exc:
            raise RiccatiSingular(f"R + B'PB is singular at step {t}") from exc
        Pt = Q + A.T @ Pn @ (A - B @ K[t])
        P[t] = 0.5 * (Pt + Pt.T)
    return TrackingGains(K, P)


def tvlqr_control(gains: TrackingGains, x, x_nom, u_nom, t: int) -> np.ndarray:
    if not 0 <= t < gains.horizon:
        raise IndexError(f"step {t} outside the horizon [0, {gains.horizon})")
    return np.asarray(u_nom, dtype=float) - gains.K[t] @ (np.asarray(x, dtype=float) - x_nom)


def rollout_cost(lin: LinearizedDynamics, gains: TrackingGains, Q, R, Q_terminal, dx0):
    """Deviation trajectory and total quadratic cost of the Riccati policy on the linear system."""
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    Qf = Q if Q_terminal is None else np.atleast_2d(Q_terminal)
    dx = np.asarray(dx0, dtype=float)
    xs, us, cost = [dx], [], 0.0
    for t in range(lin.horizon):
        du = -gains.K[t] @ dx
        cost += float(dx @ Q @ dx + du @ R @ du)
        dx = lin.A[t] @ dx + lin.B[t] @ du
        xs.append(dx)
        us.append(du)
    cost += float(dx @ Qf @ dx)
    return np.array(xs), np.array(us), cost


# ---------------------------------------------------------------------------
# biped baseline


def biped_control_map(model, dt: float = 1e-3, control_dt: float = 0.032, gains=None, terrain=None):
    """``f(x, u)``: walker state after one control period holding PD targets ``u``.

    ``x`` stacks ``(q, v)``. Used to linearize the walker around its reference.
    """
    from .controller import DelayBuffer, PDGains, run_pd
    from .sim import FLAT, SimState

    gains = PDGains.uniform() if gains is None else gains
    terrain = FLAT if terrain is None else terrain
    n_sub = round(control_dt / dt)
    n = len(model.system.coordinate_names)
    buf = DelayBuffer(n, 0.0, dt)
    no_push = np.zeros((n_sub, 2))

    def f(x, u):
        state = SimState(x[:n].copy(), x[n:].copy(), 0.0)
        buf.reset(state)
        out = run_pd(model, state, buf, u, gains, 0.0, n_sub, dt, no_push, terrain.amplitude)
        return np.concatenate([out.q, out.v])

    return f


@dataclass
class BaselineResult:
    steps: int
    total_reward: float
    cause: str
    rewards: np.ndarray


def biped_tvlqr_baseline(model, motion, horizon: int = 300, Q=None, R=None, Q_terminal=None,
                         delta: float = DEFAULT_DELTA, env_config=None, frame_index: int = 0):
    """Track the reference with TVLQR on PD targets and report how far the walker gets.

    The reference is kinematic, so the nominal trajectory is not a solution of
    the dynamics; the controller is expected to lose the walker quickly.
    """
    from .env import RUNNING, BipedEnv, BipedEnvConfig
    from . import reference as refmod

    cfg = BipedEnvConfig(max_steps=horizon) if env_config is None else env_config
    env = BipedEnv(model, motion, cfg)
    n = len(model.system.coordinate_names)
    Q = np.eye(2 * n) if Q is None else Q
    R = 1e-2 * np.eye(6) if R is None else R
    f = biped_control_map(model, cfg.dt, cfg.control_dt, cfg.gains, cfg.terrain)
    t0 = float(motion.times[frame_index])
    frames = [refmod.sample(motion, t0 + k * cfg.control_dt) for k in range(horizon + 1)]
    xs = [np.concatenate([fr.q, fr.v]) for fr in frames]
    us = [fr.q[3:9] for fr in frames]
    lin = linearize_trajectory(f, xs[:horizon], us[:horizon], delta)
    gains = riccati_backward(lin, Q, R, Q_terminal)

    env.reset(frame_index=frame_index)
    rewards = []
    cause = RUNNING
    for k in range(horizon):
        x = np.concatenate([env.state.q, env.state.v])
        u = tvlqr_control(gains, x, xs[k], us[k], k)
        env.advance(u)
        r, cause = env.score(env.reference_frame())
        rewards.append(r)
        if cause != RUNNING:
            break
    rewards = np.array(rewards)
    return BaselineResult(len(rewards), float(rewards.sum()), cause, rewards)
