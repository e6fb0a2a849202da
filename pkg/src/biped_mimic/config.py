"""Flat ``section.key = value`` configuration.

Every key has a typed default (see :data:`DEFAULTS`); a config file only
lists overrides. ``#`` starts a comment. Tuples are comma separated. The
digest is taken over the fully resolved, sorted key set, so key order,
whitespace and number spelling (``1e-3`` vs ``0.001``) do not change it.
"""
from __future__ import annotations

import hashlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .controller import PDGains
from .env import BipedEnvConfig, TrackingTaskConfig
from .ppo import TrainConfig
from .reference import FRAME_DT, generate_gait, retime
from .reference import load as load_reference
from .reward import RewardScales, RewardWeights
from .sim import ContactParams, RobotModel


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


def _dataclass_defaults(cls, prefix: str, skip=()) -> dict:
    inst = cls()
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        out[f"{prefix}.{f.name}"] = getattr(inst, f.name)
    return out


DEFAULTS: dict = {}
DEFAULTS.update(_dataclass_defaults(TrainConfig, "train", skip=("workers",)))
DEFAULTS.update({
    "train.iterations": 300,
    "train.checkpoint_every": 50,
    "train.task": "biped",
})
DEFAULTS.update(_dataclass_defaults(RobotModel, "model", skip=("contact",)))
DEFAULTS.update(_dataclass_defaults(ContactParams, "contact"))
DEFAULTS.update({
    "env.delta_scale": 0.3,
    "env.dt": 1e-3,
    "env.eval_dt": 5e-4,
    "env.control_dt": 0.032,
    "env.delay_capacity": 0.05,
    "env.z_min": 0.6,
    "env.z_max": 1.2,
    "env.reward_threshold": 0.6,
    "gains.p": (300.0,),
    "gains.d": (10.0,),
})
DEFAULTS.update({f"reward.w_{k}": v for k, v in
                 ((f.name, getattr(RewardWeights(), f.name)) for f in fields(RewardWeights))})
DEFAULTS.update({f"reward.scale_{k}": v for k, v in
                 ((f.name, getattr(RewardScales(), f.name)) for f in fields(RewardScales))})
DEFAULTS.update({
    "reference.stride_length": 0.5,
    "reference.stride_period": 0.7,
    "reference.step_height": 0.1,
    "reference.speed_scale": 1.0,
    "reference.file": "",
    "tracking.amplitude": TrackingTaskConfig.amplitude,
    "tracking.period": TrackingTaskConfig.period,
    "tracking.mass": TrackingTaskConfig.mass,
    "tracking.kp": TrackingTaskConfig.kp,
    "tracking.kd": TrackingTaskConfig.kd,
    "tracking.delta_scale": TrackingTaskConfig.delta_scale,
    "tvlqr.delta": 1e-5,
    "tvlqr.horizon": 300,
    "tvlqr.q_diag": (1.0,),
    "tvlqr.r_diag": (0.01,),
    "tvlqr.q_terminal_diag": (),
    "protocol.episodes": 10,
    "protocol.seed": 0,
    "protocol.delays": (0.0, 0.005, 0.010, 0.020),
    "protocol.terrain_heights": (0.0, 0.01, 0.02, 0.05, 0.1, 0.15),
    "protocol.push_directions": (1.0, -1.0),
    "protocol.push_magnitudes": (0.0, 20.0, 40.0, 60.0, 90.0, 140.0),
    "protocol.push_duration": 0.2,
    "protocol.push_earliest": 1.0,
    "protocol.push_phase": 0.25,
    "protocol.push_random_phase": False,
    "protocol.recovery_window": 5.0,
    "protocol.interp_mode": "schedule",
    "protocol.interp_rate": 0.625,
    "protocol.interp_lambda": 1.0,
    "protocol.interp_steps": 300,
})

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, default, key: str, line: int | None):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            return tuple(float(x) for x in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(str(exc), line, key) from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


class Config:
    """Resolved configuration: defaults overlaid with file and command-line overrides."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, value, line: int | None = None):
        if key not in DEFAULTS:
            raise ConfigError("unknown key", line, key)
        default = DEFAULTS[key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _convert(value, default, key, line)
        elif isinstance(default, tuple):
            value = tuple(float(x) for x in np.atleast_1d(value))
        elif isinstance(default, bool):
            value = bool(value)
        elif isinstance(default, int):
            value = int(value)
        elif isinstance(default, float):
            value = float(value)
        self.values[key] = value

    def text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse overrides from ``text`` on top of ``base`` (defaults when omitted)."""
    cfg = Config(base.values if base is not None else None)
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", lineno, key)
        seen[key] = lineno
        cfg.set(key, value, lineno)
    validate(cfg)
    return cfg


def load_config(path, base: Config | None = None) -> Config:
    return parse_config(Path(path).read_text(), base)


def validate(cfg: Config):
    for key in ("protocol.delays", "protocol.terrain_heights", "protocol.push_magnitudes"):
        if any(x < 0 for x in cfg[key]):
            raise ConfigError("values must be non-negative", key=key)
    if max(cfg["protocol.delays"], default=0.0) > cfg["env.delay_capacity"]:
        raise ConfigError("delay exceeds env.delay_capacity", key="protocol.delays")
    if any(abs(d) != 1.0 for d in cfg["protocol.push_directions"]):
        raise ConfigError("push directions must be +1 or -1", key="protocol.push_directions")
    if cfg["protocol.interp_mode"] not in ("schedule", "fixed", "speed"):
        raise ConfigError("expected schedule, fixed or speed", key="protocol.interp_mode")
    if cfg["train.task"] not in ("biped", "tracking"):
        raise ConfigError("expected biped or tracking", key="train.task")
    if cfg["reference.speed_scale"] < 0:
        raise ConfigError("must be >= 0", key="reference.speed_scale")
    try:
        train_config(cfg)
        reward_weights(cfg)
        gains(cfg)
        env_config(cfg)
        env_config(cfg, evaluation=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# builders


def _section(cfg: Config, prefix: str, cls, skip=()) -> dict:
    names = {f.name for f in fields(cls)} - set(skip)
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in cfg.values.items() if k.startswith(prefix + ".") and k[plen:] in names}


def train_config(cfg: Config, workers: int = 1) -> TrainConfig:
    return TrainConfig(workers=workers, **_section(cfg, "train", TrainConfig))


def robot_model(cfg: Config) -> RobotModel:
    kw = _section(cfg, "model", RobotModel, skip=("contact",))
    for k, v in kw.items():
        if k.endswith("_range") and len(v) != 2:
            raise ConfigError("expected 'low, high'", key=f"model.{k}")
    return RobotModel(contact=ContactParams(**_section(cfg, "contact", ContactParams)), **kw)


def reward_weights(cfg: Config) -> RewardWeights:
    return RewardWeights(**{f.name: cfg[f"reward.w_{f.name}"] for f in fields(RewardWeights)})


def reward_scales(cfg: Config) -> RewardScales:
    return RewardScales(**{f.name: cfg[f"reward.scale_{f.name}"] for f in fields(RewardScales)})


def gains(cfg: Config) -> PDGains:
    p, d = np.array(cfg["gains.p"]), np.array(cfg["gains.d"])
    if p.size not in (1, 6) or d.size not in (1, 6):
        raise ConfigError("PD gains need 1 or 6 values", key="gains.p")
    return PDGains(p, d)


def env_config(cfg: Config, evaluation: bool = False, **overrides) -> BipedEnvConfig:
    """Walker environment settings; ``evaluation`` switches to the test physics rate."""
    kw = dict(
        gains=gains(cfg),
        delta_scale=cfg["env.delta_scale"],
        dt=cfg["env.eval_dt"] if evaluation else cfg["env.dt"],
        control_dt=cfg["env.control_dt"],
        delay_capacity=cfg["env.delay_capacity"],
        weights=reward_weights(cfg),
        scales=reward_scales(cfg),
        max_steps=cfg["train.max_steps"],
        z_min=cfg["env.z_min"],
        z_max=cfg["env.z_max"],
        reward_threshold=cfg["env.reward_threshold"],
    )
    kw.update(overrides)
    out = BipedEnvConfig(**kw)
    out.substeps  # validates the rate ratio
    return out


def tracking_config(cfg: Config) -> TrackingTaskConfig:
    return TrackingTaskConfig(
        amplitude=cfg["tracking.amplitude"], period=cfg["tracking.period"],
        mass=cfg["tracking.mass"], kp=cfg["tracking.kp"], kd=cfg["tracking.kd"],
        delta_scale=cfg["tracking.delta_scale"], dt=cfg["env.dt"],
        control_dt=cfg["env.control_dt"], max_steps=cfg["train.max_steps"],
        reward_threshold=cfg["env.reward_threshold"])


def reference_motion(cfg: Config, model: RobotModel | None = None):
    """Reference for training: from ``reference.file`` if set, else generated; then retimed."""
    model = robot_model(cfg) if model is None else model
    if cfg["reference.file"]:
        motion = load_reference(cfg["reference.file"])
    else:
        motion = generate_gait(cfg["reference.stride_length"], cfg["reference.stride_period"],
                               cfg["reference.step_height"], model, frame_dt=FRAME_DT)
    return retime(motion, cfg["reference.speed_scale"])
