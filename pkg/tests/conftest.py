import math
import os

import pytest
from hypothesis import HealthCheck, settings

from biped_mimic import config as cfgmod
from biped_mimic import experiments as ex
from biped_mimic.reference import generate_gait
from biped_mimic.sim import ArticulatedSystem, RobotModel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def model():
    return RobotModel()


@pytest.fixture(scope="session")
def motion(model):
    return generate_gait(0.5, 0.7, 0.1, model)


def make_pendulum(length=1.0, mass=1.0, gravity=9.81):
    """Point-mass pendulum on a fixed pivot, angle measured from hanging straight down."""
    sys = ArticulatedSystem(["theta"], floating=False, gravity=gravity)
    sys.add_body("bob", [0], mass, 0.0, [("bob", length, 0.0)])
    return sys


@pytest.fixture
def pendulum():
    return make_pendulum()


def rk4_pendulum(theta0, omega0, t_end, dt=1e-5, g=9.81, length=1.0):
    """Classical RK4 on theta'' = -(g/l) sin(theta); returns the state at t_end."""
    th, om = float(theta0), float(omega0)
    k = g / length
    sin = math.sin
    for _ in range(int(round(t_end / dt))):
        a1, b1 = om, -k * sin(th)
        a2, b2 = om + 0.5 * dt * b1, -k * sin(th + 0.5 * dt * a1)
        a3, b3 = om + 0.5 * dt * b2, -k * sin(th + 0.5 * dt * a2)
        a4, b4 = om + dt * b3, -k * sin(th + dt * a3)
        th += dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        om += dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    return th, om


TINY = """
train.hidden_sizes = 16, 16
train.normalizer_samples = 300
train.samples_per_iter = 200
train.batch_size = 32
train.updates_per_iter = 2
train.checkpoint_every = 1
protocol.episodes = 3
"""


def tiny_config(**extra):
    cfg = cfgmod.parse_config(TINY)
    for k, v in extra.items():
        cfg.set(k, v)
    return cfg


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    """Small walker checkpoints: two iterations at nominal speed, one at double speed."""
    root = tmp_path_factory.mktemp("runs")
    ex.run_training(tiny_config(**{"train.iterations": 2}), root / "base", deterministic=True)
    ex.run_training(tiny_config(**{"train.iterations": 1, "reference.speed_scale": 2.0}),
                    root / "fast", deterministic=True)
    return root


@pytest.fixture(scope="session")
def policy(runs):
    return ex.LoadedPolicy.load(runs / "base" / "checkpoint.bin")
