"""Track the walker reference with TVLQR on PD targets.

The reference is kinematic and contact-rich, so the linearization along it is
a poor model of what the walker actually does. Expect the baseline to lose the
walker within a handful of control steps, in contrast to the learned policy.

    python3 demos/tvlqr_baseline.py [horizon]
"""
import sys

import numpy as np

from biped_mimic.reference import generate_gait
from biped_mimic.sim import RobotModel
from biped_mimic.tvlqr import biped_tvlqr_baseline

horizon = int(sys.argv[1]) if len(sys.argv) > 1 else 60
model = RobotModel()
motion = generate_gait(0.5, 0.7, 0.1, model)
n = 2 * len(model.system.coordinate_names)

for frame in (0, 5, 11):
    res = biped_tvlqr_baseline(model, motion, horizon, np.eye(n), 1e-2 * np.eye(6), frame_index=frame)
    print(f"start frame {frame:2d}: {res.steps:3d}/{horizon} steps, reward {res.total_reward:6.2f}, "
          f"ended by {res.cause}")
