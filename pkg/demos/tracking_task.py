"""Train PPO on the 1-DOF tracking task and watch the evaluated reward climb.

The point mass is PD-driven towards a sinusoid plus the policy's correction.
With zero correction the mass lags and the episode ends early on low reward,
so everything above roughly 0.1 per step has to be learned.

    python3 demos/tracking_task.py [iterations]
"""
import sys

import numpy as np

from biped_mimic.env import DoubleIntegratorEnv
from biped_mimic.ppo import TrainConfig, Trainer, evaluate

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 60
cfg = TrainConfig()
trainer = Trainer(DoubleIntegratorEnv, cfg)
trainer.fit_normalizer()
env = DoubleIntegratorEnv()

print("iter  train_return  eval_per_step  time_limit")
for _ in range(iterations):
    m = trainer.train_iteration()
    if m.iteration % 5 == 4:
        trajs = evaluate(trainer.agent, env, cfg, 10, seed=5)
        score = np.mean([t.total_reward / cfg.max_steps for t in trajs])
        print(f"{m.iteration:4d}  {m.mean_return:12.2f}  {score:13.3f}  {m.fraction_time_limit:10.2f}")
