"""Train the graph-network policy with PPO to build a small tower.

The tower needs three bricks on top of the starting one.  With the scaled-down
settings below this takes a couple of minutes on a laptop CPU.

Run:  python demos/train_tower.py
"""
import numpy as np

from brickcraft.env import BrickEnv, EnvConfig, random_policy, run_episode
from brickcraft.models import ModelConfig
from brickcraft.targets import tower_target
from brickcraft.training.ppo import PpoConfig, train_ppo

target = tower_target(4)
model = ModelConfig(hidden_dim=64, view_dim=16, cnn_channels=(8, 16), n_max=8, n_off=92)
ppo = PpoConfig(n_steps=128, n_envs=8, minibatches=8, epochs=6, total_timesteps=50_000)

env = BrickEnv(EnvConfig())
baseline = np.mean([run_episode(random_policy, env, target, seed=i).final_iou for i in range(200)])
print(f"random policy mean IoU: {baseline:.3f}")

res = train_ppo(lambda: BrickEnv(EnvConfig()), model, ppo, lambda r: target, seed=0)
ious = res.final_ious()
for lo in range(0, len(ious), max(1, len(ious) // 8)):
    print(f"episodes {lo:5d}+  mean IoU {ious[lo:lo + 50].mean():.3f}")
print(f"last 50 episodes mean IoU: {ious[-50:].mean():.3f}")
