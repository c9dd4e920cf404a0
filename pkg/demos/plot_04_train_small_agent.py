"""
Training a PPO agent on a toy drive
===================================

Two base stations take turns being the clear best every few seconds.  A
single PPO stage is enough for the greedy policy to follow them without a
single handover failure.  This takes a few minutes on one core.
"""

import numpy as np

from holab.evalkit import evaluate_policy
from holab.ppo import PpoConfig, Stage, train
from holab.tracegen import RadioTrace, compute_sinr

# %%
# Build the drive: six-second halves with three-second ramps between them.

dt, half, ramp = 0.01, 600, 300
level = np.concatenate([np.ones(half - ramp), np.linspace(1, -1, ramp),
                        -np.ones(half - ramp), np.linspace(-1, 1, ramp)])
level = np.tile(level, 10)
rsrp = np.stack([-95 + 10 * level, -95 - 10 * level], axis=1)
trace = RadioTrace(dt=dt, rsrp=rsrp, sinr=compute_sinr(rsrp, -120.0), speed=50.0, id="seesaw")

# %%
# Train, printing progress every 50 epochs.

cfg = PpoConfig(schedule=(Stage(5e-5, 200, 150, None),))
run = train([trace], cfg, seed=0,
            progress=lambda r: r["epoch"] % 50 == 0 and print(
                f"epoch {r['epoch']}: mean reward {r['mean_reward']:.3f}, HOF {r['hof']}"))

# %%
# Score the greedy agent against the baseline with the Gamma rate ratio.

for row in evaluate_policy(run.actor, [trace]).rows + evaluate_policy("baseline", [trace]).rows:
    print(f"{row.policy:<9s} gamma={row.gamma:.4f} HOF={row.hof} PP={row.pp} HO={row.ho}")
