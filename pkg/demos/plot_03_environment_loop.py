"""
Stepping the handover environment
=================================

The agent sees normalised pseudo-RSRQ values, a one-hot serving BS and the
time since the last handover.  Every action is a target BS; choosing the
serving BS means staying.  The environment runs the same link monitor as
the baseline, so a careless agent meets handover failures.
"""

import numpy as np

from holab.env import EnvConfig, HandoverEnv
from holab.tracegen import build_dataset, default_map, random_route

trace = build_dataset(default_map(seed=3), [random_route(5, duration=60.0)], n_train=1)[0]
env = HandoverEnv(trace, EnvConfig(reset_on_hof=False))

# %%
# An agent that always picks the strongest pseudo-RSRQ.  Labels are
# shuffled at reset, so the agent cannot memorise a favourite BS.

obs = env.reset(seed=0, shuffle_mapping=True)
total, decisions = 0.0, 0
while not env.done:
    res = env.step(int(np.argmax(obs.rsrq_norm)))
    total += res.reward
    decisions += 1
    obs = res.obs
print(f"{decisions} decisions, mean reward {total / decisions:.3f}")

# %%
# The link run is reported in the trace's own labels, ready for scoring.

run = env.link_run()
print("events:", {kind.value: run.count(kind) for kind in set(e.kind for e in run.events)})
