"""
The whole pipeline from the command line
========================================

Each step of an experiment is a ``holab`` sub-command.  The same entry point
can be driven from Python, which is what this script does with a deliberately
tiny schedule so it finishes in about a minute.
"""

import tempfile
from pathlib import Path

from holab.cli import main

work = Path(tempfile.mkdtemp(prefix="holab-demo-"))
config = work / "tiny.ini"
config.write_text("""
[routes]
count = 3
n_train = 2
duration = 30

[ppo]
rollout = 300

[iteration.1]
lr = 1e-4
epochs = 10
batch = 150
prefix_s = 20
""")

# %%
# Generate traces, including the held-out route at two slower speeds.

main(["gen", "--config", str(config), "--seed", "1", "--out", str(work / "traces"), "--eval-speeds", "3,30"])

# %%
# Train, then evaluate the last checkpoint against the baseline.

main(["train", "--config", str(config), "--seed", "1", "--traces", str(work / "traces"), "--out", str(work / "run")])
main(["eval", "--checkpoint", str(work / "run" / "iteration_1.json"), "--traces", str(work / "traces"),
      "--speeds", "3,30,50", "--out", str(work / "eval")])
print("outputs in", work)
