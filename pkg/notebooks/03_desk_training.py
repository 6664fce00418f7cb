
# coding: utf-8

# # Training the scheduler and tree generator at desk scale
#
# The desk profile uses 20-node ER graphs, 24 training and 6 test graphs and
# 2000 training slots. Set SLOTS below to 2000 for the full run (several
# minutes on one core); the default is a short demonstration.

# In[1]:

import os
import time

import numpy as np

from aoi_lab.config import desk_profile
from aoi_lab.experiment import Trainer, make_dataset, run_cell

SLOTS = int(os.environ.get("DESK_SLOTS", "400"))
C_BAR = 4.0
cfg = desk_profile(c_bar=[C_BAR], train_slots=SLOTS)
train, test = make_dataset(cfg, "train"), make_dataset(cfg, "test")
print(len(train), "training graphs,", len(test), "test graphs,", cfg.nodes, "nodes each")


# In[2]:

t0 = time.time()
trainer = Trainer(cfg, train, seed=0, c_bar=C_BAR)
res = trainer.run(cfg.train_slots)
print(f"{res.slots} slots in {time.time() - t0:.0f}s, final lambda {res.lam:.3f}")


# Reward of the scheduler per slot, smoothed over 100-slot windows, and the
# average energy per slot seen by the multiplier.

# In[3]:

r1 = np.asarray(res.slot_r1)
w = 100
print("r1 by window:", np.round(r1[: len(r1) // w * w].reshape(-1, w).mean(axis=1), 3))
sched = [r for r in res.rows if r[1] == "scheduler"]
print("energy by update:", np.round([r[8] for r in sched[:: max(1, len(sched) // 10)]], 2))


# Evaluate against the Random and MST baselines on the held-out graphs. The
# topology is resampled every 20 slots and every algorithm sees the same
# sequence of graphs for a given seed.

# In[4]:

for algo in ("tgms", "random", "mst"):
    agent = trainer.agent if algo == "tgms" else None
    cells = [run_cell(cfg, rec, C_BAR, algo, s, agent, res.lam) for rec in test for s in cfg.seeds]
    aoi = np.mean([c.avg_weighted_aoi for c in cells])
    energy = np.mean([c.avg_energy for c in cells])
    print(f"{algo:7s} aoi={aoi:.3f} energy={energy:.2f} (budget {C_BAR})")
