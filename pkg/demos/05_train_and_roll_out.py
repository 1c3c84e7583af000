"""Train a small MACT and a single-frame baseline on raster demonstrations, then compare rollouts.

Takes about two minutes on one CPU core. At this budget both policies are weak; with STEPS = 4000
(about 15 minutes) the history model clearly pulls ahead.
"""

from __future__ import annotations

import time

import numpy as np

from mact.dataset import record_episode
from mact.evaluation import PolicyAgent, evaluate, summarize
from mact.net import ModelConfig, TrainConfig, train
from mact.policy import EnsembleConfig, Policy
from mact.sim import EnvConfig
from mact.taskgen import TaskSpec

STEPS = 1000
RES = 32

cfg = EnvConfig(resolution=RES, task=TaskSpec(kind="raster"))
episodes = [record_episode(cfg, 10_000 + i) for i in range(30)]
hyper = TrainConfig(epochs=STEPS // 100, steps_per_epoch=100, lr=5e-4)

for T in (15, 1):
    t0 = time.time()
    model_cfg = ModelConfig(T=T, K=5, image_size=RES, channels=(16, 32, 64))
    result = train(episodes, model_cfg, hyper, seed=0)
    policy = Policy(result.model, EnsembleConfig(mode="chunked"))
    rows = evaluate(PolicyAgent(policy), cfg, range(10))
    mean, sd = summarize(rows)["score"]
    print(f"T={T:2d}: final loss {result.final_loss:.3f}, score {mean:.1f} ± {sd:.1f}, "
          f"median {np.median([m.score for _, m in rows]):.1f} ({time.time() - t0:.0f}s)")
