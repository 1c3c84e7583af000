"""Record expert episodes, write them to disk, read them back and assemble a training batch."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from mact.dataset import (
    AugmentationSpec,
    collate,
    load_manifest,
    make_sample,
    record_episode,
    sample_batch,
    save_episode,
    write_manifest,
)
from mact.sim import EnvConfig
from mact.taskgen import TaskSpec

cfg = EnvConfig(resolution=32, task=TaskSpec(kind="raster"))
episodes = [record_episode(cfg, seed) for seed in range(3)]
print("episode lengths:", [len(e) for e in episodes])

with tempfile.TemporaryDirectory() as tmp:
    dirs = [save_episode(e, Path(tmp) / f"ep{i}") for i, e in enumerate(episodes)]
    write_manifest(dirs, Path(tmp) / "manifest.json")
    loaded = load_manifest(Path(tmp) / "manifest.json")
    same = all(np.array_equal(a.rgb, b.rgb) and np.array_equal(a.action, b.action) for a, b in zip(episodes, loaded))
    print("disk round trip exact:", same)

# at t = 0 the history is the first frame repeated; near the end the chunk is masked
s0 = make_sample(episodes[0], 0, T=4, K=5)
print("history at t=0 repeats frame 0:", all(np.array_equal(o.rgb, s0.history[0].rgb) for o in s0.history))
s_end = make_sample(episodes[0], len(episodes[0]) - 2, T=4, K=5)
print("chunk mask two steps from the end:", s_end.chunk_mask.tolist())

samples = sample_batch(episodes, T=4, K=5, batch_size=6, seed=0)
batch = collate(samples, AugmentationSpec.default(), seed=0)
print("batch rgb", batch.rgb.shape, "target", batch.target.shape, "mask", batch.mask.shape)
