"""Temporal and spatial sinusoidal embeddings and how they combine into tokens."""

from __future__ import annotations

import numpy as np

from mact.embed import hybrid_combine, spatial_pe, temporal_pe

d = 64
tpe = temporal_pe(15, d)
print("row 0 sin entries all zero:", np.all(tpe[0, 0::2] == 0), "cos entries all one:", np.all(tpe[0, 1::2] == 1))
print("t=1 first pair:", tpe[1, :2].round(6))

# nearby frames are closer than distant ones in embedding space
dist = np.linalg.norm(tpe[:, None] - tpe[None], axis=-1)
print("distance from frame 0 to frames 1, 5, 14:", dist[0, [1, 5, 14]].round(3))

spe = spatial_pe(4, 4, d)
print("same row shares the first half:", np.array_equal(spe[: d // 2, 1, 0], spe[: d // 2, 1, 3]))

# identical features at every frame: only the temporal rows tell frames apart
features = np.repeat(np.random.default_rng(0).normal(size=(1, d, 4, 4)), 15, axis=0)
seq = hybrid_combine(features, spe, tpe)
print("token sequence", seq.tokens.shape, "(T*H*W, d)")
i, j = seq.position_of(0, 2, 3), seq.position_of(7, 2, 3)
print("token difference equals tpe[7] - tpe[0]:", np.allclose(seq.tokens[j] - seq.tokens[i], tpe[7] - tpe[0]))
