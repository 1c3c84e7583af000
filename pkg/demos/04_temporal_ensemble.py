"""Chunked versus ensembled execution with a toy network that reports where each prediction came from."""

from __future__ import annotations

import math

import numpy as np

from mact.policy import EnsembleConfig, act, aggregate, ensemble_weights, init_state
from mact.sim import Observation

print("weights, alpha=0:", ensemble_weights(4, 0.0))
print("weights, alpha=ln2:", ensemble_weights(3, math.log(2)).round(4))
print("alpha=50 picks the oldest:", aggregate([[1.0, 0, 0], [9.0, 0, 0]], 50.0))

K = 4


def toy_net(history, position):
    # chunk row k targets x = t_query + k; y records the query step
    t = position[0]
    return np.array([[t + k, t, 0.0] for k in range(K)])


def obs(t):
    return Observation(np.zeros((1, 1, 3), np.float32), np.zeros((1, 1), np.float32), np.array([t, 0.0, 0.0]))


for mode in ("chunked", "ensemble"):
    state = init_state(T=3, K=K)
    rows = []
    for t in range(9):
        a, state = act(state, toy_net, obs(t), EnsembleConfig(alpha=0.5, mode=mode))
        rows.append(a[1])
    print(f"{mode:8s} queries at {state.queries}")
    print(f"{'':8s} weighted query step behind each action: {np.round(rows, 2).tolist()}")
