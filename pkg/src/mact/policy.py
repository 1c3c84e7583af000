"""Closed-loop execution: T-step observation memory and temporal ensembling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataset import pad_history
from .errors import ParameterError


def ensemble_weights(n: int, alpha: float) -> np.ndarray:
    """``w_i = exp(-alpha*i) / sum_j exp(-alpha*j)`` for ``i = 0..n-1``."""
    if n < 1:
        raise ParameterError(f"need at least one candidate, got n={n}")
    if not np.isfinite(alpha):
        raise ParameterError(f"alpha must be finite, got {alpha}")
    # shifting the exponent keeps large alpha stable without changing the ratio
    logits = -alpha * np.arange(n, dtype=np.float64)
    w = np.exp(logits - logits.max())
    return w / w.sum()


def aggregate(candidates, alpha: float) -> np.ndarray:
    """Weighted sum of candidates for one timestep, index 0 first."""
    c = np.asarray(candidates, dtype=np.float64)
    if c.shape[0] < 1:
        raise ParameterError("aggregate needs at least one candidate")
    w = ensemble_weights(c.shape[0], alpha)
    return np.tensordot(w, c, axes=1)


@dataclass(frozen=True)
class EnsembleConfig:
    alpha: float = 0.01
    mode: str = "ensemble"  # or "chunked"
    oldest_first: bool = True

    def __post_init__(self):
        if self.mode not in ("ensemble", "chunked"):
            raise ParameterError(f"unknown execution mode {self.mode!r}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ParameterError(f"alpha must be finite and >= 0, got {self.alpha}")


class HistoryBuffer:
    """Up to ``T`` most recent observations, oldest first."""

    def __init__(self, T: int):
        if T < 1:
            raise ParameterError(f"T must be >= 1, got {T}")
        self.T = T
        self._items: deque = deque(maxlen=T)

    def push(self, obs) -> None:
        self._items.append(obs)

    def __len__(self) -> int:
        return len(self._items)

    def view(self) -> list:
        return list(self._items)

    def padded(self) -> list:
        return pad_history(self._items, self.T)


@dataclass
class ChunkBuffer:
    """Chunks whose span ``[birth, birth + K)`` still covers the current step."""

    K: int
    chunks: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def add(self, birth: int, chunk: np.ndarray) -> None:
        self.chunks.append((birth, np.asarray(chunk, dtype=np.float64)))

    def evict(self, t: int) -> None:
        self.chunks = [(b, c) for b, c in self.chunks if b <= t < b + self.K]

    def candidates(self, t: int) -> np.ndarray:
        """Predictions for step ``t``, oldest chunk first."""
        return np.stack([c[t - b] for b, c in self.chunks])


@dataclass
class PolicyState:
    history: HistoryBuffer
    chunks: ChunkBuffer
    t: int = 0
    queries: list[int] = field(default_factory=list)


def init_state(T: int, K: int) -> PolicyState:
    return PolicyState(HistoryBuffer(T), ChunkBuffer(K))


def act(state: PolicyState, net, observation, config: EnsembleConfig) -> tuple[np.ndarray, PolicyState]:
    """Push ``observation``, query ``net`` as the mode requires, and return the action for step ``state.t``.

    ``net(history, position)`` must return a ``(K, 3)`` chunk for a padded
    history of length ``T``. The state is updated in place and returned.
    """
    state.history.push(observation)
    t, K = state.t, state.chunks.K
    if config.mode == "chunked":
        if t % K == 0:
            state.chunks.chunks = []
            state.chunks.add(t, net(state.history.padded(), observation.position))
            state.queries.append(t)
        state.chunks.evict(t)
        birth, chunk = state.chunks.chunks[0]
        action = chunk[t - birth].copy()
    else:
        state.chunks.add(t, net(state.history.padded(), observation.position))
        state.queries.append(t)
        state.chunks.evict(t)
        cands = state.chunks.candidates(t)
        if not config.oldest_first:
            cands = cands[::-1]
        action = aggregate(cands, config.alpha)
    state.t += 1
    return action, state


class Policy:
    """Rollout-facing wrapper: keeps its own buffers and step counter."""

    def __init__(self, model, config: EnsembleConfig = EnsembleConfig()):
        self.model = model
        self.config = config
        self.reset()

    def reset(self) -> None:
        c = self.model.config
        self.state = init_state(c.T, c.K)

    def __call__(self, observation) -> np.ndarray:
        action, self.state = act(self.state, self.model.predict, observation, self.config)
        return action
