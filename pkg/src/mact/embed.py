"""Sinusoidal temporal and spatial positional embeddings.

Temporal rows follow the standard transformer sinusoid: for frame ``t`` and
pair index ``i`` in ``[0, d/2)``, entry ``2i`` is ``sin(t / 10000**(2i/d))``
and entry ``2i+1`` the matching cosine. The spatial table reuses the same
family with ``d/2`` channels for the row index followed by ``d/2`` channels
for the column index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

BASE = 10000.0


def temporal_pe(T: int, d: int) -> np.ndarray:
    """``(T, d)`` table of interleaved sin/cos rows."""
    if d <= 0 or d % 2:
        raise ParameterError(f"embedding width must be positive and even, got {d}")
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    t = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = t / BASE ** (2 * i / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def spatial_pe(H: int, W: int, d: int) -> np.ndarray:
    """``(d, H, W)`` table; first half encodes the row, second half the column."""
    if d <= 0 or d % 4:
        raise ParameterError(f"spatial embedding width must be divisible by 4, got {d}")
    if H < 1 or W < 1:
        raise ParameterError(f"feature map must be non-empty, got {H}x{W}")
    half = d // 2
    rows = temporal_pe(H, half)  # (H, d/2)
    cols = temporal_pe(W, half)  # (W, d/2)
    out = np.empty((d, H, W))
    out[:half] = rows.T[:, :, None]
    out[half:] = cols.T[:, None, :]
    return out


@dataclass(frozen=True)
class TokenSequence:
    """Flattened tokens with their (t, h, w) origin, t-major then h then w."""

    tokens: np.ndarray  # (T*H*W, d)
    shape: tuple[int, int, int]  # (T, H, W)

    @property
    def index(self) -> np.ndarray:
        """(L, 3) array of (t, h, w) for every token row."""
        T, H, W = self.shape
        return np.stack(np.unravel_index(np.arange(T * H * W), (T, H, W)), axis=1)

    def position_of(self, t: int, h: int, w: int) -> int:
        T, H, W = self.shape
        return int(np.ravel_multi_index((t, h, w), (T, H, W)))

    def unflatten(self) -> np.ndarray:
        """Back to ``(T, d, H, W)``."""
        T, H, W = self.shape
        return self.tokens.reshape(T, H, W, -1).transpose(0, 3, 1, 2)


def hybrid_combine(features: np.ndarray, spe: np.ndarray, tpe: np.ndarray) -> TokenSequence:
    """Add spatial and temporal embeddings to ``(T, d, H, W)`` features and flatten."""
    features = np.asarray(features)
    if features.ndim != 4:
        raise ParameterError(f"features must be (T, d, H, W), got shape {features.shape}")
    T, d, H, W = features.shape
    if spe.shape[0] != d or tpe.shape[1] != d:
        raise ParameterError(f"embedding width mismatch: features d={d}, spatial {spe.shape[0]}, temporal {tpe.shape[1]}")
    if spe.shape[1:] != (H, W):
        raise ParameterError(f"spatial size mismatch: features {H}x{W}, embedding {spe.shape[1]}x{spe.shape[2]}")
    if tpe.shape[0] != T:
        raise ParameterError(f"temporal length mismatch: features T={T}, embedding {tpe.shape[0]}")
    summed = features + spe[None] + tpe[:, :, None, None]
    tokens = summed.transpose(0, 2, 3, 1).reshape(T * H * W, d)
    return TokenSequence(tokens, (T, H, W))
