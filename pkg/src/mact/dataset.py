"""Demonstration episodes: recording, disk format, augmentation and batching.

Episode directory layout (format version 1)::

    meta.json       task spec, env config, seed, length, resolution, version
    rgb.bin         (L, H, W, 3) float32
    depth.bin       (L, H, W)    float32
    position.bin    (L, 3)       float64
    action.bin      (L, 3)       float64

Each ``.bin`` file is a little-endian array with a self-describing header::

    b"MACTARR\\0"  uint8 dtype code  uint8 ndim  uint64[ndim] shape
    uint32 crc32(header bytes above)  uint32 crc32(payload)  payload
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    MissingMetadataError,
    ParameterError,
    RecordingError,
    ShapeHeaderError,
    ShapeMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from .sim import EnvConfig, Observation, reset, step
from .taskgen import ScriptedExpert, TaskSpec, build_path

FORMAT_VERSION = 1
MAGIC = b"MACTARR\0"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}
STALL_LIMIT = 50


@dataclass
class Episode:
    rgb: np.ndarray
    depth: np.ndarray
    position: np.ndarray
    action: np.ndarray
    config: EnvConfig
    seed: int

    def __post_init__(self):
        n = len(self.position)
        if n < 2:
            raise ParameterError(f"an episode needs at least 2 steps, got {n}")
        if not (len(self.rgb) == len(self.depth) == len(self.action) == n):
            raise ShapeMismatchError("episode arrays disagree on length")
        if self.rgb.shape[1:3] != self.depth.shape[1:3]:
            raise ShapeMismatchError("rgb and depth resolutions differ")

    def __len__(self) -> int:
        return len(self.position)

    @property
    def task(self) -> TaskSpec:
        return self.config.task

    @property
    def resolution(self) -> int:
        return self.rgb.shape[1]

    def observation(self, t: int) -> Observation:
        return Observation(self.rgb[t], self.depth[t], self.position[t])


def record_episode(config: EnvConfig, seed: int, max_steps: int = 400, tolerance: float = 1.0) -> Episode:
    """Roll the scripted expert until its path is consumed."""
    state, obs = reset(config, seed)
    path = build_path(config.task, state.region, state.field, start=state.probe.position)
    expert = ScriptedExpert(path, tolerance)
    frames: list[Observation] = []
    actions = []
    stalled, last_index = 0, expert.index
    for _ in range(max_steps):
        target = expert(state.probe.position)
        if expert.done:
            break
        frames.append(obs)
        actions.append(target)
        state, obs, _ = step(state, target)
        if expert.index == last_index:
            stalled += 1
            if stalled > STALL_LIMIT:
                raise RecordingError(f"expert stuck at waypoint {expert.index} for {stalled} steps (seed {seed})")
        else:
            stalled, last_index = 0, expert.index
    # closing frame: the probe sits on the final waypoint and holds
    frames.append(obs)
    actions.append(expert(state.probe.position))
    return Episode(
        rgb=np.stack([f.rgb for f in frames]),
        depth=np.stack([f.depth for f in frames]),
        position=np.stack([f.position for f in frames]),
        action=np.stack(actions),
        config=config,
        seed=seed,
    )


def _write_array(path: Path, arr: np.ndarray) -> None:
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise ParameterError(f"unsupported dtype {arr.dtype}")
    payload = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    header = MAGIC + struct.pack("<BB", DTYPE_CODES[dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack("<II", zlib.crc32(header), zlib.crc32(payload))
    path.write_bytes(header + payload)


def read_array(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 2:
        raise TruncatedFileError(f"{path.name}: file too short for a header")
    if raw[: len(MAGIC)] != MAGIC:
        raise ShapeHeaderError(f"{path.name}: bad magic bytes")
    code, ndim = struct.unpack_from("<BB", raw, len(MAGIC))
    head_len = len(MAGIC) + 2 + 8 * ndim
    if len(raw) < head_len + 8:
        raise TruncatedFileError(f"{path.name}: truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", raw, len(MAGIC) + 2)
    head_crc, data_crc = struct.unpack_from("<II", raw, head_len)
    if zlib.crc32(raw[:head_len]) != head_crc or code not in DTYPES:
        raise ShapeHeaderError(f"{path.name}: header checksum mismatch")
    dtype = DTYPES[code]
    payload = raw[head_len + 8 :]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) < expected:
        raise TruncatedFileError(f"{path.name}: expected {expected} payload bytes, found {len(payload)}")
    if len(payload) > expected:
        raise ShapeMismatchError(f"{path.name}: {len(payload) - expected} trailing bytes")
    if zlib.crc32(payload) != data_crc:
        raise TruncatedFileError(f"{path.name}: payload checksum mismatch")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_episode(episode: Episode, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("rgb", "depth", "position", "action"):
        _write_array(d / f"{name}.bin", getattr(episode, name))
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": episode.seed,
        "length": len(episode),
        "resolution": episode.resolution,
        "task": episode.task.to_dict(),
        "env_config": episode.config.to_dict(),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d


def load_episode(directory) -> Episode:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise MissingMetadataError(f"missing metadata file {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"episode format {meta.get('format_version')} != {FORMAT_VERSION}")
    arrays = {}
    for name in ("rgb", "depth", "position", "action"):
        f = d / f"{name}.bin"
        if not f.is_file():
            raise TruncatedFileError(f"missing array file {f}")
        arrays[name] = read_array(f)
    n, res = meta["length"], meta["resolution"]
    expected = {"rgb": (n, res, res, 3), "depth": (n, res, res), "position": (n, 3), "action": (n, 3)}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ShapeMismatchError(f"{name}: shape {arrays[name].shape} != metadata {shape}")
    config = EnvConfig.from_dict(meta["env_config"])
    return Episode(config=config, seed=meta["seed"], **arrays)


def write_manifest(episode_dirs, path) -> None:
    path = Path(path)
    rel = [str(Path(p).resolve().relative_to(path.parent.resolve())) for p in episode_dirs]
    path.write_text(json.dumps({"format_version": FORMAT_VERSION, "episodes": rel}, indent=2))


def load_manifest(path) -> list[Episode]:
    path = Path(path)
    if not path.is_file():
        raise MissingMetadataError(f"missing manifest {path}")
    data = json.loads(path.read_text())
    if data.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"manifest format {data.get('format_version')} != {FORMAT_VERSION}")
    return [load_episode(path.parent / rel) for rel in data["episodes"]]


@dataclass(frozen=True)
class AugmentationSpec:
    """Magnitude ranges for each photometric/geometric perturbation.

    A range of ``None`` disables that augmentation. Magnitudes are drawn
    uniformly from the range with the per-call seed.
    """

    brightness: tuple[float, float] | None = None  # additive offset
    shear: tuple[float, float] | None = None  # degrees, horizontal shear
    blur: tuple[float, float] | None = None  # gaussian sigma, pixels
    colour: tuple[float, float] | None = None  # per-channel additive offset
    noise: tuple[float, float] | None = None  # gaussian std
    dropout: tuple[float, float] | None = None  # rectangle area fraction
    dropout_fill: float = 0.0

    @classmethod
    def default(cls) -> "AugmentationSpec":
        return cls(
            brightness=(-0.1, 0.1),
            shear=(-5.0, 5.0),
            blur=(0.0, 1.0),
            colour=(-0.05, 0.05),
            noise=(0.0, 0.02),
            dropout=(0.01, 0.10),
        )

    def validate(self) -> None:
        limits = {
            "brightness": (-0.5, 0.5),
            "shear": (-30.0, 30.0),
            "blur": (0.0, 5.0),
            "colour": (-0.5, 0.5),
            "noise": (0.0, 0.5),
            "dropout": (0.0, 0.5),
        }
        for name, (lo, hi) in limits.items():
            rng = getattr(self, name)
            if rng is not None and not (lo <= rng[0] <= rng[1] <= hi):
                raise ParameterError(f"{name} range {rng} outside safe bounds [{lo}, {hi}]")


def _dropout_rect(shape, frac: float, rng: np.random.Generator):
    h, w = shape
    area = frac * h * w
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    rh = int(np.clip(round(math.sqrt(area * aspect)), 1, h))
    rw = int(np.clip(round(area / rh), 1, w))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return slice(top, top + rh), slice(left, left + rw)


def _shear(img: np.ndarray, degrees: float) -> np.ndarray:
    h = img.shape[0]
    k = math.tan(math.radians(degrees))
    matrix = np.array([[1.0, 0.0], [k, 1.0]])
    offset = np.array([0.0, -k * (h - 1) / 2])
    if img.ndim == 2:
        return ndimage.affine_transform(img, matrix, offset=offset, order=1, mode="nearest")
    return np.stack(
        [ndimage.affine_transform(img[..., c], matrix, offset=offset, order=1, mode="nearest") for c in range(img.shape[2])],
        axis=-1,
    )


def augment(rgb: np.ndarray, spec: AugmentationSpec, seed) -> np.ndarray:
    """Seeded perturbation of one RGB image; output clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    out = np.asarray(rgb, dtype=np.float64).copy()
    if spec.shear is not None:
        angle = rng.uniform(*spec.shear)
        if angle != 0.0:
            out = _shear(out, angle)
    if spec.blur is not None:
        sigma = rng.uniform(*spec.blur)
        if sigma > 0:
            out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0))
    if spec.brightness is not None:
        out += rng.uniform(*spec.brightness)
    if spec.colour is not None:
        out += rng.uniform(*spec.colour, size=3)
    if spec.noise is not None:
        std = rng.uniform(*spec.noise)
        if std > 0:
            out += rng.normal(0.0, std, size=out.shape)
    out = np.clip(out, 0.0, 1.0)
    if spec.dropout is not None:
        frac = rng.uniform(*spec.dropout)
        if frac > 0:
            rows, cols = _dropout_rect(out.shape[:2], frac, rng)
            out[rows, cols] = spec.dropout_fill
    return out.astype(np.asarray(rgb).dtype, copy=False)


def augment_depth(depth: np.ndarray, spec: AugmentationSpec, seed, noise_scale: float = 50.0) -> np.ndarray:
    """Depth only receives noise (scaled to mm) and regional dropout."""
    rng = np.random.default_rng(seed)
    out = np.asarray(depth, dtype=np.float64).copy()
    if spec.noise is not None:
        std = rng.uniform(*spec.noise) * noise_scale
        if std > 0:
            out += rng.normal(0.0, std, size=out.shape)
    out = np.maximum(out, 0.0)
    if spec.dropout is not None:
        frac = rng.uniform(*spec.dropout)
        if frac > 0:
            rows, cols = _dropout_rect(out.shape, frac, rng)
            out[rows, cols] = 0.0
    return out.astype(np.asarray(depth).dtype, copy=False)


def pad_history(buffer, T: int) -> list:
    """Left-pad an oldest-first buffer to length ``T`` with its earliest entry."""
    items = list(buffer)
    if not items:
        raise ParameterError("cannot pad an empty history buffer")
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    items = items[-T:]
    return [items[0]] * (T - len(items)) + items


@dataclass
class TrainingSample:
    history: list[Observation]
    current_position: np.ndarray
    target_chunk: np.ndarray
    chunk_mask: np.ndarray
    episode_index: int = 0
    t: int = 0


def make_sample(episode: Episode, t: int, T: int, K: int, episode_index: int = 0) -> TrainingSample:
    first = max(0, t - T + 1)
    history = pad_history([episode.observation(i) for i in range(first, t + 1)], T)
    idx = np.arange(t, t + K)
    mask = idx < len(episode)
    chunk = episode.action[np.minimum(idx, len(episode) - 1)]
    return TrainingSample(history, episode.position[t].copy(), chunk, mask, episode_index, t)


def sample_batch(episodes, T: int, K: int, batch_size: int, seed) -> list[TrainingSample]:
    """Uniform draw over all (episode, t) pairs."""
    if not episodes:
        raise ParameterError("no episodes to sample from")
    if T < 1 or K < 1:
        raise ParameterError("T and K must be >= 1")
    lengths = np.array([len(e) for e in episodes])
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, offsets[-1], size=batch_size)
    out = []
    for f in flat:
        e = int(np.searchsorted(offsets, f, side="right") - 1)
        out.append(make_sample(episodes[e], int(f - offsets[e]), T, K, e))
    return out


@dataclass
class Batch:
    """Stacked arrays for a list of training samples."""

    rgb: np.ndarray  # (B, T, 3, H, W)
    depth: np.ndarray  # (B, T, 1, H, W)
    position: np.ndarray  # (B, 3)
    target: np.ndarray  # (B, K, 3)
    mask: np.ndarray  # (B, K)
    extras: dict = field(default_factory=dict)


def collate(samples: list[TrainingSample], augmentation: AugmentationSpec | None = None,
            seed=None, per_frame: bool = False) -> Batch:
    """Stack samples; with ``augmentation`` one draw is shared by a sample's frames unless ``per_frame``."""
    rgb = np.stack([np.stack([o.rgb for o in s.history]) for s in samples]).astype(np.float32)
    depth = np.stack([np.stack([o.depth for o in s.history]) for s in samples]).astype(np.float32)
    if augmentation is not None:
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        seeds = root.spawn(len(samples))
        for b, ss in enumerate(seeds):
            frame_seeds = ss.spawn(rgb.shape[1]) if per_frame else [ss] * rgb.shape[1]
            for t, fs in enumerate(frame_seeds):
                rgb[b, t] = augment(rgb[b, t], augmentation, fs)
                depth[b, t] = augment_depth(depth[b, t], augmentation, fs)
    return Batch(
        rgb=rgb.transpose(0, 1, 4, 2, 3),
        depth=depth[:, :, None],
        position=np.stack([s.current_position for s in samples]),
        target=np.stack([s.target_chunk for s in samples]),
        mask=np.stack([s.chunk_mask for s in samples]),
    )
