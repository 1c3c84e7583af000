"""Memory-augmented action-chunking transformer with a CVAE style encoder.

Per sample the encoder sees ``[style, position, image tokens...]``. Image
tokens come from a small strided conv tokenizer applied to each of the last
``T`` frames (and, optionally, to depth through a second tokenizer), with the
hybrid spatial + temporal sinusoidal embedding added before flattening. The
decoder runs ``K`` learned queries with cross-attention and a linear head
maps each to a 3D offset from the current probe position.

Actions, positions and depth are normalised with dataset statistics held in
non-trainable buffers; ``forward`` returns absolute positions in mm.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import AugmentationSpec, Batch, collate, sample_batch
from .embed import spatial_pe, temporal_pe
from .errors import EpisodeFormatError, NumericError, ParameterError, VersionMismatchError

CHECKPOINT_VERSION = 1
KL_WEIGHT = 10.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    dim_feedforward: int = 128
    T: int = 15
    K: int = 5
    z_dim: int = 16
    image_size: int = 64
    feature_size: int = 4
    channels: tuple[int, ...] = (16, 32, 64, 64)
    style_hidden: int = 64
    use_depth: bool = False
    use_pos_embed: bool = True
    action_dim: int = 3

    def validate(self) -> None:
        if self.d_model % self.n_heads or self.d_model % 4:
            raise ParameterError(f"d_model {self.d_model} must be divisible by n_heads and by 4")
        if self.T < 1 or self.K < 1 or self.z_dim < 1:
            raise ParameterError("T, K and z_dim must be >= 1")
        ratio = self.image_size / self.feature_size
        n_down = int(round(math.log2(ratio))) if ratio >= 1 else -1
        if n_down < 0 or 2**n_down != ratio or n_down > len(self.channels):
            raise ParameterError(
                f"image_size {self.image_size} must be feature_size {self.feature_size} times 2**n "
                f"with n <= {len(self.channels)} conv blocks"
            )
        if self.action_dim != 3:
            raise ParameterError("actions are 3D Cartesian targets")

    @property
    def n_down(self) -> int:
        return int(round(math.log2(self.image_size / self.feature_size)))

    @property
    def tokens_per_frame(self) -> int:
        return self.feature_size**2 * (2 if self.use_depth else 1)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def tiny_config(**overrides) -> ModelConfig:
    """Smallest config that still exercises every mechanism; used for gradient checks."""
    base = dict(
        d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, dim_feedforward=16, T=2, K=2,
        z_dim=4, image_size=8, feature_size=2, channels=(4, 4, 8, 8), style_hidden=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _uniform_fan_in(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=t.dtype) * 2 * bound - bound)


class ConvTokenizer(nn.Module):
    """Strided 3x3 conv blocks with GELU, then a 1x1 projection to ``d_model``."""

    def __init__(self, config: ModelConfig, in_channels: int = 3):
        super().__init__()
        layers = []
        c_in = in_channels
        for k, c_out in enumerate(config.channels):
            stride = 2 if k < config.n_down else 1
            layers.append(nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1))
            c_in = c_out
        self.blocks = nn.ModuleList(layers)
        self.proj = nn.Conv2d(c_in, config.d_model, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.blocks:
            x = F.gelu(conv(x))
        return self.proj(x)


class Attention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.record_weights = False
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, memory: torch.Tensor | None = None) -> torch.Tensor:
        memory = x if memory is None else memory
        B, Lq, D = x.shape
        Lk = memory.shape[1]
        h, dh = self.n_heads, D // self.n_heads
        q = self.q(x).view(B, Lq, h, dh).transpose(1, 2)
        k = self.k(memory).view(B, Lk, h, dh).transpose(1, 2)
        v = self.v(memory).view(B, Lk, h, dh).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        if self.record_weights:
            self.last_weights = weights.detach()
        y = (weights @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, hidden)
        self.fc2 = nn.Linear(hidden, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, c: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(c.d_model)
        self.attn = Attention(c.d_model, c.n_heads)
        self.norm2 = nn.LayerNorm(c.d_model)
        self.ff = FeedForward(c.d_model, c.dim_feedforward)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, c: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(c.d_model)
        self.self_attn = Attention(c.d_model, c.n_heads)
        self.norm2 = nn.LayerNorm(c.d_model)
        self.cross_attn = Attention(c.d_model, c.n_heads)
        self.norm3 = nn.LayerNorm(c.d_model)
        self.ff = FeedForward(c.d_model, c.dim_feedforward)

    def forward(self, q, memory):
        q = q + self.self_attn(self.norm1(q))
        q = q + self.cross_attn(self.norm2(q), memory)
        return q + self.ff(self.norm3(q))


class StyleEncoder(nn.Module):
    """MLP over the normalised target chunk and current position -> (mu, logvar)."""

    def __init__(self, c: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(c.K * 3 + 3, c.style_hidden)
        self.fc2 = nn.Linear(c.style_hidden, c.style_hidden)
        self.fc3 = nn.Linear(c.style_hidden, 2 * c.z_dim)
        self.z_dim = c.z_dim

    def forward(self, chunk_norm: torch.Tensor, pos_norm: torch.Tensor):
        x = torch.cat([chunk_norm.flatten(1), pos_norm], dim=1)
        x = F.gelu(self.fc2(F.gelu(self.fc1(x))))
        out = self.fc3(x)
        return out[:, : self.z_dim], out[:, self.z_dim :]


@dataclass
class StyleVar:
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor
    eps: torch.Tensor


class MACT(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        self.rgb_tokenizer = ConvTokenizer(c, 3)
        self.depth_tokenizer = ConvTokenizer(c, 3) if c.use_depth else None
        self.style_proj = nn.Linear(c.z_dim, c.d_model)
        self.pos_proj = nn.Linear(3, c.d_model)
        self.type_embed = nn.Parameter(torch.zeros(2, c.d_model))
        self.encoder = nn.ModuleList(EncoderLayer(c) for _ in range(c.n_enc_layers))
        self.enc_norm = nn.LayerNorm(c.d_model)
        self.queries = nn.Parameter(torch.zeros(c.K, c.d_model))
        self.decoder = nn.ModuleList(DecoderLayer(c) for _ in range(c.n_dec_layers))
        self.dec_norm = nn.LayerNorm(c.d_model)
        self.head = nn.Linear(c.d_model, 3)
        self.style_encoder = StyleEncoder(c)

        spe = torch.from_numpy(spatial_pe(c.feature_size, c.feature_size, c.d_model))
        tpe = torch.from_numpy(temporal_pe(c.T, c.d_model))
        # (T, d, H, W) sum of both tables
        self.register_buffer("pos_table", (spe[None] + tpe[:, :, None, None]).float())
        self.register_buffer("pos_mean", torch.zeros(3))
        self.register_buffer("pos_std", torch.ones(3))
        self.register_buffer("act_mean", torch.zeros(c.K, 3))
        self.register_buffer("act_std", torch.ones(c.K, 3))
        self.register_buffer("depth_ref", torch.tensor([60.0, 10.0]))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int, zero_head: bool = True, embed_scale: float = 0.1) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                fan_in = module.weight[0].numel()
                _uniform_fan_in(module.weight, fan_in, gen)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        with torch.no_grad():
            for p in (self.type_embed, self.queries):
                p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * embed_scale)
            if zero_head:
                self.head.weight.zero_()
                self.head.bias.zero_()

    # normalisation -------------------------------------------------------
    def set_normalization(self, stats: dict) -> None:
        with torch.no_grad():
            for name, value in stats.items():
                getattr(self, name).copy_(torch.as_tensor(value, dtype=getattr(self, name).dtype))

    def normalize_position(self, pos):
        return (pos - self.pos_mean) / self.pos_std

    def normalize_chunk(self, chunk, pos):
        return (chunk - pos[:, None, :] - self.act_mean) / self.act_std

    def denormalize_chunk(self, chunk_norm, pos):
        return chunk_norm * self.act_std + self.act_mean + pos[:, None, :]

    # network stages ------------------------------------------------------
    def tokenize_images(self, rgb: torch.Tensor, depth: torch.Tensor | None = None) -> torch.Tensor:
        """``(B, T, 3, H, W)`` [+ depth ``(B, T, 1, H, W)``] -> ``(B, T, S, d, h, w)`` feature maps."""
        c = self.config
        if rgb.ndim != 5 or rgb.shape[1] != c.T or rgb.shape[-1] != c.image_size or rgb.shape[-2] != c.image_size:
            raise ParameterError(
                f"tokenizer: expected (B, {c.T}, 3, {c.image_size}, {c.image_size}) images, got {tuple(rgb.shape)}"
            )
        B, T = rgb.shape[:2]
        maps = [self.rgb_tokenizer((rgb - 0.5).flatten(0, 1))]
        if c.use_depth:
            if depth is None or depth.shape[-2:] != rgb.shape[-2:] or depth.shape[:2] != rgb.shape[:2]:
                raise ParameterError("tokenizer: depth history missing or resolution mismatch")
            d = (depth - self.depth_ref[0]) / self.depth_ref[1]
            maps.append(self.depth_tokenizer(d.expand(-1, -1, 3, -1, -1).flatten(0, 1)))
        feats = torch.stack(maps, dim=1)
        return feats.view(B, T, len(maps), *feats.shape[2:])

    def image_tokens(self, feats: torch.Tensor) -> torch.Tensor:
        """Add hybrid embeddings (when enabled) and flatten t-major, then stream, h, w."""
        if self.config.use_pos_embed:
            feats = feats + self.pos_table[None, :, None]
        B, T, S, d, h, w = feats.shape
        return feats.permute(0, 1, 2, 4, 5, 3).reshape(B, T * S * h * w, d)

    def encode_style(self, target_chunk, position, eps: torch.Tensor) -> StyleVar:
        pos_n = self.normalize_position(position)
        mu, logvar = self.style_encoder(self.normalize_chunk(target_chunk, position), pos_n)
        z = mu + torch.exp(0.5 * logvar) * eps
        return StyleVar(mu, logvar, z, eps)

    def encoder_input(self, rgb, depth, position, z) -> torch.Tensor:
        img = self.image_tokens(self.tokenize_images(rgb, depth))
        style = self.style_proj(z) + self.type_embed[0]
        pos = self.pos_proj(self.normalize_position(position)) + self.type_embed[1]
        return torch.cat([style[:, None], pos[:, None], img], dim=1)

    def decode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Encoder + decoder + head on a prepared token sequence -> normalised offsets (B, K, 3)."""
        x = tokens
        for layer in self.encoder:
            x = layer(x)
        memory = self.enc_norm(x)
        q = self.queries[None].expand(tokens.shape[0], -1, -1)
        for layer in self.decoder:
            q = layer(q, memory)
        return self.head(self.dec_norm(q))

    def forward_normalized(self, rgb, depth, position, z) -> torch.Tensor:
        return self.decode_tokens(self.encoder_input(rgb, depth, position, z))

    def forward(self, rgb, depth, position, z) -> torch.Tensor:
        """Absolute target positions ``(B, K, 3)`` in mm."""
        return self.denormalize_chunk(self.forward_normalized(rgb, depth, position, z), position)

    # inference -----------------------------------------------------------
    @torch.no_grad()
    def predict(self, history, position) -> np.ndarray:
        """Chunk ``(K, 3)`` for one padded history of observations, with ``z = 0``."""
        c = self.config
        if len(history) != c.T:
            raise ParameterError(f"history has {len(history)} frames, model expects T={c.T}")
        dtype = self.pos_std.dtype
        rgb = torch.from_numpy(np.stack([o.rgb for o in history]).transpose(0, 3, 1, 2).copy())[None].to(dtype)
        depth = torch.from_numpy(np.stack([o.depth for o in history])[:, None].copy())[None].to(dtype)
        pos = torch.as_tensor(np.asarray(position, dtype=np.float64), dtype=dtype)[None]
        z = torch.zeros(1, c.z_dim, dtype=dtype)
        return self.forward(rgb, depth, pos, z)[0].double().numpy()


def named_params(model: MACT) -> dict[str, torch.Tensor]:
    return dict(model.named_parameters())


def loss(pred, target, mask, mu, logvar, kl_weight: float = KL_WEIGHT):
    """L1 over unmasked chunk entries plus ``kl_weight`` times the diagonal-Gaussian KL.

    Returns ``(total, {"l1": ..., "kl": ...})``; inputs may be arrays or tensors.
    """
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    mu, logvar = torch.as_tensor(mu), torch.as_tensor(logvar)
    if pred.shape != target.shape:
        raise ParameterError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if mask.shape != pred.shape[:-1]:
        raise ParameterError(f"mask {tuple(mask.shape)} does not match chunk {tuple(pred.shape[:-1])}")
    n_real = mask.sum()
    if n_real == 0:
        raise ParameterError("every chunk entry is masked")
    m = mask.to(pred.dtype)[..., None]
    l1 = ((pred - target).abs() * m).sum() / (n_real * pred.shape[-1])
    kl_terms = 0.5 * (mu**2 + torch.exp(logvar) - 1.0 - logvar)
    kl = kl_terms.sum(-1).mean() if kl_terms.ndim > 1 else kl_terms.sum()
    total = l1 + kl_weight * kl
    return total, {"l1": l1, "kl": kl}


def batch_tensors(model: MACT, batch: Batch) -> dict[str, torch.Tensor]:
    dtype = model.pos_std.dtype
    return {
        "rgb": torch.from_numpy(batch.rgb).to(dtype),
        "depth": torch.from_numpy(batch.depth).to(dtype),
        "position": torch.from_numpy(batch.position).to(dtype),
        "target": torch.from_numpy(batch.target).to(dtype),
        "mask": torch.from_numpy(batch.mask),
    }


def compute_loss(model: MACT, batch: Batch | dict, eps: torch.Tensor):
    """Training objective on one batch with a fixed reparameterisation noise ``eps``."""
    t = batch if isinstance(batch, dict) else batch_tensors(model, batch)
    style = model.encode_style(t["target"], t["position"], eps)
    pred = model.forward_normalized(t["rgb"], t["depth"], t["position"], style.z)
    target = model.normalize_chunk(t["target"], t["position"])
    return loss(pred, target, t["mask"], style.mu, style.logvar)


def grad(model: MACT, batch: Batch, eps: torch.Tensor | None = None, seed: int = 0) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of the training loss for every named parameter."""
    t = batch_tensors(model, batch)
    if eps is None:
        gen = torch.Generator().manual_seed(seed)
        eps = torch.randn(len(batch.position), model.config.z_dim, generator=gen, dtype=t["position"].dtype)
    model.zero_grad(set_to_none=True)
    total, parts = compute_loss(model, t, eps)
    if not torch.isfinite(total):
        raise NumericError(f"non-finite loss {total.item()} (l1={parts['l1'].item()}, kl={parts['kl'].item()})")
    total.backward()
    return {
        name: (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for name, p in model.named_parameters()
    }


def dataset_statistics(episodes, K: int, min_std: float = 1.0) -> dict[str, np.ndarray]:
    positions = np.concatenate([e.position for e in episodes])
    offsets = [[] for _ in range(K)]
    for e in episodes:
        n = len(e)
        for k in range(K):
            if n > k:
                offsets[k].append(e.action[k:] - e.position[: n - k])
    act = [np.concatenate(o) if o else np.zeros((1, 3)) for o in offsets]
    standoff = episodes[0].config.camera_standoff
    return {
        "pos_mean": positions.mean(0),
        "pos_std": np.maximum(positions.std(0), min_std),
        "act_mean": np.stack([a.mean(0) for a in act]),
        "act_std": np.maximum(np.stack([a.std(0) for a in act]), min_std),
        "depth_ref": np.array([standoff, 10.0]),
    }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-4
    steps_per_epoch: int | None = None
    weight_decay: float = 0.0
    grad_clip: float | None = 10.0
    augmentation: AugmentationSpec | None = None
    per_frame_augmentation: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        aug = d.pop("augmentation", None)
        if aug == "default":
            aug = AugmentationSpec.default()
        elif isinstance(aug, dict):
            aug = AugmentationSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()})
        return cls(augmentation=aug, **d)


@dataclass
class TrainResult:
    model: MACT
    curve: list[dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.curve[-1]["loss"]

    def write_curve(self, path) -> None:
        lines = ["epoch,loss,l1,kl"]
        lines += [f"{r['epoch']},{r['loss']!r},{r['l1']!r},{r['kl']!r}" for r in self.curve]
        Path(path).write_text("\n".join(lines) + "\n")


def train(episodes, config: ModelConfig, hyper: TrainConfig = TrainConfig(), seed: int = 0,
          log=None) -> TrainResult:
    """Adam over uniformly sampled (episode, t) windows; returns the model and per-epoch loss."""
    if not episodes:
        raise ParameterError("training needs at least one episode")
    torch.manual_seed(seed)
    model = MACT(config, seed=seed)
    model.set_normalization(dataset_statistics(episodes, config.K))
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    n_samples = sum(len(e) for e in episodes)
    steps = hyper.steps_per_epoch or max(1, math.ceil(n_samples / hyper.batch_size))
    seeds = np.random.SeedSequence(seed)
    gen = torch.Generator().manual_seed(seed)
    result = TrainResult(model)
    for epoch in range(hyper.epochs):
        sums = {"loss": 0.0, "l1": 0.0, "kl": 0.0}
        for s in range(steps):
            sample_seed, augment_seed = seeds.spawn(2)
            samples = sample_batch(episodes, config.T, config.K, hyper.batch_size, sample_seed)
            batch = collate(samples, hyper.augmentation, augment_seed, hyper.per_frame_augmentation)
            eps = torch.randn(hyper.batch_size, config.z_dim, generator=gen)
            total, parts = compute_loss(model, batch, eps)
            if not torch.isfinite(total):
                raise NumericError(
                    f"training diverged at epoch {epoch} step {s}: loss={total.item()}, "
                    f"l1={parts['l1'].item()}, kl={parts['kl'].item()}"
                )
            opt.zero_grad(set_to_none=True)
            total.backward()
            if hyper.grad_clip is not None:
                nn.utils.clip_grad_norm_(model.parameters(), hyper.grad_clip)
            opt.step()
            sums["loss"] += total.item()
            sums["l1"] += parts["l1"].item()
            sums["kl"] += parts["kl"].item()
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        result.curve.append(row)
        if log is not None:
            log(row)
    model.eval()
    return result


def save_checkpoint(model: MACT, path) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"format_version": CHECKPOINT_VERSION, "config": model.config.to_dict()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> MACT:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise EpisodeFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"checkpoint format {meta.get('format_version')} != {CHECKPOINT_VERSION}")
        model = MACT(ModelConfig.from_dict(meta["config"]))
        state = {k[len("param/"):]: torch.from_numpy(data[k]) for k in data.files if k.startswith("param/")}
    model.load_state_dict(state)
    model.eval()
    return model


__all__ = [
    "MACT", "ModelConfig", "StyleVar", "TrainConfig", "TrainResult", "compute_loss", "dataset_statistics",
    "grad", "load_checkpoint", "loss", "named_params", "save_checkpoint", "tiny_config", "train",
]
