"""Tiny hierarchical mix-transformer encoder with an all-MLP decoder.

Four stages, each an overlapped patch merge (strided conv + LayerNorm)
followed by transformer blocks with spatial-reduction attention and a Mix-FFN
(linear, 3x3 depthwise conv, GELU, linear). No positional encodings, so the
same weights run on any input whose sides are divisible by 32.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MergeSpec:
    kernel: int
    stride: int
    padding: int

    def out_size(self, n: int) -> int:
        return (n + 2 * self.padding - self.kernel) // self.stride + 1


FIRST_MERGE = MergeSpec(7, 4, 3)
LATER_MERGE = MergeSpec(3, 2, 1)


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 11
    in_channels: int = 3
    stage_depths: tuple[int, ...] = (1, 1, 1, 1)
    stage_dims: tuple[int, ...] = (16, 32, 64, 128)
    stage_heads: tuple[int, ...] = (1, 2, 4, 8)
    sr_ratios: tuple[int, ...] = (8, 4, 2, 1)
    mlp_ratio: int = 4
    decoder_dim: int = 64
    input_mean: float = 0.5
    input_std: float = 0.25

    def __post_init__(self):
        for name in ("stage_depths", "stage_dims", "stage_heads", "sr_ratios"):
            value = tuple(int(v) for v in getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != 4:
                raise ValueError(f"{name} needs exactly 4 entries, got {len(value)}")
            if any(v <= 0 for v in value):
                raise ValueError(f"{name} entries must be positive")
        for dim, heads in zip(self.stage_dims, self.stage_heads):
            if dim % heads:
                raise ValueError(f"stage dim {dim} is not divisible by {heads} heads")
        if min(self.num_classes, self.decoder_dim, self.mlp_ratio, self.in_channels) <= 0:
            raise ValueError("num_classes, decoder_dim, mlp_ratio and in_channels must be positive")

    @property
    def merges(self) -> tuple[MergeSpec, ...]:
        return (FIRST_MERGE, LATER_MERGE, LATER_MERGE, LATER_MERGE)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class OverlapPatchMerge(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, spec: MergeSpec):
        super().__init__()
        self.spec = spec
        self.proj = nn.Conv2d(in_ch, out_ch, spec.kernel, spec.stride, spec.padding)
        self.norm = nn.LayerNorm(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C_in, H, W) -> (B, C_out, H', W')."""
        h, w = x.shape[-2:]
        if h < self.spec.kernel - 2 * self.spec.padding or w < self.spec.kernel - 2 * self.spec.padding:
            raise ShapeError(f"input {tuple(x.shape)} too small for merge kernel {self.spec}")
        x = self.proj(x)
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class EfficientAttention(nn.Module):
    """Multi-head self-attention whose keys/values come from a spatially reduced map."""

    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, sr_ratio, sr_ratio)
            self.sr_norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        B, N, C = x.shape
        d = C // self.heads
        q = self.q(x).reshape(B, N, self.heads, d).transpose(1, 2)
        if self.sr_ratio > 1 and h >= self.sr_ratio and w >= self.sr_ratio:
            grid = x.transpose(1, 2).reshape(B, C, h, w)
            kv_in = self.sr(grid).flatten(2).transpose(1, 2)
            kv_in = self.sr_norm(kv_in)
        else:
            kv_in = x
        k, v = self.kv(kv_in).reshape(B, -1, 2, self.heads, d).permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(out)


class MixFFN(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, 1, 1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        B, N, _ = x.shape
        x = self.fc1(x)
        x = self.dwconv(x.transpose(1, 2).reshape(B, -1, h, w)).flatten(2).transpose(1, 2)
        return self.fc2(F.gelu(x))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, sr_ratio: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = EfficientAttention(dim, heads, sr_ratio)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MixFFN(dim, dim * mlp_ratio)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.ffn(self.norm2(x), h, w)


class Stage(nn.Module):
    def __init__(self, in_ch: int, dim: int, depth: int, heads: int, sr_ratio: int, mlp_ratio: int, merge: MergeSpec):
        super().__init__()
        self.merge = OverlapPatchMerge(in_ch, dim, merge)
        self.blocks = nn.ModuleList(Block(dim, heads, sr_ratio, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def run_blocks(self, x: torch.Tensor) -> torch.Tensor:
        """Transformer blocks on a (B, C, h, w) map; spatial size unchanged."""
        B, C, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        for blk in self.blocks:
            tokens = blk(tokens, h, w)
        return tokens.transpose(1, 2).reshape(B, C, h, w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.run_blocks(self.merge(x))
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class MLPDecoder(nn.Module):
    def __init__(self, stage_dims: Sequence[int], decoder_dim: int, num_classes: int):
        super().__init__()
        self.proj = nn.ModuleList(nn.Linear(d, decoder_dim) for d in stage_dims)
        self.fuse = nn.Linear(len(stage_dims) * decoder_dim, decoder_dim)
        self.classify = nn.Linear(decoder_dim, num_classes)

    def forward(self, feats: Sequence[torch.Tensor]) -> torch.Tensor:
        size = feats[0].shape[-2:]
        ups = []
        for f, proj in zip(feats, self.proj):
            g = proj(f.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
            if g.shape[-2:] != size:
                g = F.interpolate(g, size=size, mode="bilinear", align_corners=False)
            ups.append(g)
        x = torch.cat(ups, dim=1).permute(0, 2, 3, 1)
        x = F.gelu(self.fuse(x))
        return self.classify(x).permute(0, 3, 1, 2)


class SegModel(nn.Module):
    """Encoder + decoder; ``forward`` returns full-resolution logits (B, C, H, W)."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        chans = (config.in_channels,) + config.stage_dims[:-1]
        self.stages = nn.ModuleList(
            Stage(chans[i], config.stage_dims[i], config.stage_depths[i], config.stage_heads[i],
                  config.sr_ratios[i], config.mlp_ratio, config.merges[i])
            for i in range(4)
        )
        self.decoder = MLPDecoder(config.stage_dims, config.decoder_dim, config.num_classes)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input size {h}x{w} must be divisible by 32")
        x = (x - self.config.input_mean) / self.config.input_std
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def decode(self, feats: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.decoder(feats)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.decode(self.encode(x))
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)


def _init_weights(model: nn.Module, gen: torch.Generator) -> None:
    for m in model.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            with torch.no_grad():
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def init_parameters(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> SegModel:
    """Build a model with deterministic truncated-normal init for ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    model = SegModel(config)
    _init_weights(model, gen)
    return model.to(dtype)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def to_batch(images: np.ndarray | Sequence[np.ndarray], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) or (B, H, W, 3) float images -> (B, 3, H, W) tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def stage_sizes(h: int, w: int, config: ModelConfig = ModelConfig()) -> list[tuple[int, int]]:
    sizes = []
    for spec in config.merges:
        h, w = spec.out_size(h), spec.out_size(w)
        sizes.append((h, w))
    return sizes


def softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def predict_probs(model: SegModel, image: np.ndarray) -> np.ndarray:
    """Single-pass softmax probabilities (H, W, C) for one (H, W, 3) image."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        logits = model(to_batch(image, dtype))[0]
    return softmax_np(logits.permute(1, 2, 0).double().numpy()).astype(np.float32 if dtype == torch.float32 else np.float64)

