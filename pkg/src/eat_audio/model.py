"""EAT: anti-aliased 1-D conv trunk + transformer encoder over raw waveforms."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class EatConfig:
    base_channels: int = 16
    downsample_factors: tuple[int, ...] = (4, 4, 4, 4)
    # the trailing stages that are followed by dilated residual stacks
    dilated_stages: int = 2
    res_blocks_per_stage: int = 5
    dw_kernel: int = 15
    expansion: int = 4
    dilations: tuple[int, ...] = (1, 3, 9)
    dilated_kernel: int = 3
    embed_dim: int = 128
    transformer_layers: int = 4
    transformer_heads: int = 8
    mlp_ratio: int = 4
    max_frames: int = 1024
    num_classes: int = 50
    in_channels: int = 1
    multi_label: bool = False
    # ablation switches
    residual: str = "modified"  # or "plain"
    dilated: bool = True
    head: str = "transformer"  # or "conv_pool"
    positional: bool = True
    zero_init_residual: bool = True

    def __post_init__(self):
        self.downsample_factors = tuple(int(d) for d in self.downsample_factors)
        self.dilations = tuple(int(d) for d in self.dilations)
        positive = ("base_channels", "embed_dim", "transformer_heads", "num_classes", "in_channels",
                    "dw_kernel", "dilated_kernel", "expansion", "mlp_ratio", "max_frames")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.res_blocks_per_stage < 0 or self.transformer_layers < 0:
            raise ValueError("block counts must be non-negative")
        if not self.downsample_factors or any(d < 1 for d in self.downsample_factors):
            raise ValueError(f"downsample factors must be >= 1, got {self.downsample_factors}")
        if not 0 <= self.dilated_stages <= len(self.downsample_factors):
            raise ValueError("dilated_stages exceeds the number of stages")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be >= 1, got {self.dilations}")
        if self.embed_dim % self.transformer_heads:
            raise ValueError("embed_dim must be divisible by transformer_heads")
        if self.dw_kernel % 2 == 0 or self.dilated_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.residual not in ("modified", "plain"):
            raise ValueError(f"unknown residual kind {self.residual!r}")
        if self.head not in ("transformer", "conv_pool"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def decimation(self) -> int:
        return math.prod(self.downsample_factors)

    def stage_channels(self) -> list[int]:
        """Output width of each stage: base_channels doubled at every stage."""
        return [self.base_channels * 2 ** (i + 1) for i in range(len(self.downsample_factors))]

    def frames_for(self, length: int) -> int:
        for d in self.downsample_factors:
            length = -(-length // d)
        return length

    def dilated_receptive_field(self) -> int:
        return 1 + sum((self.dilated_kernel - 1) * d for d in self.effective_dilations())

    def effective_dilations(self) -> tuple[int, ...]:
        return self.dilations if self.dilated else (1,) * len(self.dilations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["downsample_factors"] = list(self.downsample_factors)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EatConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown EatConfig keys: {sorted(unknown)}")
        return cls(**d)


def eat_s(num_classes: int = 50, **kw) -> EatConfig:
    return EatConfig(base_channels=16, transformer_layers=4, transformer_heads=8, embed_dim=128,
                     num_classes=num_classes, **kw)


def eat_m(num_classes: int = 50, **kw) -> EatConfig:
    return EatConfig(base_channels=32, transformer_layers=6, transformer_heads=16, embed_dim=256,
                     num_classes=num_classes, **kw)


def binomial_kernel(factor: int) -> torch.Tensor:
    """Normalized binomial low-pass of length 2*factor - 1."""
    n = 2 * factor - 2
    taps = torch.tensor([math.comb(n, k) for k in range(n + 1)], dtype=torch.float64)
    return taps / taps.sum()


class ChannelNorm(nn.Module):
    """LayerNorm over channels at each time step of a (B, C, T) tensor."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class AntiAliasedDownsample(nn.Module):
    """Stride-1 learnable conv, fixed binomial blur, keep every ``factor``-th frame, then norm + GELU."""

    def __init__(self, in_channels: int, out_channels: int, factor: int):
        super().__init__()
        self.factor = factor
        kernel = 2 * factor + 1
        self.conv = nn.Conv1d(in_channels, out_channels, kernel, padding=kernel // 2)
        self.register_buffer("blur", binomial_kernel(factor).float().view(1, 1, -1), persistent=False)
        self.norm = ChannelNorm(out_channels)
        # a random bias would swamp quiet inputs before the norm; zero keeps the stage scale-invariant
        nn.init.zeros_(self.conv.bias)

    def lowpass(self, x):
        """Blur + decimate; output length ceil(T / factor)."""
        if self.factor == 1:
            return x
        c = x.shape[1]
        k = self.blur.to(x.dtype).expand(c, 1, -1)
        return F.conv1d(x, k, stride=self.factor, padding=self.factor - 1, groups=c)

    def forward(self, x):
        if x.shape[-1] < self.factor:
            raise ValueError(f"input of {x.shape[-1]} frames is shorter than factor {self.factor}")
        return F.gelu(self.norm(self.lowpass(self.conv(x))))


class ModifiedResidualBlock(nn.Module):
    """x + f(dw(norm(x))): large-kernel depthwise conv, then a pointwise MLP across channels."""

    def __init__(self, channels: int, kernel: int = 15, expansion: int = 4, zero_init: bool = True):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.dw = nn.Conv1d(channels, channels, kernel, padding=kernel // 2, groups=channels)
        self.pw1 = nn.Conv1d(channels, expansion * channels, 1)
        self.pw2 = nn.Conv1d(expansion * channels, channels, 1)
        if zero_init:
            nn.init.zeros_(self.pw2.weight)
            nn.init.zeros_(self.pw2.bias)

    def forward(self, x):
        if x.shape[1] != self.dw.in_channels:
            raise ValueError(f"expected {self.dw.in_channels} channels, got {x.shape[1]}")
        h = F.gelu(self.dw(self.norm(x)))
        return x + self.pw2(F.gelu(self.pw1(h)))


class PlainResidualBlock(nn.Module):
    """Ablation baseline: two dense kernel-3 convolutions."""

    def __init__(self, channels: int, zero_init: bool = True):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)
        if zero_init:
            nn.init.zeros_(self.conv2.weight)
            nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(F.gelu(self.conv1(self.norm(x))))


class DilatedResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, kernel: int = 3, zero_init: bool = True):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.conv = nn.Conv1d(channels, channels, kernel, dilation=dilation,
                              padding=dilation * (kernel - 1) // 2)
        self.pw = nn.Conv1d(channels, channels, 1)
        if zero_init:
            nn.init.zeros_(self.pw.weight)
            nn.init.zeros_(self.pw.bias)

    def forward(self, x):
        return x + self.pw(F.gelu(self.conv(F.gelu(self.norm(x)))))


class DilatedResidualStack(nn.Sequential):
    def __init__(self, channels: int, dilations=(1, 3, 9), kernel: int = 3, zero_init: bool = True):
        super().__init__(*[DilatedResidualBlock(channels, d, kernel, zero_init) for d in dilations])
        self.receptive_field = 1 + sum((kernel - 1) * d for d in dilations)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def attention_weights(self, x):
        b, t, d = x.shape
        q, k, _ = self.qkv(x).view(b, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d // self.heads), dim=-1)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d // self.heads), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(b, t, d))


class EncoderLayer(nn.Module):
    """Pre-norm transformer layer."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerEncoder(nn.Module):
    """Learned positional embedding, pre-norm layers, final LayerNorm. Input (B, T, D)."""

    def __init__(self, dim: int, layers: int, heads: int, mlp_ratio: int = 4, max_frames: int = 1024,
                 positional: bool = True):
        super().__init__()
        self.dim = dim
        self.pos = nn.Parameter(torch.randn(1, max_frames, dim) * 0.02) if positional else None
        self.layers = nn.ModuleList([EncoderLayer(dim, heads, mlp_ratio) for _ in range(layers)])
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected embedding dim {self.dim}, got {x.shape[-1]}")
        if self.pos is not None:
            if x.shape[1] > self.pos.shape[1]:
                raise ValueError(f"{x.shape[1]} frames exceed max_frames={self.pos.shape[1]}")
            x = x + self.pos[:, : x.shape[1]]
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class EatModel(nn.Module):
    def __init__(self, cfg: EatConfig):
        super().__init__()
        self.config = cfg
        widths = cfg.stage_channels()
        n_stages = len(widths)
        stages = []
        c_in = cfg.in_channels
        for i, (d, c) in enumerate(zip(cfg.downsample_factors, widths)):
            blocks = [AntiAliasedDownsample(c_in, c, d)]
            for _ in range(cfg.res_blocks_per_stage):
                if cfg.residual == "modified":
                    blocks.append(ModifiedResidualBlock(c, cfg.dw_kernel, cfg.expansion, cfg.zero_init_residual))
                else:
                    blocks.append(PlainResidualBlock(c, cfg.zero_init_residual))
            if i >= n_stages - cfg.dilated_stages:
                blocks.append(DilatedResidualStack(c, cfg.effective_dilations(), cfg.dilated_kernel,
                                                   cfg.zero_init_residual))
            stages.append(nn.Sequential(*blocks))
            c_in = c
        self.stages = nn.ModuleList(stages)
        self.project = nn.Conv1d(c_in, cfg.embed_dim, 1)
        if cfg.head == "transformer":
            self.encoder = TransformerEncoder(cfg.embed_dim, cfg.transformer_layers, cfg.transformer_heads,
                                              cfg.mlp_ratio, cfg.max_frames, cfg.positional)
        else:
            self.encoder = None
        self.classifier = nn.Linear(cfg.embed_dim, cfg.num_classes)

    def features(self, x):
        """(B, L) or (B, C_in, L) waveforms -> (B, T, D) frame embeddings."""
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        for stage in self.stages:
            x = stage(x)
        x = self.project(x).transpose(1, 2)
        if self.encoder is not None:
            return self.encoder(x)
        return F.gelu(x)

    def forward(self, x):
        return self.classifier(self.features(x).mean(dim=1))


def build(cfg: EatConfig, seed: int = 0, dtype=torch.float32) -> EatModel:
    """Deterministically initialized model; the global torch RNG is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = EatModel(cfg)
    return model.to(dtype)


def param_count(model_or_cfg) -> int:
    model = build(model_or_cfg) if isinstance(model_or_cfg, EatConfig) else model_or_cfg
    return sum(p.numel() for p in model.parameters())


def min_input_length(cfg: EatConfig) -> int:
    """Input length that leaves one frame after full decimation; any shorter may be rejected."""
    return math.prod(cfg.downsample_factors)


def forward(model: EatModel, batch) -> torch.Tensor:
    """Logits (B, C) for a batch of equal-length waveforms (array or tensor)."""
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(batch) if not torch.is_tensor(batch) else batch, dtype=dtype)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    need = min_input_length(model.config)
    if x.shape[-1] < need:
        raise ValueError(f"input of {x.shape[-1]} samples is shorter than the {need}-sample minimum")
    return model(x)


@dataclass
class ValueWithGrad:
    value: float
    grads: dict[str, torch.Tensor] = field(default_factory=dict)


def value_and_grad(model: EatModel, batch, targets, loss_kind: str = "smoothed_ce",
                   label_smoothing: float = 0.1) -> ValueWithGrad:
    """Scalar loss and its exact gradient w.r.t. every parameter (reverse mode)."""
    from .losses import loss_fn

    model.zero_grad(set_to_none=True)
    logits = forward(model, batch)
    loss = loss_fn(loss_kind, logits, targets, label_smoothing)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return ValueWithGrad(loss.item(), grads)
