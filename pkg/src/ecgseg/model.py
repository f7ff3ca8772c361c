"""Configurable 1D U-Net family for three-channel wave segmentation.

Encoder/bottleneck/decoder with skip concatenations, a stem block, three
block flavors (vanilla, residual, xception) and optional bottleneck pyramid
pooling (aspp), in-level dense connectivity (hdc) and multi-scale upsampling
(msu). Blocks apply ReLU -> BatchNorm -> spatial dropout -> Conv twice, with
zero padding throughout so sequence length is preserved; channel width at
level l is 2^l * base_channels.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DivergenceError

BLOCK_TYPES = ("vanilla", "residual", "xception")
PAPER_GRID_LEVELS = (4, 7)
PAPER_GRID_BLOCKS = (2, 6)


@dataclass
class ModelConfig:
    levels: int = 5
    blocks_per_level: int = 3
    base_channels: int = 16
    block_type: str = "vanilla"
    sdo_rate: float = 0.25
    aspp: bool = False
    hdc: bool = False
    msu: bool = False
    in_channels: int = 1
    out_channels: int = 3
    kernel_size: int = 3
    aspp_rates: tuple[int, ...] = (2, 4, 8)

    def validate(self) -> None:
        # The experiment grid spans levels 4..7 and 2..6 blocks; the builder
        # additionally accepts smaller nets (used by diagnostics and tests).
        if not (2 <= self.levels <= 7):
            raise ConfigError(f"levels must lie in [2, 7], got {self.levels}")
        if not (1 <= self.blocks_per_level <= 6):
            raise ConfigError(f"blocks_per_level must lie in [1, 6], got {self.blocks_per_level}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if self.block_type not in BLOCK_TYPES:
            raise ConfigError(f"block_type must be one of {BLOCK_TYPES}, got {self.block_type!r}")
        if not (0.0 <= self.sdo_rate < 1.0):
            raise ConfigError(f"sdo_rate must lie in [0, 1), got {self.sdo_rate}")
        if self.in_channels not in (1, 2):
            raise ConfigError(f"in_channels must be 1 or 2, got {self.in_channels}")
        if self.out_channels != 3:
            raise ConfigError(f"out_channels is fixed at 3, got {self.out_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.aspp and not self.aspp_rates:
            raise ConfigError("aspp requires at least one dilation rate")

    @property
    def pool_factor(self) -> int:
        """Input length must be divisible by this for exact down/up symmetry."""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspp_rates"] = list(self.aspp_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "aspp_rates" in d:
            d["aspp_rates"] = tuple(d["aspp_rates"])
        return cls(**d)


class _RegConv(nn.Module):
    """ReLU -> BN -> spatial dropout -> convolution (optionally separable)."""

    def __init__(self, in_ch, out_ch, kernel, sdo, separable=False, dilation=1):
        super().__init__()
        self.relu = nn.ReLU()
        self.bn = nn.BatchNorm1d(in_ch, track_running_stats=False)
        self.sdo = nn.Dropout1d(p=sdo)
        pad = dilation * (kernel // 2)
        if separable:
            self.conv = nn.Sequential(
                nn.Conv1d(in_ch, in_ch, kernel, padding=pad, dilation=dilation, groups=in_ch),
                nn.Conv1d(in_ch, out_ch, 1),
            )
        else:
            self.conv = nn.Conv1d(in_ch, out_ch, kernel, padding=pad, dilation=dilation)

    def forward(self, x):
        return self.conv(self.sdo(self.bn(self.relu(x))))


class ConvBlock(nn.Module):
    """One convolutional block; residual/xception add the input back, through
    a 1x1 projection when the channel counts differ."""

    def __init__(self, in_ch, out_ch, kernel, sdo, block_type):
        super().__init__()
        separable = block_type == "xception"
        self.body = nn.Sequential(
            _RegConv(in_ch, out_ch, kernel, sdo, separable=separable),
            _RegConv(out_ch, out_ch, kernel, sdo, separable=separable),
        )
        self.additive = block_type in ("residual", "xception")
        if self.additive and in_ch != out_ch:
            self.project = nn.Conv1d(in_ch, out_ch, 1)
        else:
            self.project = None

    def forward(self, x):
        y = self.body(x)
        if self.additive:
            y = y + (self.project(x) if self.project is not None else x)
        return y


class Level(nn.Module):
    """A run of blocks at one resolution. With hdc, block k consumes the
    concatenation of the level input and every previous block output."""

    def __init__(self, in_ch, out_ch, n_blocks, kernel, sdo, block_type, hdc):
        super().__init__()
        self.hdc = hdc
        blocks = []
        for k in range(n_blocks):
            if hdc:
                block_in = in_ch + k * out_ch
            else:
                block_in = in_ch if k == 0 else out_ch
            blocks.append(ConvBlock(block_in, out_ch, kernel, sdo, block_type))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        if not self.hdc:
            for block in self.blocks:
                x = block(x)
            return x
        feed = [x]
        for block in self.blocks:
            feed.append(block(torch.cat(feed, dim=1)))
        return feed[-1]


class Aspp(nn.Module):
    """Bottleneck pyramid: a 1x1 branch, one dilated branch per rate and a
    global-average-pool branch, concatenated and fused back to in_ch."""

    def __init__(self, channels, rates, kernel, sdo):
        super().__init__()
        if not rates:
            raise ConfigError("aspp requires at least one dilation rate")
        self.point = _RegConv(channels, channels, 1, sdo)
        self.dilated = nn.ModuleList(
            _RegConv(channels, channels, kernel, sdo, dilation=r) for r in rates
        )
        self.pool_conv = nn.Conv1d(channels, channels, 1)
        self.fuse = nn.Conv1d(channels * (2 + len(rates)), channels, 1)

    def forward(self, x):
        pooled = self.pool_conv(x.mean(dim=2, keepdim=True)).expand(-1, -1, x.shape[2])
        branches = [self.point(x)] + [d(x) for d in self.dilated] + [pooled]
        return self.fuse(torch.cat(branches, dim=1))


class UNet1d(nn.Module):
    """See build_model; forward takes and returns length-first tensors."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        n = c.base_channels
        kernel = c.kernel_size
        width = lambda level: (2 ** level) * n

        # Stem: one vanilla-composition block to N channels at full resolution.
        self.stem = ConvBlock(c.in_channels, n, kernel, c.sdo_rate, "vanilla")

        self.encoder = nn.ModuleList()
        for level in range(c.levels - 1):
            in_ch = n if level == 0 else width(level - 1)
            self.encoder.append(
                Level(in_ch, width(level), c.blocks_per_level, kernel, c.sdo_rate, c.block_type, c.hdc)
            )
        self.pool = nn.AvgPool1d(2)

        self.bottleneck = Level(
            width(c.levels - 2), width(c.levels - 1), c.blocks_per_level, kernel,
            c.sdo_rate, c.block_type, c.hdc,
        )
        self.aspp = Aspp(width(c.levels - 1), c.aspp_rates, kernel, c.sdo_rate) if c.aspp else None

        self.upsample = nn.Upsample(scale_factor=2, mode="linear", align_corners=False)
        self.decoder = nn.ModuleList()
        for level in range(c.levels - 2, -1, -1):
            in_ch = width(level) + width(level + 1)  # skip + upsampled deeper stage
            if c.msu:
                in_ch += sum(width(d) for d in self._msu_sources(level))
            self.decoder.append(
                Level(in_ch, width(level), c.blocks_per_level, kernel, c.sdo_rate, c.block_type, c.hdc)
            )

        self.head = nn.Conv1d(n, c.out_channels, kernel, padding=kernel // 2)

    def _msu_sources(self, level: int) -> list[int]:
        # Deeper decoder levels beyond the immediate one feed extra upsampled
        # operands into this level's input concatenation.
        return list(range(level + 2, self.config.levels - 1))

    def forward(self, x, training: bool = False):
        self.train(bool(training))
        if x.shape[1] % self.config.pool_factor != 0:
            raise ConfigError(
                f"input length {x.shape[1]} not divisible by {self.config.pool_factor} "
                f"(levels={self.config.levels})"
            )
        x = x.permute(0, 2, 1)
        x = self.stem(x)
        skips = []
        for level_module in self.encoder:
            x = level_module(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        if self.aspp is not None:
            x = self.aspp(x)

        decoder_outputs: dict[int, torch.Tensor] = {}
        for i, level_module in enumerate(self.decoder):
            level = self.config.levels - 2 - i
            operands = [self.upsample(x), skips[level]]
            for d in self._msu_sources(level):
                operands.append(
                    nn.functional.interpolate(
                        decoder_outputs[d], scale_factor=2 ** (d - level),
                        mode="linear", align_corners=False,
                    )
                )
            x = level_module(torch.cat(operands, dim=1))
            decoder_outputs[level] = x

        out = torch.sigmoid(self.head(x))
        return out.permute(0, 2, 1)

    def channel_plan(self) -> dict:
        """Declared output width per stage, for auditing the 2^l * N law."""
        c = self.config
        return {
            "stem": c.base_channels,
            "encoder": [(2 ** l) * c.base_channels for l in range(c.levels - 1)],
            "bottleneck": (2 ** (c.levels - 1)) * c.base_channels,
            "decoder": [(2 ** l) * c.base_channels for l in range(c.levels - 2, -1, -1)],
        }


def build_model(config: ModelConfig, seed: Optional[int] = None) -> UNet1d:
    """Instantiate the network; a seed makes initialization reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return UNet1d(config)


def attach_aspp(model: UNet1d, dilation_rates: Sequence[int]) -> UNet1d:
    """Rebuild the model with pyramid pooling at the bottleneck (fresh weights)."""
    rates = tuple(dilation_rates)
    if not rates:
        raise ConfigError("aspp requires at least one dilation rate")
    return UNet1d(replace(model.config, aspp=True, aspp_rates=rates))


def attach_hdc(model: UNet1d) -> UNet1d:
    """Rebuild the model with in-level dense connectivity (fresh weights)."""
    return UNet1d(replace(model.config, hdc=True))


def attach_msu(model: UNet1d) -> UNet1d:
    """Rebuild the model with multi-scale decoder upsampling (fresh weights)."""
    return UNet1d(replace(model.config, msu=True))


def _as_tensor(x, like: Optional[torch.Tensor] = None) -> torch.Tensor:
    dtype = like.dtype if like is not None else torch.float32
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def jaccard_loss(pred, target, eps: float = 1.0) -> torch.Tensor:
    """1 - mean channel-wise smoothed Jaccard index; range [0, 1]."""
    p = _as_tensor(pred) if not isinstance(pred, torch.Tensor) else pred
    t = _as_tensor(target, like=p)
    if p.shape != t.shape:
        raise ValueError(f"pred shape {tuple(p.shape)} != target shape {tuple(t.shape)}")
    dims = tuple(range(p.dim() - 1))  # everything but the channel axis
    inter = (p * t).sum(dim=dims)
    union = p.sum(dim=dims) + t.sum(dim=dims) - inter
    return 1.0 - ((inter + eps) / (union + eps)).mean()


def dice_score(pred, target, threshold: float = 0.5) -> np.ndarray:
    """Per-channel Dice on binarized masks; 1.0 when both sides are empty."""
    p = np.asarray(pred.detach().cpu()) if isinstance(pred, torch.Tensor) else np.asarray(pred)
    t = np.asarray(target.detach().cpu()) if isinstance(target, torch.Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"pred shape {p.shape} != target shape {t.shape}")
    pb = (p >= threshold).reshape(-1, p.shape[-1])
    tb = (t >= threshold).reshape(-1, t.shape[-1])
    inter = np.sum(pb & tb, axis=0)
    total = pb.sum(axis=0) + tb.sum(axis=0)
    out = np.ones(p.shape[-1], dtype=np.float64)
    nonempty = total > 0
    out[nonempty] = 2.0 * inter[nonempty] / total[nonempty]
    return out


@dataclass
class TrainState:
    model: UNet1d
    optimizer: torch.optim.Adam
    step: int = 0
    history: list[float] = field(default_factory=list)


def make_train_state(model: UNet1d, lr: float = 1e-3) -> TrainState:
    return TrainState(model=model, optimizer=torch.optim.Adam(model.parameters(), lr=lr))


def train_step(state: TrainState, batch, labels, lr: Optional[float] = None) -> float:
    """One Adam update on the Jaccard loss; aborts on non-finite numbers."""
    param = next(state.model.parameters())
    x = _as_tensor(batch, like=param)
    y = _as_tensor(labels, like=param)
    if lr is not None:
        for group in state.optimizer.param_groups:
            group["lr"] = lr
    state.optimizer.zero_grad()
    pred = state.model(x, training=True)
    loss = jaccard_loss(pred, y)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {state.step}")
    loss.backward()
    for name, p in state.model.named_parameters():
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in {name} at step {state.step}")
    state.optimizer.step()
    for name, p in state.model.named_parameters():
        if not torch.all(torch.isfinite(p)):
            raise DivergenceError(f"non-finite parameter {name} after step {state.step}")
    state.step += 1
    value = float(loss.detach())
    state.history.append(value)
    return value


def save_checkpoint(path, model: UNet1d, step: int = 0, extra: Optional[dict] = None) -> None:
    payload = {
        "config": model.config.to_dict(),
        "model_state": model.state_dict(),
        "step": step,
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[UNet1d, dict]:
    payload = torch.load(path, weights_only=True)
    config = ModelConfig.from_dict(payload["config"])
    model = UNet1d(config)
    model.load_state_dict(payload["model_state"])
    model.eval()
    meta = {"step": payload.get("step", 0), "extra": payload.get("extra", {})}
    return model, meta
