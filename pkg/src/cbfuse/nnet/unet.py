"""3D U-Net with early fusion of input channels.

Encoder: three double-conv blocks (3³ kernels, conv -> norm -> ReLU twice)
joined by 2³ max pooling, a double-conv bottleneck, and a mirrored decoder
using 2³ stride-2 transposed convolutions and skip concatenation. A final
1³ convolution maps to one logit per class.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ..errors import ShapeMismatch
from . import ops


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 2
    encoder_channels: tuple = (32, 64, 128, 256)
    out_channels: int = 2
    norm: str = "batch"        # "batch" or "instance"
    momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if len(self.encoder_channels) != 4:
            raise ValueError("encoder_channels needs 3 encoder widths + 1 bottleneck width")
        if self.norm not in ("batch", "instance"):
            raise ValueError(f"unknown norm {self.norm!r}")

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


class ConvNormReLU(nn.Module):
    def __init__(self, cin, cout, norm="batch", momentum=0.1):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, 3, padding=1)
        self.bn = nn.BatchNorm3d(cout, momentum=momentum)
        self.norm = norm

    def forward(self, x):
        x = ops.conv3d(x, self.conv.weight, self.conv.bias)
        if self.norm == "instance":
            x = ops.instancenorm(x, self.bn.weight, self.bn.bias, self.bn.eps)
        else:
            x = ops.batchnorm(x, self.bn.weight, self.bn.bias, self.bn.running_mean,
                              self.bn.running_var, self.training, self.bn.momentum, self.bn.eps)
        return ops.relu(x)


class DoubleConv(nn.Module):
    def __init__(self, cin, cout, norm="batch", momentum=0.1):
        super().__init__()
        self.first = ConvNormReLU(cin, cout, norm, momentum)
        self.second = ConvNormReLU(cout, cout, norm, momentum)

    def forward(self, x):
        return self.second(self.first(x))


class UpConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.ConvTranspose3d(cin, cout, 2, stride=2)

    def forward(self, x):
        return ops.upconv3d(x, self.conv.weight, self.conv.bias)


class UNet3D(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or UNetConfig()
        self.cfg = cfg
        c = cfg.encoder_channels
        kw = dict(norm=cfg.norm, momentum=cfg.momentum)
        self.encoders = nn.ModuleList([
            DoubleConv(cfg.in_channels, c[0], **kw),
            DoubleConv(c[0], c[1], **kw),
            DoubleConv(c[1], c[2], **kw),
        ])
        self.bottleneck = DoubleConv(c[2], c[3], **kw)
        self.ups = nn.ModuleList([UpConv(c[3], c[2]), UpConv(c[2], c[1]), UpConv(c[1], c[0])])
        self.decoders = nn.ModuleList([
            DoubleConv(2 * c[2], c[2], **kw),
            DoubleConv(2 * c[1], c[1], **kw),
            DoubleConv(2 * c[0], c[0], **kw),
        ])
        self.head = nn.Conv3d(c[0], cfg.out_channels, 1)

    def forward(self, x, return_features=False):
        if x.dim() != 5 or x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected (b, {self.cfg.in_channels}, D, H, W), "
                                f"got {tuple(x.shape)}")
        if any(s % 8 for s in x.shape[2:]):
            raise ShapeMismatch(f"spatial dims must be divisible by 8, got {tuple(x.shape[2:])}")
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = ops.maxpool3d(x)
        x = self.bottleneck(x)
        features = [s.shape[1] for s in skips] + [x.shape[1]]
        for up, dec in zip(self.ups, self.decoders):
            x = dec(ops.concat([up(x), skips.pop()]))
        logits = ops.conv3d(x, self.head.weight, self.head.bias)
        return (logits, features) if return_features else logits


def build_unet(cfg=None, seed=0):
    """Construct a U-Net with seed-deterministic initial weights."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return UNet3D(cfg or UNetConfig())


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
