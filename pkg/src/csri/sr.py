"""Residual super-resolution network and pixel-fidelity utilities.

The network follows the VDSR recipe: a plain stack of 3x3 convolutions
operating on an LR image that has already been bicubic-upsampled to the
target size, predicting a residual that is added back to the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class SRNetworkConfig:
    depth: int = 6
    channels: int = 32
    kernel_size: int = 3
    residual: bool = True
    in_channels: int = 1
    # std of the final layer's initial weights; 0 gives an exact identity map
    out_init_std: float = 1e-3

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd so output size equals input size")


class SRNet(nn.Module):
    def __init__(self, cfg: SRNetworkConfig = SRNetworkConfig()):
        super().__init__()
        self.cfg = cfg
        k, pad = cfg.kernel_size, cfg.kernel_size // 2
        c_in, c = cfg.in_channels, cfg.channels
        if cfg.depth == 1:
            layers = [nn.Conv2d(c_in, c_in, k, padding=pad)]
        else:
            layers = [nn.Conv2d(c_in, c, k, padding=pad), nn.ReLU()]
            for _ in range(cfg.depth - 2):
                layers += [nn.Conv2d(c, c, k, padding=pad), nn.ReLU()]
            layers.append(nn.Conv2d(c, c_in, k, padding=pad))
        self.body = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self):
        convs = [m for m in self.body if isinstance(m, nn.Conv2d)]
        for conv in convs[:-1]:
            nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
            nn.init.zeros_(conv.bias)
        nn.init.normal_(convs[-1].weight, std=self.cfg.out_init_std)
        nn.init.zeros_(convs[-1].bias)

    def zero_residual(self):
        """Make the residual branch output exactly zero."""
        last = self.body[-1]
        with torch.no_grad():
            last.weight.zero_()
            last.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"expected (N, {self.cfg.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        out = self.body(x)
        return x + out if self.cfg.residual else out


def sr_forward(net: SRNet, x: torch.Tensor, size: tuple[int, int] | None = None) -> torch.Tensor:
    """Super-resolve ``x``; with ``size`` given, reject inputs of another size."""
    if size is not None and tuple(x.shape[-2:]) != tuple(size):
        raise ValueError(f"SR input must be {size}, got {tuple(x.shape[-2:])}")
    return net(x)


def sr_loss(sr: torch.Tensor, hr: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Squared pixel error.

    ``reduction="mean"`` averages over every element. ``"image_sum"`` takes
    the squared L2 norm of each image's error and averages over the batch.
    ``"sum"`` is the squared L2 norm of the whole error tensor.
    """
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    sq = (sr - hr) ** 2
    if reduction == "mean":
        return torch.mean(sq)
    if reduction == "sum":
        return torch.sum(sq)
    if reduction == "image_sum":
        return torch.mean(torch.sum(sq.reshape(sq.shape[0], -1), dim=1))
    raise ValueError(f"unknown reduction {reduction!r}")


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB after clipping both images to ``[0, peak]``; inf if identical."""
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, peak)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, peak)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def mean_psnr(batch_a, batch_b) -> float:
    """Average of per-image PSNR over the leading axis."""
    return float(np.mean([psnr(x, y) for x, y in zip(batch_a, batch_b)]))
