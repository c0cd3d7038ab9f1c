"""Face-identity network with a shared trunk and per-label-space heads."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

HEADS = ("synthetic", "native")


@dataclass(frozen=True)
class FRNetworkConfig:
    input_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    blocks: tuple[int, ...] = (32, 64, 128)
    pool: bool = True
    batch_norm: bool = True
    embedding_dim: int = 64
    num_synthetic: int = 10
    num_native: int = 10

    def __post_init__(self):
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if not self.blocks:
            raise ValueError("trunk needs at least one conv block")
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "blocks", tuple(self.blocks))


class Trunk(nn.Module):
    """Conv blocks (3x3 conv, batch norm, ReLU, 2x2 max-pool) and a linear embedding."""

    def __init__(self, cfg: FRNetworkConfig):
        super().__init__()
        layers, c = [], cfg.in_channels
        h, w = cfg.input_size
        for width in cfg.blocks:
            layers.append(nn.Conv2d(c, width, 3, padding=1, bias=not cfg.batch_norm))
            if cfg.batch_norm:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.ReLU())
            if cfg.pool:
                layers.append(nn.MaxPool2d(2))
                h, w = h // 2, w // 2
            c = width
        self.features = nn.Sequential(*layers)
        self.embed = nn.Linear(c * h * w, cfg.embedding_dim)

    def forward(self, x):
        return self.embed(self.features(x).flatten(1))


class FRNet(nn.Module):
    def __init__(self, cfg: FRNetworkConfig = FRNetworkConfig()):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg)
        self.heads = nn.ModuleDict({
            "synthetic": nn.Linear(cfg.embedding_dim, cfg.num_synthetic),
            "native": nn.Linear(cfg.embedding_dim, cfg.num_native),
        })

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        expected = (self.cfg.in_channels, *self.cfg.input_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"FR input must be (N, {', '.join(map(str, expected))}), got {tuple(x.shape)}")
        return self.trunk(x)

    def forward(self, x: torch.Tensor, head: str) -> tuple[torch.Tensor, torch.Tensor]:
        if head not in self.heads:
            raise KeyError(f"unknown head {head!r}; expected one of {HEADS}")
        emb = self.embed(x)
        return emb, self.heads[head](emb)


def fr_forward(net: FRNet, image: torch.Tensor, head: str):
    """Return ``(embedding, logits)`` for ``image`` through the chosen head."""
    return net(image, head)


def softmax(logits: torch.Tensor) -> torch.Tensor:
    return torch.exp(logits - torch.logsumexp(logits, dim=-1, keepdim=True))


def ce_loss(logits: torch.Tensor, y) -> torch.Tensor:
    """Softmax cross-entropy ``-log p_y`` averaged over the batch.

    Accepts a single logit vector with an integer label, or a batch.
    """
    y = torch.as_tensor(y, device=logits.device)
    if logits.dim() == 1:
        logits, y = logits[None], y.reshape(1)
    n_cls = logits.shape[-1]
    if y.numel() and (int(y.min()) < 0 or int(y.max()) >= n_cls):
        raise ValueError(f"label out of range for {n_cls} classes: {y.tolist()}")
    log_norm = torch.logsumexp(logits, dim=-1)
    picked = logits.gather(-1, y.long()[:, None])[:, 0]
    return torch.mean(log_norm - picked)


def center_loss(embeddings: torch.Tensor, labels, centers: torch.Tensor) -> torch.Tensor:
    """Half the summed squared distance of each embedding to its class centre."""
    labels = torch.as_tensor(labels, device=embeddings.device).long()
    if labels.numel() and int(labels.max()) >= centers.shape[0]:
        raise ValueError(f"no centre for label {int(labels.max())} ({centers.shape[0]} centres)")
    if centers.shape[1] != embeddings.shape[1]:
        raise ValueError("centre dimension differs from embedding dimension")
    diff = embeddings - centers[labels]
    return 0.5 * torch.sum(diff**2)


@torch.no_grad()
def update_centers(centers: torch.Tensor, embeddings: torch.Tensor, labels, alpha: float = 0.5) -> None:
    """In-place running-mean step: c_j -= alpha * sum_i(c_j - x_i) / (1 + n_j)."""
    labels = torch.as_tensor(labels, device=embeddings.device).long()
    delta = torch.zeros_like(centers)
    delta.index_add_(0, labels, centers[labels] - embeddings.detach())
    n = torch.bincount(labels, minlength=centers.shape[0]).to(centers.dtype)
    centers -= alpha * delta / (1.0 + n)[:, None]
