"""Two-branch SR-FR model, composite objectives and training schedules.

The synthetic branch feeds bicubic-upsampled auxiliary LR faces through the
SR network and then the FR trunk and synthetic head; the native branch
feeds native LR faces through the *same* SR network and trunk and a native
head. Training runs in phases:

============== ================================ =======================
variant        phase 1                          phase 2
============== ================================ =======================
csri           SR-FR joint on auxiliary         both branches, all params
joint_sr_fr    SR-FR joint on auxiliary         FR on native, SR frozen
independent    SR alone, then FR on SR output   FR on native, SR frozen
fr_only        FR on bicubic auxiliary input    FR on native
============== ================================ =======================
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .checkpoint import CheckpointError, read_blocks, write_blocks
from .fr import FRNet, FRNetworkConfig, ce_loss, center_loss, update_centers
from .imaging import resize
from .sr import SRNet, SRNetworkConfig, sr_loss

log = logging.getLogger(__name__)

VARIANTS = ("fr_only", "independent_sr_fr", "joint_sr_fr", "csri")
DEFAULT_LAMBDA_SR = 0.003


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_sr: float = DEFAULT_LAMBDA_SR

    def __post_init__(self):
        if not self.lambda_sr >= 0:
            raise ValueError(f"lambda_sr must be non-negative, got {self.lambda_sr}")


def joint_loss(l_fr_syn, l_sr, weights: LossWeights = LossWeights()):
    """SR-FR joint objective: identity loss plus weighted pixel loss."""
    return l_fr_syn + weights.lambda_sr * l_sr


def csri_loss(l_fr_syn, l_fr_nat, l_sr, weights: LossWeights = LossWeights()):
    """Full objective: both identity losses plus weighted pixel loss."""
    return (l_fr_syn + l_fr_nat) + weights.lambda_sr * l_sr


@dataclass(frozen=True)
class LossBreakdown:
    l_sr: float
    l_fr_syn: float
    l_fr_nat: float
    l_sr_fr: float
    l_csrl: float
    lambda_sr: float

    @classmethod
    def compose(cls, l_sr: float, l_fr_syn: float, l_fr_nat: float, weights: LossWeights) -> "LossBreakdown":
        return cls(
            l_sr=l_sr,
            l_fr_syn=l_fr_syn,
            l_fr_nat=l_fr_nat,
            l_sr_fr=joint_loss(l_fr_syn, l_sr, weights),
            l_csrl=csri_loss(l_fr_syn, l_fr_nat, l_sr, weights),
            lambda_sr=weights.lambda_sr,
        )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    stage2_lr: float | None = None
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step: int = 1000
    lr_gamma: float = 0.1
    batch_aux: int = 32
    batch_nat: int = 32
    stage1_steps: int = 1000
    stage2_steps: int = 500
    seed: int = 0
    variant: str = "csri"
    lambda_sr: float = DEFAULT_LAMBDA_SR
    # gradient-norm cap on the SR block only; None disables it
    clip_grad: float | None = 1.0
    center_weight: float = 0.0
    center_alpha: float = 0.5
    # "sum" keeps the pixel term large enough at lambda_sr = 0.003 to hold SR fidelity
    sr_reduction: str = "sum"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if min(self.batch_aux, self.batch_nat, self.lr_step) <= 0:
            raise ValueError("batch sizes and lr_step must be positive")
        if min(self.stage1_steps, self.stage2_steps) < 0:
            raise ValueError("step counts must be non-negative")
        if self.sr_reduction not in ("mean", "sum", "image_sum"):
            raise ValueError(f"unknown sr_reduction {self.sr_reduction!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_sr)


@dataclass(frozen=True)
class ModelConfig:
    sr: SRNetworkConfig | None = SRNetworkConfig()
    fr: FRNetworkConfig = FRNetworkConfig()

    def to_dict(self) -> dict:
        return {
            "sr": None if self.sr is None else dataclasses.asdict(self.sr),
            "fr": dataclasses.asdict(self.fr),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        sr = None if d["sr"] is None else SRNetworkConfig(**d["sr"])
        return cls(sr=sr, fr=FRNetworkConfig(**d["fr"]))


class CSRINet(nn.Module):
    """SR network (optional) followed by the FR network.

    Both branches are views of this one module: they differ only in which
    classifier head is applied to the embedding.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.sr = SRNet(cfg.sr) if cfg.sr is not None else None
        self.fr = FRNet(cfg.fr)
        self.centers: dict[str, torch.Tensor] = {}

    def enhance(self, x: torch.Tensor) -> torch.Tensor:
        return self.sr(x) if self.sr is not None else x

    def branch(self, x: torch.Tensor, head: str):
        """Run one branch; returns ``(sr_image, embedding, logits)``."""
        sr = self.enhance(x)
        emb, logits = self.fr(sr, head)
        return sr, emb, logits

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.fr.embed(self.enhance(x))

    def blocks(self) -> dict[str, nn.Module]:
        out = {}
        if self.sr is not None:
            out["sr"] = self.sr
        out["trunk"] = self.fr.trunk
        out["head_synthetic"] = self.fr.heads["synthetic"]
        out["head_native"] = self.fr.heads["native"]
        return out


def build_model(model_cfg: ModelConfig, num_synthetic: int, num_native: int, seed: int) -> CSRINet:
    fr = dataclasses.replace(model_cfg.fr, num_synthetic=num_synthetic, num_native=num_native)
    cfg = dataclasses.replace(model_cfg, fr=fr)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CSRINet(cfg)


@dataclass
class AuxData:
    """Auxiliary pairs: pre-upsampled LR inputs, HR targets and labels."""

    inputs: torch.Tensor
    targets: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ValueError("auxiliary inputs and targets differ in shape")
        if len(self.labels) != len(self.inputs):
            raise ValueError("one label per auxiliary pair required")

    @classmethod
    def from_pairs(cls, pairs) -> "AuxData":
        return cls(
            inputs=torch.as_tensor(np.stack([p.input_lr for p in pairs]), dtype=torch.float32),
            targets=torch.as_tensor(np.stack([p.target_hr for p in pairs]), dtype=torch.float32),
            labels=torch.as_tensor([p.identity for p in pairs], dtype=torch.long),
        )

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return len(self.labels)


@dataclass
class NativeData:
    """Native LR faces, already upsampled to the FR input size, with labels."""

    images: torch.Tensor
    labels: torch.Tensor

    @classmethod
    def from_lr(cls, images, labels, size: tuple[int, int]) -> "NativeData":
        return cls(
            images=torch.as_tensor(upsample_batch(images, size), dtype=torch.float32),
            labels=torch.as_tensor(np.asarray(labels), dtype=torch.long),
        )

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return len(self.labels)


def upsample_batch(images, size: tuple[int, int]) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if tuple(images.shape[-2:]) == tuple(size):
        return images
    return resize(images, size)


@dataclass
class Checkpoint:
    model: CSRINet
    step: int = 0
    seed: int = 0
    variant: str = "csri"
    stage: str = "init"
    momentum: dict[str, torch.Tensor] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def state_blocks(self) -> dict[str, dict[str, np.ndarray]]:
        blocks = {
            name: {k: v.detach().cpu().numpy() for k, v in mod.state_dict().items()}
            for name, mod in self.model.blocks().items()
        }
        if self.momentum:
            blocks["momentum"] = {k: v.detach().cpu().numpy() for k, v in self.momentum.items()}
        if self.model.centers:
            blocks["centers"] = {k: v.detach().cpu().numpy() for k, v in self.model.centers.items()}
        return blocks

    def save(self, path: str | Path) -> None:
        meta = dict(self.meta)
        meta.update(
            step=self.step, seed=self.seed, variant=self.variant, stage=self.stage,
            model=self.model.cfg.to_dict(),
        )
        meta.setdefault("config_hash", config_hash(meta["model"]))
        write_blocks(path, meta, self.state_blocks())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        meta, blocks = read_blocks(path)
        try:
            model = CSRINet(ModelConfig.from_dict(meta["model"]))
        except KeyError as exc:
            raise CheckpointError(f"{path}: metadata lacks {exc}") from exc
        for name, mod in model.blocks().items():
            if name not in blocks:
                raise CheckpointError(f"{path}: missing block {name!r}")
            mod.load_state_dict({k: torch.from_numpy(v) for k, v in blocks[name].items()})
        extra = set(blocks) - set(model.blocks()) - {"momentum", "centers"}
        if extra:
            raise CheckpointError(f"{path}: unexpected blocks {sorted(extra)}")
        model.centers = {k: torch.from_numpy(v) for k, v in blocks.get("centers", {}).items()}
        momentum = {k: torch.from_numpy(v) for k, v in blocks.get("momentum", {}).items()}
        return cls(
            model=model, step=meta["step"], seed=meta["seed"], variant=meta["variant"],
            stage=meta["stage"], momentum=momentum, meta=meta,
        )


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def batch_indices(n: int, b: int, seed: int, stream: int, step: int) -> np.ndarray:
    """Indices of the ``step``-th batch; a pure function of its arguments."""
    rng = np.random.default_rng([seed, stream, step])
    return rng.choice(n, size=min(b, n), replace=False)


AUX_STREAM, NATIVE_STREAM = 0, 1


@dataclass(frozen=True)
class Phase:
    """One optimisation phase.

    ``kind`` selects the objective: ``sr`` (pixel loss only), ``fr_aux``
    (identity loss on auxiliary data), ``sr_fr`` (joint objective),
    ``fr_native`` (identity loss on native data) or ``csri`` (full objective).
    """

    name: str
    kind: str
    steps: int
    train: tuple[str, ...]
    lr: float


def _trainable(model: CSRINet, groups: tuple[str, ...]) -> list[tuple[str, nn.Parameter]]:
    out = []
    for block, mod in model.blocks().items():
        if block in groups:
            out += [(f"{block}.{n}", p) for n, p in mod.named_parameters()]
    return out


def _compute(model: CSRINet, kind: str, aux: AuxData | None, native: NativeData | None,
             aux_idx, nat_idx, weights: LossWeights, cfg: TrainConfig, frozen_sr: bool):
    """Forward the needed branches and return (objective, breakdown, extras)."""
    zero = torch.zeros((), dtype=next(model.parameters()).dtype)
    l_sr = l_fr_syn = l_fr_nat = zero
    l_center = zero
    uses_aux = kind in ("sr", "fr_aux", "sr_fr", "csri") and aux is not None
    uses_nat = kind in ("fr_native", "csri") and native is not None and len(native) > 0
    emb_syn = emb_nat = None
    if uses_aux:
        x, hr, y = aux.inputs[aux_idx], aux.targets[aux_idx], aux.labels[aux_idx]
        if frozen_sr and model.sr is not None:
            with torch.no_grad():
                sr = model.sr(x)
        else:
            sr = model.enhance(x)
        if model.sr is not None:
            l_sr = sr_loss(sr, hr, cfg.sr_reduction)
        if kind != "sr":
            emb_syn, logits = model.fr(sr, "synthetic")
            l_fr_syn = ce_loss(logits, y)
    if uses_nat:
        x, y = native.images[nat_idx], native.labels[nat_idx]
        if frozen_sr and model.sr is not None:
            with torch.no_grad():
                x = model.sr(x)
            emb_nat, logits = model.fr(x, "native")
        else:
            _, emb_nat, logits = model.branch(x, "native")
        l_fr_nat = ce_loss(logits, y)

    if kind == "sr":
        objective = l_sr
    elif kind == "fr_aux":
        objective = l_fr_syn
    elif kind == "sr_fr":
        objective = joint_loss(l_fr_syn, l_sr, weights)
    elif kind == "fr_native":
        objective = l_fr_nat
    elif kind == "csri":
        objective = csri_loss(l_fr_syn, l_fr_nat, l_sr, weights)
    else:
        raise ValueError(f"unknown phase kind {kind!r}")

    centers_used = []
    if cfg.center_weight > 0:
        for head, emb, idx, data in (("synthetic", emb_syn, aux_idx, aux), ("native", emb_nat, nat_idx, native)):
            if emb is not None:
                labels = data.labels[idx]
                l_center = l_center + center_loss(emb, labels, model.centers[head]) / len(labels)
                centers_used.append((head, emb, labels))
        objective = objective + cfg.center_weight * l_center

    breakdown = LossBreakdown.compose(l_sr.item(), l_fr_syn.item(), l_fr_nat.item(), weights)
    return objective, breakdown, centers_used


def run_phase(ckpt: Checkpoint, phase: Phase, cfg: TrainConfig,
              aux: AuxData | None, native: NativeData | None,
              on_step: Callable | None = None) -> Checkpoint:
    """Optimise ``phase.train`` parameter groups of ``ckpt.model`` in place."""
    model = ckpt.model
    weights = cfg.weights
    params = _trainable(model, phase.train)
    blocks: dict[str, list] = {}
    for name, p in params:
        blocks.setdefault(name.split(".", 1)[0], []).append(p)
    frozen_sr = model.sr is not None and "sr" not in phase.train
    if model.sr is not None:
        model.sr.requires_grad_(not frozen_sr)
    opt = torch.optim.SGD([p for _, p in params], lr=phase.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    for name, p in params:
        if name in ckpt.momentum:
            opt.state[p]["momentum_buffer"] = ckpt.momentum[name].clone().to(p.dtype)
    if cfg.center_weight > 0:
        for head, n in (("synthetic", model.cfg.fr.num_synthetic), ("native", model.cfg.fr.num_native)):
            model.centers.setdefault(head, torch.zeros(n, model.cfg.fr.embedding_dim))

    model.train()
    for t in range(phase.steps):
        lr = phase.lr * cfg.lr_gamma ** (t // cfg.lr_step)
        for g in opt.param_groups:
            g["lr"] = lr
        aux_idx = batch_indices(len(aux), cfg.batch_aux, cfg.seed, AUX_STREAM, t) if aux is not None else None
        nat_idx = (batch_indices(len(native), cfg.batch_nat, cfg.seed, NATIVE_STREAM, t)
                   if native is not None and len(native) else None)
        opt.zero_grad(set_to_none=True)
        objective, bd, centers_used = _compute(model, phase.kind, aux, native, aux_idx, nat_idx,
                                               weights, cfg, frozen_sr)
        if not torch.isfinite(objective):
            raise TrainingDiverged(
                f"{phase.name} step {t}: non-finite objective {objective.item()} "
                f"(l_sr={bd.l_sr}, l_fr_syn={bd.l_fr_syn}, l_fr_nat={bd.l_fr_nat})"
            )
        objective.backward()
        if cfg.clip_grad and "sr" in blocks:
            nn.utils.clip_grad_norm_(blocks["sr"], cfg.clip_grad)
        opt.step()
        for head, emb, labels in centers_used:
            update_centers(model.centers[head], emb, labels, cfg.center_alpha)
        ckpt.step += 1
        record = {"step": ckpt.step, "phase": phase.name, "lr": lr, "objective": objective.item(),
                  **dataclasses.asdict(bd)}
        ckpt.history.append(record)
        if on_step is not None:
            on_step(record)

    for name, p in params:
        buf = opt.state[p].get("momentum_buffer")
        if buf is not None:
            ckpt.momentum[name] = buf.detach().clone()
    if model.sr is not None:
        model.sr.requires_grad_(True)
    ckpt.stage = phase.name
    return ckpt


def _fresh(variant: str, model_cfg: ModelConfig, cfg: TrainConfig, n_syn: int, n_nat: int) -> Checkpoint:
    if variant == "fr_only":
        model_cfg = dataclasses.replace(model_cfg, sr=None)
    elif model_cfg.sr is None:
        raise ValueError(f"variant {variant!r} needs an SR network configuration")
    model = build_model(model_cfg, n_syn, max(n_nat, 1), cfg.seed)
    return Checkpoint(model=model, seed=cfg.seed, variant=variant,
                      meta={"train": dataclasses.asdict(cfg)})


def _stage2_lr(cfg: TrainConfig) -> float:
    return cfg.lr if cfg.stage2_lr is None else cfg.stage2_lr


def train_stage1(aux: AuxData, cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig(),
                 num_native: int = 1, init: Checkpoint | None = None, **kw) -> Checkpoint:
    """Pre-train the synthetic branch (SR and FR) on auxiliary pairs."""
    ckpt = init if init is not None else _fresh(cfg.variant, model_cfg, cfg, aux.num_classes, num_native)
    phase = Phase("stage1", "sr_fr", cfg.stage1_steps, ("sr", "trunk", "head_synthetic"), cfg.lr)
    return run_phase(ckpt, phase, cfg, aux, None, **kw)


def train_stage2(aux: AuxData, native: NativeData | None, ckpt: Checkpoint, cfg: TrainConfig, **kw) -> Checkpoint:
    """Train both branches on mixed auxiliary + native batches.

    The native identity loss back-propagates through the shared SR network.
    With ``native=None`` the native term is identically zero.
    """
    if ckpt.model.sr is None:
        raise ValueError("stage 2 needs a model with an SR network")
    if native is not None and len(native) and native.num_classes > ckpt.model.cfg.fr.num_native:
        raise ValueError(
            f"native label {native.num_classes - 1} outside native head range "
            f"({ckpt.model.cfg.fr.num_native} classes)"
        )
    phase = Phase("stage2", "csri", cfg.stage2_steps,
                  ("sr", "trunk", "head_synthetic", "head_native"), _stage2_lr(cfg))
    return run_phase(ckpt, phase, cfg, aux, native, **kw)


def _finetune_native(ckpt: Checkpoint, native: NativeData, cfg: TrainConfig, **kw) -> Checkpoint:
    if native.num_classes > ckpt.model.cfg.fr.num_native:
        raise ValueError("native labels exceed the native head")
    phase = Phase("native_finetune", "fr_native", cfg.stage2_steps, ("trunk", "head_native"), _stage2_lr(cfg))
    return run_phase(ckpt, phase, cfg, None, native, **kw)


def train_baseline(variant: str, aux: AuxData, native: NativeData, cfg: TrainConfig,
                   model_cfg: ModelConfig = ModelConfig(), stage1: Checkpoint | None = None,
                   on_stage: Callable[[str, Checkpoint], None] | None = None, **kw) -> Checkpoint:
    """Train one of the comparison models.

    ``stage1`` lets ``joint_sr_fr`` start from an existing joint pre-training
    checkpoint instead of recomputing it.
    """
    if variant not in ("fr_only", "independent_sr_fr", "joint_sr_fr"):
        raise ValueError(f"unknown baseline variant {variant!r}")
    cfg = dataclasses.replace(cfg, variant=variant)
    n_nat = native.num_classes
    notify = on_stage if on_stage is not None else (lambda name, ckpt: None)
    if variant == "joint_sr_fr":
        ckpt = stage1 if stage1 is not None else train_stage1(aux, cfg, model_cfg, n_nat, **kw)
        ckpt.variant = variant
        notify("stage1", ckpt)
        return _finetune_native(ckpt, native, cfg, **kw)
    ckpt = _fresh(variant, model_cfg, cfg, aux.num_classes, n_nat)
    if variant == "independent_sr_fr":
        run_phase(ckpt, Phase("sr_pretrain", "sr", cfg.stage1_steps, ("sr",), cfg.lr), cfg, aux, None, **kw)
        notify("sr_pretrain", ckpt)
    run_phase(ckpt, Phase("fr_pretrain", "fr_aux", cfg.stage1_steps, ("trunk", "head_synthetic"), cfg.lr),
              cfg, aux, None, **kw)
    notify("fr_pretrain", ckpt)
    return _finetune_native(ckpt, native, cfg, **kw)


def train_variant(variant: str, aux: AuxData, native: NativeData, cfg: TrainConfig,
                  model_cfg: ModelConfig = ModelConfig(), stage1: Checkpoint | None = None,
                  on_stage: Callable[[str, Checkpoint], None] | None = None, **kw) -> Checkpoint:
    """Train any variant; ``on_stage`` is called with each intermediate checkpoint."""
    cfg = dataclasses.replace(cfg, variant=variant)
    if variant != "csri":
        return train_baseline(variant, aux, native, cfg, model_cfg, stage1=stage1, on_stage=on_stage, **kw)
    ckpt = stage1 if stage1 is not None else train_stage1(aux, cfg, model_cfg, native.num_classes, **kw)
    ckpt.variant = "csri"
    if on_stage is not None:
        on_stage("stage1", ckpt)
    return train_stage2(aux, native, ckpt, cfg, **kw)


@torch.no_grad()
def extract_features(images, model: CSRINet | Checkpoint, branch: str = "native",
                     batch_size: int = 256) -> np.ndarray:
    """Embed LR faces through SR and the FR trunk; classifier heads are unused."""
    if isinstance(model, Checkpoint):
        model = model.model
    size = model.cfg.fr.input_size
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != model.cfg.fr.in_channels:
        raise ValueError(f"expected (N, {model.cfg.fr.in_channels}, H, W) images, got {images.shape}")
    if images.shape[-2] > size[0] or images.shape[-1] > size[1]:
        raise ValueError(f"images {images.shape[-2:]} larger than FR input {size}")
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, len(images), batch_size):
        x = torch.as_tensor(upsample_batch(images[start:start + batch_size], size), dtype=dtype)
        _, emb, _ = model.branch(x, branch)
        out.append(emb.cpu().numpy())
    model.train()
    if not out:
        return np.zeros((0, model.cfg.fr.embedding_dim))
    return np.concatenate(out).astype(np.float64)


LOSS_COLUMNS = ("step", "l_sr", "l_fr_syn", "l_fr_nat", "l_sr_fr", "l_csrl", "lr", "phase")


def write_loss_csv(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in history:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOSS_COLUMNS[1:-1]] + [r["phase"]])


def read_loss_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["step"] = int(r["step"])
        for k in LOSS_COLUMNS[1:-1]:
            r[k] = float(r[k])
    return rows

