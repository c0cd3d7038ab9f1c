"""Desk-scale benchmark on the procedural face corpus.

Auxiliary identities provide HR faces for synthetic LR/HR pairs. A disjoint
set of identities is rendered and then degraded (blur, downsampling, sensor
noise) to act as the native LR domain, which has no HR counterpart in
training. Native identities are split half/half into training and test; the
test half is divided into probes and gallery matches, and extra unlabelled
faces serve as gallery distractors.

Everything is held in memory so the four training variants can be compared
without touching the disk.
"""
from __future__ import annotations

import copy
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import DegradationConfig, degrade_native, make_lr_hr_pair, split_identities
from .evaluation import EvalReport, evaluate, truth_table
from .faces import FaceGenerator, Nuisance
from .fr import FRNetworkConfig
from .sr import SRNetworkConfig, mean_psnr
from .trainer import (
    VARIANTS,
    AuxData,
    Checkpoint,
    ModelConfig,
    NativeData,
    TrainConfig,
    extract_features,
    train_stage1,
    train_variant,
)

log = logging.getLogger(__name__)

# offsets keep the identity ranges of the three pools disjoint
NATIVE_ID_OFFSET = 100_000
DISTRACTOR_ID_OFFSET = 200_000


@dataclass(frozen=True)
class BenchmarkConfig:
    hr_size: tuple[int, int] = (32, 32)
    lr_size: tuple[int, int] = (8, 8)
    aux_identities: int = 100
    aux_images: int = 10
    native_identities: int = 100
    native_images: int = 8
    distractors: int = 300
    blur_sigma: float = 1.0
    noise_sigma: float = 0.02
    nuisance: Nuisance = Nuisance()
    sr: SRNetworkConfig = SRNetworkConfig(depth=6, channels=16)
    fr: FRNetworkConfig = FRNetworkConfig(blocks=(32, 64, 128), embedding_dim=64)
    train: TrainConfig = TrainConfig(lr=0.01, lr_step=400, stage1_steps=800, stage2_steps=400, clip_grad=1.0,
                                     sr_reduction="sum")
    k: int = 50

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(sr=self.sr, fr=dataclasses.replace(self.fr, input_size=tuple(self.hr_size)))

    def degradation(self, seed: int) -> DegradationConfig:
        return DegradationConfig(self.lr_size[0], self.lr_size[1], self.blur_sigma, self.noise_sigma, seed)


@dataclass
class DeskBenchmark:
    aux: AuxData
    native: NativeData
    probes: np.ndarray
    gallery: np.ndarray
    truth: np.ndarray
    num_distractors: int
    seed: int
    held_out: AuxData | None = None


def build_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), seed: int = 0, held_out_images: int = 0) -> DeskBenchmark:
    """Render and degrade the corpus for one seed.

    ``held_out_images`` extra pairs per auxiliary identity are kept out of
    training for measuring SR fidelity.
    """
    gen = FaceGenerator(1000 + seed, cfg.nuisance)
    deg = cfg.degradation(seed)
    hr = tuple(cfg.hr_size)
    pairs, held = [], []
    for i in range(cfg.aux_identities):
        for k in range(cfg.aux_images + held_out_images):
            pair = make_lr_hr_pair(gen.image(i, k, hr), deg, i)
            (pairs if k < cfg.aux_images else held).append(pair)

    def native_faces(ident, n, salt):
        return [degrade_native(gen.image(ident, k, hr), deg, salt + k) for k in range(n)]

    ids = [NATIVE_ID_OFFSET + i for i in range(cfg.native_identities)]
    train_ids, test_ids = split_identities(ids, seed)
    tr_x, tr_y = [], []
    for label, ident in enumerate(train_ids):
        faces = native_faces(ident, cfg.native_images, ident * 1000)
        tr_x += faces
        tr_y += [label] * len(faces)
    native = NativeData.from_lr(np.stack(tr_x), tr_y, hr)

    rng = np.random.default_rng(seed)
    probes, probe_ids, gallery, gallery_ids = [], [], [], []
    for ident in test_ids:
        faces = native_faces(ident, cfg.native_images, ident * 1000)
        order = rng.permutation(len(faces))
        n_probe = len(faces) // 2
        for rank, j in enumerate(order):
            if rank < n_probe:
                probes.append(faces[j])
                probe_ids.append(ident)
            else:
                gallery.append(faces[j])
                gallery_ids.append(ident)
    for d in range(cfg.distractors):
        ident = DISTRACTOR_ID_OFFSET + d
        gallery.append(degrade_native(gen.image(ident, 0, hr), deg, ident * 1000))
        gallery_ids.append(None)
    return DeskBenchmark(
        aux=AuxData.from_pairs(pairs),
        native=native,
        probes=np.stack(probes),
        gallery=np.stack(gallery),
        truth=truth_table(probe_ids, gallery_ids),
        num_distractors=cfg.distractors,
        seed=seed,
        held_out=AuxData.from_pairs(held) if held else None,
    )


def evaluate_checkpoint(bench: DeskBenchmark, ckpt: Checkpoint, k: int = 50) -> EvalReport:
    p = extract_features(bench.probes, ckpt)
    g = extract_features(bench.gallery, ckpt)
    return evaluate(p, g, bench.truth, k=min(k, len(g)), num_distractors=bench.num_distractors, seed=bench.seed)


@torch.no_grad()
def sr_psnr_gain(ckpt: Checkpoint, pairs: AuxData) -> tuple[float, float]:
    """Mean PSNR of bicubic inputs and of SR outputs against the HR targets."""
    model = ckpt.model
    model.eval()
    out = model.sr(pairs.inputs).numpy()
    model.train()
    targets = pairs.targets.numpy()
    return mean_psnr(pairs.inputs.numpy(), targets), mean_psnr(out, targets)


@dataclass
class AblationResult:
    seed: int
    reports: dict[str, EvalReport]
    seconds: dict[str, float] = field(default_factory=dict)

    def rank1(self) -> dict[str, float]:
        return {v: r.cmc[0] for v, r in self.reports.items()}

    def ordering_holds(self) -> bool:
        """rank-1 csri > joint_sr_fr > independent_sr_fr."""
        r = self.rank1()
        return r["csri"] > r["joint_sr_fr"] > r["independent_sr_fr"]


def run_ablation(cfg: BenchmarkConfig = BenchmarkConfig(), seed: int = 0,
                 variants: tuple[str, ...] = VARIANTS, bench: DeskBenchmark | None = None) -> AblationResult:
    """Train and evaluate each variant on one seed of the benchmark.

    joint_sr_fr and csri start from the same stage-1 checkpoint.
    """
    bench = bench if bench is not None else build_benchmark(cfg, seed)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    result = AblationResult(seed=seed, reports={})
    stage1 = None
    for v in variants:
        t0 = time.perf_counter()
        start = None
        if v in ("joint_sr_fr", "csri"):
            if stage1 is None:
                stage1 = train_stage1(bench.aux, dataclasses.replace(tcfg, variant="csri"), cfg.model,
                                      bench.native.num_classes)
            start = copy.deepcopy(stage1)
        ckpt = train_variant(v, bench.aux, bench.native, tcfg, cfg.model, stage1=start)
        result.reports[v] = evaluate_checkpoint(bench, ckpt, cfg.k)
        result.seconds[v] = time.perf_counter() - t0
        log.info("seed %d %s rank1=%.3f map=%.3f (%.0fs)", seed, v, result.reports[v].cmc[0],
                 result.reports[v].map, result.seconds[v])
    return result
