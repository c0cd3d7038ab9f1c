"""Domain synthesis, identity splits and probe/gallery manifests.

Two training domains are manufactured from labelled high-resolution faces:

* auxiliary: paired (LR, HR) samples, where the LR input is the HR image
  bicubic-downsampled and re-upsampled to the HR size;
* native: blurred, downsampled and noise-corrupted LR images whose HR
  source is discarded.

Test identities are turned into a 1:N identification protocol: half of
each identity's images become probes, the rest gallery matches, and
unlabelled distractors enlarge the gallery.
"""
from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .imaging import gaussian_blur, resize

# Mean native LR face size (height, width).
DEFAULT_LR_SIZE = (20, 16)
MAX_LR_SIDE = 32

MANIFEST_MAGIC = "# csri-manifest v1"


class ProtocolError(ValueError):
    """The data violates the identification protocol's requirements."""


class ManifestError(ValueError):
    """A manifest file could not be parsed or violates an invariant."""


class Domain(str, enum.Enum):
    AUXILIARY = "auxiliary"
    NATIVE = "native"


class Role(str, enum.Enum):
    TRAIN = "train"
    PROBE = "probe"
    GALLERY_MATCH = "gallery_match"
    GALLERY_DISTRACTOR = "gallery_distractor"


@dataclass(frozen=True)
class FaceRecord:
    image_path: str
    identity: int | None
    domain: Domain
    role: Role

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain(self.domain))
        object.__setattr__(self, "role", Role(self.role))
        if self.identity is not None and self.identity < 0:
            raise ValueError(f"identity must be non-negative, got {self.identity}")
        distractor = self.role is Role.GALLERY_DISTRACTOR
        if distractor != (self.identity is None):
            raise ValueError(
                f"{self.image_path}: distractors must be unlabelled and all other roles labelled"
            )


@dataclass
class LRHRPair:
    input_lr: np.ndarray
    target_hr: np.ndarray
    identity: int

    def __post_init__(self):
        if self.input_lr.shape != self.target_hr.shape:
            raise ValueError(f"pair shapes differ: {self.input_lr.shape} vs {self.target_hr.shape}")


@dataclass(frozen=True)
class DegradationConfig:
    lr_height: int = DEFAULT_LR_SIZE[0]
    lr_width: int = DEFAULT_LR_SIZE[1]
    blur_sigma: float = 1.0
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.lr_height <= MAX_LR_SIDE and 1 <= self.lr_width <= MAX_LR_SIDE):
            raise ValueError(
                f"LR size {self.lr_height}x{self.lr_width} outside 1..{MAX_LR_SIDE} pixels"
            )
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be non-negative")

    @property
    def lr_size(self) -> tuple[int, int]:
        return (self.lr_height, self.lr_width)


@dataclass
class SplitManifest:
    dataset: str
    records: list[FaceRecord]
    seed: int
    counts: dict[str, int] = field(default_factory=dict)
    # provenance stamp of the configuration that produced the manifest
    config_hash: str | None = None

    def __post_init__(self):
        actual = count_roles(self.records)
        if not self.counts:
            self.counts = actual
        elif self.counts != actual:
            raise ManifestError(f"declared role counts {self.counts} disagree with records {actual}")
        check_protocol(self.records)

    def by_role(self, role: Role | str) -> list[FaceRecord]:
        role = Role(role)
        return [r for r in self.records if r.role is role]


def count_roles(records: Iterable[FaceRecord]) -> dict[str, int]:
    c = Counter(r.role.value for r in records)
    return {role.value: c.get(role.value, 0) for role in Role}


def check_protocol(records: Sequence[FaceRecord]) -> None:
    """Raise unless train/test identities are disjoint and every probe is enrolled."""
    train = {r.identity for r in records if r.role is Role.TRAIN and r.domain is Domain.NATIVE}
    probe = {r.identity for r in records if r.role is Role.PROBE}
    match = {r.identity for r in records if r.role is Role.GALLERY_MATCH}
    missing = sorted(probe - match)
    if missing:
        raise ProtocolError(f"probe identities without a gallery match: {missing[:10]}")
    leaked = sorted(train & (probe | match))
    if leaked:
        raise ProtocolError(f"identities in both train and test: {leaked[:10]}")


def _check_image(img: np.ndarray, lr_size: tuple[int, int]) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    h, w = img.shape[1:]
    if lr_size[0] > h or lr_size[1] > w:
        raise ValueError(f"LR size {lr_size} larger than HR image {h}x{w}")
    return img


def make_lr_hr_pair(hr_image: np.ndarray, cfg: DegradationConfig, identity: int = 0) -> LRHRPair:
    """Build an auxiliary sample: bicubic down to ``cfg.lr_size`` and back up."""
    hr = _check_image(hr_image, cfg.lr_size)
    lr = resize(hr, cfg.lr_size)
    return LRHRPair(input_lr=resize(lr, hr.shape[1:]), target_hr=hr, identity=identity)


def clean_downsample(hr_image: np.ndarray, cfg: DegradationConfig) -> np.ndarray:
    return resize(_check_image(hr_image, cfg.lr_size), cfg.lr_size)


def degrade_native(hr_image: np.ndarray, cfg: DegradationConfig, index: int = 0) -> np.ndarray:
    """Blur, downsample, add Gaussian noise and clip: a native-like LR face.

    ``index`` distinguishes images sharing one config so each gets its own
    noise draw; output depends only on ``(hr_image, cfg, index)``.
    """
    hr = _check_image(hr_image, cfg.lr_size)
    lr = resize(gaussian_blur(hr, cfg.blur_sigma), cfg.lr_size)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng([cfg.seed, index])
        lr = lr + rng.normal(0.0, cfg.noise_sigma, size=lr.shape)
    return np.clip(lr, 0.0, 1.0)


def split_identities(identities: Iterable[int], seed: int) -> tuple[list[int], list[int]]:
    """Shuffle identities and halve them; an odd one out goes to train."""
    ids = sorted(set(identities))
    if len(ids) < 2:
        raise ProtocolError(f"need at least 2 identities to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = (len(ids) + 1) // 2
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return train, test


def build_probe_gallery(
    test_records: Sequence[FaceRecord],
    distractors: Sequence[FaceRecord],
    seed: int,
    dataset: str = "native",
    train_records: Sequence[FaceRecord] = (),
) -> SplitManifest:
    """Assign floor(n/2) images per test identity to probe, the rest to gallery."""
    by_id: dict[int, list[FaceRecord]] = defaultdict(list)
    for r in test_records:
        if r.identity is None:
            raise ProtocolError(f"test record {r.image_path} has no identity")
        by_id[r.identity].append(r)
    rng = np.random.default_rng(seed)
    out = list(train_records)
    for ident in sorted(by_id):
        recs = sorted(by_id[ident], key=lambda r: r.image_path)
        if len(recs) < 2:
            raise ProtocolError(f"identity {ident} has {len(recs)} test image(s); at least 2 needed")
        order = rng.permutation(len(recs))
        n_probe = len(recs) // 2
        for rank, i in enumerate(order):
            role = Role.PROBE if rank < n_probe else Role.GALLERY_MATCH
            out.append(FaceRecord(recs[i].image_path, ident, recs[i].domain, role))
    for d in distractors:
        out.append(FaceRecord(d.image_path, None, d.domain, Role.GALLERY_DISTRACTOR))
    return SplitManifest(dataset=dataset, records=out, seed=seed)


def write_manifest(manifest: SplitManifest, path: str | Path) -> None:
    lines = [
        MANIFEST_MAGIC,
        f"# dataset\t{manifest.dataset}",
        f"# seed\t{manifest.seed}",
    ]
    if manifest.config_hash:
        lines.append(f"# config_hash\t{manifest.config_hash}")
    lines += [f"# count\t{role}\t{n}" for role, n in manifest.counts.items()]
    for r in manifest.records:
        label = "" if r.identity is None else str(r.identity)
        lines.append(f"{r.image_path}\t{label}\t{r.domain.value}\t{r.role.value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> SplitManifest:
    text = Path(path).read_text(encoding="utf-8")
    dataset, seed, counts, records, chash = None, None, {}, [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        if lineno == 1:
            if line != MANIFEST_MAGIC:
                raise ManifestError(f"{path}:1: not a manifest (bad header {line!r})")
            continue
        fields = line.split("\t")
        try:
            if line.startswith("#"):
                key = fields[0][1:].strip()
                if key == "dataset":
                    dataset = fields[1]
                elif key == "seed":
                    seed = int(fields[1])
                elif key == "config_hash":
                    chash = fields[1]
                elif key == "count":
                    counts[Role(fields[1]).value] = int(fields[2])
                else:
                    raise ValueError(f"unknown header key {key!r}")
                continue
            if len(fields) != 4:
                raise ValueError(f"expected 4 tab-separated fields, got {len(fields)}")
            ident = int(fields[1]) if fields[1] else None
            records.append(FaceRecord(fields[0], ident, Domain(fields[2]), Role(fields[3])))
        except (ValueError, IndexError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    if dataset is None or seed is None:
        raise ManifestError(f"{path}: missing dataset or seed header")
    counts = {role.value: counts.get(role.value, 0) for role in Role}
    return SplitManifest(dataset=dataset, records=records, seed=seed, counts=counts, config_hash=chash)

