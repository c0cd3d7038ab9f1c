"""Workspace-based experiment driver: prepare, train, eval, compare.

A workspace has a flat layout::

    manifests/     auxiliary.tsv, native.tsv
    images/aux/    hr/ and lr/ PNGs of the synthetic pairs
    images/native/ degraded native faces (train, test and distractors)
    checkpoints/   <variant>.ckpt, csri_stage1.ckpt, csri_stage2.ckpt, stage1 cache
    reports/       <variant>/{report.json,cmc.csv,pr.csv,loss.csv}, comparison.{txt,csv}

Every artifact carries the hash of the configuration that produced it.
Outputs contain no timestamps, so repeating a command with the same
configuration and seed reproduces them byte for byte.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    DegradationConfig,
    Domain,
    FaceRecord,
    Role,
    SplitManifest,
    build_probe_gallery,
    clean_downsample,
    degrade_native,
    load_manifest,
    split_identities,
    write_manifest,
)
from .evaluation import DEFAULT_K, REPORTED_RANKS, evaluate, load_report, truth_table, write_report
from .fr import FRNetworkConfig
from .imaging import load_image, resize, save_image
from .sr import SRNetworkConfig
from .trainer import (
    VARIANTS,
    AuxData,
    Checkpoint,
    ModelConfig,
    NativeData,
    TrainConfig,
    config_hash,
    extract_features,
    read_loss_csv,
    train_stage1,
    train_variant,
    write_loss_csv,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
# the paper-style ablation highlights these two differences
HIGHLIGHTED_DELTAS = (("joint_sr_fr", "independent_sr_fr"), ("csri", "joint_sr_fr"))


class ConfigError(ValueError):
    pass


class CorpusError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    auxiliary: str
    native: str
    workspace: str
    distractors: str | None = None
    hr_size: tuple[int, int] = (64, 64)
    data_seed: int = 0
    degradation: DegradationConfig = DegradationConfig()
    sr: SRNetworkConfig = SRNetworkConfig()
    fr: FRNetworkConfig = FRNetworkConfig()
    train: TrainConfig = TrainConfig()
    k: int = DEFAULT_K
    variants: tuple[str, ...] = VARIANTS
    # directory the relative paths are resolved against
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hr_size", tuple(self.hr_size))
        object.__setattr__(self, "variants", tuple(self.variants))
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown variants {unknown}; expected a subset of {VARIANTS}")
        if self.k < 1:
            raise ConfigError("eval k must be >= 1")
        lr = self.degradation.lr_size
        if lr[0] > self.hr_size[0] or lr[1] > self.hr_size[1]:
            raise ConfigError(f"LR size {lr} exceeds HR size {self.hr_size}")

    def path(self, key: str) -> Path | None:
        value = getattr(self, key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def model(self) -> ModelConfig:
        fr = dataclasses.replace(self.fr, input_size=self.hr_size)
        return ModelConfig(sr=self.sr, fr=fr)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override both the data and the training seed."""
        return dataclasses.replace(
            self, data_seed=seed,
            degradation=dataclasses.replace(self.degradation, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["paths"] = {"auxiliary": self.auxiliary, "native": self.native, "workspace": self.workspace}
        if self.distractors is not None:
            cp["paths"]["distractors"] = self.distractors
        cp["data"] = {"hr_height": str(self.hr_size[0]), "hr_width": str(self.hr_size[1]), "seed": str(self.data_seed)}
        cp["degradation"] = _section(self.degradation)
        cp["sr"] = _section(self.sr)
        cp["fr"] = _section(self.fr, skip=("input_size", "num_synthetic", "num_native"))
        cp["train"] = _section(self.train, skip=("variant",))
        cp["eval"] = {"k": str(self.k)}
        cp["compare"] = {"variants": ", ".join(self.variants)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base_dir: str | Path = ".") -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
            paths = cp["paths"]
            kw = dict(
                auxiliary=paths["auxiliary"], native=paths["native"], workspace=paths["workspace"],
                distractors=paths.get("distractors"), base_dir=str(base_dir),
            )
        except (configparser.Error, KeyError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        try:
            if cp.has_section("data"):
                d = cp["data"]
                kw["hr_size"] = (d.getint("hr_height", 64), d.getint("hr_width", 64))
                kw["data_seed"] = d.getint("seed", 0)
            kw["degradation"] = _parse(DegradationConfig, cp, "degradation")
            kw["sr"] = _parse(SRNetworkConfig, cp, "sr")
            kw["fr"] = _parse(FRNetworkConfig, cp, "fr")
            kw["train"] = _parse(TrainConfig, cp, "train")
            if cp.has_section("eval"):
                kw["k"] = cp["eval"].getint("k", DEFAULT_K)
            if cp.has_section("compare"):
                kw["variants"] = tuple(v.strip() for v in cp["compare"]["variants"].split(",") if v.strip())
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_ini(path.read_text(), base_dir=path.parent)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    def hash(self) -> str:
        """Provenance hash; the workspace location does not take part."""
        return config_hash(dataclasses.replace(self, workspace="").to_ini())


def _section(obj, skip=()) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        out[f.name] = ", ".join(map(str, v)) if isinstance(v, tuple) else str(v)
    return out


def _coerce(text: str, default):
    if text in ("None", ""):
        return None
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or default is None:
        try:
            return float(text)
        except ValueError:
            return text
    return text


def _parse(cls, cp: configparser.ConfigParser, section: str):
    if not cp.has_section(section):
        return cls()
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for key, text in cp[section].items():
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kw[key] = _coerce(text, getattr(defaults, key))
    return cls(**kw)


# ---------------------------------------------------------------- corpus I/O

def _gray(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 1:
        return img
    return (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]


def _read(path: Path, size: tuple[int, int] | None = None) -> np.ndarray:
    try:
        img = _gray(load_image(path))
    except (OSError, ValueError) as exc:
        raise CorpusError(f"cannot read image {path}: {exc}") from exc
    if size is not None and img.shape[-2:] != tuple(size):
        img = np.clip(resize(img, size), 0.0, 1.0)
    return img


def _identity_of(name: str) -> int:
    digits = "".join(ch for ch in name if ch.isdigit())
    if not digits:
        raise CorpusError(f"identity directory {name!r} has no numeric id")
    return int(digits)


def scan_labelled(root: Path) -> dict[int, list[Path]]:
    """Map identity -> sorted image paths for a ``root/<identity>/<image>`` corpus."""
    if not root.is_dir():
        raise CorpusError(f"corpus directory {root} not found")
    out: dict[int, list[Path]] = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        ident = _identity_of(d.name)
        if ident in out:
            raise CorpusError(f"identity {ident} appears twice in {root}")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if files:
            out[ident] = files
    if not out:
        raise CorpusError(f"no labelled images under {root}")
    return out


def scan_flat(root: Path | None) -> list[Path]:
    if root is None:
        return []
    if not root.is_dir():
        raise CorpusError(f"distractor directory {root} not found")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------- prepare

def cmd_prepare(cfg: ExperimentConfig) -> dict[str, SplitManifest]:
    """Synthesize auxiliary pairs and the native set, and write both manifests."""
    ws = cfg.path("workspace")
    chash = cfg.hash()
    deg = cfg.degradation
    aux_corpus = scan_labelled(cfg.path("auxiliary"))
    nat_corpus = scan_labelled(cfg.path("native"))
    overlap = set(aux_corpus) & set(nat_corpus)
    if overlap:
        log.warning("%d identities appear in both auxiliary and native corpora", len(overlap))

    aux_records = []
    for ident, files in aux_corpus.items():
        for k, f in enumerate(files):
            hr = _read(f, cfg.hr_size)
            name = f"id{ident:05d}_{k:03d}.png"
            save_image(hr, ws / "images/aux/hr" / name)
            save_image(np.clip(clean_downsample(hr, deg), 0, 1), ws / "images/aux/lr" / name)
            aux_records.append(FaceRecord(f"images/aux/lr/{name}", ident, Domain.AUXILIARY, Role.TRAIN))
    aux_manifest = SplitManifest("auxiliary", aux_records, seed=cfg.data_seed, config_hash=chash)

    train_ids, test_ids = split_identities(nat_corpus, cfg.data_seed)
    index = 0

    def degrade(src: Path, rel: str) -> str:
        nonlocal index
        img = _read(src)
        if img.shape[-2:] != deg.lr_size:
            # already-LR native images are kept as they are; larger ones are degraded
            img = degrade_native(np.clip(resize(img, cfg.hr_size), 0, 1), deg, index)
        index += 1
        save_image(img, ws / rel)
        return rel

    train_recs, test_recs, dis_recs = [], [], []
    for ident in sorted(nat_corpus):
        part = "train" if ident in set(train_ids) else "test"
        for k, f in enumerate(nat_corpus[ident]):
            rel = degrade(f, f"images/native/{part}/id{ident:05d}_{k:03d}.png")
            rec = FaceRecord(rel, ident, Domain.NATIVE, Role.TRAIN if part == "train" else Role.PROBE)
            (train_recs if part == "train" else test_recs).append(rec)
    for k, f in enumerate(scan_flat(cfg.path("distractors"))):
        rel = degrade(f, f"images/native/distractors/{k:06d}.png")
        dis_recs.append(FaceRecord(rel, None, Domain.NATIVE, Role.GALLERY_DISTRACTOR))
    native_manifest = build_probe_gallery(test_recs, dis_recs, cfg.data_seed, "native", train_recs)
    native_manifest.config_hash = chash

    (ws / "manifests").mkdir(parents=True, exist_ok=True)
    (ws / "checkpoints").mkdir(exist_ok=True)
    (ws / "reports").mkdir(exist_ok=True)
    write_manifest(aux_manifest, ws / "manifests/auxiliary.tsv")
    write_manifest(native_manifest, ws / "manifests/native.tsv")
    cfg.save(ws / "config.ini")
    log.info("prepared %s: %d auxiliary pairs, native counts %s", ws, len(aux_records), native_manifest.counts)
    return {"auxiliary": aux_manifest, "native": native_manifest}


# ---------------------------------------------------------------- train

def _manifest(cfg: ExperimentConfig, name: str) -> SplitManifest:
    path = cfg.path("workspace") / "manifests" / f"{name}.tsv"
    if not path.is_file():
        raise MissingArtifact(f"manifest {path} not found; run prepare first")
    return load_manifest(path)


def _stack(ws: Path, records) -> np.ndarray:
    return np.stack([_read(ws / r.image_path) for r in records]) if records else np.zeros((0, 1, 1, 1))


def load_training_data(cfg: ExperimentConfig) -> tuple[AuxData, NativeData, dict[int, int], dict[int, int]]:
    """Auxiliary pairs and native training images with contiguous labels."""
    ws = cfg.path("workspace")
    aux_m, nat_m = _manifest(cfg, "auxiliary"), _manifest(cfg, "native")
    aux_recs = aux_m.by_role(Role.TRAIN)
    aux_labels = {i: j for j, i in enumerate(sorted({r.identity for r in aux_recs}))}
    lr = _stack(ws, aux_recs)
    hr = np.stack([_read(ws / r.image_path.replace("images/aux/lr/", "images/aux/hr/")) for r in aux_recs])
    aux = AuxData(
        inputs=torch.as_tensor(resize(lr, cfg.hr_size), dtype=torch.float32),
        targets=torch.as_tensor(hr, dtype=torch.float32),
        labels=torch.as_tensor([aux_labels[r.identity] for r in aux_recs]),
    )
    nat_recs = nat_m.by_role(Role.TRAIN)
    nat_labels = {i: j for j, i in enumerate(sorted({r.identity for r in nat_recs}))}
    native = NativeData.from_lr(_stack(ws, nat_recs), [nat_labels[r.identity] for r in nat_recs], cfg.hr_size)
    return aux, native, aux_labels, nat_labels


def _stage1_key(cfg: ExperimentConfig) -> str:
    train = dataclasses.asdict(dataclasses.replace(cfg.train, variant="csri"))
    return config_hash({"config": cfg.hash(), "train": train, "model": cfg.model.to_dict()})


def cmd_train(cfg: ExperimentConfig, variant: str, on_step=None) -> Checkpoint:
    """Train ``variant``; joint_sr_fr and csri share a cached stage-1 checkpoint."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    ws = cfg.path("workspace")
    aux, native, _, _ = load_training_data(cfg)
    tcfg = dataclasses.replace(cfg.train, variant=variant)
    ckdir = ws / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash()

    stage1, prior_history = None, []
    if variant in ("joint_sr_fr", "csri"):
        key = _stage1_key(cfg)
        cache, cache_csv = ckdir / "stage1_cache.ckpt", ckdir / "stage1_cache_loss.csv"
        if cache.is_file() and cache_csv.is_file() and Checkpoint.load(cache).meta.get("stage1_key") == key:
            stage1 = Checkpoint.load(cache)
            log.info("reusing cached stage-1 checkpoint %s", cache)
        else:
            stage1 = train_stage1(aux, tcfg, cfg.model, native.num_classes, on_step=on_step)
            stage1.meta.update(stage1_key=key, config_hash=chash)
            stage1.save(cache)
            write_loss_csv(stage1.history, cache_csv)
        prior_history = read_loss_csv(cache_csv)
        stage1.history = []

    def on_stage(name, ckpt):
        if variant == "csri" and name == "stage1":
            ckpt.meta["config_hash"] = chash
            ckpt.save(ckdir / "csri_stage1.ckpt")

    ckpt = train_variant(variant, aux, native, tcfg, cfg.model, stage1=stage1, on_stage=on_stage, on_step=on_step)
    ckpt.meta.update(config_hash=chash, variant=variant)
    ckpt.variant = variant
    name = "csri_stage2.ckpt" if variant == "csri" else f"{variant}.ckpt"
    ckpt.save(ckdir / name)
    write_loss_csv(prior_history + ckpt.history, ws / "reports" / variant / "loss.csv")
    return ckpt


def final_checkpoint(cfg: ExperimentConfig, variant: str) -> Path:
    name = "csri_stage2.ckpt" if variant == "csri" else f"{variant}.ckpt"
    path = cfg.path("workspace") / "checkpoints" / name
    if not path.is_file():
        raise MissingArtifact(f"checkpoint {path} for variant {variant!r} not found; run train first")
    return path


# ---------------------------------------------------------------- eval

def cmd_eval(cfg: ExperimentConfig, variant: str, checkpoint: str | Path | None = None):
    """Embed probes and gallery through the native branch and write the report."""
    ws = cfg.path("workspace")
    path = Path(checkpoint) if checkpoint is not None else final_checkpoint(cfg, variant)
    if not path.is_file():
        raise MissingArtifact(f"checkpoint {path} not found")
    ckpt = Checkpoint.load(path)
    m = _manifest(cfg, "native")
    probes = m.by_role(Role.PROBE)
    gallery = m.by_role(Role.GALLERY_MATCH) + m.by_role(Role.GALLERY_DISTRACTOR)
    p_emb = extract_features(_stack(ws, probes), ckpt)
    g_emb = extract_features(_stack(ws, gallery), ckpt)
    truth = truth_table([r.identity for r in probes], [r.identity for r in gallery])
    report, rankings = evaluate(p_emb, g_emb, truth, k=cfg.k, num_distractors=m.counts["gallery_distractor"],
                                seed=ckpt.seed, keep_rankings=True)
    report.metadata = {"variant": variant, "checkpoint": path.name, "config_hash": cfg.hash(),
                       "stage": ckpt.stage, "step": ckpt.step}
    write_report(report, rankings, truth, ws / "reports" / variant)
    return report


# ---------------------------------------------------------------- compare

@dataclass
class Comparison:
    rows: dict[str, dict]
    deltas: dict[str, dict]

    def to_text(self) -> str:
        cols = [f"rank{k}" for k in REPORTED_RANKS] + ["map"]
        width = max(len(n) for n in list(self.rows) + list(self.deltas) + ["variant"])
        fmt = lambda v: "     -" if v is None else f"{100 * v:6.2f}"
        lines = [f"{'variant':<{width}}  " + "  ".join(f"{c:>6}" for c in cols)]
        lines += [f"{n:<{width}}  " + "  ".join(fmt(r[c]) for c in cols) for n, r in self.rows.items()]
        if self.deltas:
            lines.append("")
            lines += [f"{n:<{width}}  " + "  ".join(fmt(r[c]) for c in cols) for n, r in self.deltas.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"rank{k}" for k in REPORTED_RANKS] + ["map"]
        w.writerow(["row"] + cols)
        for n, r in {**self.rows, **self.deltas}.items():
            w.writerow([n] + ["" if r[c] is None else repr(r[c]) for c in cols])
        return buf.getvalue()


def compare_reports(summaries: dict[str, dict]) -> Comparison:
    """Tabulate summaries and the highlighted pairwise differences."""
    deltas = {}
    pairs = list(HIGHLIGHTED_DELTAS)
    if "fr_only" in summaries and "csri" in summaries:
        pairs.append(("csri", "fr_only"))
    for a, b in pairs:
        if a in summaries and b in summaries:
            deltas[f"{a} - {b}"] = {
                c: None if summaries[a][c] is None or summaries[b][c] is None else summaries[a][c] - summaries[b][c]
                for c in summaries[a]
            }
    return Comparison(rows=dict(summaries), deltas=deltas)


def cmd_compare(cfg: ExperimentConfig) -> Comparison:
    ws = cfg.path("workspace")
    summaries = {}
    for v in cfg.variants:
        path = ws / "reports" / v / "report.json"
        if not path.is_file():
            raise MissingArtifact(f"no evaluation report for variant {v!r} ({path}); run train and eval first")
        summaries[v] = load_report(path).summary()
    table = compare_reports(summaries)
    (ws / "reports" / "comparison.txt").write_text(table.to_text())
    (ws / "reports" / "comparison.csv").write_text(table.to_csv())
    return table

