"""1:N identification metrics: Euclidean ranking, CMC, per-probe AP and mAP.

Every probe is ranked against the whole gallery (true matches plus
distractors). Ties in distance are broken by gallery index, so rankings are
fully deterministic.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_K = 50
REPORTED_RANKS = (1, 20, 50)


class EvaluationError(ValueError):
    pass


def squared_distances(probes: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Exact pairwise squared Euclidean distances, ``(P, G)``.

    Computed from explicit differences rather than the dot-product expansion
    so that identical gallery vectors produce bit-identical distances.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if probes.shape[1] != gallery.shape[1]:
        raise EvaluationError(f"embedding sizes differ: {probes.shape[1]} vs {gallery.shape[1]}")
    out = np.empty((len(probes), len(gallery)))
    for i, p in enumerate(probes):
        out[i] = np.sum((gallery - p) ** 2, axis=1)
    return out


def rank_gallery(probe: np.ndarray, gallery: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gallery indices by ascending distance to ``probe``, and those distances."""
    gallery = np.asarray(gallery, dtype=np.float64)
    if len(gallery) == 0:
        raise EvaluationError("gallery is empty")
    d2 = squared_distances(probe, gallery)[0]
    order = np.argsort(d2, kind="stable")
    return order, np.sqrt(d2[order])


def _match_ranks(order: np.ndarray, truth_row: np.ndarray) -> np.ndarray:
    """1-based positions of the true matches within a ranking."""
    return np.flatnonzero(np.asarray(truth_row, dtype=bool)[order]) + 1


def cmc_curve(rankings: np.ndarray, truth: np.ndarray, k: int) -> np.ndarray:
    """``cmc[j]`` is the fraction of probes whose first true match is at rank <= j + 1.

    ``rankings`` is ``(P, G)`` gallery orderings; ``truth`` is a ``(P, G)``
    boolean table of which gallery entries share the probe's identity.
    """
    rankings = np.atleast_2d(rankings)
    truth = np.atleast_2d(np.asarray(truth, dtype=bool))
    first = np.empty(len(rankings), dtype=np.int64)
    for i, (order, row) in enumerate(zip(rankings, truth)):
        ranks = _match_ranks(order, row)
        if len(ranks) == 0:
            raise EvaluationError(f"probe {i} has no true match in the gallery")
        first[i] = ranks[0]
    return np.array([(first <= j).mean() for j in range(1, k + 1)])


def average_precision(order: np.ndarray, truth_row: np.ndarray) -> float:
    """Non-interpolated AP: mean of precision@k over the true-match positions k."""
    ranks = _match_ranks(order, truth_row)
    if len(ranks) == 0:
        raise EvaluationError("probe has no true match in the gallery")
    # plain left-to-right accumulation keeps the result order-independent of numpy's summation
    return sum((i + 1) / int(k) for i, k in enumerate(ranks)) / len(ranks)


def pr_points(order: np.ndarray, truth_row: np.ndarray) -> list[tuple[int, float, float]]:
    """(rank, precision, recall) at each true match; the vertices of the PR curve."""
    ranks = _match_ranks(order, truth_row)
    r = len(ranks)
    return [(int(k), (i + 1) / k, (i + 1) / r) for i, k in enumerate(ranks)]


@dataclass
class EvalReport:
    cmc: list[float]
    average_precisions: list[float]
    map: float
    num_probes: int
    gallery_size: int
    num_distractors: int
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def rank(self, k: int) -> float | None:
        """CMC at rank ``k``; None when the curve is shorter than ``k``."""
        return self.cmc[k - 1] if 0 < k <= len(self.cmc) else None

    def summary(self) -> dict:
        out = {f"rank{k}": self.rank(k) for k in REPORTED_RANKS}
        out["map"] = self.map
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(self.summary())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})


def evaluate(probe_emb: np.ndarray, gallery_emb: np.ndarray, truth: np.ndarray,
             k: int = DEFAULT_K, num_distractors: int | None = None, seed: int | None = None,
             keep_rankings: bool = False) -> EvalReport | tuple[EvalReport, np.ndarray]:
    """Rank every probe against the gallery and summarise CMC and mAP.

    ``truth[i, j]`` says whether gallery item ``j`` is a true match of probe
    ``i``. A ``k`` larger than the gallery is truncated with a warning.
    """
    probe_emb = np.atleast_2d(np.asarray(probe_emb, dtype=np.float64))
    gallery_emb = np.atleast_2d(np.asarray(gallery_emb, dtype=np.float64))
    truth = np.asarray(truth, dtype=bool)
    if len(gallery_emb) == 0:
        raise EvaluationError("gallery is empty")
    if truth.shape != (len(probe_emb), len(gallery_emb)):
        raise EvaluationError(f"truth table shape {truth.shape} does not match probes x gallery")
    if k > len(gallery_emb):
        warnings.warn(f"K={k} exceeds gallery size {len(gallery_emb)}; CMC truncated", stacklevel=2)
        k = len(gallery_emb)
    d2 = squared_distances(probe_emb, gallery_emb)
    rankings = np.argsort(d2, axis=1, kind="stable")
    cmc = cmc_curve(rankings, truth, k)
    aps = [average_precision(o, t) for o, t in zip(rankings, truth)]
    report = EvalReport(
        cmc=[float(c) for c in cmc],
        average_precisions=aps,
        map=sum(aps) / len(aps),
        num_probes=len(probe_emb),
        gallery_size=len(gallery_emb),
        num_distractors=int((~truth.any(axis=0)).sum()) if num_distractors is None else num_distractors,
        seed=seed,
    )
    return (report, rankings) if keep_rankings else report


def truth_table(probe_ids, gallery_ids) -> np.ndarray:
    """Boolean match table; gallery entries with identity None never match."""
    g = np.array([-1 if i is None else i for i in gallery_ids])
    p = np.asarray(list(probe_ids))
    return (p[:, None] == g[None, :]) & (g[None, :] >= 0)


def write_report(report: EvalReport, rankings: np.ndarray, truth: np.ndarray, out_dir: str | Path) -> Path:
    """Write ``report.json``, ``cmc.csv`` and ``pr.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "cmc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "match_rate"])
        for i, c in enumerate(report.cmc, start=1):
            w.writerow([i, repr(c)])
    with open(out / "pr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "rank", "precision", "recall"])
        for p, (order, row) in enumerate(zip(rankings, truth)):
            for rank, prec, rec in pr_points(order, row):
                w.writerow([p, rank, repr(prec), repr(rec)])
    return out / "report.json"


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
