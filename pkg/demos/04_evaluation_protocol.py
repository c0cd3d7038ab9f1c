"""Identification protocol and metrics on small hand-made cases.

Walks through the half/half identity split, the probe/gallery assignment,
and CMC / average precision on examples small enough to check by eye.

    python3 demos/04_evaluation_protocol.py
"""
import numpy as np

from csri.data import Domain, FaceRecord, Role, build_probe_gallery, split_identities
from csri.evaluation import average_precision, cmc_curve, evaluate, truth_table

train, test = split_identities(range(5139), seed=0)
print(f"5139 identities -> {len(train)} train / {len(test)} test")
train, test = split_identities(range(41), seed=0)
print(f"  41 identities -> {len(train)} train / {len(test)} test")

recs = [FaceRecord(f"id7/{k}.png", 7, Domain.NATIVE, Role.PROBE) for k in range(5)]
dis = [FaceRecord("d/0.png", None, Domain.NATIVE, Role.GALLERY_DISTRACTOR)]
m = build_probe_gallery(recs, dis, seed=0)
print("5 test images of one identity + 1 distractor ->", m.counts)

print("AP with true matches at ranks 1 and 3:", average_precision(np.arange(4), np.array([1, 0, 1, 0], bool)))
rankings = np.tile(np.arange(5), (3, 1))
truth = np.zeros((3, 5), bool)
truth[0, 0] = truth[1, 1] = truth[2, 4] = True
print("CMC for first matches at ranks 1, 2, 5:", cmc_curve(rankings, truth, 5))

rng = np.random.default_rng(0)
centres = rng.normal(size=(10, 8))
probe_ids = np.repeat(np.arange(10), 2)
gallery_ids = list(np.repeat(np.arange(10), 3)) + [None] * 50
probes = centres[probe_ids] + 0.6 * rng.normal(size=(20, 8))
gallery = np.vstack([centres[np.repeat(np.arange(10), 3)], rng.normal(size=(50, 8))]) + 0.6 * rng.normal(size=(80, 8))
rep = evaluate(probes, gallery, truth_table(probe_ids, gallery_ids), k=50)
print("clustered toy embeddings:", {k: round(v, 3) for k, v in rep.summary().items()})
