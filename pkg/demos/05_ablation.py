"""Desk-scale ablation: does complement SR learning help native LR faces?

Trains the four variants on one seed of the procedural benchmark and prints
rank-1/20/50 and mAP, plus the two differences the method is about: joint
vs independent SR-FR training, and complement (native-branch) learning vs
joint training alone. One seed takes several minutes on one CPU core.

    python3 demos/05_ablation.py [seed]
"""
import logging
import sys

from csri.benchmark import BenchmarkConfig, run_ablation
from csri.experiment import compare_reports

logging.basicConfig(level=logging.INFO, format="%(message)s")
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
result = run_ablation(BenchmarkConfig(), seed=seed)
table = compare_reports({v: r.summary() for v, r in result.reports.items()})
print(table.to_text())
print("csri > joint > independent at rank-1:", result.ordering_holds())
