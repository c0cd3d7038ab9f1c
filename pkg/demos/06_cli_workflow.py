"""The workspace workflow behind the ``csri`` command.

Writes a small procedural corpus and a config, then runs prepare, train,
eval and compare exactly as one would from a shell:

    csri prepare --config exp.ini
    csri train   --config exp.ini --variant csri
    csri eval    --config exp.ini --variant csri
    csri compare --config exp.ini

Training steps are kept tiny so the whole run takes well under a minute;
the numbers are therefore not meaningful, only the artifacts are.

    python3 demos/06_cli_workflow.py [directory]
"""
import sys
import tempfile
from pathlib import Path

from csri.cli import main
from csri.faces import write_corpus

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="csri_demo_"))
write_corpus(root / "corpus/aux", range(20), 4, size=(32, 32), seed=1)
write_corpus(root / "corpus/native", range(1000, 1030), 4, size=(32, 32), seed=1)
write_corpus(root / "corpus/distractors", range(5000, 5040), 1, size=(32, 32), seed=1, labelled=False)
(root / "exp.ini").write_text("""\
[paths]
auxiliary = corpus/aux
native = corpus/native
distractors = corpus/distractors
workspace = workspace

[data]
hr_height = 32
hr_width = 32
seed = 0

[degradation]
lr_height = 8
lr_width = 8

[sr]
depth = 4
channels = 8

[fr]
blocks = 8, 16, 32
embedding_dim = 32

[train]
batch_aux = 16
batch_nat = 16
stage1_steps = 30
stage2_steps = 20

[eval]
k = 20
""")

cfg = ["--config", str(root / "exp.ini")]
assert main(["prepare", *cfg]) == 0
for variant in ("fr_only", "independent_sr_fr", "joint_sr_fr", "csri"):
    assert main(["train", "--variant", variant, *cfg]) == 0
    assert main(["eval", "--variant", variant, *cfg]) == 0
assert main(["compare", *cfg]) == 0
print("artifacts:")
for p in sorted((root / "workspace").glob("*/*")):
    if p.is_file() or p.parent.name in ("checkpoints", "reports"):
        print("  ", p.relative_to(root))
