"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run. The two training
criteria (SR utility and ablation ordering) take minutes on one core.
"""
import math
import time

import numpy as np
import pytest
import torch

from conftest import criterion
from csri.benchmark import BenchmarkConfig, build_benchmark, run_ablation, sr_psnr_gain
from csri.checkpoint import read_blocks
from csri.data import split_identities
from csri.evaluation import average_precision, cmc_curve, evaluate, truth_table
from csri.experiment import ExperimentConfig, cmd_prepare
from csri.faces import write_corpus
from csri.fr import FRNetworkConfig, ce_loss
from csri.sr import SRNetworkConfig, sr_loss
from csri.trainer import (
    LossBreakdown,
    LossWeights,
    ModelConfig,
    TrainConfig,
    build_model,
    csri_loss,
    joint_loss,
    train_stage1,
    train_stage2,
)
from oracles import central_difference, max_relative_error, naive_metrics
from test_evaluation import random_instance
from test_trainer import SMALL, toy_aux, toy_native


def test_criterion_1_loss_arithmetic():
    with criterion(1, "loss composition identities and worked examples") as info:
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10_000):
            l_sr, l_syn, l_nat = rng.uniform(0, 100, 3)
            lam = rng.uniform(0, 1)
            bd = LossBreakdown.compose(l_sr, l_syn, l_nat, LossWeights(lam))
            worst = max(worst, abs(bd.l_sr_fr - (l_syn + lam * l_sr)) / bd.l_sr_fr,
                        abs(bd.l_csrl - ((l_syn + l_nat) + lam * l_sr)) / bd.l_csrl)
        info["detail"] = f"max rel err {worst:.1e}"
        assert worst <= 1e-12
        assert joint_loss(2.0, 10.0) == 2.03
        assert csri_loss(2.0, 1.5, 10.0) == 3.53
        assert LossWeights().lambda_sr == 0.003


def test_criterion_2_cross_entropy_fixed_points():
    with criterion(2, "cross-entropy of uniform logits and shift invariance") as info:
        for c in (2, 10, 100):
            assert abs(ce_loss(torch.zeros(c, dtype=torch.float64), c - 1).item() - math.log(c)) <= 1e-12
        g = torch.Generator().manual_seed(0)
        worst = 0.0
        for _ in range(200):
            logits = torch.randn(8, 10, generator=g, dtype=torch.float64) * 10
            y = torch.randint(0, 10, (8,), generator=g)
            shift = float(torch.randn((), generator=g, dtype=torch.float64) * 100)
            worst = max(worst, abs(ce_loss(logits + shift, y).item() - ce_loss(logits, y).item()))
        info["detail"] = f"max shift deviation {worst:.1e}"
        assert worst <= 1e-9


def test_criterion_3_gradient_correctness():
    with criterion(3, "finite-difference gradients on the float64 toy model") as info:
        cfg = ModelConfig(
            sr=SRNetworkConfig(depth=2, channels=4, out_init_std=0.1),
            fr=FRNetworkConfig(input_size=(8, 8), blocks=(4,), pool=False, embedding_dim=6),
        )
        model = build_model(cfg, num_synthetic=3, num_native=3, seed=0).double()
        g = torch.Generator().manual_seed(0)
        x_aux, hr, x_nat = (torch.rand(3, 1, 8, 8, generator=g, dtype=torch.float64) for _ in range(3))
        y_syn, y_nat = torch.tensor([0, 1, 2]), torch.tensor([1, 2, 0])

        def losses():
            sr, _, logits_syn = model.branch(x_aux, "synthetic")
            _, _, logits_nat = model.branch(x_nat, "native")
            l_sr = sr_loss(sr, hr)
            l_syn, l_nat = ce_loss(logits_syn, y_syn), ce_loss(logits_nat, y_nat)
            return {"L_sr": l_sr, "L_fr_syn": l_syn, "L_fr_nat": l_nat, "L_csrl": csri_loss(l_syn, l_nat, l_sr)}

        params = list(model.parameters())
        sr_ids = {id(p) for p in model.sr.parameters()}
        worst, sr_grad_nat = 0.0, 0.0
        for name in ("L_sr", "L_fr_syn", "L_fr_nat", "L_csrl"):
            analytic = torch.autograd.grad(losses()[name], params, allow_unused=True)
            analytic = [torch.zeros_like(p) if a is None else a for a, p in zip(analytic, params)]

            def f(name=name):
                with torch.no_grad():
                    return losses()[name].item()

            numeric = central_difference(f, params, h=1e-5)
            for p, a, n in zip(params, analytic, numeric):
                worst = max(worst, max_relative_error(a, n, floor=1e-7))
                if name == "L_fr_nat" and id(p) in sr_ids:
                    sr_grad_nat = max(sr_grad_nat, a.abs().max().item())
        info["detail"] = f"max rel err {worst:.1e}, max |dL_fr_nat/dSR| {sr_grad_nat:.1e}"
        assert worst < 1e-4
        assert sr_grad_nat > 1e-6


def test_criterion_4_metric_oracle():
    with criterion(4, "CMC/AP/mAP equal the brute-force oracle") as info:
        mismatches = 0
        for seed in range(100):
            probes, gallery, pids, gids = random_instance(seed, ties=seed % 2 == 1)
            rep = evaluate(probes, gallery, truth_table(pids, gids), k=len(gids))
            cmc, aps, m = naive_metrics(probes, gallery, pids, gids, len(gids))
            mismatches += (rep.cmc != cmc) + (rep.average_precisions != aps) + (rep.map != m)
        info["detail"] = f"{mismatches} mismatches over 100 instances (50 with ties)"
        assert mismatches == 0
        assert round(average_precision(np.arange(3), np.array([1, 0, 1], bool)), 6) == 0.833333
        rankings = np.tile(np.arange(5), (3, 1))
        truth = np.zeros((3, 5), bool)
        truth[0, 0] = truth[1, 1] = truth[2, 4] = True
        cmc = cmc_curve(rankings, truth, 5)
        assert (cmc[0], cmc[1], cmc[4]) == (1 / 3, 2 / 3, 1.0)


def test_criterion_5_parameter_sharing(tmp_path):
    with criterion(5, "one SR block and one trunk block; branch embeddings identical") as info:
        aux, native = toy_aux(), toy_native()
        cfg = TrainConfig(batch_aux=8, batch_nat=8, stage1_steps=3, stage2_steps=1)
        ckpt = train_stage1(aux, cfg, SMALL, num_native=native.num_classes)
        x = torch.rand(5, 1, 16, 16)
        for total in (1, 3, 7):
            while ckpt.step < cfg.stage1_steps + total:
                train_stage2(aux, native, ckpt, cfg)
            ckpt.save(tmp_path / f"s{total}.ckpt")
            _, blocks = read_blocks(tmp_path / f"s{total}.ckpt")
            names = [b for b in blocks if b != "momentum"]
            assert sorted(names) == ["head_native", "head_synthetic", "sr", "trunk"]
            assert names.count("sr") == 1 and names.count("trunk") == 1
            ckpt.model.eval()
            with torch.no_grad():
                _, e_syn, _ = ckpt.model.branch(x, "synthetic")
                _, e_nat, _ = ckpt.model.branch(x, "native")
            ckpt.model.train()
            assert torch.equal(e_syn, e_nat)
        info["detail"] = f"checked after 1, 3 and 7 stage-2 steps, blocks {sorted(names)}"


@pytest.mark.slow
def test_criterion_6_sr_utility():
    with criterion(6, "stage-1 SR beats bicubic on held-out pairs by >= 0.1 dB") as info:
        t0 = time.perf_counter()
        cfg = BenchmarkConfig(hr_size=(64, 64), lr_size=(16, 16), aux_identities=40, aux_images=10,
                              native_identities=2, native_images=2, distractors=0)
        bench = build_benchmark(cfg, seed=0, held_out_images=2)
        model = ModelConfig(SRNetworkConfig(depth=6, channels=32), FRNetworkConfig(input_size=(64, 64)))
        train = TrainConfig(batch_aux=16, stage1_steps=800, lr_step=400)
        assert train.lambda_sr == 0.003
        ckpt = train_stage1(bench.aux, train, model)
        base, sr = sr_psnr_gain(ckpt, bench.held_out)
        minutes = (time.perf_counter() - t0) / 60
        info["detail"] = f"bicubic {base:.2f} dB, SR {sr:.2f} dB, gain {sr - base:+.3f} dB, {minutes:.1f} min"
        assert sr - base >= 0.1
        assert minutes <= 15


@pytest.mark.slow
def test_criterion_7_ablation_ordering():
    with criterion(7, "rank-1 csri > joint_sr_fr > independent_sr_fr in >= 2 of 3 seeds") as info:
        t0 = time.perf_counter()
        cfg = BenchmarkConfig()
        lines, wins = [], 0
        for seed in range(3):
            res = run_ablation(cfg, seed, ("independent_sr_fr", "joint_sr_fr", "csri"))
            r = res.rank1()
            wins += res.ordering_holds()
            lines.append(f"seed {seed}: " + " ".join(f"{v}={100 * x:.1f}" for v, x in r.items()))
        minutes = (time.perf_counter() - t0) / 60
        info["detail"] = f"{wins}/3 seeds; " + "; ".join(lines) + f"; {minutes:.1f} min"
        assert wins >= 2
        assert minutes <= 45


def test_criterion_8_protocol_determinism(tmp_path):
    with criterion(8, "prepare is byte-identical; half/half identity split counts") as info:
        assert tuple(map(len, split_identities(range(5139), 0))) == (2570, 2569)
        assert tuple(map(len, split_identities(range(41), 0))) == (21, 20)
        write_corpus(tmp_path / "aux", range(5), 2, size=(32, 32))
        write_corpus(tmp_path / "native", range(100, 141), 3, size=(32, 32))
        write_corpus(tmp_path / "dis", range(900, 904), 1, size=(32, 32), labelled=False)
        text = ("[paths]\nauxiliary = aux\nnative = native\ndistractors = dis\nworkspace = ws\n"
                "[data]\nhr_height = 32\nhr_width = 32\nseed = 7\n[degradation]\nlr_height = 16\nlr_width = 16\n")
        cfg = ExperimentConfig.from_ini(text, tmp_path)
        trees = []
        for _ in range(2):
            manifests = cmd_prepare(cfg)
            root = tmp_path / "ws"
            trees.append({p.relative_to(root).as_posix(): p.read_bytes()
                          for p in sorted(root.rglob("*")) if p.is_file()})
        nat = manifests["native"]
        train_ids = {r.identity for r in nat.by_role("train")}
        test_ids = {r.identity for r in nat.by_role("probe")}
        info["detail"] = f"{len(trees[0])} files identical, native split {len(train_ids)}/{len(test_ids)}"
        assert trees[0] == trees[1]
        assert (len(train_ids), len(test_ids)) == (21, 20)
