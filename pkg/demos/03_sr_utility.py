"""Stage-1 joint training and what it does to pixel fidelity.

Trains the synthetic branch (SR + FR, joint objective) on procedural faces
at 64x64 from 16x16 inputs and reports held-out PSNR of the SR output
against the bicubic input it starts from. Takes a few minutes on one core;
pass a smaller step count to shorten it.

    python3 demos/03_sr_utility.py [steps]
"""
import sys
import time

from csri.benchmark import BenchmarkConfig, build_benchmark, sr_psnr_gain
from csri.fr import FRNetworkConfig
from csri.sr import SRNetworkConfig
from csri.trainer import ModelConfig, TrainConfig, train_stage1

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 800
cfg = BenchmarkConfig(hr_size=(64, 64), lr_size=(16, 16), aux_identities=40, aux_images=10,
                      native_identities=2, native_images=2, distractors=0)
bench = build_benchmark(cfg, seed=0, held_out_images=2)
model = ModelConfig(SRNetworkConfig(depth=6, channels=32), FRNetworkConfig(input_size=(64, 64)))
train = TrainConfig(batch_aux=16, stage1_steps=steps, lr_step=400)


def report(rec):
    if rec["step"] % 100 == 0:
        print(f"step {rec['step']:4d}  L_sr={rec['l_sr']:8.3f}  L_fr_syn={rec['l_fr_syn']:.3f}"
              f"  ({time.perf_counter() - t0:.0f}s)", flush=True)


t0 = time.perf_counter()
ckpt = train_stage1(bench.aux, train, model, on_step=report)
base, sr = sr_psnr_gain(ckpt, bench.held_out)
print(f"held-out PSNR: bicubic {base:.3f} dB, SR {sr:.3f} dB, gain {sr - base:+.3f} dB")
