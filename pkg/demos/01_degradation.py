"""Synthetic pairs and the manufactured native domain.

Renders a few procedural faces, builds bicubic LR/HR training pairs from
them, degrades the same faces into native-style LR images (blur, downsample,
sensor noise), and writes a contact sheet so the domain gap can be inspected.

    python3 demos/01_degradation.py [out.png]
"""
import sys

import numpy as np

from csri.data import DegradationConfig, degrade_native, make_lr_hr_pair
from csri.faces import FaceGenerator
from csri.imaging import resize, save_image
from csri.sr import mean_psnr

HR = (64, 64)
cfg = DegradationConfig(lr_height=16, lr_width=16, blur_sigma=1.0, noise_sigma=0.02, seed=0)
gen = FaceGenerator(seed=0)

rows, hr, bicubic, native_up = [], [], [], []
for ident in range(6):
    face = gen.image(ident, 0, HR)
    pair = make_lr_hr_pair(face, cfg, identity=ident)
    native = degrade_native(face, cfg, index=ident)
    hr.append(pair.target_hr)
    bicubic.append(pair.input_lr)
    native_up.append(np.clip(resize(native, HR), 0, 1))
    rows.append(np.concatenate([pair.target_hr, np.clip(pair.input_lr, 0, 1), native_up[-1]], axis=2))

print(f"bicubic (synthetic LR) PSNR vs HR: {mean_psnr(bicubic, hr):.2f} dB")
print(f"native LR, upsampled,  PSNR vs HR: {mean_psnr(native_up, hr):.2f} dB")

out = sys.argv[1] if len(sys.argv) > 1 else "degradation_sheet.png"
save_image(np.concatenate(rows, axis=1), out)
print(f"columns: HR | synthetic LR (bicubic up) | native LR (bicubic up); wrote {out}")
