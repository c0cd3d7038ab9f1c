"""Low-level image helpers: bicubic resampling, Gaussian blur and PNG I/O.

Images are float arrays laid out channels-first, ``(C, H, W)``, with values
in ``[0, 1]``. Batched input ``(N, C, H, W)`` is accepted by the resampler.
"""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

# Keys cubic convolution coefficient, shared by down- and up-sampling.
BICUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    x = np.abs(x)
    out = np.zeros_like(x)
    near = x < 1.0
    far = (x >= 1.0) & (x < 2.0)
    out[near] = ((a + 2.0) * x[near] - (a + 3.0)) * x[near] ** 2 + 1.0
    out[far] = ((a * x[far] - 5.0 * a) * x[far] + 8.0 * a) * x[far] - 4.0 * a
    return out


@lru_cache(maxsize=64)
def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Return the ``(out_size, in_size)`` bicubic resampling matrix.

    Pixel centres are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the scale factor so that it also acts as an
    anti-aliasing filter. Taps falling outside the image are dropped and the
    remaining weights renormalised, so every row sums to one and constant
    images are reproduced exactly.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"sizes must be positive, got {in_size} -> {out_size}")
    scale = in_size / out_size
    stretch = max(scale, 1.0)
    support = 2.0 * stretch
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        centre = (i + 0.5) * scale
        lo = max(int(centre - support + 0.5), 0)
        hi = min(int(centre + support + 0.5), in_size)
        taps = np.arange(lo, hi)
        w = cubic_kernel((taps - centre + 0.5) / stretch)
        mat[i, lo:hi] = w / w.sum()
    mat.setflags(write=False)
    return mat


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bicubic resize of the last two axes of ``img`` to ``size = (H, W)``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    rows = resize_matrix(h, size[0])
    cols = resize_matrix(w, size[1])
    return rows @ img @ cols.T


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Blur the spatial axes of a ``(C, H, W)`` image; ``sigma=0`` is a no-op."""
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    spatial = (0,) * (img.ndim - 2) + (sigma, sigma)
    return ndimage.gaussian_filter(img, sigma=spatial, mode="reflect")


def load_image(path: str | Path) -> np.ndarray:
    """Decode a raster file to a float ``(C, H, W)`` array in ``[0, 1]``."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return arr.transpose(2, 0, 1)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write a ``(C, H, W)`` image (C = 1 or 3) as 8-bit PNG."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got shape {img.shape}")
    px = to_uint8(img)
    pil = Image.fromarray(px[0], mode="L") if px.shape[0] == 1 else Image.fromarray(px.transpose(1, 2, 0), mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
