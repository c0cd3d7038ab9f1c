"""Procedural grayscale face corpus.

Each identity is a fixed set of shape and appearance parameters (head
outline, hair, eyes, brows, nose, mouth, marks, glasses). Every rendered
image of an identity re-samples nuisance factors: pose, scale, expression,
illumination, background clutter and occasional occlusion. Rendering is
resolution-independent, so the same face can be drawn at any size.

The corpus layout written to disk is ``root/<identity>/<index>.png`` for
labelled faces and ``root/<index>.png`` for an unlabelled distractor pool.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import save_image


@dataclass(frozen=True)
class Nuisance:
    """Spread of the per-image variation; 1.0 is the nominal level."""

    pose: float = 1.0
    lighting: float = 1.0
    expression: float = 1.0
    clutter: float = 1.0
    occlusion_prob: float = 0.1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _ellipse(x, y, cx, cy, a, b, edge, angle=0.0):
    """Soft mask of a (possibly rotated) ellipse."""
    dx, dy = x - cx, y - cy
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    r = np.sqrt((dx / a) ** 2 + (dy / b) ** 2)
    return _sigmoid(-(r - 1.0) * min(a, b) / edge)


def sample_identity(rng: np.random.Generator) -> dict:
    """Draw the parameters that define one person."""
    return {
        "head_a": rng.uniform(0.52, 0.72),
        "head_b": rng.uniform(0.68, 0.88),
        "skin": rng.uniform(0.45, 0.85),
        "hair_tone": rng.uniform(0.02, 0.45),
        "hairline": rng.uniform(-0.75, -0.35),
        "hair_volume": rng.uniform(0.0, 0.18),
        "fringe": rng.uniform(-0.25, 0.25),
        "eye_dx": rng.uniform(0.2, 0.34),
        "eye_y": rng.uniform(-0.22, -0.05),
        "eye_w": rng.uniform(0.07, 0.13),
        "eye_h": rng.uniform(0.035, 0.07),
        "eye_tone": rng.uniform(0.0, 0.3),
        "brow_gap": rng.uniform(0.08, 0.16),
        "brow_w": rng.uniform(0.09, 0.16),
        "brow_h": rng.uniform(0.015, 0.04),
        "brow_tilt": rng.uniform(-0.35, 0.35),
        "brow_tone": rng.uniform(0.05, 0.4),
        "nose_len": rng.uniform(0.12, 0.3),
        "nose_w": rng.uniform(0.04, 0.1),
        "mouth_y": rng.uniform(0.3, 0.5),
        "mouth_w": rng.uniform(0.12, 0.26),
        "mouth_h": rng.uniform(0.02, 0.05),
        "mouth_curve": rng.uniform(-0.8, 0.8),
        "lip_tone": rng.uniform(0.15, 0.5),
        "beard": rng.uniform(0.0, 0.35) if rng.random() < 0.3 else 0.0,
        "glasses": bool(rng.random() < 0.2),
        "marks": [
            (rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.55), rng.uniform(0.025, 0.06), rng.uniform(-0.35, 0.2))
            for _ in range(rng.integers(0, 4))
        ],
    }


def render_face(ident: dict, size: tuple[int, int], rng: np.random.Generator, nuisance: Nuisance = Nuisance()) -> np.ndarray:
    """Render one ``(1, H, W)`` image of ``ident`` with fresh nuisance factors."""
    h, w = size
    ys = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    u, v = np.meshgrid(xs, ys)
    edge = 2.0 / min(h, w)
    p = nuisance

    # background
    g = rng.normal(0, 0.15 * p.clutter, 2)
    bg = rng.uniform(0.2, 0.8) + g[0] * u + g[1] * v
    for _ in range(rng.integers(0, 1 + int(round(4 * p.clutter)))):
        bx, by = rng.uniform(-1, 1, 2)
        blob = _ellipse(u, v, bx, by, rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), 4 * edge)
        bg = bg + rng.uniform(-0.3, 0.3) * blob

    # pose: in-plane rotation, scale, shift, plus a yaw-like feature shift
    ang = rng.normal(0, 0.12 * p.pose)
    sc = np.exp(rng.normal(0, 0.06 * p.pose))
    tx, ty = rng.normal(0, 0.06 * p.pose, 2)
    yaw = np.clip(rng.normal(0, 0.35 * p.pose), -0.8, 0.8)
    c, s = np.cos(ang), np.sin(ang)
    x = (c * (u - tx) + s * (v - ty)) / sc
    y = (-s * (u - tx) + c * (v - ty)) / sc
    fx = x - 0.12 * yaw  # features slide toward the turned side

    a, b = ident["head_a"] * (1 - 0.12 * abs(yaw)), ident["head_b"]
    img = bg

    hair_back = _ellipse(x, y, 0.0, -0.08, a + ident["hair_volume"], b + 0.5 * ident["hair_volume"], edge)
    hair_back = hair_back * _sigmoid((0.15 - y) / edge)
    img = img * (1 - hair_back) + ident["hair_tone"] * hair_back

    head = _ellipse(x, y, 0.0, 0.0, a, b, edge)
    face = ident["skin"] * (1.0 - 0.18 * (x / a) ** 2)  # rounded cheeks

    # beard over lower face
    if ident["beard"] > 0:
        beard = _sigmoid((y - (ident["mouth_y"] - 0.12)) / (3 * edge))
        face = face * (1 - ident["beard"] * beard)

    # hair cap above the hairline
    cap = _sigmoid((ident["hairline"] + ident["fringe"] * fx - y) / edge)
    face = face * (1 - cap) + ident["hair_tone"] * cap

    openness = np.clip(1.0 + rng.normal(0, 0.25 * p.expression), 0.2, 1.5)
    for side in (-1.0, 1.0):
        ex = side * ident["eye_dx"] * (1 - 0.25 * side * yaw)
        ey = ident["eye_y"]
        socket = _ellipse(fx, y, ex, ey, 1.8 * ident["eye_w"], 1.8 * ident["eye_h"] + 0.02, 3 * edge)
        face = face * (1 - 0.18 * socket)
        eye = _ellipse(fx, y, ex, ey, ident["eye_w"], ident["eye_h"] * openness, edge)
        face = face * (1 - eye) + ident["eye_tone"] * eye
        by = ey - ident["brow_gap"] - rng.normal(0, 0.01 * p.expression)
        brow = _ellipse(fx, y, ex, by, ident["brow_w"], ident["brow_h"], edge, angle=side * ident["brow_tilt"])
        face = face * (1 - brow) + ident["brow_tone"] * brow
        if ident["glasses"]:
            r_out = _ellipse(fx, y, ex, ey, 1.9 * ident["eye_w"] + 0.03, 2.2 * ident["eye_h"] + 0.05, edge)
            r_in = _ellipse(fx, y, ex, ey, 1.9 * ident["eye_w"], 2.2 * ident["eye_h"] + 0.02, edge)
            rim = np.clip(r_out - r_in, 0, 1)
            face = face * (1 - rim) + 0.05 * rim

    # nose: soft ridge shadow and nostrils
    ny = ident["eye_y"] + ident["nose_len"] + 0.1
    ridge = _ellipse(fx, y, 0.02 + 0.05 * yaw, (ident["eye_y"] + ny) / 2, 0.4 * ident["nose_w"], ident["nose_len"] / 2 + 0.05, 3 * edge)
    face = face * (1 - 0.12 * ridge)
    nostril = _ellipse(fx, y, 0.0, ny, ident["nose_w"], 0.03, 2 * edge)
    face = face * (1 - 0.35 * nostril)

    # mouth: curved band whose bend mixes identity and expression
    curve = ident["mouth_curve"] + rng.normal(0, 0.5 * p.expression)
    mx = fx / ident["mouth_w"]
    mcy = ident["mouth_y"] + curve * 0.05 * (mx ** 2 - 0.5)
    band = _sigmoid((ident["mouth_h"] - np.abs(y - mcy)) / edge) * _sigmoid((1 - np.abs(mx)) * ident["mouth_w"] / edge)
    face = face * (1 - band) + ident["lip_tone"] * band

    for mx_, my_, mr, mt in ident["marks"]:
        mark = _ellipse(fx, y, mx_, my_, mr, mr, edge)
        face = face + mt * mark * head

    img = img * (1 - head) + face * head

    if rng.random() < p.occlusion_prob:
        ox, oy = rng.uniform(-0.6, 0.6, 2)
        occ = _ellipse(u, v, ox, oy, rng.uniform(0.2, 0.5), rng.uniform(0.1, 0.3), edge)
        img = img * (1 - occ) + rng.uniform(0, 1) * occ

    # illumination: gain, directional falloff and gamma
    theta = rng.uniform(0, 2 * np.pi)
    strength = abs(rng.normal(0, 0.25 * p.lighting))
    light = 1.0 + strength * (np.cos(theta) * u + np.sin(theta) * v)
    gain = np.exp(rng.normal(0, 0.15 * p.lighting))
    img = np.clip(img * light * gain, 0.0, 1.0)
    gamma = np.exp(rng.normal(0, 0.15 * p.lighting))
    img = img ** gamma
    return np.clip(img, 0.0, 1.0)[None]


class FaceGenerator:
    """Seeded source of identities and their images."""

    def __init__(self, seed: int = 0, nuisance: Nuisance = Nuisance()):
        self.seed = seed
        self.nuisance = nuisance

    def identity(self, index: int) -> dict:
        return sample_identity(np.random.default_rng([self.seed, 0, index]))

    def image(self, index: int, k: int, size: tuple[int, int]) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1, index, k])
        return render_face(self.identity(index), size, rng, self.nuisance)

    def images(self, index: int, n: int, size: tuple[int, int]) -> np.ndarray:
        return np.stack([self.image(index, k, size) for k in range(n)])


def write_corpus(
    root: str | Path,
    identities: range | list[int],
    images_per_identity: int | list[int],
    size: tuple[int, int] = (64, 64),
    seed: int = 0,
    nuisance: Nuisance = Nuisance(),
    labelled: bool = True,
) -> Path:
    """Render a corpus to ``root``.

    With ``labelled=False`` the images of all listed identities are written
    flat into ``root``, which is how an unlabelled distractor pool is laid out.
    """
    root = Path(root)
    gen = FaceGenerator(seed, nuisance)
    counts = images_per_identity
    if isinstance(counts, int):
        counts = [counts] * len(identities)
    for ident, n in zip(identities, counts):
        for k in range(n):
            img = gen.image(ident, k, size)
            if labelled:
                save_image(img, root / f"id{ident:05d}" / f"{k:03d}.png")
            else:
                save_image(img, root / f"id{ident:05d}_{k:03d}.png")
    return root
