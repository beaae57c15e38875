"""Image encoder and object detector backends.

The real pipeline runs a pretrained CLIP visual encoder and a DETR
detector.  Neither ships with this package (weights are hundreds of MB
and need a download step), so the default backends are deterministic
pixel-statistics stand-ins with the same interface and output shapes:
unit-norm embeddings from the encoder, scored boxes from the detector.
Swap in real models by implementing ``encode`` / ``detect``.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

# embedding widths of the CLIP variants the real backend would load;
# "stub-N" selects an arbitrary width for desk-scale runs
VARIANT_DIMS = {
    "ViT-B/32": 512,
    "ViT-B/16": 512,
    "ViT-L/14": 768,
}


def variant_dim(variant):
    if variant in VARIANT_DIMS:
        return VARIANT_DIMS[variant]
    if variant.startswith("stub-"):
        tail = variant[len("stub-"):]
        if tail.isdigit() and int(tail) >= 1:
            return int(tail)
    raise ValueError(
        f"unknown clip variant {variant!r}; expected one of "
        f"{sorted(VARIANT_DIMS)} or 'stub-N'"
    )


@dataclass
class Detection:
    """One candidate object: normalized (cx, cy, w, h) box plus a score."""

    box: tuple
    score: float


class PatchStatEncoder:
    """CLIP stand-in: grid color statistics through a fixed random projection.

    Deterministic in the pixel content alone; the projection matrix is
    seeded from the variant name, so one variant always maps the same
    image to the same unit-norm vector.
    """

    _GRID = 4
    _SIZE = 32

    def __init__(self, variant="ViT-B/32"):
        self.variant = variant
        self.dim = variant_dim(variant)
        seed = int.from_bytes(
            hashlib.sha256(variant.encode("utf-8")).digest()[:4], "little"
        )
        rng = np.random.default_rng(seed)
        n_stats = self._GRID * self._GRID * 3 + 6
        self._proj = rng.standard_normal((n_stats, self.dim)) / np.sqrt(n_stats)

    def encode(self, image):
        img = image.convert("RGB").resize(
            (self._SIZE, self._SIZE), Image.Resampling.NEAREST
        )
        px = np.asarray(img, dtype=np.float64) / 255.0
        g = self._GRID
        cell = self._SIZE // g
        cells = px.reshape(g, cell, g, cell, 3).mean(axis=(1, 3))
        stats = np.concatenate([
            cells.reshape(-1),
            px.mean(axis=(0, 1)),
            px.std(axis=(0, 1)),
        ])
        vec = stats @ self._proj
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            vec = np.zeros(self.dim)
            vec[0] = 1.0
            return vec
        return vec / norm


class ContrastDetector:
    """DETR stand-in: proposes grid cells scored by local intensity contrast.

    A solid-color (blank) image has zero contrast everywhere, so every
    proposal scores 0 and a 0.7 threshold keeps nothing.
    """

    _SIZE = 64
    # score = min(1, std * 2): a half-dark/half-light cell saturates at 1
    _GAIN = 2.0

    def detect(self, image):
        img = image.convert("L").resize(
            (self._SIZE, self._SIZE), Image.Resampling.NEAREST
        )
        px = np.asarray(img, dtype=np.float64) / 255.0
        out = []
        for g in (4, 2):
            cell = self._SIZE // g
            for r in range(g):
                for c in range(g):
                    patch = px[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell]
                    score = min(1.0, float(patch.std()) * self._GAIN)
                    box = ((c + 0.5) / g, (r + 0.5) / g, 1.0 / g, 1.0 / g)
                    out.append(Detection(box=box, score=score))
        return out


def crop_box(image, box):
    """Pixel crop of a normalized (cx, cy, w, h) box, at least 1x1."""
    cx, cy, w, h = box
    width, height = image.size
    x1 = int(round((cx - w / 2) * width))
    y1 = int(round((cy - h / 2) * height))
    x2 = max(x1 + 1, int(round((cx + w / 2) * width)))
    y2 = max(y1 + 1, int(round((cy + h / 2) * height)))
    return image.crop((max(0, x1), max(0, y1), min(width, x2), min(height, y2)))
