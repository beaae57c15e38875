"""Self-contained demo corpus: tiny synthetic photos plus a manifest.

Each image is a solid background with a few high-contrast checkerboard
patches (so the stub detector finds objects); one image is left blank to
exercise the zero-detection path.  Captions are news-style sentences
covering the entity-label families.  Everything is seeded, so repeated
generation is identical.
"""

import csv
from pathlib import Path

import numpy as np
from PIL import Image

_SEED = 77
_SIZE = 96
_PATCH = 32
_CHECK = 4
_DARK, _LIGHT = 30, 230

# (id, caption); "no-entity" rides the blank image
CAPTIONS = (
    ("protest-delhi", "Protest in Delhi on Friday"),
    ("eiffel-crowd", "A crowd gathers near the Eiffel Tower in Paris"),
    ("ganges-flood", "Flood waters rise along the Ganges on Monday morning"),
    ("mayor-briefing", "Mayor Johnson addresses reporters on Tuesday"),
    ("fuel-prices", "Fuel prices rose 12% to $4 a gallon on Thursday"),
    ("mile-march", "Officials say 5,000 people marched for 3 miles"),
    ("first-marathon", "The first marathon drew thousands in Boston"),
    ("no-entity", "A dog runs across an open field"),
    ("un-visit", "Indian delegates arrive at the United Nations in September 2015"),
    ("olympic-dawn", "Athletes train for the Olympics at 6 a.m. in Tokyo"),
)

BLANK_ID = "no-entity"

_PALETTE = (
    (70, 90, 160), (160, 70, 90), (90, 160, 70), (200, 180, 60),
    (60, 180, 200), (180, 60, 200), (120, 120, 180), (25, 118, 210),
    (150, 100, 60), (100, 60, 150),
)


def _checker(size, check):
    tile = np.indices((size, size)).sum(axis=0) // check % 2
    return np.where(tile[..., None] == 0, _DARK, _LIGHT).astype(np.uint8)


def make_image(index, sample_id):
    px = np.empty((_SIZE, _SIZE, 3), dtype=np.uint8)
    px[:] = _PALETTE[index % len(_PALETTE)]
    if sample_id != BLANK_ID:
        rng = np.random.default_rng(_SEED + index)
        patch = _checker(_PATCH, _CHECK)
        for _ in range(2 + index % 3):
            x = int(rng.integers(0, _SIZE - _PATCH))
            y = int(rng.integers(0, _SIZE - _PATCH))
            px[y:y + _PATCH, x:x + _PATCH] = patch
    return Image.fromarray(px)


def make_sample_corpus(out_dir, count=len(CAPTIONS)):
    """Write images/ and manifest.csv under out_dir; returns the manifest path."""
    if not 1 <= count <= len(CAPTIONS):
        raise ValueError(f"count must be in [1, {len(CAPTIONS)}], got {count}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "image_path", "caption"])
        for index, (sample_id, caption) in enumerate(CAPTIONS[:count]):
            rel = f"images/{sample_id}.png"
            make_image(index, sample_id).save(out_dir / rel)
            writer.writerow([sample_id, rel, caption])
    return manifest
