"""Manifest-driven extraction of feature and NER files.

Input: a CSV manifest with columns id, image_path, caption.  Output: the
JSON-lines formats the caption-model loaders read --

  features: {"id", "image_feat": [f...], "objects": [{"feat", "box"}...]}
  ner:      {"id", "caption", "entities": {TYPE: [mention...]}}

Boxes are (cx, cy, w, h) normalized to [0, 1].  Only real detections are
written; the consumer pads to its object capacity on load.  Rows whose
image cannot be read are skipped from BOTH outputs so the two files
always carry identical id sets in manifest order.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .encoders import ContrastDetector, PatchStatEncoder, crop_box
from .ner import extract_entities

log = logging.getLogger("featbridge")


class ManifestError(ValueError):
    """Malformed manifest: missing columns, duplicate or empty ids."""


@dataclass
class ManifestRow:
    sample_id: str
    image_path: Path
    caption: str


@dataclass
class BridgeConfig:
    """Extraction settings; max_objects must match the consumer's N_obj."""

    manifest: Path = None
    features_out: Path = None
    ner_out: Path = None
    clip_variant: str = "ViT-B/32"
    threshold: float = 0.7
    max_objects: int = 10

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.max_objects < 0:
            raise ValueError(f"max_objects must be >= 0, got {self.max_objects}")


def read_manifest(path):
    """Manifest rows in file order; image paths resolve against the CSV's dir."""
    path = Path(path)
    base = path.parent
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"id", "image_path", "caption"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(
                f"manifest is missing column(s): {', '.join(sorted(missing))}"
            )
        for line_no, row in enumerate(reader, start=2):
            sid = (row["id"] or "").strip()
            if not sid:
                raise ManifestError(f"line {line_no}: empty id")
            if sid in seen:
                raise ManifestError(f"line {line_no}: duplicate id {sid!r}")
            seen.add(sid)
            image_path = Path(row["image_path"] or "")
            if not image_path.is_absolute():
                image_path = base / image_path
            rows.append(ManifestRow(sample_id=sid, image_path=image_path,
                                    caption=row["caption"] or ""))
    if not rows:
        raise ManifestError("manifest has no data rows")
    return rows


def _feature_record(row, encoder, detector, config):
    with Image.open(row.image_path) as image:
        image.load()
        image_feat = encoder.encode(image)
        detections = [d for d in detector.detect(image)
                      if d.score >= config.threshold]
        detections.sort(key=lambda d: -d.score)
        objects = []
        for det in detections[:config.max_objects]:
            crop = crop_box(image, det.box)
            objects.append({
                "feat": encoder.encode(crop).tolist(),
                "box": [float(v) for v in det.box],
            })
    return {"id": row.sample_id, "image_feat": image_feat.tolist(),
            "objects": objects}


def extract_features(rows, config, encoder=None, detector=None):
    """Feature records for readable rows, plus the skipped ids.

    Unreadable or missing images are logged and skipped; callers that
    also emit a NER file must drop the same ids there (run_bridge does).
    """
    encoder = encoder or PatchStatEncoder(config.clip_variant)
    detector = detector or ContrastDetector()
    records, skipped = [], []
    for row in rows:
        try:
            records.append(_feature_record(row, encoder, detector, config))
        except (OSError, UnidentifiedImageError) as exc:
            log.warning("skipping %r: unreadable image %s (%s)",
                        row.sample_id, row.image_path, exc)
            skipped.append(row.sample_id)
    return records, skipped


def extract_ner(rows):
    """NER records for every row, in row order."""
    return [{"id": row.sample_id, "caption": row.caption,
             "entities": extract_entities(row.caption)}
            for row in rows]


def write_jsonl(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def run_bridge(config, encoder=None, detector=None):
    """Extract both files for one manifest; returns (written_ids, skipped_ids)."""
    rows = read_manifest(config.manifest)
    feature_records, skipped = extract_features(rows, config, encoder, detector)
    kept = {rec["id"] for rec in feature_records}
    ner_records = extract_ner([r for r in rows if r.sample_id in kept])
    write_jsonl(feature_records, config.features_out)
    write_jsonl(ner_records, config.ner_out)
    return [rec["id"] for rec in feature_records], skipped
