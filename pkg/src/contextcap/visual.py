"""Precomputed visual features: one image embedding plus padded object rows.

Records load from JSON-lines (portable, diffable) or from a packed
little-endian binary variant (magic "OOCF") when files get large.  Object
rows beyond a record's real object count are zero and masked out; loaders
enforce that padding invariant along with dimension consistency.

A seeded synthetic generator stands in for CLIP/DETR so the whole pipeline
runs without any pretrained encoder.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SchemaError

_MAGIC = b"OOCF"
_BINARY_VERSION = 1


@dataclass
class VisualRecord:
    """One sample's image embedding, object embeddings, mask, and boxes."""

    sample_id: str
    image_feat: np.ndarray
    object_feats: np.ndarray
    object_mask: np.ndarray
    boxes: np.ndarray = None

    def __post_init__(self):
        self.image_feat = np.asarray(self.image_feat, dtype=np.float64)
        self.object_feats = np.asarray(self.object_feats, dtype=np.float64)
        self.object_mask = np.asarray(self.object_mask, dtype=bool)
        if self.boxes is not None:
            self.boxes = np.asarray(self.boxes, dtype=np.float64)
        validate_record(self)

    @property
    def d_vis(self):
        return self.image_feat.shape[0]

    @property
    def n_obj(self):
        return self.object_feats.shape[0]


def validate_record(rec):
    """Enforce shapes, finiteness, zero padding, and box ranges."""
    sid = rec.sample_id
    if rec.image_feat.ndim != 1 or rec.image_feat.shape[0] < 1:
        raise SchemaError(f"sample {sid!r}: image_feat must be a non-empty vector")
    d_vis = rec.image_feat.shape[0]
    if rec.object_feats.ndim != 2 or rec.object_feats.shape[1] != d_vis:
        raise SchemaError(
            f"sample {sid!r}: object_feats must be N_obj x {d_vis}, "
            f"got {rec.object_feats.shape}"
        )
    n_obj = rec.object_feats.shape[0]
    if rec.object_mask.shape != (n_obj,):
        raise SchemaError(f"sample {sid!r}: object_mask length != N_obj")
    if not np.isfinite(rec.image_feat).all() or not np.isfinite(rec.object_feats).all():
        raise DataError(f"sample {sid!r}: non-finite feature value")
    padded = rec.object_feats[~rec.object_mask]
    if padded.size and np.any(padded != 0.0):
        raise SchemaError(f"sample {sid!r}: masked object rows must be all zeros")
    if rec.boxes is not None:
        if rec.boxes.shape != (n_obj, 4):
            raise SchemaError(f"sample {sid!r}: boxes must be N_obj x 4")
        if not np.isfinite(rec.boxes).all():
            raise DataError(f"sample {sid!r}: non-finite box value")
        real = rec.boxes[rec.object_mask]
        if real.size and (real.min() < 0.0 or real.max() > 1.0):
            raise SchemaError(f"sample {sid!r}: box coordinates outside [0, 1]")


def _check_dataset_consistency(records):
    if not records:
        return
    d_vis, n_obj = records[0].d_vis, records[0].n_obj
    for rec in records[1:]:
        if rec.d_vis != d_vis:
            raise SchemaError(
                f"sample {rec.sample_id!r}: D_vis {rec.d_vis} != {d_vis} from first record"
            )
        if rec.n_obj != n_obj:
            raise SchemaError(
                f"sample {rec.sample_id!r}: N_obj {rec.n_obj} != {n_obj} from first record"
            )


def load_features(path, n_obj=10):
    """Load a feature file, JSON-lines or binary, with full validation.

    ``n_obj`` sets the padded object capacity for JSON-lines files (the
    binary header carries its own); a record with more real objects than
    the capacity is rejected.
    """
    with open(path, "rb") as f:
        head = f.read(4)
    if head == _MAGIC:
        records = _load_binary(path)
    else:
        records = _load_jsonl(path, n_obj)
    _check_dataset_consistency(records)
    return records


def _load_jsonl(path, n_obj):
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "image_feat" not in obj:
                raise SchemaError(f"line {line_no}: record needs 'id' and 'image_feat'")
            sid = str(obj["id"])
            image_feat = np.asarray(obj["image_feat"], dtype=np.float64)
            objects = obj.get("objects", [])
            if len(objects) > n_obj:
                raise SchemaError(
                    f"sample {sid!r}: {len(objects)} objects exceed capacity {n_obj}"
                )
            d_vis = image_feat.shape[0] if image_feat.ndim == 1 else 0
            feats = np.zeros((n_obj, d_vis), dtype=np.float64)
            mask = np.zeros(n_obj, dtype=bool)
            boxes = np.zeros((n_obj, 4), dtype=np.float64)
            has_boxes = False
            for k, o in enumerate(objects):
                if not isinstance(o, dict) or "feat" not in o:
                    raise SchemaError(f"sample {sid!r}: object {k} missing 'feat'")
                row = np.asarray(o["feat"], dtype=np.float64)
                if row.shape != (d_vis,):
                    raise SchemaError(
                        f"sample {sid!r}: object {k} feature dim {row.shape} != ({d_vis},)"
                    )
                feats[k] = row
                mask[k] = True
                if "box" in o and o["box"] is not None:
                    boxes[k] = np.asarray(o["box"], dtype=np.float64)
                    has_boxes = True
            records.append(
                VisualRecord(
                    sample_id=sid,
                    image_feat=image_feat,
                    object_feats=feats,
                    object_mask=mask,
                    boxes=boxes if has_boxes else None,
                )
            )
    return records


def save_features(records, path, binary=False):
    """Write records to JSON-lines (default) or the binary variant."""
    if binary:
        _save_binary(records, path)
        return
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            objects = []
            for k in range(rec.n_obj):
                if not rec.object_mask[k]:
                    continue
                o = {"feat": rec.object_feats[k].tolist()}
                if rec.boxes is not None:
                    o["box"] = rec.boxes[k].tolist()
                objects.append(o)
            obj = {
                "id": rec.sample_id,
                "image_feat": rec.image_feat.tolist(),
                "objects": objects,
            }
            f.write(json.dumps(obj) + "\n")


def _save_binary(records, path):
    if not records:
        raise SchemaError("binary feature files require at least one record")
    d_vis, n_obj = records[0].d_vis, records[0].n_obj
    _check_dataset_consistency(records)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _BINARY_VERSION, d_vis, n_obj))
        f.write(struct.pack("<I", len(records)))
        for rec in records:
            sid = rec.sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            f.write(rec.image_feat.astype("<f4").tobytes())
            f.write(struct.pack("<I", int(rec.object_mask.sum())))
            f.write(rec.object_feats.astype("<f4").tobytes())
            has_boxes = rec.boxes is not None
            f.write(struct.pack("<B", 1 if has_boxes else 0))
            if has_boxes:
                f.write(rec.boxes.astype("<f4").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise SchemaError(f"truncated binary feature file while reading {what}")
    return buf


def _load_binary(path):
    records = []
    with open(path, "rb") as f:
        _read_exact(f, 4, "magic")
        version, d_vis, n_obj = struct.unpack("<III", _read_exact(f, 12, "header"))
        if version != _BINARY_VERSION:
            raise SchemaError(f"unsupported binary feature version {version}")
        (n_records,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
        for _ in range(n_records):
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, "id length"))
            sid = _read_exact(f, id_len, "sample id").decode("utf-8")
            image_feat = np.frombuffer(
                _read_exact(f, 4 * d_vis, "image features"), dtype="<f4"
            ).astype(np.float64)
            (n_real,) = struct.unpack("<I", _read_exact(f, 4, "object count"))
            if n_real > n_obj:
                raise SchemaError(f"sample {sid!r}: object count {n_real} > {n_obj}")
            feats = (
                np.frombuffer(
                    _read_exact(f, 4 * n_obj * d_vis, "object features"), dtype="<f4"
                )
                .astype(np.float64)
                .reshape(n_obj, d_vis)
            )
            mask = np.arange(n_obj) < n_real
            (has_boxes,) = struct.unpack("<B", _read_exact(f, 1, "box flag"))
            boxes = None
            if has_boxes:
                boxes = (
                    np.frombuffer(_read_exact(f, 4 * n_obj * 4, "boxes"), dtype="<f4")
                    .astype(np.float64)
                    .reshape(n_obj, 4)
                )
            records.append(
                VisualRecord(
                    sample_id=sid,
                    image_feat=image_feat,
                    object_feats=feats,
                    object_mask=mask,
                    boxes=boxes,
                )
            )
        if f.read(1):
            raise SchemaError("trailing bytes after last binary record")
    return records


def _unit_norm(v):
    norm = np.linalg.norm(v)
    if norm < 1e-8:
        v = v.copy()
        v[0] = 1.0
        return v
    return v / norm


def synth_features(seed, n_samples, n_obj_range=(3, 10), d_vis=1024, n_obj=10):
    """Deterministic Gaussian features, unit-normalized, for dataset-free runs."""
    if d_vis < 1:
        raise SchemaError(f"d_vis must be >= 1, got {d_vis}")
    lo, hi = n_obj_range
    if not 0 <= lo <= hi <= n_obj:
        raise SchemaError(f"n_obj_range {n_obj_range} outside [0, {n_obj}]")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_samples):
        image_feat = _unit_norm(rng.standard_normal(d_vis))
        n_real = int(rng.integers(lo, hi + 1))
        feats = np.zeros((n_obj, d_vis), dtype=np.float64)
        boxes = np.zeros((n_obj, 4), dtype=np.float64)
        for k in range(n_real):
            feats[k] = _unit_norm(rng.standard_normal(d_vis))
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            w, h = rng.uniform(0.05, 0.2, size=2)
            boxes[k] = [cx, cy, w, h]
        mask = np.arange(n_obj) < n_real
        records.append(
            VisualRecord(
                sample_id=f"synth-{seed}-{i}",
                image_feat=image_feat,
                object_feats=feats,
                object_mask=mask,
                boxes=boxes,
            )
        )
    return records
