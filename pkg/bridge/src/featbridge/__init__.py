"""Image+caption corpus -> precomputed feature and NER files.

Runs encoder/detector/NER backends over a CSV manifest and writes the
JSON-lines files the caption model trains from.  Deterministic stub
backends are bundled; real CLIP/DETR/spaCy drop in behind the same
interfaces.
"""

from .encoders import ContrastDetector, Detection, PatchStatEncoder, variant_dim
from .extract import (
    BridgeConfig,
    ManifestError,
    ManifestRow,
    extract_features,
    extract_ner,
    read_manifest,
    run_bridge,
    write_jsonl,
)
from .ner import ENTITY_TYPES, extract_entities
from .sample import CAPTIONS, make_sample_corpus

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "CAPTIONS",
    "ContrastDetector",
    "Detection",
    "ENTITY_TYPES",
    "ManifestError",
    "ManifestRow",
    "PatchStatEncoder",
    "extract_entities",
    "extract_features",
    "extract_ner",
    "make_sample_corpus",
    "read_manifest",
    "run_bridge",
    "variant_dim",
    "write_jsonl",
]
