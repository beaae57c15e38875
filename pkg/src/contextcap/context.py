"""Textual conditioning sequences built from named-entity dictionaries.

Each sample carries a dictionary mapping entity types (PERSON, GPE, DATE,
...) to the entity tokens found for that type.  The conditioning sequence
concatenates, per type in canonical alphabetical order, the BPE of the type
label, the BPE of its tokens, and an end token, then pads or truncates to a
fixed length with an attention mask.
"""

import json
from dataclasses import dataclass, field

from . import bpe
from .errors import ParseError, SchemaError

# The 18 OntoNotes named-entity categories, kept in alphabetical order so
# concatenation order is deterministic.
ENTITY_TYPES = (
    "CARDINAL",
    "DATE",
    "EVENT",
    "FAC",
    "GPE",
    "LANGUAGE",
    "LAW",
    "LOC",
    "MONEY",
    "NORP",
    "ORDINAL",
    "ORG",
    "PERCENT",
    "PERSON",
    "PRODUCT",
    "QUANTITY",
    "TIME",
    "WORK_OF_ART",
)


@dataclass
class NerDictionary:
    """Ordered map from entity type label to its entity token strings."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for label, tokens in self.entries.items():
            if label not in ENTITY_TYPES:
                raise SchemaError(f"unknown entity type {label!r}")
            for tok in tokens:
                if not isinstance(tok, str) or not tok:
                    raise SchemaError(f"empty entity token under {label}")


@dataclass
class TextContext:
    """Fixed-length token ids with an attention mask (true = real token)."""

    ids: list
    mask: list
    source: NerDictionary

    def __post_init__(self):
        if len(self.ids) != len(self.mask):
            raise SchemaError("ids and mask lengths differ")


@dataclass
class NerRecord:
    sample_id: str
    entities: NerDictionary
    caption: str = None


def build_context(ner_dict, vocab, L_text, include_types=True):
    """Encode a NerDictionary into a padded TextContext of length L_text.

    Per type in alphabetical label order: encode(type_label), then the
    entity tokens each prefixed with a space, then the end token.  Types
    with no tokens are skipped.  include_types=False drops the type-label
    encodings (text-only entity conditioning).  An empty dictionary yields
    an all-padding context.
    """
    if L_text < 1:
        raise SchemaError(f"L_text must be >= 1, got {L_text}")
    ids = []
    for label in sorted(ner_dict.entries):
        tokens = ner_dict.entries[label]
        if not tokens:
            continue
        if include_types:
            ids.extend(bpe.encode(label, vocab))
        ids.extend(bpe.encode("".join(" " + tok for tok in tokens), vocab))
        ids.append(vocab.end_id)
    ids = ids[:L_text]
    mask = [True] * len(ids)
    pad = L_text - len(ids)
    ids.extend([vocab.pad_id] * pad)
    mask.extend([False] * pad)
    return TextContext(ids=ids, mask=mask, source=ner_dict)


def load_ner_records(path):
    """Parse a JSON-lines NER file into ordered records.

    Each line: {"id": str, "caption": optional str, "entities": {TYPE: [str,...]}}.
    """
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line_no=line_no) from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ParseError("record must be an object with an 'id'", line_no=line_no)
            entities = obj.get("entities", {})
            if not isinstance(entities, dict):
                raise ParseError("'entities' must be an object", line_no=line_no)
            try:
                ner = NerDictionary(entries={k: list(v) for k, v in entities.items()})
            except SchemaError as exc:
                raise SchemaError(f"line {line_no}: {exc}") from exc
            caption = obj.get("caption")
            if caption is not None and not isinstance(caption, str):
                raise ParseError("'caption' must be a string", line_no=line_no)
            records.append(NerRecord(sample_id=str(obj["id"]), entities=ner, caption=caption))
    return records


def parse_ner_file(path):
    """Order-preserving (sample_id, NerDictionary) pairs from a NER file."""
    return [(r.sample_id, r.entities) for r in load_ner_records(path)]


def write_ner_records(records, path):
    """Inverse of load_ner_records; write→parse is identity."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            obj = {"id": r.sample_id, "entities": r.entities.entries}
            if r.caption is not None:
                obj["caption"] = r.caption
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
