"""Byte-level byte-pair encoding, wire-compatible with the GPT-2 scheme.

Text is chunked with the GPT-2 splitting pattern, each chunk's UTF-8 bytes
are remapped to printable unit characters, and adjacent symbol pairs are
merged greedily in rank order.  Every byte value has a unit symbol, so
encoding is total: no unknown token exists, and decode(encode(s)) == s.

Vocabularies either come from released GPT-2 files (vocab.json + merges.txt)
or are trained on a small corpus for desk-scale runs.
"""

import json
from collections import Counter

import regex

from .errors import ContractError, InputError, SchemaError, VocabularyError

START_TOKEN = "<|start|>"
END_TOKEN = "<|end|>"
PAD_TOKEN = "<|pad|>"

# GPT-2 word-splitting pattern: contractions, letter runs, digit runs,
# punctuation runs (each optionally space-prefixed), then whitespace.
_SPLIT_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


def bytes_to_unicode():
    """Bijection from the 256 byte values onto printable unicode characters.

    Bytes that are already printable latin characters map to themselves;
    the rest are shifted into the 256+ range.  Matches the GPT-2 release.
    """
    printable = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    codes = printable[:]
    shift = 0
    for b in range(256):
        if b not in printable:
            printable.append(b)
            codes.append(256 + shift)
            shift += 1
    return {b: chr(c) for b, c in zip(printable, codes)}


class BpeVocab:
    """Byte-level vocabulary: ranked merge rules plus start/end/pad specials.

    Immutable after construction; encode/decode are pure (the per-chunk merge
    cache is a transparent memo), so instances are safe to share across
    threads.
    """

    def __init__(self, token_to_id, merges, specials):
        self.token_to_id = dict(token_to_id)
        self.merges = [tuple(m) for m in merges]
        self.byte_encoder = bytes_to_unicode()
        self.byte_decoder = {c: b for b, c in self.byte_encoder.items()}
        self.specials = dict(specials)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._chunk_cache = {}
        self._validate()

    def _validate(self):
        n = len(self.token_to_id)
        if len(self.id_to_token) != n:
            raise SchemaError("duplicate token ids in vocabulary")
        if sorted(self.id_to_token) != list(range(n)):
            raise SchemaError("token ids are not dense in [0, vocab_size)")
        for a, b in self.merges:
            if a + b not in self.token_to_id:
                raise SchemaError(f"merge output {a + b!r} missing from vocabulary")
        if len(self.byte_decoder) != 256:
            raise SchemaError("byte encoder is not a bijection over 256 values")
        ids = [self.specials.get(k) for k in ("start_id", "end_id", "pad_id")]
        if len(set(ids)) != 3 or any(i is None or not 0 <= i < n for i in ids):
            raise SchemaError("start/end/pad ids must be distinct and < vocab_size")

    @property
    def vocab_size(self):
        return len(self.token_to_id)

    @property
    def start_id(self):
        return self.specials["start_id"]

    @property
    def end_id(self):
        return self.specials["end_id"]

    @property
    def pad_id(self):
        return self.specials["pad_id"]

    def special_ids(self):
        return {self.start_id, self.end_id, self.pad_id}

    @classmethod
    def from_gpt2_files(cls, vocab_path, merges_path):
        """Load released-format files; start/end/pad are appended if absent."""
        with open(vocab_path, encoding="utf-8") as f:
            token_to_id = json.load(f)
        merges = []
        with open(merges_path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#version"):
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise SchemaError(f"malformed merge rule {line!r}")
                merges.append((parts[0], parts[1]))
        for tok in (START_TOKEN, END_TOKEN, PAD_TOKEN):
            if tok not in token_to_id:
                token_to_id[tok] = len(token_to_id)
        specials = {
            "start_id": token_to_id[START_TOKEN],
            "end_id": token_to_id[END_TOKEN],
            "pad_id": token_to_id[PAD_TOKEN],
        }
        return cls(token_to_id, merges, specials)

    def save(self, vocab_path, merges_path):
        """Write the GPT-2 file pair; load with from_gpt2_files round-trips."""
        with open(vocab_path, "w", encoding="utf-8") as f:
            json.dump(self.token_to_id, f, ensure_ascii=False)
        with open(merges_path, "w", encoding="utf-8") as f:
            f.write("#version: 0.2\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")


def _merge_chunk(symbols, ranks):
    """Greedy lowest-rank-first pair merging of one chunk's symbol list."""
    word = list(symbols)
    while len(word) > 1:
        best = None
        best_rank = None
        for pair in zip(word, word[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        merged = []
        i = 0
        while i < len(word):
            if i < len(word) - 1 and (word[i], word[i + 1]) == best:
                merged.append(word[i] + word[i + 1])
                i += 2
            else:
                merged.append(word[i])
                i += 1
        word = merged
    return word


def encode(text, vocab):
    """Encode any UTF-8 string; total by construction, never fails."""
    ids = []
    for chunk in _SPLIT_PATTERN.findall(text):
        cached = vocab._chunk_cache.get(chunk)
        if cached is None:
            symbols = [vocab.byte_encoder[b] for b in chunk.encode("utf-8")]
            tokens = _merge_chunk(symbols, vocab.merge_ranks)
            cached = [vocab.token_to_id[t] for t in tokens]
            vocab._chunk_cache[chunk] = cached
        ids.extend(cached)
    return ids


def decode(ids, vocab):
    """Inverse of encode; start/end/pad ids are stripped."""
    specials = vocab.special_ids()
    chars = []
    for i in ids:
        if i in specials:
            continue
        token = vocab.id_to_token.get(i)
        if token is None:
            raise VocabularyError(f"token id {i} outside vocabulary of size {vocab.vocab_size}")
        chars.append(token)
    text = "".join(chars)
    raw = bytes(vocab.byte_decoder[c] for c in text)
    return raw.decode("utf-8", errors="replace")


def train_merges(corpus, target_vocab_size):
    """Learn merge rules by pair frequency; ties break lexicographically.

    ``target_vocab_size`` budgets the 256 byte units plus learned merges;
    the three specials are appended on top of it.  Deterministic for a
    fixed corpus.
    """
    if target_vocab_size < 256 + 3:
        raise ContractError(f"target_vocab_size {target_vocab_size} < {256 + 3}")
    corpus = list(corpus)
    if not corpus or all(not s for s in corpus):
        raise InputError("training corpus is empty")

    byte_encoder = bytes_to_unicode()
    word_counts = Counter()
    for text in corpus:
        for chunk in _SPLIT_PATTERN.findall(text):
            word_counts[chunk] += 1
    words = {
        chunk: [byte_encoder[b] for b in chunk.encode("utf-8")]
        for chunk in word_counts
    }

    merges = []
    budget = target_vocab_size - 256
    for _ in range(budget):
        pair_counts = Counter()
        for chunk, symbols in words.items():
            c = word_counts[chunk]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += c
        if not pair_counts:
            break
        top = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == top)
        merges.append(best)
        for chunk, symbols in words.items():
            if len(symbols) > 1:
                words[chunk] = _merge_chunk(symbols, {best: 0})

    token_to_id = {byte_encoder[b]: b for b in range(256)}
    for a, b in merges:
        token_to_id[a + b] = len(token_to_id)
    for tok in (START_TOKEN, END_TOKEN, PAD_TOKEN):
        token_to_id[tok] = len(token_to_id)
    specials = {
        "start_id": token_to_id[START_TOKEN],
        "end_id": token_to_id[END_TOKEN],
        "pad_id": token_to_id[PAD_TOKEN],
    }
    return BpeVocab(token_to_id, merges, specials)
