"""Context-builder tests: concatenation layout, padding, NER file round trips."""

import pytest

from contextcap import bpe
from contextcap.context import (
    ENTITY_TYPES,
    NerDictionary,
    NerRecord,
    build_context,
    load_ner_records,
    parse_ner_file,
    write_ner_records,
)
from contextcap.errors import ParseError, SchemaError


@pytest.fixture(scope="module")
def vocab():
    return bpe.train_merges(["Friday Delhi India PERSON DATE GPE event"], 300)


class TestBuildContext:
    def test_empty_dict_is_all_padding(self, vocab):
        ctx = build_context(NerDictionary(), vocab, L_text=4)
        assert ctx.ids == [vocab.pad_id] * 4
        assert ctx.mask == [False] * 4

    def test_single_type_layout(self, vocab):
        ctx = build_context(
            NerDictionary({"DATE": ["Friday"]}), vocab, L_text=20
        )
        expected = (
            bpe.encode("DATE", vocab)
            + bpe.encode(" Friday", vocab)
            + [vocab.end_id]
        )
        n = len(expected)
        assert ctx.ids[:n] == expected
        assert ctx.ids[n:] == [vocab.pad_id] * (20 - n)
        assert ctx.mask == [True] * n + [False] * (20 - n)

    def test_include_types_false_omits_labels(self, vocab):
        ctx = build_context(
            NerDictionary({"DATE": ["Friday"]}), vocab, L_text=20, include_types=False
        )
        expected = bpe.encode(" Friday", vocab) + [vocab.end_id]
        assert ctx.ids[: len(expected)] == expected

    def test_types_concatenate_alphabetically(self, vocab):
        ctx = build_context(
            NerDictionary({"GPE": ["Delhi"], "DATE": ["Friday"]}), vocab, L_text=20
        )
        expected = (
            bpe.encode("DATE", vocab)
            + bpe.encode(" Friday", vocab)
            + [vocab.end_id]
            + bpe.encode("GPE", vocab)
            + bpe.encode(" Delhi", vocab)
            + [vocab.end_id]
        )
        assert ctx.ids[: len(expected)] == expected

    def test_multiple_tokens_space_joined(self, vocab):
        ctx = build_context(
            NerDictionary({"GPE": ["Delhi", "India"]}), vocab, L_text=20
        )
        expected = (
            bpe.encode("GPE", vocab)
            + bpe.encode(" Delhi India", vocab)
            + [vocab.end_id]
        )
        assert ctx.ids[: len(expected)] == expected

    def test_truncation_keeps_prefix(self, vocab):
        full = build_context(
            NerDictionary({"GPE": ["Delhi", "India"]}), vocab, L_text=40
        )
        short = build_context(
            NerDictionary({"GPE": ["Delhi", "India"]}), vocab, L_text=3
        )
        assert short.ids == full.ids[:3]
        assert short.mask == [True, True, True]

    def test_empty_token_list_skipped(self, vocab):
        ctx = build_context(
            NerDictionary({"DATE": [], "GPE": ["Delhi"]}), vocab, L_text=20
        )
        expected = bpe.encode("GPE", vocab) + bpe.encode(" Delhi", vocab) + [vocab.end_id]
        assert ctx.ids[: len(expected)] == expected

    def test_mask_count_matches_content(self, vocab):
        ctx = build_context(NerDictionary({"DATE": ["Friday"]}), vocab, L_text=20)
        unpadded = (
            bpe.encode("DATE", vocab) + bpe.encode(" Friday", vocab) + [vocab.end_id]
        )
        assert sum(ctx.mask) == min(20, len(unpadded))

    def test_deterministic(self, vocab):
        d = NerDictionary({"PERSON": ["Modi"], "GPE": ["India"]})
        a = build_context(d, vocab, L_text=20)
        b = build_context(d, vocab, L_text=20)
        assert a.ids == b.ids and a.mask == b.mask

    def test_oov_strings_never_fail(self, vocab):
        ctx = build_context(
            NerDictionary({"PERSON": ["Ω未知λ"]}), vocab, L_text=30
        )
        assert sum(ctx.mask) > 0

    def test_bad_length_raises(self, vocab):
        with pytest.raises(SchemaError):
            build_context(NerDictionary(), vocab, L_text=0)


class TestNerDictionary:
    def test_all_labels_accepted(self):
        NerDictionary({t: ["x"] for t in ENTITY_TYPES})
        assert len(ENTITY_TYPES) == 18

    def test_unknown_label_rejected(self):
        with pytest.raises(SchemaError):
            NerDictionary({"ANIMAL": ["dog"]})

    def test_empty_token_rejected(self):
        with pytest.raises(SchemaError):
            NerDictionary({"GPE": [""]})


class TestNerFile:
    def test_parse_single_line(self, tmp_path):
        p = tmp_path / "ner.jsonl"
        p.write_text('{"id":"a","entities":{"GPE":["Delhi","India"]}}\n', encoding="utf-8")
        records = parse_ner_file(p)
        assert len(records) == 1
        sample_id, ner = records[0]
        assert sample_id == "a"
        assert ner.entries == {"GPE": ["Delhi", "India"]}

    def test_empty_file(self, tmp_path):
        p = tmp_path / "ner.jsonl"
        p.write_text("", encoding="utf-8")
        assert parse_ner_file(p) == []

    def test_round_trip_identity(self, tmp_path):
        records = [
            NerRecord("s1", NerDictionary({"GPE": ["Delhi"]}), caption="a view of Delhi ."),
            NerRecord("s2", NerDictionary({"DATE": ["Friday"], "PERSON": ["Modi"]})),
            NerRecord("s3", NerDictionary()),
        ]
        p = tmp_path / "ner.jsonl"
        write_ner_records(records, p)
        loaded = load_ner_records(p)
        assert [r.sample_id for r in loaded] == ["s1", "s2", "s3"]
        assert [r.entities.entries for r in loaded] == [r.entities.entries for r in records]
        assert [r.caption for r in loaded] == ["a view of Delhi .", None, None]

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "ner.jsonl"
        p.write_text('{"id":"a","entities":{}}\nnot json\n', encoding="utf-8")
        with pytest.raises(ParseError) as err:
            parse_ner_file(p)
        assert "line 2" in str(err.value)

    def test_unknown_type_is_schema_error(self, tmp_path):
        p = tmp_path / "ner.jsonl"
        p.write_text('{"id":"a","entities":{"ANIMAL":["dog"]}}\n', encoding="utf-8")
        with pytest.raises(SchemaError):
            parse_ner_file(p)

    def test_missing_id_rejected(self, tmp_path):
        p = tmp_path / "ner.jsonl"
        p.write_text('{"entities":{}}\n', encoding="utf-8")
        with pytest.raises(ParseError):
            parse_ner_file(p)
