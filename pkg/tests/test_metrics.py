"""Metric tests against hand counts and independent brute-force scorers."""

import math

import pytest

from contextcap import metrics
from contextcap.errors import InputError, ParseError, SchemaError
from contextcap.metrics import EvalItem


def item(hyp, refs, sid="x"):
    return EvalItem(sample_id=sid, hyp=hyp, refs=list(refs))


# --------------------------------------------------------------------------
# Independent oracles (deliberately avoid the library's helpers)
# --------------------------------------------------------------------------

def oracle_tokens(text):
    out = []
    word = ""
    for ch in text.lower():
        if ch.isalnum() or ch == "_":
            word += ch
        else:
            if word:
                out.append(word)
                word = ""
            if not ch.isspace():
                out.append(ch)
    if word:
        out.append(word)
    return out


def oracle_ngram_list(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def oracle_bleu(items_data):
    matches = [0, 0, 0, 0]
    totals = [0, 0, 0, 0]
    c_total, r_total = 0, 0
    for hyp_text, ref_texts in items_data:
        hyp = oracle_tokens(hyp_text)
        refs = [oracle_tokens(r) for r in ref_texts]
        c_total += len(hyp)
        best_ref = min(refs, key=lambda r: (abs(len(r) - len(hyp)), len(r)))
        r_total += len(best_ref)
        for n in range(1, 5):
            hgrams = oracle_ngram_list(hyp, n)
            totals[n - 1] += len(hgrams)
            for gram in set(hgrams):
                max_in_refs = max(
                    (oracle_ngram_list(r, n).count(gram) for r in refs), default=0
                )
                matches[n - 1] += min(hgrams.count(gram), max_in_refs)
    acc = 0.0
    for m, t in zip(matches, totals):
        p = m / t if (m > 0 and t > 0) else 1e-9 / max(t, 1)
        acc += math.log(p) / 4
    bp = 1.0 if c_total > r_total else math.exp(1 - r_total / max(c_total, 1))
    return 100.0 * bp * math.exp(acc)


def oracle_cider(items_data):
    n_docs = len(items_data)
    default = math.log(n_docs) if n_docs > 1 else 0.0
    per_item = []
    for n in range(1, 5):
        pass
    idf = []
    for n in range(1, 5):
        table = {}
        for _, ref_texts in items_data:
            grams = set()
            for r in ref_texts:
                grams.update(oracle_ngram_list(oracle_tokens(r), n))
            for g in grams:
                table[g] = table.get(g, 0) + 1
        idf.append({g: math.log(n_docs / c) for g, c in table.items()})
    for hyp_text, ref_texts in items_data:
        hyp = oracle_tokens(hyp_text)
        acc_n = []
        for n in range(1, 5):
            hgrams = oracle_ngram_list(hyp, n)
            hvec = {}
            for g in hgrams:
                hvec[g] = hvec.get(g, 0) + 1
            sims = []
            for r in ref_texts:
                rgrams = oracle_ngram_list(oracle_tokens(r), n)
                rvec = {}
                for g in rgrams:
                    rvec[g] = rvec.get(g, 0) + 1
                dot, na, nb = 0.0, 0.0, 0.0
                for g, c in hvec.items():
                    w = c * idf[n - 1].get(g, default)
                    na += w * w
                    if g in rvec:
                        dot += w * rvec[g] * idf[n - 1].get(g, default)
                for g, c in rvec.items():
                    w = c * idf[n - 1].get(g, default)
                    nb += w * w
                sims.append(dot / math.sqrt(na * nb) if na > 0 and nb > 0 else 0.0)
            acc_n.append(sum(sims) / len(sims))
        per_item.append(10.0 * sum(acc_n) / 4)
    return sum(per_item) / len(per_item), per_item


class TestNormalizer:
    def test_lowercase_and_punctuation_split(self):
        assert metrics.normalize("Hello, World!") == ["hello", ",", "world", "!"]

    def test_whitespace_collapse(self):
        assert metrics.normalize("a   b\t c \n d") == ["a", "b", "c", "d"]

    def test_apostrophes_split(self):
        assert metrics.normalize("don't") == ["don", "'", "t"]

    def test_version_string_exists(self):
        assert isinstance(metrics.NORMALIZER_VERSION, str) and metrics.NORMALIZER_VERSION

    def test_shared_across_metrics(self):
        noisy = [item("A  Man, RIDES!", ["a man , rides !"])]
        assert metrics.bleu4(noisy) == pytest.approx(100.0, abs=1e-9)
        assert metrics.rouge_l(noisy) == pytest.approx(100.0, abs=1e-9)


class TestBleu4:
    def test_identity_corpus_scores_100(self):
        items = [
            item("a man rides a wave", ["a man rides a wave"]),
            item("two dogs run across the field", ["two dogs run across the field"]),
        ]
        assert metrics.bleu4(items) == pytest.approx(100.0, abs=1e-9)

    def test_disjoint_vocabulary_is_near_zero(self):
        items = [item("alpha beta gamma delta", ["one two three four five"])]
        assert metrics.bleu4(items) < 1e-3

    def test_hand_computed_micro_case(self):
        # hyp "the cat sat" vs ref "the cat sat down":
        # p1=3/3 p2=2/2 p3=1/1 p4=eps (no 4-grams), BP=exp(1-4/3)
        items = [item("the cat sat", ["the cat sat down"])]
        expected = 100.0 * math.exp(1 - 4 / 3) * math.exp(math.log(1e-9) / 4)
        assert metrics.bleu4(items) == pytest.approx(expected, abs=1e-9)

    def test_matches_independent_oracle(self):
        data = [
            ("a man rides a wave", ["a man rides a big wave", "a surfer on a wave"]),
            ("the dog runs", ["a dog runs fast", "the dog is running"]),
            ("people walk near the river", ["people walk by the river bank"]),
        ]
        items = [item(h, r, sid=str(i)) for i, (h, r) in enumerate(data)]
        assert metrics.bleu4(items) == pytest.approx(oracle_bleu(data), abs=1e-9)

    def test_brevity_penalty_direction(self):
        short = [item("a man", ["a man rides a big wave today"])]
        long_ = [item("a man rides a big wave today", ["a man rides a big wave today"])]
        assert metrics.bleu4(short) < metrics.bleu4(long_)

    def test_adding_exact_reference_is_monotone(self):
        base = [item("a man rides", ["a man rides a wave"])]
        extended = [item("a man rides", ["a man rides a wave", "a man rides"])]
        assert metrics.bleu4(extended) >= metrics.bleu4(base)

    def test_empty_corpus_rejected(self):
        with pytest.raises(InputError):
            metrics.bleu4([])


class TestCider:
    def diverse_corpus(self):
        return [
            item("a red bird sits on the tree", ["a red bird sits on the tree"], "1"),
            item("two dogs run across a field", ["two dogs run across a field"], "2"),
            item("people walk near the river bank", ["people walk near the river bank"], "3"),
        ]

    def test_identity_items_score_ten(self):
        scores = metrics.cider_items(self.diverse_corpus())
        for s in scores:
            assert s == pytest.approx(10.0, abs=1e-9)

    def test_disjoint_vocabulary_scores_zero(self):
        items = self.diverse_corpus()
        items[0] = item("xyzzy quux corge grault", items[0].refs, "1")
        assert metrics.cider_items(items)[0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_independent_oracle(self):
        data = [
            ("a man rides a wave", ["a man rides a big wave", "a man on a wave"]),
            ("the dog runs fast", ["a dog runs fast", "the dog runs"]),
            ("people walk near the river", ["people walk by the river"]),
        ]
        items = [item(h, r, sid=str(i)) for i, (h, r) in enumerate(data)]
        expected_mean, expected_items = oracle_cider(data)
        assert metrics.cider(items) == pytest.approx(expected_mean, abs=1e-9)
        for got, want in zip(metrics.cider_items(items), expected_items):
            assert got == pytest.approx(want, abs=1e-9)

    def test_corpus_order_invariance(self):
        items = self.diverse_corpus()
        reordered = [items[2], items[0], items[1]]
        a = dict(zip([i.sample_id for i in items], metrics.cider_items(items)))
        b = dict(zip([i.sample_id for i in reordered], metrics.cider_items(reordered)))
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-12)

    def test_single_item_fallback_does_not_crash(self):
        items = [item("a man rides", ["a man rides"])]
        assert metrics.cider(items) >= 0.0

    def test_monotone_under_duplicate_reference(self):
        base = [item("a man rides", ["a man rides a wave"])]
        extended = [item("a man rides", ["a man rides a wave", "a man rides"])]
        assert metrics.cider(extended) >= metrics.cider(base)


class TestRougeL:
    def test_identity_scores_100(self):
        assert metrics.rouge_l([item("a b c d", ["a b c d"])]) == pytest.approx(
            100.0, abs=1e-9
        )

    def test_hand_lcs_case(self):
        # hyp "a b c", ref "a c": LCS=2, P=2/3, R=1
        p, r = 2 / 3, 1.0
        expected = 100.0 * ((1 + 1.2) * p * r) / (r + 1.2 * p)
        assert metrics.rouge_l([item("a b c", ["a c"])]) == pytest.approx(
            expected, abs=1e-9
        )

    def test_empty_overlap_scores_zero(self):
        assert metrics.rouge_l([item("a b c", ["x y z"])]) == 0.0

    def test_max_over_references(self):
        items = [item("a b c", ["x y z", "a b c"])]
        assert metrics.rouge_l(items) == pytest.approx(100.0, abs=1e-9)

    def test_monotone_under_duplicate_reference(self):
        base = [item("a man rides", ["a man rides a wave"])]
        extended = [item("a man rides", ["a man rides a wave", "a man rides"])]
        assert metrics.rouge_l(extended) >= metrics.rouge_l(base)


class TestMeteor:
    def test_identity_scores_above_99(self):
        items = [item("the cat sat on the mat", ["the cat sat on the mat"])]
        expected = 100.0 * (1.0 - 0.5 * (1 / 6) ** 3)
        assert metrics.meteor(items) == pytest.approx(expected, abs=1e-9)
        assert metrics.meteor(items) > 99.0

    def test_zero_matches_scores_zero(self):
        assert metrics.meteor([item("alpha beta", ["x y z"])]) == 0.0

    def test_permutation_lowers_score(self):
        ordered = metrics.meteor([item("the cat sat", ["the cat sat"])])
        permuted = metrics.meteor([item("sat the cat", ["the cat sat"])])
        # m=3, chunks=2 after permutation: penalty = 0.5 * (2/3)^3
        expected = 100.0 * (1.0 - 0.5 * (2 / 3) ** 3)
        assert permuted == pytest.approx(expected, abs=1e-9)
        assert permuted < ordered

    def test_stem_stage_matches(self):
        # "running" vs "runs" only matches through the stemmer
        score = metrics.meteor([item("running", ["runs"])])
        assert score == pytest.approx(50.0, abs=1e-9)

    def test_multiple_references_take_max(self):
        items = [item("a cat", ["x y", "a cat"])]
        best = metrics.meteor(items)
        only_bad = metrics.meteor([item("a cat", ["x y"])])
        assert best > only_bad


class TestPorterStemmer:
    @pytest.mark.parametrize(
        "word,stem",
        [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("ties", "ti"),
            ("caress", "caress"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("hopping", "hop"),
            ("tanned", "tan"),
            ("falling", "fall"),
            ("hissing", "hiss"),
            ("failing", "fail"),
            ("filing", "file"),
            ("running", "run"),
            ("happy", "happi"),
            ("sky", "sky"),
            ("relational", "relat"),
            ("conditional", "condit"),
            ("adjustment", "adjust"),
            ("dependent", "depend"),
            ("adoption", "adopt"),
            ("communism", "commun"),
            ("effective", "effect"),
            ("electriciti", "electr"),
            ("hopeful", "hope"),
            ("goodness", "good"),
            ("formaliti", "formal"),
            ("formative", "form"),
            ("digitizer", "digit"),
            ("operator", "oper"),
            ("allowance", "allow"),
            ("inference", "infer"),
            ("replacement", "replac"),
            ("probate", "probat"),
            ("rate", "rate"),
            ("cease", "ceas"),
            ("controll", "control"),
            ("roll", "roll"),
        ],
    )
    def test_known_pairs(self, word, stem):
        assert metrics.porter_stem(word) == stem

    def test_short_words_pass_through(self):
        assert metrics.porter_stem("at") == "at"
        assert metrics.porter_stem("a") == "a"

    def test_non_alpha_pass_through(self):
        assert metrics.porter_stem("42nd") == "42nd"
        assert metrics.porter_stem("'") == "'"


class TestEvalFiles:
    def test_read_round_trip(self, tmp_path):
        p = tmp_path / "eval.jsonl"
        p.write_text(
            '{"id":"a","hyp":"a man","refs":["a man rides"]}\n'
            '{"id":"b","hyp":"dogs","refs":["two dogs","dogs run"]}\n',
            encoding="utf-8",
        )
        items = metrics.read_eval_file(p)
        assert [i.sample_id for i in items] == ["a", "b"]
        assert items[1].refs == ["two dogs", "dogs run"]

    def test_missing_refs_rejected(self, tmp_path):
        p = tmp_path / "eval.jsonl"
        p.write_text('{"id":"a","hyp":"x","refs":[]}\n', encoding="utf-8")
        with pytest.raises(SchemaError):
            metrics.read_eval_file(p)

    def test_malformed_line_names_line(self, tmp_path):
        p = tmp_path / "eval.jsonl"
        p.write_text('{"id":"a","hyp":"x","refs":["y"]}\nnope\n', encoding="utf-8")
        with pytest.raises(ParseError) as err:
            metrics.read_eval_file(p)
        assert "line 2" in str(err.value)

    def test_report_writing(self, tmp_path):
        items = [
            item("a man rides a wave", ["a man rides a wave"], "s1"),
            item("dogs run", ["two dogs run fast"], "s2"),
        ]
        summary, per_item = metrics.evaluate_corpus(items)
        assert summary["normalizer_version"] == metrics.NORMALIZER_VERSION
        assert set(summary) >= {"bleu4", "cider", "rouge_l", "meteor"}
        jp, cp = tmp_path / "report.json", tmp_path / "per_item.csv"
        metrics.write_eval_report(summary, per_item, jp, cp)
        lines = cp.read_text().strip().split("\n")
        assert lines[0] == "id,bleu4,cider,rouge_l,meteor"
        assert len(lines) == 3
        import json

        loaded = json.loads(jp.read_text())
        assert loaded["bleu4"] == pytest.approx(summary["bleu4"])
