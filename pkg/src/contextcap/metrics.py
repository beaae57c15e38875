"""Caption evaluation: corpus BLEU-4, base CIDEr, ROUGE-L, simplified METEOR.

All four metrics share one normalizer: lowercase, punctuation split into
standalone tokens, whitespace collapsed.  Reports carry NORMALIZER_VERSION
so scores from different builds are comparable only when it matches.

METEOR here is the two-stage form (exact match, then Porter-stem match)
without a synonym stage, so absolute values are not comparable to
WordNet-backed implementations.  ROUGE-L uses the LCS F-measure with
beta^2 = 1.2.  CIDEr is the base tf-idf variant (no length penalty):
idf = log(N / max(df, 1)) over the reference corpus, cosine similarity
averaged across references and n = 1..4, scaled by 10.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass

from .errors import InputError, ParseError, SchemaError

NORMALIZER_VERSION = "lc-punct-ws-1"

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

_BLEU_EPS = 1e-9
_ROUGE_BETA_SQ = 1.2
_METEOR_ALPHA = 0.9
_METEOR_GAMMA = 0.5
_METEOR_BETA = 3.0


@dataclass
class EvalItem:
    sample_id: str
    hyp: str
    refs: list

    def __post_init__(self):
        if not self.refs:
            raise SchemaError(f"item {self.sample_id!r} has no references")


def _validate_corpus(items):
    if not items:
        raise InputError("evaluation corpus is empty")


def normalize(text):
    """Shared metric tokenizer: lowercase, split punctuation, collapse space."""
    return _TOKEN_PATTERN.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(items):
    """Corpus BLEU-4 in [0, 100]: clipped precisions, closest-ref brevity."""
    _validate_corpus(items)
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for item in items:
        hyp = normalize(item.hyp)
        refs = [normalize(r) for r in item.refs]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            hyp_grams = _ngrams(hyp, n)
            best = Counter()
            for r in refs:
                for gram, c in _ngrams(r, n).items():
                    if c > best[gram]:
                        best[gram] = c
            totals[n - 1] += sum(hyp_grams.values())
            matches[n - 1] += sum(min(c, best[g]) for g, c in hyp_grams.items())
    log_sum = 0.0
    for m, t in zip(matches, totals):
        p = m / t if (m > 0 and t > 0) else _BLEU_EPS / max(t, 1)
        log_sum += math.log(p) / 4.0
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum)


def _cider_idf(items):
    """Per-n idf tables; grams absent from every reference set (df = 0)
    default to log(N), the maximum weight."""
    n_docs = len(items)
    default = math.log(n_docs) if n_docs > 1 else 0.0
    tables = []
    for n in range(1, 5):
        df = Counter()
        for item in items:
            seen = set()
            for r in item.refs:
                seen.update(_ngrams(normalize(r), n).keys())
            df.update(seen)
        tables.append({g: math.log(n_docs / c) for g, c in df.items()})
    return tables, default


def _tfidf_cosine(a_counts, b_counts, idf_n, default):
    dot = 0.0
    norm_a = 0.0
    norm_b = 0.0
    for gram, c in a_counts.items():
        w = c * idf_n.get(gram, default)
        norm_a += w * w
        if gram in b_counts:
            dot += w * b_counts[gram] * idf_n.get(gram, default)
    for gram, c in b_counts.items():
        w = c * idf_n.get(gram, default)
        norm_b += w * w
    if norm_a <= 0.0 or norm_b <= 0.0:
        return 0.0
    return dot / math.sqrt(norm_a * norm_b)


def cider_items(items):
    """Per-item base CIDEr scores (0..10) using corpus-level idf."""
    _validate_corpus(items)
    idf, default = _cider_idf(items)
    scores = []
    for item in items:
        hyp = normalize(item.hyp)
        per_n = []
        for n in range(1, 5):
            hyp_grams = _ngrams(hyp, n)
            sims = [
                _tfidf_cosine(hyp_grams, _ngrams(normalize(r), n), idf[n - 1], default)
                for r in item.refs
            ]
            per_n.append(sum(sims) / len(sims))
        scores.append(10.0 * sum(per_n) / 4.0)
    return scores


def cider(items):
    """Corpus mean of per-item base CIDEr scores."""
    scores = cider_items(items)
    return sum(scores) / len(scores)


def _lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def _rouge_item(item):
    hyp = normalize(item.hyp)
    best = 0.0
    for r in item.refs:
        ref = normalize(r)
        lcs = _lcs_length(hyp, ref)
        if lcs == 0 or not hyp or not ref:
            continue
        p = lcs / len(hyp)
        rec = lcs / len(ref)
        f = ((1.0 + _ROUGE_BETA_SQ) * p * rec) / (rec + _ROUGE_BETA_SQ * p)
        best = max(best, f)
    return best


def rouge_l(items):
    """Corpus ROUGE-L (LCS F-measure, beta^2 = 1.2, max over refs) in [0, 100]."""
    _validate_corpus(items)
    return 100.0 * sum(_rouge_item(item) for item in items) / len(items)


def _meteor_align(hyp, ref):
    """Greedy left-to-right alignment: exact stage, then stem stage.

    Returns the list of (hyp_index, ref_index) matches sorted by hyp index.
    """
    matched_ref = [False] * len(ref)
    pairs = {}
    for i, tok in enumerate(hyp):
        for j, rtok in enumerate(ref):
            if not matched_ref[j] and tok == rtok:
                pairs[i] = j
                matched_ref[j] = True
                break
    hyp_stems = [porter_stem(t) for t in hyp]
    ref_stems = [porter_stem(t) for t in ref]
    for i, stem in enumerate(hyp_stems):
        if i in pairs:
            continue
        for j, rstem in enumerate(ref_stems):
            if not matched_ref[j] and stem == rstem:
                pairs[i] = j
                matched_ref[j] = True
                break
    return sorted(pairs.items())


def _meteor_item(item):
    hyp = normalize(item.hyp)
    best = 0.0
    for r in item.refs:
        ref = normalize(r)
        if not hyp or not ref:
            continue
        alignment = _meteor_align(hyp, ref)
        m = len(alignment)
        if m == 0:
            continue
        p = m / len(hyp)
        rec = m / len(ref)
        f = (p * rec) / (_METEOR_ALPHA * p + (1.0 - _METEOR_ALPHA) * rec)
        chunks = 1
        for (hi_prev, rj_prev), (hi, rj) in zip(alignment, alignment[1:]):
            if hi != hi_prev + 1 or rj != rj_prev + 1:
                chunks += 1
        penalty = _METEOR_GAMMA * (chunks / m) ** _METEOR_BETA
        best = max(best, f * (1.0 - penalty))
    return best


def meteor(items):
    """Simplified METEOR (exact + Porter-stem stages, no synonyms) in [0, 100]."""
    _validate_corpus(items)
    return 100.0 * sum(_meteor_item(item) for item in items) / len(items)


def evaluate_corpus(items):
    """All four corpus scores plus per-item rows for the report CSV."""
    _validate_corpus(items)
    per_cider = cider_items(items)
    per_item = []
    for item, item_cider in zip(items, per_cider):
        single = [item]
        per_item.append(
            {
                "id": item.sample_id,
                "bleu4": bleu4(single),
                "cider": item_cider,
                "rouge_l": rouge_l(single),
                "meteor": meteor(single),
            }
        )
    summary = {
        "bleu4": bleu4(items),
        "cider": cider(items),
        "rouge_l": rouge_l(items),
        "meteor": meteor(items),
        "normalizer_version": NORMALIZER_VERSION,
        "n_items": len(items),
    }
    return summary, per_item


def read_eval_file(path):
    """JSON-lines eval input: {"id": str, "hyp": str, "refs": [str, ...]}."""
    items = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line_no=line_no) from exc
            if not isinstance(obj, dict) or "id" not in obj or "hyp" not in obj:
                raise ParseError("record needs 'id' and 'hyp'", line_no=line_no)
            refs = obj.get("refs", [])
            if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
                raise ParseError("'refs' must be a list of strings", line_no=line_no)
            try:
                items.append(EvalItem(sample_id=str(obj["id"]), hyp=obj["hyp"], refs=refs))
            except SchemaError as exc:
                raise SchemaError(f"line {line_no}: {exc}") from exc
    return items


def write_eval_report(summary, per_item, json_path=None, csv_path=None):
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2)
            f.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write("id,bleu4,cider,rouge_l,meteor\n")
            for row in per_item:
                f.write(
                    f"{row['id']},{row['bleu4']:.6f},{row['cider']:.6f},"
                    f"{row['rouge_l']:.6f},{row['meteor']:.6f}\n"
                )


# ---------------------------------------------------------------------------
# Porter stemmer (classic 1980 algorithm, steps 1a through 5b)
# ---------------------------------------------------------------------------

_VOWELS = set("aeiou")


def _is_consonant(word, i):
    c = word[i]
    if c in _VOWELS:
        return False
    if c == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem):
    """Number of VC sequences in the consonant/vowel form of ``stem``."""
    forms = []
    for i in range(len(stem)):
        forms.append("c" if _is_consonant(stem, i) else "v")
    collapsed = "".join(forms)
    m = 0
    prev = None
    for ch in collapsed:
        if prev == "v" and ch == "c":
            m += 1
        prev = ch
    return m


def _contains_vowel(stem):
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word):
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word):
    if len(word) < 3:
        return False
    if not (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
    ):
        return False
    return word[-1] not in "wxy"


def porter_stem(word):
    """Classic Porter stemmer; words shorter than 3 letters pass through."""
    if len(word) <= 2 or not word.isalpha():
        return word
    w = word

    # step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # step 1b
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        flag = False
        if w.endswith("ed") and _contains_vowel(w[:-2]):
            w = w[:-2]
            flag = True
        elif w.endswith("ing") and _contains_vowel(w[:-3]):
            w = w[:-3]
            flag = True
        if flag:
            if w.endswith(("at", "bl", "iz")):
                w = w + "e"
            elif _ends_double_consonant(w) and w[-1] not in "lsz":
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w = w + "e"

    # step 1c
    if w.endswith("y") and _contains_vowel(w[:-1]):
        w = w[:-1] + "i"

    # step 2
    step2 = (
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
        ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
        ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
        ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    )
    for suffix, repl in step2:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    # step 3
    step3 = (
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    )
    for suffix, repl in step3:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    # step 4: longest matching suffix decides the rule; "ion" additionally
    # requires the stem to end in s or t
    step4 = (
        "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ion",
        "ism", "ate", "iti", "ous", "ive", "ize", "al", "er", "ic", "ou",
    )
    for suffix in step4:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 1 and (suffix != "ion" or (stem and stem[-1] in "st")):
                w = stem
            break

    # step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # step 5b
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]

    return w
