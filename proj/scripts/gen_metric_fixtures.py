#!/usr/bin/env python3
"""Independent oracle for the summary metrics.

Implements composite sentence/corpus BLEU, ROUGE-LCS F1, METEOR
(exact + stem alignment stages), and the 1980 Porter stemmer directly from
their published definitions, sharing no code or structure with the C++
library, then freezes a scored fixture suite for the unit tests.

The stemmer here is realized as ordered rule tables per step, the way the
original paper presents the algorithm; the C++ side mirrors the classic
buffer/offset reference implementation instead. Agreement between the two is
part of what the fixtures check.

Usage: python3 scripts/gen_metric_fixtures.py [--out PATH]
"""

import argparse
import json
import math
import random
from collections import Counter
from pathlib import Path

# --------------------------------------------------------------------------
# Porter stemmer (original 1980 algorithm, rule-table realization)
# --------------------------------------------------------------------------

_VOWELS = set("aeiou")


def _is_cons(word, i):
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_cons(word, i - 1)
    return True


def _measure(stem):
    """Number of vowel-consonant sequences: count V->C transitions."""
    return sum(
        1
        for i in range(len(stem) - 1)
        if not _is_cons(stem, i) and _is_cons(stem, i + 1)
    )


def _has_vowel(stem):
    return any(not _is_cons(stem, i) for i in range(len(stem)))


def _ends_double_cons(word):
    return len(word) >= 2 and word[-1] == word[-2] and _is_cons(word, len(word) - 1)


def _ends_cvc(word):
    if len(word) < 3:
        return False
    n = len(word)
    if not (_is_cons(word, n - 3) and not _is_cons(word, n - 2) and _is_cons(word, n - 1)):
        return False
    return word[-1] not in "wxy"


def _apply_rules(word, rules):
    """First rule whose suffix matches ends the step; its condition is then
    tested and, only if it holds, the replacement is made."""
    for suffix, replacement, condition in rules:
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if condition is None or condition(stem):
                return stem + replacement
            return word
    return word


_STEP2 = [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]

_STEP3 = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]

_STEP4 = [
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
]


def _step1a(word):
    return _apply_rules(
        word,
        [("sses", "ss", None), ("ies", "i", None), ("ss", "ss", None), ("s", "", None)],
    )


def _step1b(word):
    if word.endswith("eed"):
        stem = word[:-3]
        return stem + "ee" if _measure(stem) > 0 else word
    for suffix in ("ed", "ing"):
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if not _has_vowel(stem):
                return word
            return _step1b_cleanup(stem)
    return word


def _step1b_cleanup(word):
    for suffix, replacement in (("at", "ate"), ("bl", "ble"), ("iz", "ize")):
        if word.endswith(suffix):
            return word[: len(word) - len(suffix)] + replacement
    if _ends_double_cons(word) and word[-1] not in "lsz":
        return word[:-1]
    if _measure(word) == 1 and _ends_cvc(word):
        return word + "e"
    return word


def _step1c(word):
    if word.endswith("y") and _has_vowel(word[:-1]):
        return word[:-1] + "i"
    return word


def _step2(word):
    positive = lambda stem: _measure(stem) > 0
    return _apply_rules(word, [(s, r, positive) for s, r in _STEP2])


def _step3(word):
    positive = lambda stem: _measure(stem) > 0
    return _apply_rules(word, [(s, r, positive) for s, r in _STEP3])


def _step4(word):
    for suffix in _STEP4:
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if suffix == "ion" and not (stem and stem[-1] in "st"):
                return word
            if _measure(stem) > 1:
                return stem
            return word
    return word


def _step5a(word):
    if word.endswith("e"):
        stem = word[:-1]
        a = _measure(stem)
        if a > 1 or (a == 1 and not _ends_cvc(stem)):
            return stem
    return word


def _step5b(word):
    if word.endswith("l") and _ends_double_cons(word) and _measure(word) > 1:
        return word[:-1]
    return word


def porter_stem(word):
    if len(word) <= 2 or not all("a" <= ch <= "z" for ch in word):
        return word
    for step in (_step1a, _step1b, _step1c, _step2, _step3, _step4, _step5a, _step5b):
        word = step(word)
    return word


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _clipped(candidate, reference, n):
    cand_counts = Counter(_ngrams(candidate, n))
    ref_counts = Counter(_ngrams(reference, n))
    matches = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
    total = max(len(candidate) - n + 1, 0)
    return matches, total


def _brevity(cand_len, ref_len):
    if cand_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def sentence_bleu(candidate, reference):
    assert reference
    if not candidate:
        return 0.0
    acc = 0.0
    for n in range(1, 5):
        matches, total = _clipped(candidate, reference, n)
        acc += matches / total if matches > 0 else 0.1 / max(total, 1)
    return (acc / 4.0) * _brevity(len(candidate), len(reference))


def corpus_bleu(pairs):
    assert pairs
    matches = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for candidate, reference in pairs:
        assert reference
        cand_len += len(candidate)
        ref_len += len(reference)
        for n in range(1, 5):
            m, t = _clipped(candidate, reference, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if cand_len == 0:
        return 0.0
    acc = sum(matches[i] / totals[i] if totals[i] > 0 else 0.0 for i in range(4))
    return (acc / 4.0) * _brevity(cand_len, ref_len)


def lcs_length(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def rouge_lcs_f1(candidate, reference):
    assert candidate and reference
    lcs = lcs_length(candidate, reference)
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def meteor(candidate, reference):
    assert candidate and reference
    aligned = [None] * len(candidate)
    used = [False] * len(reference)

    def stage(key):
        for i, token in enumerate(candidate):
            if aligned[i] is not None:
                continue
            want = key(token)
            for j, ref_token in enumerate(reference):
                if used[j]:
                    continue
                if key(ref_token) == want:
                    aligned[i] = j
                    used[j] = True
                    break

    stage(lambda token: token)
    stage(porter_stem)

    m = sum(1 for j in aligned if j is not None)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    match_pairs = [(i, j) for i, j in enumerate(aligned) if j is not None]
    chunks = 0
    for k, (i, j) in enumerate(match_pairs):
        if k == 0 or match_pairs[k - 1][0] + 1 != i or match_pairs[k - 1][1] + 1 != j:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


# --------------------------------------------------------------------------
# Self-checks: hand-verified full-run stems and metric fixed points
# --------------------------------------------------------------------------

_CANONICAL_STEMS = {
    "caresses": "caress", "ponies": "poni", "ties": "ti", "caress": "caress",
    "cats": "cat", "feed": "feed", "agreed": "agre", "plastered": "plaster",
    "motoring": "motor", "sing": "sing", "hopping": "hop", "tanned": "tan",
    "falling": "fall", "hissing": "hiss", "failing": "fail", "filing": "file",
    "sized": "size", "happy": "happi", "sky": "sky", "relational": "relat",
    "conditional": "condit", "digitizer": "digit", "hopeful": "hope",
    "goodness": "good", "allowance": "allow", "inference": "infer",
    "replacement": "replac", "adoption": "adopt", "bowdlerize": "bowdler",
    "controll": "control", "roll": "roll", "probate": "probat",
    "rate": "rate", "cease": "ceas", "transferring": "transfer",
    "running": "run", "computed": "comput", "tokens": "token",
}


def self_check():
    for word, want in _CANONICAL_STEMS.items():
        got = porter_stem(word)
        assert got == want, f"porter_stem({word!r}) = {got!r}, want {want!r}"
    same = ["returns", "the", "current", "token", "balance"]
    assert abs(sentence_bleu(same, same) - 1.0) < 1e-15
    assert abs(rouge_lcs_f1(["a", "c"], ["a", "b", "c"]) - 0.8) < 1e-12
    assert abs(meteor(["balance"], ["balance"]) - 0.5) < 1e-15
    assert meteor(["qqq"], ["zzz"]) == 0.0


# --------------------------------------------------------------------------
# Fixture generation
# --------------------------------------------------------------------------

_VOCAB = [
    "transfer", "transfers", "transferring", "token", "tokens", "balance",
    "balances", "owner", "ownership", "compute", "computed", "computing",
    "update", "updates", "updated", "sell", "selling", "amount", "return",
    "returns", "returned", "call", "caller", "calling", "contract",
    "contracts", "value", "values", "allow", "allowance", "allowed",
    "check", "checks", "checked", "sender", "address", "addresses",
    "mint", "minted", "burn", "burned", "total", "supply", "the", "of",
    "to", "a", "current", "given", "erc-20", "<num>",
]


def _sample(rng, pool, length):
    return [rng.choice(pool) for _ in range(length)]


def build_pairs(rng):
    pairs = []

    # Identical pairs.
    for length in (4, 5, 7, 9, 12):
        tokens = _sample(rng, _VOCAB, length)
        pairs.append((list(tokens), list(tokens)))

    # Surface-disjoint pairs (stems may still collide, which exercises the
    # METEOR stem stage).
    half = len(_VOCAB) // 2
    for _ in range(5):
        cand = _sample(rng, _VOCAB[:half], rng.randrange(4, 11))
        ref = _sample(rng, _VOCAB[half:], rng.randrange(4, 11))
        pairs.append((cand, ref))

    # Random pairs over a small pool so n-grams collide often.
    pool = _VOCAB[:15]
    for _ in range(20):
        cand = _sample(rng, pool, rng.randrange(1, 21))
        ref = _sample(rng, pool, rng.randrange(4, 21))
        pairs.append((cand, ref))

    # Morphological variants: candidate uses inflected forms of the
    # reference's words.
    variants = {
        "transfer": "transferring", "token": "tokens", "balance": "balances",
        "compute": "computed", "update": "updated", "sell": "selling",
        "return": "returned", "call": "calling", "check": "checked",
        "mint": "minted",
    }
    bases = list(variants)
    for _ in range(10):
        picked = rng.sample(bases, rng.randrange(4, 8))
        ref = picked + _sample(rng, ["the", "of", "to"], 2)
        cand = [variants[w] if rng.random() < 0.7 else w for w in picked]
        rng.shuffle(cand)
        pairs.append((cand, ref))

    # Structure-focused pairs: shuffles (chunk penalty), repeats (count
    # clipping), truncations (brevity penalty), and sub-4-length candidates.
    for _ in range(4):
        ref = _sample(rng, pool, rng.randrange(6, 13))
        cand = list(ref)
        rng.shuffle(cand)
        pairs.append((cand, ref))
    for _ in range(3):
        base = _sample(rng, pool, 4)
        pairs.append((base * 3, base))
    for length in (1, 2, 3):
        ref = _sample(rng, pool, 8)
        pairs.append((ref[:length], ref))

    return pairs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "metric_cases.json"),
    )
    args = parser.parse_args()

    self_check()
    rng = random.Random(20260816)
    pairs = build_pairs(rng)

    scored = []
    for cand, ref in pairs:
        entry = {
            "candidate": cand,
            "reference": ref,
            "s_bleu": sentence_bleu(cand, ref),
            "rouge_lcs_f1": rouge_lcs_f1(cand, ref),
            "meteor": meteor(cand, ref),
        }
        for key in ("s_bleu", "rouge_lcs_f1", "meteor"):
            assert 0.0 <= entry[key] <= 1.0, (key, entry)
        scored.append(entry)

    stem_words = sorted(set(_VOCAB) | set(_CANONICAL_STEMS))
    fixture = {
        "seed": 20260816,
        "porter": [[w, porter_stem(w)] for w in stem_words],
        "pairs": scored,
        "corpus_bleu": corpus_bleu(pairs),
    }

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as handle:
        json.dump(fixture, handle, indent=1)
        handle.write("\n")
    print(f"wrote {len(scored)} scored pairs to {out_path}")


if __name__ == "__main__":
    main()
