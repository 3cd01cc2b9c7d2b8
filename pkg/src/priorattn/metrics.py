"""Corpus-level BLEU, SARI, FKGL and length ratio.

All functions take pre-tokenized text (lists of tokens); matching is
case-sensitive. Sums are accumulated in Python floats (64-bit).
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

Tokens = Sequence[str]

MAX_ORDER = 4


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(*corpora) -> None:
    lengths = {len(c) for c in corpora}
    if len(lengths) != 1:
        raise ValueError(f"corpus length mismatch: {[len(c) for c in corpora]}")
    if 0 in lengths:
        raise ValueError("empty corpus")


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    """Corpus BLEU (0-100), no smoothing.

    Orders with no hypothesis n-grams anywhere in the corpus (all hypotheses
    shorter than n) are left out of the geometric mean.
    """
    _check_corpus(hypotheses, references)
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every segment needs at least one reference")
        hyp_len += len(hyp)
        # closest reference length, ties to the shorter one
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, MAX_ORDER + 1):
            counts = ngrams(hyp, n)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_p.append(math.log(m / t))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(log_p) / len(log_p))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _scale(counter: Counter, k: int) -> Counter:
    return Counter({g: c * k for g, c in counter.items()})


def sari_ngram(source: Tokens, hypothesis: Tokens, refs: Sequence[Tokens], n: int) -> tuple[float, float, float]:
    """(F_keep, P_del, F_add) for one segment at one n-gram order.

    Reference counts are fractional: each reference contributes count/r,
    implemented by scaling source and hypothesis counts by r instead. When a
    component's candidate set and reference set are both empty it scores 1.
    """
    r = len(refs)
    s = ngrams(source, n)
    c = ngrams(hypothesis, n)
    ref_all: Counter = Counter()
    for ref in refs:
        ref_all.update(ngrams(ref, n))
    s_rep, c_rep = _scale(s, r), _scale(c, r)

    # keep
    keep = s_rep & c_rep
    keep_good = keep & ref_all
    keep_all = s_rep & ref_all
    if not keep and not keep_all:
        f_keep = 1.0
    else:
        p = sum(keep_good[g] / keep[g] for g in keep) / len(keep) if keep else 0.0
        rc = sum(keep_good[g] / keep_all[g] for g in keep_good) / len(keep_all) if keep_all else 0.0
        f_keep = _f1(p, rc)

    # delete (precision only)
    dele = s_rep - c_rep
    del_good = dele - ref_all
    del_all = s_rep - ref_all
    if not dele and not del_all:
        p_del = 1.0
    elif not dele:
        p_del = 0.0
    else:
        p_del = sum(del_good[g] / dele[g] for g in dele) / len(dele)

    # add (set based)
    add = set(c) - set(s)
    add_all = set(ref_all) - set(s)
    if not add and not add_all:
        f_add = 1.0
    else:
        good = len(add & add_all)
        p = good / len(add) if add else 0.0
        rc = good / len(add_all) if add_all else 0.0
        f_add = _f1(p, rc)
    return f_keep, p_del, f_add


@dataclass
class SariResult:
    score: float
    f_add: list[float] = field(default_factory=list)
    f_keep: list[float] = field(default_factory=list)
    p_del: list[float] = field(default_factory=list)


def sari_detail(sources: Sequence[Tokens], hypotheses: Sequence[Tokens],
                references: Sequence[Sequence[Tokens]]) -> SariResult:
    _check_corpus(sources, hypotheses, references)
    N = len(sources)
    keep = [0.0] * MAX_ORDER
    dele = [0.0] * MAX_ORDER
    add = [0.0] * MAX_ORDER
    for src, hyp, refs in zip(sources, hypotheses, references):
        if not refs:
            raise ValueError("every segment needs at least one reference")
        for n in range(1, MAX_ORDER + 1):
            k, d, a = sari_ngram(src, hyp, refs, n)
            keep[n - 1] += k
            dele[n - 1] += d
            add[n - 1] += a
    keep = [k / N for k in keep]
    dele = [d / N for d in dele]
    add = [a / N for a in add]
    score = 100.0 * (sum(keep) + sum(dele) + sum(add)) / (3 * MAX_ORDER)
    return SariResult(score, add, keep, dele)


def sari(sources, hypotheses, references) -> float:
    return sari_detail(sources, hypotheses, references).score


_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_SENTENCE_END = re.compile(r"[.!?]+")


def count_syllables(word: str) -> int:
    w = word.lower()
    count = len(_VOWEL_GROUP.findall(w))
    if w.endswith("e") and not (len(w) >= 3 and w.endswith("le") and w[-3] not in "aeiouy"):
        count -= 1
    return max(count, 1)


def _text(t) -> str:
    return t if isinstance(t, str) else " ".join(t)


def fkgl(texts: Sequence) -> float:
    """Flesch-Kincaid grade level from corpus totals of sentences, words, syllables."""
    sentences = words = syllables = 0
    for t in texts:
        text = _text(t)
        sentences += max(1, len(_SENTENCE_END.findall(text)))
        for tok in text.split():
            w = tok.strip(string.punctuation)
            if w:
                words += 1
                syllables += count_syllables(w)
    if words == 0:
        raise ValueError("FKGL of a text with no words")
    return 0.39 * words / sentences + 11.8 * syllables / words - 15.59


def length_ratio(hypotheses: Sequence[Tokens], sources: Sequence[Tokens]) -> float:
    """Total hypothesis tokens over total source tokens."""
    _check_corpus(hypotheses, sources)
    src = sum(len(s) for s in sources)
    if src == 0:
        raise ValueError("sources contain no tokens")
    return sum(len(h) for h in hypotheses) / src


@dataclass
class EvalReport:
    bleu: float
    sari: float
    fkgl: float
    length_ratio: float
    sari_breakdown: SariResult | None = None


def evaluate(sources, hypotheses, references) -> EvalReport:
    s = sari_detail(sources, hypotheses, references)
    try:
        grade = fkgl(hypotheses)
    except ValueError:
        grade = float("nan")
    return EvalReport(
        bleu=bleu(hypotheses, references),
        sari=s.score,
        fkgl=grade,
        length_ratio=length_ratio(hypotheses, sources),
        sari_breakdown=s,
    )
