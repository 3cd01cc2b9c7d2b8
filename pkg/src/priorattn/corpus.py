"""Tokenization, vocabularies, parallel TSV corpora and synthetic corpora."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import stream

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")

OPERATIONS = ("identity", "truncate-half", "lexical-substitute")


class CorpusError(ValueError):
    """Malformed corpus file or invalid synthetic-corpus spec."""


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass
class Vocab:
    itos: list[str]
    cap: int

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i == PAD:
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos[len(RESERVED):]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, cap: int | None = None) -> "Vocab":
        toks = [t for t in Path(path).read_text(encoding="utf-8").split("\n") if t]
        itos = list(RESERVED) + toks
        return cls(itos, cap if cap is not None else len(itos))


@dataclass
class ParallelPair:
    source: list[str]
    target: list[str]
    extra_refs: list[list[str]] = field(default_factory=list)

    @property
    def references(self) -> list[list[str]]:
        return [self.target] + self.extra_refs


def build_vocab(pairs: Sequence[ParallelPair], cap: int) -> Vocab:
    """Most frequent tokens over both sides, ties broken by first occurrence."""
    if cap < len(RESERVED):
        raise ValueError(f"vocab cap must be >= {len(RESERVED)}, got {cap}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for pair in pairs:
        for tok in (*pair.source, *pair.target):
            counts[tok] += 1
            first_seen.setdefault(tok, len(first_seen))
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    ranked = [t for t in ranked if t not in RESERVED]
    return Vocab(list(RESERVED) + ranked[: cap - len(RESERVED)], cap)


def encode_sequence(tokens: Sequence[str], vocab: Vocab, max_len: int) -> np.ndarray:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [vocab.id(t) for t in tokens[: max_len - 1]]
    ids.append(EOS)
    ids.extend([PAD] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def encode_corpus(seqs: Sequence[Sequence[str]], vocab: Vocab, max_len: int) -> np.ndarray:
    if not seqs:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode_sequence(s, vocab, max_len) for s in seqs])


def load_parallel_tsv(path) -> list[ParallelPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise CorpusError(f"{path}:{lineno}: expected source<TAB>target, got {len(fields)} field(s)")
            toks = [tokenize(f) for f in fields]
            if not toks[0] or not toks[1]:
                raise CorpusError(f"{path}:{lineno}: empty source or target")
            pairs.append(ParallelPair(toks[0], toks[1], toks[2:]))
    return pairs


def format_tsv(pairs: Iterable[ParallelPair]) -> str:
    lines = []
    for p in pairs:
        cols = [p.source, p.target, *p.extra_refs]
        lines.append("\t".join(" ".join(c) for c in cols))
    return "".join(line + "\n" for line in lines)


def load_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh.read().splitlines()]


@dataclass
class SynthSpec:
    task: str = "copy"
    vocab_size: int = 20
    min_len: int = 3
    max_len: int = 10
    mix: dict[str, float] = field(default_factory=lambda: {"identity": 1.0})
    substitutions: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def copy(cls, **kw) -> "SynthSpec":
        return cls(task="copy", mix={"identity": 1.0}, **kw)

    @classmethod
    def simplify_mix(cls, identity: float = 0.5, truncate: float = 0.5, substitute: float = 0.0, **kw) -> "SynthSpec":
        vocab_size = kw.get("vocab_size", 20)
        subs = kw.pop("substitutions", None)
        if subs is None:
            # map the upper half of the vocabulary onto the lower half
            half = vocab_size // 2
            subs = {f"w{i}": f"w{i - half}" for i in range(half, vocab_size)}
        mix = {"identity": identity, "truncate-half": truncate, "lexical-substitute": substitute}
        return cls(task="simplify-mix", mix=mix, substitutions=subs, **kw)

    def validate(self) -> None:
        if self.task not in ("copy", "simplify-mix"):
            raise CorpusError(f"unknown task {self.task!r}")
        unknown = set(self.mix) - set(OPERATIONS)
        if unknown:
            raise CorpusError(f"unknown operations {sorted(unknown)}")
        w = np.array([self.mix.get(op, 0.0) for op in OPERATIONS])
        if (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise CorpusError(f"mix weights must be nonnegative and sum to 1, got {self.mix}")
        if self.mix.get("lexical-substitute", 0.0) > 0 and not self.substitutions:
            raise CorpusError("lexical-substitute has weight > 0 but the substitution dictionary is empty")
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusError(f"bad length range {self.min_len}..{self.max_len}")


def apply_operation(op: str, tokens: list[str], substitutions: dict[str, str]) -> list[str]:
    if op == "identity":
        return list(tokens)
    if op == "truncate-half":
        return tokens[: math.ceil(len(tokens) / 2)]
    if op == "lexical-substitute":
        return [substitutions.get(t, t) for t in tokens]
    raise CorpusError(f"unknown operation {op!r}")


def synth_corpus(spec: SynthSpec, n: int) -> list[ParallelPair]:
    spec.validate()
    rng = stream(spec.seed, "synth", spec.task)
    words = [f"w{i}" for i in range(spec.vocab_size)]
    weights = np.array([spec.mix.get(op, 0.0) for op in OPERATIONS])
    pairs = []
    for _ in range(n):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [words[i] for i in rng.integers(0, spec.vocab_size, size=length)]
        op = OPERATIONS[int(rng.choice(len(OPERATIONS), p=weights))]
        pairs.append(ParallelPair(src, apply_operation(op, src, spec.substitutions)))
    return pairs
