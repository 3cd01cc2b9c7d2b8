import numpy as np
import pytest
from hypothesis import given, strategies as st

from priorattn import corpus as C

words = st.lists(st.sampled_from(["a", "b", "c", "d", "zz"]), min_size=0, max_size=12)


@pytest.mark.parametrize("text,expected", [("a  b", ["a", "b"]), ("", []), (" x ", ["x"])])
def test_tokenize(text, expected):
    assert C.tokenize(text) == expected


def test_build_vocab_frequency_then_first_occurrence():
    pairs = [C.ParallelPair(["b", "a"], ["a"]), C.ParallelPair(["a"], ["c"])]
    v = C.build_vocab(pairs, 6)
    assert v.itos[:4] == list(C.RESERVED)
    assert v.id("a") == 4 and v.id("b") == 5 and v.id("c") == C.UNK
    v7 = C.build_vocab(pairs, 7)
    assert v7.id("c") == 6  # b and c tie at 1; b seen first


def test_build_vocab_degenerate_cap():
    v = C.build_vocab([C.ParallelPair(["a"], ["a"])], 4)
    assert len(v) == 4 and v.id("a") == C.UNK


def test_encode_examples():
    v = C.build_vocab([C.ParallelPair(list("abcdefghij"), ["a"])], 100)
    assert C.encode_sequence(["a"], v, 4).tolist() == [v.id("a"), C.EOS, C.PAD, C.PAD]
    assert C.encode_sequence(list("abcdefghij"), v, 4).tolist() == [v.id("a"), v.id("b"), v.id("c"), C.EOS]
    assert C.encode_sequence(["oov"], v, 3)[0] == C.UNK


@given(words, st.integers(2, 10))
def test_encode_has_one_eos_and_round_trips(toks, max_len):
    v = C.build_vocab([C.ParallelPair(["a", "b", "c"], ["d"])], 100)
    ids = C.encode_sequence(toks, v, max_len)
    assert len(ids) == max_len
    assert (ids == C.EOS).sum() == 1
    assert ids.tolist().index(C.EOS) == min(len(toks), max_len - 1)
    expected = [t if t in v.stoi else "<unk>" for t in toks[: max_len - 1]]
    assert v.decode(ids) == expected


def test_tsv_parsing(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("a b\tc\n\nx y\tz\tw v\n", encoding="utf-8")
    pairs = C.load_parallel_tsv(f)
    assert pairs[0].source == ["a", "b"] and pairs[0].target == ["c"] and pairs[0].extra_refs == []
    assert pairs[1].references == [["z"], ["w", "v"]]


def test_tsv_error_names_line(tmp_path):
    f = tmp_path / "bad.tsv"
    f.write_text("a\tb\nx\n", encoding="utf-8")
    with pytest.raises(C.CorpusError, match=":2:"):
        C.load_parallel_tsv(f)


def test_tsv_format_round_trip(tmp_path):
    pairs = C.synth_corpus(C.SynthSpec.simplify_mix(seed=3), 20)
    f = tmp_path / "r.tsv"
    f.write_text(C.format_tsv(pairs), encoding="utf-8")
    assert C.load_parallel_tsv(f) == pairs


def test_vocab_save_load(tmp_path):
    v = C.build_vocab(C.synth_corpus(C.SynthSpec.copy(seed=1), 50), 100)
    v.save(tmp_path / "v")
    assert C.Vocab.load(tmp_path / "v").itos == v.itos


def test_synth_identity_copies():
    assert all(p.source == p.target for p in C.synth_corpus(C.SynthSpec.copy(seed=0), 100))


def test_synth_truncate_half():
    spec = C.SynthSpec(task="simplify-mix", mix={"truncate-half": 1.0}, min_len=8, max_len=8)
    assert all(len(p.target) == 4 for p in C.synth_corpus(spec, 20))
    assert C.apply_operation("truncate-half", list("abcde"), {}) == list("abc")


def test_synth_lengths_and_vocab():
    pairs = C.synth_corpus(C.SynthSpec.copy(vocab_size=20, min_len=3, max_len=10, seed=5), 500)
    lens = {len(p.source) for p in pairs}
    assert lens == set(range(3, 11))
    assert {t for p in pairs for t in p.source} <= {f"w{i}" for i in range(20)}


def test_synth_mix_fraction_binomial_bound():
    pairs = C.synth_corpus(C.SynthSpec.simplify_mix(0.5, 0.5, seed=11), 2000)
    frac = np.mean([p.source == p.target for p in pairs])
    assert 0.45 <= frac <= 0.55


def test_synth_deterministic():
    a = C.synth_corpus(C.SynthSpec.simplify_mix(seed=7), 50)
    b = C.synth_corpus(C.SynthSpec.simplify_mix(seed=7), 50)
    c = C.synth_corpus(C.SynthSpec.simplify_mix(seed=8), 50)
    assert a == b and a != c


def test_synth_substitution():
    spec = C.SynthSpec.simplify_mix(0.0, 0.0, 1.0, vocab_size=4, seed=0)
    for p in C.synth_corpus(spec, 30):
        assert p.target == [{"w2": "w0", "w3": "w1"}.get(t, t) for t in p.source]


@pytest.mark.parametrize("kw", [
    dict(mix={"identity": 0.7}),
    dict(mix={"identity": 1.2, "truncate-half": -0.2}),
    dict(mix={"rotate": 1.0}),
    dict(mix={"lexical-substitute": 1.0}),
    dict(min_len=5, max_len=3),
])
def test_synth_spec_errors(kw):
    with pytest.raises(C.CorpusError):
        C.synth_corpus(C.SynthSpec(task="simplify-mix", **kw), 1)
