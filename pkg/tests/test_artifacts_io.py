import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from priorattn import artifacts_io as io
from priorattn import corpus as C
from priorattn import cvae as V
from priorattn import seq2seq as S
from priorattn.rng import stream


def s2s(seed=0, V_=10):
    cfg = S.Seq2SeqConfig(V_, emb_dim=4, hidden_dim=6, max_src_len=5, max_tgt_len=5, init_scale=0.5)
    return S.Seq2SeqParams.init(cfg, stream(seed, "io"))


def cv(seed=0):
    return V.CvaeParams.init(V.CvaeConfig(5, 5, 6, hidden=(7, 3)), stream(seed, "io-cvae"))


@pytest.mark.parametrize("make", [s2s, cv])
def test_checkpoint_round_trip_byte_exact(tmp_path, make):
    p = make()
    io.save_checkpoint(p, tmp_path / "a.bin")
    q = io.load_checkpoint(tmp_path / "a.bin")
    io.save_checkpoint(q, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert type(q) is type(p)
    stored = ("vocab_size", "emb_dim", "hidden_dim", "num_layers", "cond_dim", "latent_dim", "hidden", "max_src_len", "max_tgt_len")
    for f in stored:
        assert getattr(q.config, f, None) == getattr(p.config, f, None)
    for k in p.tensors:
        assert np.array_equal(p[k].data, q[k].data)


def test_checkpoint_header_layout():
    raw = io.checkpoint_bytes(s2s())
    assert raw[:4] == b"ATNC"
    version, kind, d, e, V_, S_, T_, L = struct.unpack_from("<II6I", raw, 4)
    assert (version, kind, d, e, V_, S_, T_, L) == (1, 0, 6, 4, 10, 5, 5, 0)
    (count,) = struct.unpack_from("<Q", raw, 36)
    assert count == len(s2s().tensors)
    (n,) = struct.unpack_from("<I", raw, 44)
    assert raw[48 : 48 + n] == b"embedding"


def test_fresh_seeded_models_identical():
    assert io.checkpoint_bytes(s2s(4)) == io.checkpoint_bytes(s2s(4))
    assert io.checkpoint_bytes(s2s(4)) != io.checkpoint_bytes(s2s(5))


@pytest.mark.parametrize("cut", [3, 10, 50, -1])
def test_truncated_checkpoint_rejected(tmp_path, cut):
    raw = io.checkpoint_bytes(cv())
    (tmp_path / "t.bin").write_bytes(raw[:cut])
    with pytest.raises(io.FormatError, match="offset"):
        io.load_checkpoint(tmp_path / "t.bin")


def test_bad_magic_version_kind(tmp_path):
    raw = bytearray(io.checkpoint_bytes(s2s()))
    f = tmp_path / "x.bin"
    f.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(io.FormatError, match="magic"):
        io.load_checkpoint(f)
    f.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(io.FormatError, match="version"):
        io.load_checkpoint(f)
    f.write_bytes(raw[:8] + struct.pack("<I", 7) + raw[12:])
    with pytest.raises(io.FormatError, match="kind"):
        io.load_checkpoint(f)
    f.write_bytes(bytes(raw) + b"\0")
    with pytest.raises(io.FormatError, match="trailing"):
        io.load_checkpoint(f)


def test_config_tensor_mismatch_rejected(tmp_path):
    raw = bytearray(io.checkpoint_bytes(s2s()))
    raw[16:20] = struct.pack("<I", 11)  # claims V = 11
    (tmp_path / "m.bin").write_bytes(bytes(raw))
    with pytest.raises(io.FormatError, match="do not match"):
        io.load_checkpoint(tmp_path / "m.bin")


def test_dataset_round_trip(tmp_path):
    p = s2s(1)
    rng = np.random.default_rng(0)
    src = np.full((6, 5), C.PAD)
    for b in range(6):
        n = rng.integers(1, 5)
        src[b, :n] = rng.integers(4, 10, size=n)
        src[b, n] = C.EOS
    recs = S.collect_attention_dataset(p, src)
    io.save_attention_dataset(recs, tmp_path / "d.bin", 5, 5, 6)
    data = io.load_attention_dataset(tmp_path / "d.bin")
    assert (data.max_tgt_len, data.max_src_len, data.cond_dim) == (5, 5, 6)
    assert len(data.records) == len(recs)
    for a, b in zip(recs, data.records):
        assert (a.matrix.m, a.matrix.n) == (b.matrix.m, b.matrix.n)
        assert np.array_equal(a.matrix.weights.astype(np.float32), b.matrix.weights)
        assert np.array_equal(a.summary.astype(np.float32), b.summary)
    io.save_attention_dataset(data.records, tmp_path / "e.bin", 5, 5, 6)
    assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "e.bin").read_bytes()
    (tmp_path / "f.bin").write_bytes((tmp_path / "d.bin").read_bytes()[:-4])
    with pytest.raises(io.FormatError):
        io.load_attention_dataset(tmp_path / "f.bin")


def test_pgm_examples(tmp_path):
    io.export_attention_pgm(np.full((3, 4), 0.25), tmp_path / "u.pgm")
    raw = (tmp_path / "u.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    assert np.all(io.read_pgm(tmp_path / "u.pgm") == 64)
    io.export_attention_pgm(np.eye(3), tmp_path / "e.pgm")
    assert np.array_equal(io.read_pgm(tmp_path / "e.pgm"), 255 * np.eye(3, dtype=np.uint8))


@given(st.integers(0, 10_000))
def test_pgm_quantization_bound(seed):
    rng = np.random.default_rng(seed)
    W = rng.uniform(-0.2, 1.2, size=(4, 6))
    px = np.frombuffer(io.pgm_bytes(W)[len(b"P5\n6 4\n255\n"):], dtype=np.uint8).reshape(4, 6)
    assert np.abs(px / 255.0 - np.clip(W, 0, 1)).max() <= 1 / 510 + 1e-12


def test_grid_points():
    g = io.SweepGrid(-2, 2, 8)
    vals = g.values()
    assert len(g.points()) == 64
    assert np.allclose(vals, [-2 + 4 * k / 7 for k in range(8)])
    assert vals[0] == -2 and vals[-1] == 2
    assert io.SweepGrid(0, 0, 1).points() == [(0, 0, 0.0, 0.0)]


def row(z1, z2, bleu, sari=0.0):
    return io.SweepRow(z1, z2, bleu, sari, 0.0, 1.0)


def test_select_best_z_examples():
    assert io.select_best_z([row(1, 1, 5)]) == ((1, 1), 5)
    assert io.select_best_z([row(1, 0, 7), row(0, 1, 7), row(0, 2, 7)]) == ((0, 1), 7)
    rows = [row(0, 0, 9, 10), row(1, 0, 1, 30), row(2, 0, 5, 20)]
    assert io.select_best_z(rows, "sari") == ((1, 0), 30)
    with pytest.raises(ValueError):
        io.select_best_z([], "bleu")


@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 3)), min_size=1, max_size=12), st.randoms())
def test_select_best_z_order_invariant(items, rnd):
    rows = [row(a, b, c) for a, b, c in items]
    best = io.select_best_z(rows)
    rnd.shuffle(rows)
    assert io.select_best_z(rows) == best
    assert best[1] == max(c for _, _, c in items)


def test_csv_format():
    rep = io.SweepReport([io.SweepRow(-2.0, -2 + 4 / 7, 12.3456789, 100.0, -2.62, 0.75)])
    text = rep.to_csv()
    assert text == "z1,z2,bleu,sari,fkgl,length_ratio\n-2,-1.42857,12.3457,100,-2.62,0.75\n"
    assert io.parse_sweep_csv(text)[0].z2 == pytest.approx(-1.42857)


def test_run_sweep_outputs(tmp_path):
    pairs = C.synth_corpus(C.SynthSpec.copy(vocab_size=6, min_len=1, max_len=3, seed=0), 6)
    vocab = C.build_vocab(pairs, 20)
    p = S.Seq2SeqParams.init(S.Seq2SeqConfig(len(vocab), emb_dim=4, hidden_dim=6, max_src_len=5, max_tgt_len=5), stream(0, "a"))
    c = V.CvaeParams.init(V.CvaeConfig(5, 5, 6, hidden=(4, 4), init_scale=1.0), stream(0, "b"))
    rep = io.run_sweep(p, c, pairs, vocab, io.SweepGrid(-2, 2, 3), viz_index=1, out_dir=tmp_path / "a")
    assert len(rep.rows) == 9 and rep.rows[0].z == (-2.0, -2.0) and rep.rows[1].z == (-2.0, 0.0)
    assert sorted(f.name for f in (tmp_path / "a").iterdir()) == sorted(
        ["sweep.csv", "sweep.json"] + [f"z_{i}_{j}.pgm" for i in range(3) for j in range(3)])
    assert io.read_pgm(tmp_path / "a" / "z_0_2.pgm").shape == (5, 5)
    io.run_sweep(p, c, pairs, vocab, io.SweepGrid(-2, 2, 3), viz_index=1, out_dir=tmp_path / "b", jobs=2)
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    with pytest.raises(ValueError):
        io.run_sweep(p, c, pairs, vocab, io.SweepGrid(0, 0, 1), viz_index=99)


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_text(tmp_path / "x" / "f.txt", "hi")
    assert [f.name for f in (tmp_path / "x").iterdir()] == ["f.txt"]
