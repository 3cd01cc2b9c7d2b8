import numpy as np
import pytest
from hypothesis import given, strategies as st

from priorattn import cvae as V
from priorattn import tensor as T
from priorattn.rng import stream
from priorattn.seq2seq import AttentionMatrix, AttentionRecord

TM, SM, D, L = 4, 5, 6, 2


def params(seed=0, scale=0.3, dtype=None):
    return V.CvaeParams.init(V.CvaeConfig(TM, SM, D, latent_dim=L, hidden=(16, 16), init_scale=scale), stream(seed, "cvae"), dtype)


def post(mu, logvar):
    return V.LatentPosterior(T.tensor(np.atleast_2d(mu), dtype=np.float64), T.tensor(np.atleast_2d(logvar), dtype=np.float64))


def random_A(rng, B, m=None):
    A = rng.dirichlet(np.ones(SM), size=(B, TM))
    m = rng.integers(1, TM + 1, size=B) if m is None else m
    A[np.arange(TM)[None, :] >= m[:, None]] = 0
    return A, m


def test_kl_examples():
    assert V.kl_to_standard_normal(post([0.0, 0.0], [0.0, 0.0])).data[0] == 0.0
    assert V.kl_to_standard_normal(post([1.0], [0.0])).data[0] == pytest.approx(0.5)
    assert V.kl_to_standard_normal(post([0.0], [2 * np.log(2)])).data[0] == pytest.approx(1.5 - np.log(2), abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_kl_nonnegative(mu, lv):
    assert V.kl_to_standard_normal(post(mu, lv)).data[0] >= -1e-12


def test_reparameterize_examples():
    p = post([1.0], [2 * np.log(2)])
    assert V.reparameterize(p, [[0.5]]).data[0, 0] == pytest.approx(2.0)
    assert V.reparameterize(p, [[0.0]]).data[0, 0] == 1.0
    assert V.reparameterize(post([1.0], [0.0]), [[0.3]]).data[0, 0] == pytest.approx(1.3)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_reparameterize_affine_in_eps(e):
    p = post([0.2, -1.0], [0.5, -2.0])
    e1, e2 = np.array([e[:2]]), np.array([e[2:]])
    diff = V.reparameterize(p, e1).data - V.reparameterize(p, e2).data
    assert np.allclose(diff, np.exp(0.5 * np.array([0.5, -2.0])) * (e1 - e2))


def test_zero_heads_give_standard_posterior_and_uniform_decode():
    p = params()
    for k in ("enc.mu", "enc.logvar", "dec.out"):
        p[f"{k}.W"].data[:] = 0
    rng = np.random.default_rng(0)
    A, _ = random_A(rng, 3)
    q = V.cvae_encode(A, rng.normal(size=(3, D)), p)
    assert not q.mu.data.any() and not q.logvar.data.any()
    out = V.cvae_decode(rng.normal(size=(3, L)), rng.normal(size=(3, D)), p)
    assert np.allclose(out, 1.0 / SM)


def test_encode_shape_errors():
    with pytest.raises(ValueError, match="expected"):
        V.cvae_encode(np.zeros((1, TM + 1, SM)), np.zeros((1, D)), params())
    with pytest.raises(ValueError):
        V.cvae_decode(np.zeros((1, L + 1)), np.zeros((1, D)), params())


@given(st.integers(0, 10_000))
def test_decode_rows_stochastic_and_deterministic(seed):
    rng = np.random.default_rng(seed)
    p = params(seed % 5, scale=1.0)
    z, h = rng.normal(size=(2, L)) * 3, rng.normal(size=(2, D)) * 3
    out = V.cvae_decode(z, h, p)
    assert (out >= 0).all() and np.allclose(out.sum(-1), 1.0, atol=1e-6)
    assert np.array_equal(out, V.cvae_decode(z, h, p))


def test_recon_uniform_one_hot_is_log_s():
    A = np.zeros((1, TM, SM))
    A[0, np.arange(TM), [0, 3, 1, 2]] = 1
    logits = T.tensor(np.zeros((1, TM, SM)), dtype=np.float64)
    for m in (1, 3, 4):
        assert V.reconstruction_ce(A, np.array([m]), T.log_softmax(logits)).data[0] == pytest.approx(np.log(SM))
    assert V.reconstruction_ce(A, np.array([3]), T.log_softmax(logits), "sum").data[0] == pytest.approx(3 * np.log(SM))


def test_rows_beyond_m_ignored_and_m_zero_rejected():
    rng = np.random.default_rng(1)
    A, m = random_A(rng, 1, np.array([2]))
    logits = rng.normal(size=(1, TM, SM))
    other = logits.copy()
    other[0, 2:] = rng.normal(size=(TM - 2, SM)) * 5
    f = lambda lg: V.reconstruction_ce(A, m, T.log_softmax(T.tensor(lg, dtype=np.float64))).data[0]
    assert f(logits) == pytest.approx(f(other))
    with pytest.raises(ValueError):
        V.reconstruction_ce(A, np.array([0]), T.log_softmax(T.tensor(logits)))


def test_beta_zero_is_recon_only():
    rng = np.random.default_rng(2)
    A, m = random_A(rng, 3)
    q = post(rng.normal(size=(3, L)), rng.normal(size=(3, L)))
    logits = T.tensor(rng.normal(size=(3, TM, SM)), dtype=np.float64)
    terms = V.elbo_loss(A, m, logits, q, beta=0.0)
    assert terms.loss.item() == pytest.approx(terms.recon.item())
    full = V.elbo_loss(A, m, logits, q, beta=1.0)
    assert full.loss.item() == pytest.approx(full.recon.item() + full.kl.item())


@given(st.integers(0, 10_000))
def test_recon_minimized_at_target(seed):
    rng = np.random.default_rng(seed)
    A, m = random_A(rng, 1, np.array([TM]))
    A = np.clip(A, 1e-6, None)
    A /= A.sum(-1, keepdims=True)
    f = lambda lg: V.reconstruction_ce(A, m, T.log_softmax(T.tensor(lg, dtype=np.float64))).data[0]
    best = f(np.log(A))
    for _ in range(5):
        assert f(np.log(A) + rng.normal(size=A.shape) * 0.3) >= best - 1e-12


def test_complete_to_eos():
    W = np.zeros((TM, SM))
    W[0, 0] = W[1, 1] = 1.0
    out = V.complete_to_eos(AttentionMatrix(W, 2, 3))
    assert out.m == TM and out.n == 3
    assert out.weights[0, 0] == 1 and out.weights[1:, 2].tolist() == [1, 1, 1]
    assert np.allclose(out.weights.sum(-1), 1.0)
    assert W[1, 1] == 1.0  # input untouched


def test_baseline_oracle():
    A = np.zeros((2, 2, 2))
    A[0] = [[1, 0], [0, 1]]
    A[1] = [[1, 0], [1, 0]]
    base = V.mean_attention_baseline(A)
    assert np.allclose(base, [[1, 0], [0.5, 0.5]])
    ce = V.baseline_ce(A, np.array([2, 2]), base)
    assert ce == pytest.approx(np.log(2) / 2)


def _records(rng, n):
    recs = []
    for _ in range(n):
        A, m = random_A(rng, 1)
        recs.append(AttentionRecord(AttentionMatrix(A[0], int(m[0]), SM), rng.normal(size=D)))
    return recs


def test_train_cvae_sanity_and_determinism():
    rng = np.random.default_rng(3)
    recs = _records(rng, 64)
    cfg = V.CvaeConfig(TM, SM, D, latent_dim=L, hidden=(16, 16))
    tc = V.CvaeTrainConfig(epochs=5, batch_size=16, lr=1e-2, kl_warmup=True)
    out = [V.train_cvae(recs[:48], cfg, tc, stream(0, "i"), stream(0, "t"), heldout=recs[48:]) for _ in range(2)]
    hist = out[0][1]
    assert hist[-1]["heldout_recon"] < hist[0]["heldout_recon"]
    assert all(r["kl"] >= 0 for r in hist[1:]) and "kl" not in hist[0]
    assert hist == out[1][1]
    assert np.array_equal(out[0][0]["dec.out.W"].data, out[1][0]["dec.out.W"].data)


def test_train_cvae_spec_mode():
    recs = _records(np.random.default_rng(4), 20)
    tc = V.CvaeTrainConfig(epochs=2, batch_size=8, reduction="mean", eos_completion=False)
    _, hist = V.train_cvae(recs, V.CvaeConfig(TM, SM, D, hidden=(8, 8)), tc, stream(0, "i"), stream(0, "t"))
    assert len(hist) == 2 and all(np.isfinite(r["recon"]) for r in hist)


def test_train_cvae_empty():
    with pytest.raises(ValueError):
        V.train_cvae([], V.CvaeConfig(TM, SM, D), V.CvaeTrainConfig(), stream(0), stream(1))
