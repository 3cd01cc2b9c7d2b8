"""Central finite-difference checks of analytic gradients (64-bit)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

# relative errors of entries below this magnitude are measured against it
REL_FLOOR = 1e-4


def numerical_grad(f: Callable[[], Tensor], p: Tensor, h: float = 1e-5, max_entries: int | None = None,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of scalar ``f()`` w.r.t. entries of ``p``.

    Returns (flat indices checked, numerical gradient at those indices).
    """
    flat = p.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
    out = np.empty(len(idx))
    with T.no_grad():
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f().item()
            flat[i] = old - h
            fm = f().item()
            flat[i] = old
            out[k] = (fp - fm) / (2 * h)
    return idx, out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_param: str

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_rel_error <= tol


def check_gradients(name: str, f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = 64, rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare ``backward`` gradients of ``f`` against central differences."""
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters, got {p.dtype}")
        p.grad = None
    T.backward(f())
    worst, worst_name = 0.0, ""
    for k, p in enumerate(params):
        idx, num = numerical_grad(f, p, h, max_entries, rng)
        ana = np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1)[idx]
        err = relative_error(ana, num)
        if err >= worst:
            worst, worst_name = err, p.name or f"param{k}"
    return GradCheckResult(name, worst, worst_name)


def gradient_suite(seed: int = 0, max_entries: int | None = 64) -> list[GradCheckResult]:
    """Check LSTM cell, bilinear attention, teacher-forced loss and the ELBO on tiny shapes.

    Shapes: d = 8, e = 6, vocabulary 9, S_max = T_max = 4, L = 2.
    """
    from .corpus import EOS, PAD
    from .cvae import CvaeConfig, CvaeParams, cvae_decode_logits, cvae_encode, elbo_loss, reparameterize
    from .rng import stream
    from .seq2seq import Seq2SeqConfig, Seq2SeqParams, attention_weights, lstm_cell_step, pad_mask, teacher_forced_loss

    results = []
    with T.precision(np.float64):
        rng = stream(seed, "gradcheck")
        pick = stream(seed, "gradcheck", "entries")
        B, d, e, S, T_max, V, L = 3, 8, 6, 4, 4, 9, 2

        x = T.tensor(rng.normal(size=(B, e)))
        h0 = T.tensor(rng.normal(size=(B, d)) * 0.5)
        c0 = T.tensor(rng.normal(size=(B, d)) * 0.5)
        W = T.parameter(rng.uniform(-0.5, 0.5, size=(e + d, 4 * d)))
        b = T.parameter(rng.uniform(-0.5, 0.5, size=4 * d))
        W.name, b.name = "W", "b"
        proj_h, proj_c = rng.normal(size=d), rng.normal(size=d)

        def lstm():
            h, c = lstm_cell_step(x, h0, c0, W, b)
            return (h * T.tensor(proj_h)).sum() + (c * T.tensor(proj_c)).sum()

        results.append(check_gradients("lstm_cell", lstm, [W, b], max_entries=max_entries, rng=pick))

        h_t = T.parameter(rng.normal(size=(B, d)))
        states = T.parameter(rng.normal(size=(B, S, d)))
        W_a = T.parameter(rng.uniform(-0.5, 0.5, size=(d, d)))
        h_t.name, states.name, W_a.name = "h_t", "states", "W_a"
        mask = pad_mask(np.array([4, 2, 3]), S, np.float64)
        proj_a = rng.normal(size=(B, S))

        def attention():
            return (attention_weights(h_t, states, W_a, mask) * T.tensor(proj_a)).sum()

        results.append(check_gradients("bilinear_attention", attention, [h_t, states, W_a], max_entries=max_entries, rng=pick))

        s2s = Seq2SeqParams.init(Seq2SeqConfig(V, emb_dim=e, hidden_dim=d, max_src_len=S, max_tgt_len=T_max, init_scale=0.3), rng)
        src = np.array([[4, 5, 6, EOS], [7, EOS, PAD, PAD], [8, 4, EOS, PAD]])
        tgt = np.array([[4, 5, EOS, PAD], [7, 8, 6, EOS], [8, EOS, PAD, PAD]])
        results.append(check_gradients("teacher_forced_loss", lambda: teacher_forced_loss(src, tgt, s2s),
                                       s2s.parameters(), max_entries=max_entries, rng=pick))

        cv = CvaeParams.init(CvaeConfig(T_max, S, d, latent_dim=L, hidden=(8, 8), init_scale=0.3), rng)
        A = rng.dirichlet(np.ones(S), size=(B, T_max))
        m = np.array([4, 2, 3])
        A[np.arange(T_max)[None, :] >= m[:, None]] = 0.0
        h_s = rng.normal(size=(B, d))
        eps = rng.normal(size=(B, L))

        def elbo():
            post = cvae_encode(A, h_s, cv)
            return elbo_loss(A, m, cvae_decode_logits(reparameterize(post, eps), h_s, cv), post).loss

        results.append(check_gradients("elbo", elbo, cv.parameters(), max_entries=max_entries, rng=pick))
    return results
