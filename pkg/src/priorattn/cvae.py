"""Conditional VAE over attention matrices.

The encoder maps a flattened attention matrix plus the source-sentence
encoding to a diagonal Gaussian posterior over the latent code; the decoder
maps (code, source encoding) to per-row logits whose row softmax is a
generated attention matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .optim import Adam
from .seq2seq import AttentionMatrix, AttentionRecord, Seq2SeqParams, encode_source
from .tensor import Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class CvaeConfig:
    max_tgt_len: int
    max_src_len: int
    cond_dim: int
    latent_dim: int = 2
    hidden: tuple[int, ...] = (128, 128)
    init_scale: float = 0.1

    @property
    def cells(self) -> int:
        return self.max_tgt_len * self.max_src_len


@dataclass
class CvaeParams:
    config: CvaeConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    @classmethod
    def init(cls, config: CvaeConfig, rng: np.random.Generator, dtype=None) -> "CvaeParams":
        dtype = dtype or T.default_dtype()
        s = config.init_scale
        ts: dict[str, Tensor] = {}

        def linear(name, n_in, n_out):
            ts[f"{name}.W"] = T.parameter(rng.uniform(-s, s, size=(n_in, n_out)), dtype=dtype)
            ts[f"{name}.b"] = T.parameter(np.zeros(n_out), dtype=dtype)

        L, d = config.latent_dim, config.cond_dim
        widths = [config.cells + d, *config.hidden]
        for k in range(len(config.hidden)):
            linear(f"enc.{k}", widths[k], widths[k + 1])
        linear("enc.mu", widths[-1], L)
        linear("enc.logvar", widths[-1], L)
        widths = [L + d, *config.hidden]
        for k in range(len(config.hidden)):
            linear(f"dec.{k}", widths[k], widths[k + 1])
        linear("dec.out", widths[-1], config.cells)
        for name, t in ts.items():
            t.name = name
        return cls(config, ts)


@dataclass
class LatentPosterior:
    mu: Tensor
    logvar: Tensor


def _mlp(x: Tensor, params: CvaeParams, prefix: str) -> Tensor:
    for k in range(len(params.config.hidden)):
        x = T.tanh(x @ params[f"{prefix}.{k}.W"] + params[f"{prefix}.{k}.b"])
    return x


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def cvae_encode(A, h_s, params: CvaeParams) -> LatentPosterior:
    """Posterior over the code given attention matrices [B, T, S] and encodings [B, d]."""
    cfg = params.config
    dtype = params["enc.0.W"].dtype
    if isinstance(A, AttentionMatrix):
        A = A.weights
    A = _as_tensor(A, dtype)
    h_s = _as_tensor(h_s, dtype)
    if A.ndim == 2:
        A = A.reshape(1, *A.shape)
    if h_s.ndim == 1:
        h_s = h_s.reshape(1, h_s.shape[0])
    if A.shape[1:] != (cfg.max_tgt_len, cfg.max_src_len) or h_s.shape[1] != cfg.cond_dim or A.shape[0] != h_s.shape[0]:
        raise ValueError(
            f"cvae_encode: got A {A.shape} and h_s {h_s.shape}, expected "
            f"[B, {cfg.max_tgt_len}, {cfg.max_src_len}] and [B, {cfg.cond_dim}]"
        )
    x = T.concat([A.reshape(A.shape[0], cfg.cells), h_s], axis=-1)
    hidden = _mlp(x, params, "enc")
    mu = hidden @ params["enc.mu.W"] + params["enc.mu.b"]
    logvar = T.clip(hidden @ params["enc.logvar.W"] + params["enc.logvar.b"], LOGVAR_MIN, LOGVAR_MAX)
    return LatentPosterior(mu, logvar)


def reparameterize(post: LatentPosterior, eps) -> Tensor:
    eps = _as_tensor(eps, post.mu.dtype)
    return post.mu + T.exp(post.logvar * 0.5) * eps


def kl_to_standard_normal(post: LatentPosterior) -> Tensor:
    """KL(q || N(0, I)) per example, summed over latent dimensions."""
    mu, lv = post.mu, post.logvar
    return ((mu * mu + T.exp(lv) - lv - 1.0) * 0.5).sum(axis=-1)


def cvae_decode_logits(z, h_s, params: CvaeParams) -> Tensor:
    cfg = params.config
    dtype = params["dec.0.W"].dtype
    z = _as_tensor(z, dtype)
    h_s = _as_tensor(h_s, dtype)
    if z.ndim == 1:
        z = z.reshape(1, z.shape[0])
    if h_s.ndim == 1:
        h_s = h_s.reshape(1, h_s.shape[0])
    if z.shape[1] != cfg.latent_dim:
        raise ValueError(f"latent code has dimension {z.shape[1]}, model expects {cfg.latent_dim}")
    if z.shape[0] != h_s.shape[0]:
        z = Tensor(np.broadcast_to(z.data, (h_s.shape[0], cfg.latent_dim)).copy()) if z.shape[0] == 1 else z
    hidden = _mlp(T.concat([z, h_s], axis=-1), params, "dec")
    logits = hidden @ params["dec.out.W"] + params["dec.out.b"]
    return logits.reshape(logits.shape[0], cfg.max_tgt_len, cfg.max_src_len)


def cvae_decode(z, h_s, params: CvaeParams) -> np.ndarray:
    """Generated attention, row-stochastic, shape [B, T, S]."""
    with T.no_grad():
        return T.softmax_rows(cvae_decode_logits(z, h_s, params)).data


def row_mask(m: np.ndarray, T_max: int) -> np.ndarray:
    return (np.arange(T_max)[None, :] < np.asarray(m)[:, None]).astype(np.float64)


def reconstruction_ce(A: np.ndarray | Tensor, m: np.ndarray, log_probs: Tensor, reduction: str = "mean") -> Tensor:
    """Per-example cross-entropy -sum_i A_ji log p_ji over rows j < m.

    ``reduction="mean"`` averages over the valid rows, ``"sum"`` adds them up
    (the full log-likelihood of the matrix under independent row categoricals).
    """
    m = np.asarray(m)
    if (m <= 0).any():
        raise ValueError("every attention matrix needs m >= 1 valid rows")
    A = _as_tensor(A, log_probs.dtype)
    rows = row_mask(m, log_probs.shape[1]).astype(log_probs.dtype)
    per_row = -(A * log_probs).sum(axis=-1)
    total = (per_row * Tensor(rows)).sum(axis=-1)
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total * Tensor((1.0 / m).astype(log_probs.dtype))


@dataclass
class ElboTerms:
    loss: Tensor
    recon: Tensor
    kl: Tensor


def elbo_loss(A, m, logits: Tensor, post: LatentPosterior, beta: float = 1.0, reduction: str = "mean") -> ElboTerms:
    """Batch-mean negative ELBO: row cross-entropy over valid rows plus beta * KL."""
    recon = reconstruction_ce(A, m, T.log_softmax(logits), reduction)
    kl = kl_to_standard_normal(post)
    B = recon.shape[0]
    loss = (recon + kl * beta).sum() * (1.0 / B)
    return ElboTerms(loss, recon.sum() * (1.0 / B), kl.sum() * (1.0 / B))


def mean_attention_baseline(A: np.ndarray) -> np.ndarray:
    """Row-normalized elementwise mean of attention matrices [N, T, S]."""
    mean = A.astype(np.float64).mean(axis=0)
    sums = mean.sum(axis=-1, keepdims=True)
    uniform = np.full_like(mean, 1.0 / mean.shape[-1])
    return np.where(sums > 0, mean / np.where(sums > 0, sums, 1.0), uniform)


def baseline_ce(A: np.ndarray, m: np.ndarray, baseline: np.ndarray, floor: float = 1e-12) -> float:
    logp = np.log(np.maximum(baseline, floor))
    per_row = -(A.astype(np.float64) * logp[None]).sum(axis=-1)
    return float(((per_row * row_mask(m, A.shape[1])).sum(axis=-1) / m).mean())


def heldout_recon(params: CvaeParams, A: np.ndarray, m: np.ndarray, h: np.ndarray) -> float:
    """Mean reconstruction cross-entropy decoding from the posterior mean."""
    with T.no_grad():
        post = cvae_encode(A, h, params)
        logp = T.log_softmax(cvae_decode_logits(post.mu, h, params))
        return float(reconstruction_ce(A, m, logp).data.astype(np.float64).mean())


def stack_records(records: Sequence[AttentionRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.stack([r.matrix.weights for r in records])
    m = np.array([r.matrix.m for r in records], dtype=np.int64)
    h = np.stack([r.summary for r in records])
    return A, m, h


def complete_to_eos(A: AttentionMatrix) -> AttentionMatrix:
    """Full-height target: the EOS-emitting row and every row after it point at source EOS.

    The online decoder decides to stop while still attending the current
    source position, so a truncated output and a full copy look identical up
    to row m-1. Pinning row m-1 onward to the source EOS position makes the
    stopping point visible in the matrix itself, which is what lets a prior
    matrix move the decoder's stopping decision.
    """
    W = np.array(A.weights, copy=True)
    W[A.m - 1 :] = 0.0
    W[A.m - 1 :, A.n - 1] = 1.0
    return AttentionMatrix(W, W.shape[0], A.n)


def complete_records(records: Sequence[AttentionRecord]) -> list[AttentionRecord]:
    return [AttentionRecord(complete_to_eos(r.matrix), r.summary) for r in records]


@dataclass
class CvaeTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 3e-3
    beta: float = 1.0
    kl_warmup: bool = False
    reduction: str = "sum"
    # train on complete_to_eos targets instead of the raw valid rows
    eos_completion: bool = True


@dataclass
class CvaeHistory:
    rows: list[dict] = field(default_factory=list)


def train_cvae(
    records: Sequence[AttentionRecord],
    model_config: CvaeConfig,
    config: CvaeTrainConfig,
    rng_init: np.random.Generator,
    rng_train: np.random.Generator,
    heldout: Sequence[AttentionRecord] | None = None,
    log=None,
) -> tuple[CvaeParams, list[dict]]:
    """Minibatch ADAM on the negative ELBO with one fresh eps per example per step.

    With ``kl_warmup`` the KL weight ramps linearly from 0 to ``beta`` over the
    first epoch. With ``eos_completion`` both training and held-out matrices
    are passed through ``complete_to_eos`` first.
    """
    if not records:
        raise ValueError("empty attention dataset")
    if config.eos_completion:
        records = complete_records(records)
        heldout = complete_records(heldout) if heldout else heldout
    params = CvaeParams.init(model_config, rng_init)
    A, m, h = stack_records(records)
    held = stack_records(heldout) if heldout else None
    opt = Adam(params.parameters(), lr=config.lr)
    L = model_config.latent_dim
    n = len(A)
    steps_per_epoch = -(-n // config.batch_size)
    history = []

    def evaluate(epoch, recon=None, kl=None):
        row = {"epoch": epoch} if recon is None else {"epoch": epoch, "recon": recon, "kl": kl}
        if held is not None:
            row["heldout_recon"] = heldout_recon(params, *held)
        history.append(row)
        if log is not None:
            log(row)

    if held is not None:
        evaluate(0)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng_train.permutation(n)
        rec_sum = kl_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            beta = config.beta
            if config.kl_warmup:
                beta = config.beta * min(1.0, step / steps_per_epoch)
            eps = rng_train.standard_normal((len(idx), L))
            opt.zero_grad()
            post = cvae_encode(A[idx], h[idx], params)
            z = reparameterize(post, eps)
            terms = elbo_loss(A[idx], m[idx], cvae_decode_logits(z, h[idx], params), post, beta, config.reduction)
            T.backward(terms.loss)
            opt.step()
            step += 1
            rec_sum += terms.recon.item() * len(idx)
            kl_sum += terms.kl.item() * len(idx)
        evaluate(epoch, rec_sum / n, kl_sum / n)
    return params, history


def generate_prior_attention(src: np.ndarray, s2s: Seq2SeqParams, cvae: CvaeParams, z) -> np.ndarray:
    """Attention matrices [B, T, S] for padded sources [B, S] under one code ``z``."""
    src = np.atleast_2d(src)
    with T.no_grad():
        h_s = encode_source(src, s2s).summary.data
    return cvae_decode(np.asarray(z), h_s, cvae)
