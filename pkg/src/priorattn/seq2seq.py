"""Two-layer LSTM encoder-decoder with bilinear global attention.

Decoding runs in one of two attention modes:

* online: alignment weights come from comparing the decoder state with every
  encoder state through the bilinear matrix ``attn.W``;
* prior: alignment rows are supplied up front (e.g. generated by the CVAE)
  and used verbatim in place of the online computation.

All functions work on batches; ``greedy_translate`` is the single-sentence
convenience wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, PAD
from .tensor import Tensor

PRIOR_TOL = 1e-4


class VocabularyError(ValueError):
    pass


class InvalidPriorAttention(ValueError):
    pass


@dataclass
class Seq2SeqConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden_dim: int = 64
    num_layers: int = 2
    max_src_len: int = 20
    max_tgt_len: int = 20
    init_scale: float = 0.1
    emb_init_scale: float = 0.1


@dataclass
class Seq2SeqParams:
    config: Seq2SeqConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    @classmethod
    def init(cls, config: Seq2SeqConfig, rng: np.random.Generator, dtype=None) -> "Seq2SeqParams":
        dtype = dtype or T.default_dtype()
        V, e, d, s = config.vocab_size, config.emb_dim, config.hidden_dim, config.init_scale

        def u(*shape):
            return T.parameter(rng.uniform(-s, s, size=shape), dtype=dtype)

        def forget_bias():
            b = np.zeros(4 * d)
            b[d : 2 * d] = 1.0
            return T.parameter(b, dtype=dtype)

        ts: dict[str, Tensor] = {
            "embedding": T.parameter(rng.uniform(-config.emb_init_scale, config.emb_init_scale, size=(V, e)), dtype=dtype)
        }
        for side in ("enc", "dec"):
            for layer in range(config.num_layers):
                in_dim = e if layer == 0 else d
                ts[f"{side}.{layer}.W"] = u(in_dim + d, 4 * d)
                ts[f"{side}.{layer}.b"] = forget_bias()
        ts["attn.W"] = u(d, d)
        ts["combine.W"] = u(2 * d, d)
        ts["combine.b"] = T.parameter(np.zeros(d), dtype=dtype)
        ts["out.W"] = u(d, V)
        ts["out.b"] = T.parameter(np.zeros(V), dtype=dtype)
        for name, t in ts.items():
            t.name = name
        return cls(config, ts)


@dataclass
class AttentionMatrix:
    """Row-stacked alignment vectors; rows at or beyond ``m`` are zero."""

    weights: np.ndarray
    m: int
    n: int

    def validate(self, tol: float = 1e-5) -> None:
        w = self.weights
        if (w < 0).any():
            raise ValueError("attention matrix has negative entries")
        sums = w[: self.m].sum(axis=1)
        if np.abs(sums - 1.0).max(initial=0.0) > tol:
            raise ValueError(f"attention rows do not sum to 1 (worst {sums.min()}..{sums.max()})")
        if np.any(w[self.m :] != 0):
            raise ValueError("rows beyond m must be zero")


@dataclass
class EncoderStates:
    states: Tensor  # [B, S, d] top-layer hidden states
    summary: Tensor  # [B, d] top-layer state at position n-1
    lengths: np.ndarray  # [B] true lengths incl. EOS
    carry: list[tuple[Tensor, Tensor]]  # per-layer (h, c) at position n-1


@dataclass
class DecoderStepOutput:
    logits: Tensor | None
    alignment: Tensor
    context: Tensor
    attentional: Tensor
    carry: list[tuple[Tensor, Tensor]] = field(default_factory=list)


def source_lengths(ids: np.ndarray) -> np.ndarray:
    ids = np.atleast_2d(ids)
    has_eos = (ids == EOS).any(axis=1)
    if not has_eos.all():
        raise ValueError("every source sequence must contain EOS")
    return (ids == EOS).argmax(axis=1) + 1


def lstm_cell_step(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step, gates ordered input, forget, candidate, output."""
    d = h.shape[-1]
    z = T.concat([x, h], axis=-1) @ W + b
    i = T.sigmoid(z[..., 0:d])
    f = T.sigmoid(z[..., d : 2 * d])
    g = T.tanh(z[..., 2 * d : 3 * d])
    o = T.sigmoid(z[..., 3 * d : 4 * d])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.max() >= vocab_size or ids.min() < 0):
        raise VocabularyError(f"token id {int(ids.max())} outside vocabulary of size {vocab_size}")


def encode_source(ids: np.ndarray, params: Seq2SeqParams) -> EncoderStates:
    """Run the stacked encoder over padded ids of shape [B, S] (or [S])."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    cfg = params.config
    _check_ids(ids, cfg.vocab_size)
    lengths = source_lengths(ids)
    B, S = ids.shape
    d = cfg.hidden_dim
    dtype = params["embedding"].dtype
    rows = np.arange(B)
    emb = params["embedding"][ids]
    layer_in = [emb[:, t] for t in range(S)]
    carry = []
    for layer in range(cfg.num_layers):
        W, b = params[f"enc.{layer}.W"], params[f"enc.{layer}.b"]
        h = c = Tensor(np.zeros((B, d), dtype=dtype))
        hs, cs = [], []
        for t in range(S):
            h, c = lstm_cell_step(layer_in[t], h, c, W, b)
            hs.append(h)
            cs.append(c)
        H = T.stack(hs, axis=1)
        C = T.stack(cs, axis=1)
        carry.append((H[rows, lengths - 1], C[rows, lengths - 1]))
        layer_in = hs
    return EncoderStates(states=H, summary=carry[-1][0], lengths=lengths, carry=carry)


def pad_mask(lengths: np.ndarray, S: int, dtype) -> np.ndarray:
    mask = np.zeros((len(lengths), S), dtype=dtype)
    mask[np.arange(S)[None, :] >= lengths[:, None]] = -np.inf
    return mask


def attention_weights(h_t: Tensor, states: Tensor, W_a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over source positions of ``h_t^T W_a h_i``; ``mask`` holds 0 / -inf."""
    q = (h_t @ W_a).reshape(h_t.shape[0], h_t.shape[1], 1)
    scores = (states @ q).reshape(states.shape[0], states.shape[1])
    if mask is not None:
        scores = scores + Tensor(mask)
    return T.softmax_rows(scores)


def context_vector(a: Tensor, states: Tensor) -> Tensor:
    B, S = a.shape
    return (a.reshape(B, 1, S) @ states).reshape(B, states.shape[2])


def check_prior_rows(rows: np.ndarray, active: np.ndarray | None = None, tol: float = PRIOR_TOL) -> None:
    rows = rows if active is None else rows[active]
    if rows.size == 0:
        return
    if (rows < 0).any():
        raise InvalidPriorAttention("prior attention row has negative entries")
    sums = rows.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        raise InvalidPriorAttention(f"prior attention row sums to {float(sums[bad][0]):.6g}, outside 1 +/- {tol}")


def renormalize_prior(rows: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Zero positions at or beyond each source length and rescale rows to sum 1."""
    out = rows * (np.arange(rows.shape[-1])[None, :] < lengths[:, None])
    sums = out.sum(axis=-1, keepdims=True)
    return np.divide(out, sums, out=np.zeros_like(out), where=sums > 0)


def decode_step(
    prev: np.ndarray,
    carry: list[tuple[Tensor, Tensor]],
    enc: EncoderStates,
    params: Seq2SeqParams,
    prior_row: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    with_logits: bool = True,
) -> DecoderStepOutput:
    x = params["embedding"][np.asarray(prev, dtype=np.int64)]
    new_carry = []
    for layer, (h, c) in enumerate(carry):
        h, c = lstm_cell_step(x, h, c, params[f"dec.{layer}.W"], params[f"dec.{layer}.b"])
        new_carry.append((h, c))
        x = h
    h_t = x
    if prior_row is None:
        a = attention_weights(h_t, enc.states, params["attn.W"], mask)
    else:
        a = Tensor(np.asarray(prior_row, dtype=h_t.dtype))
    ctx = context_vector(a, enc.states)
    h_tilde = T.tanh(T.concat([ctx, h_t], axis=-1) @ params["combine.W"] + params["combine.b"])
    logits = h_tilde @ params["out.W"] + params["out.b"] if with_logits else None
    return DecoderStepOutput(logits, a, ctx, h_tilde, new_carry)


def teacher_forced_loss(src: np.ndarray, tgt: np.ndarray, params: Seq2SeqParams) -> Tensor:
    """Mean NLL over non-pad target tokens (EOS included), gold inputs fed to the decoder."""
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    tgt = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
    if src.shape[0] == 0:
        raise ValueError("empty batch")
    if src.shape[0] != tgt.shape[0]:
        raise ValueError(f"batch size mismatch: {src.shape[0]} sources, {tgt.shape[0]} targets")
    _check_ids(tgt, params.config.vocab_size)
    # padding beyond the longest sequence in the batch is masked out exactly
    lengths = source_lengths(src)
    src = src[:, : lengths.max()]
    keep = tgt != PAD
    t_len = int(keep.sum(axis=1).max())
    tgt = tgt[:, :t_len]
    keep = keep[:, :t_len]
    enc = encode_source(src, params)
    mask = pad_mask(enc.lengths, src.shape[1], params["embedding"].dtype)
    B = src.shape[0]
    dec_in = np.concatenate([np.full((B, 1), BOS), tgt[:, :-1]], axis=1)
    carry = enc.carry
    outs = []
    for j in range(t_len):
        step = decode_step(dec_in[:, j], carry, enc, params, mask=mask, with_logits=False)
        carry = step.carry
        outs.append(step.attentional)
    d = params.config.hidden_dim
    H = T.stack(outs, axis=1).reshape(B * t_len, d)
    logp = T.log_softmax(H @ params["out.W"] + params["out.b"])
    flat = tgt.reshape(-1)
    weights = keep.reshape(-1).astype(logp.dtype)
    picked = logp[np.arange(B * t_len), flat]
    return -(picked * Tensor(weights)).sum() * (1.0 / weights.sum())


def greedy_translate_batch(
    src: np.ndarray,
    params: Seq2SeqParams,
    prior: np.ndarray | None = None,
    mask_pads: bool = True,
    renorm_prior: bool = False,
    max_steps: int | None = None,
) -> list[tuple[list[int], AttentionMatrix]]:
    """Greedy decoding of a batch of padded sources.

    ``prior`` (shape [B, T, S]) switches to prior mode: row ``j`` of each
    matrix drives decoding step ``j``. Returns per sentence the emitted ids
    (EOS excluded) and the attention matrix actually used.
    """
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    cfg = params.config
    max_steps = cfg.max_tgt_len if max_steps is None else max_steps
    B, S = src.shape
    if prior is not None:
        prior = np.asarray(prior)
        if prior.ndim == 2:
            prior = prior[None]
        if prior.shape[0] != B or prior.shape[2] != S or prior.shape[1] < max_steps:
            raise InvalidPriorAttention(f"prior attention shape {prior.shape} does not fit batch {B}x{max_steps}x{S}")
    with T.no_grad():
        enc = encode_source(src, params)
        dtype = enc.states.dtype
        mask = pad_mask(enc.lengths, S, dtype) if mask_pads else None
        carry = enc.carry
        prev = np.full(B, BOS, dtype=np.int64)
        finished = np.zeros(B, dtype=bool)
        steps = np.zeros(B, dtype=np.int64)
        A = np.zeros((B, max_steps, S), dtype=dtype)
        tokens: list[list[int]] = [[] for _ in range(B)]
        for j in range(max_steps):
            if finished.all():
                break
            row = None
            active = ~finished
            if prior is not None:
                row = prior[:, j, :].astype(dtype)
                if renorm_prior:
                    row = renormalize_prior(row, enc.lengths).astype(dtype)
                check_prior_rows(row, active)
            out = decode_step(prev, carry, enc, params, prior_row=row, mask=mask)
            tok = out.logits.data.argmax(axis=-1)
            A[active, j] = out.alignment.data[active]
            steps[active] += 1
            for b in np.flatnonzero(active):
                if tok[b] == EOS:
                    finished[b] = True
                else:
                    tokens[b].append(int(tok[b]))
            prev = tok
            carry = out.carry
    return [
        (tokens[b], AttentionMatrix(A[b], int(steps[b]), int(enc.lengths[b])))
        for b in range(B)
    ]


def greedy_translate(src: np.ndarray, params: Seq2SeqParams, prior: np.ndarray | None = None, **kw):
    prior_b = None if prior is None else np.asarray(prior)[None]
    return greedy_translate_batch(np.asarray(src)[None], params, prior_b, **kw)[0]


def translate_corpus(
    src: np.ndarray,
    params: Seq2SeqParams,
    prior: np.ndarray | None = None,
    batch_size: int = 256,
    **kw,
) -> list[tuple[list[int], AttentionMatrix]]:
    out = []
    for start in range(0, len(src), batch_size):
        sl = slice(start, start + batch_size)
        out.extend(greedy_translate_batch(src[sl], params, None if prior is None else prior[sl], **kw))
    return out


@dataclass
class AttentionRecord:
    matrix: AttentionMatrix
    summary: np.ndarray


def collect_attention_dataset(params: Seq2SeqParams, sources: np.ndarray, batch_size: int = 256) -> list[AttentionRecord]:
    """Online greedy decode of every source, keeping (A, h^s); empty outputs are skipped."""
    records = []
    for start in range(0, len(sources), batch_size):
        batch = sources[start : start + batch_size]
        results = greedy_translate_batch(batch, params, mask_pads=True)
        with T.no_grad():
            summary = encode_source(batch, params).summary.data
        for (toks, A), h in zip(results, summary):
            if toks:
                records.append(AttentionRecord(A, h.copy()))
    return records


def token_accuracy(src: np.ndarray, tgt: np.ndarray, params: Seq2SeqParams, batch_size: int = 256) -> float:
    """Position-wise greedy accuracy over gold target tokens, EOS included."""
    correct = total = 0
    T_max = tgt.shape[1]
    for (toks, _), gold in zip(translate_corpus(src, params, batch_size=batch_size), tgt):
        hyp = np.full(T_max, -1)
        emitted = toks[:T_max] + [EOS]
        hyp[: min(len(emitted), T_max)] = emitted[:T_max]
        valid = gold != PAD
        correct += int((hyp[valid] == gold[valid]).sum())
        total += int(valid.sum())
    return correct / total


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1.0
    clip_norm: float = 5.0
    target_accuracy: float | None = None


def train_seq2seq(
    params: Seq2SeqParams,
    src: np.ndarray,
    tgt: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    log=None,
) -> list[dict]:
    """Minibatch SGD on the teacher-forced loss; returns per-epoch history.

    With ``config.target_accuracy`` set and validation data given, training
    stops after the first epoch whose held-out token accuracy reaches it.
    """
    from .optim import SGD

    if len(src) == 0:
        raise ValueError("empty training set")
    opt = SGD(params.parameters(), config.lr, config.clip_norm)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(src))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = teacher_forced_loss(src[idx], tgt[idx], params)
            T.backward(loss)
            opt.step()
            total += loss.item()
            batches += 1
        row = {"epoch": epoch, "train_loss": total / batches}
        if val is not None:
            row["val_accuracy"] = token_accuracy(val[0], val[1], params)
        history.append(row)
        if log is not None:
            log(row)
        if config.target_accuracy is not None and row.get("val_accuracy", 0.0) >= config.target_accuracy:
            break
    return history
