"""Command-line pipeline: synth, train-s2s, collect-attn, train-cvae, translate, sweep, evaluate, gradcheck.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
A seq2seq checkpoint at PATH keeps its vocabulary next to it in PATH.vocab.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import artifacts_io as io
from . import corpus as C
from . import cvae as V
from . import metrics
from . import seq2seq as S
from . import tensor as T
from .gradcheck import gradient_suite
from .rng import stream

DEFAULT_SEED = 42


class UsageError(Exception):
    pass


def vocab_path(model_path) -> Path:
    return Path(f"{model_path}.vocab")


def parse_z(text: str) -> np.ndarray:
    try:
        z = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"--z expects comma-separated numbers like -2,0, got {text!r}")
    if not np.isfinite(z).all():
        raise argparse.ArgumentTypeError("--z must be finite")
    return z


def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--range expects LO:HI, got {text!r}")
    if hi < lo:
        raise argparse.ArgumentTypeError(f"--range {text}: HI below LO")
    return lo, hi


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--max-src-len", type=_positive, default=20)
    common.add_argument("--max-tgt-len", type=_positive, default=20)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="priorattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic parallel corpus (TSV)")
    p.add_argument("--task", choices=["copy", "simplify-mix"], required=True)
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=_positive, default=20)
    p.add_argument("--min-len", type=_positive, default=3)
    p.add_argument("--max-len", type=_positive, default=10)
    p.add_argument("--identity", type=float, default=0.5, help="simplify-mix weight")
    p.add_argument("--truncate", type=float, default=0.5, help="simplify-mix weight")
    p.add_argument("--substitute", type=float, default=0.0, help="simplify-mix weight")

    p = sub.add_parser("train-s2s", parents=[common], help="train the attention encoder-decoder")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=_positive, default=30)
    p.add_argument("--batch", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--dim", type=_positive, default=64)
    p.add_argument("--emb", type=_positive, default=32)
    p.add_argument("--vocab", type=_positive, default=2000)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--emb-init-scale", type=float, default=1.0)
    p.add_argument("--target-accuracy", type=float, help="stop once held-out token accuracy reaches this")

    p = sub.add_parser("collect-attn", parents=[common], help="decode sources online and store (A, h_s)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-cvae", parents=[common], help="train the CVAE on an attention dataset")
    p.add_argument("--model", required=True, help="seq2seq checkpoint the dataset came from")
    p.add_argument("--attn", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--latent", type=_positive, default=2)
    p.add_argument("--epochs", type=_positive, default=60)
    p.add_argument("--batch", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--hidden", type=_positive, default=128)
    p.add_argument("--kl-warmup", action="store_true")
    p.add_argument("--no-eos-completion", action="store_true",
                   help="fit only the rows the decoder emitted, averaged per row")
    p.add_argument("--heldout-frac", type=float, default=0.1)
    p.add_argument("--history", help="write the training curve as JSON here")

    p = sub.add_parser("translate", parents=[common], help="greedy translation, online or with prior attention")
    p.add_argument("--model", required=True)
    p.add_argument("--cvae")
    p.add_argument("--mode", choices=["online", "prior"], required=True)
    p.add_argument("--z", type=parse_z)
    p.add_argument("--renorm-prior", action="store_true")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dump-attn")

    p = sub.add_parser("sweep", parents=[common], help="score the corpus over a grid of latent codes")
    p.add_argument("--model", required=True)
    p.add_argument("--cvae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=_positive, default=8)
    p.add_argument("--range", type=parse_range, default=(-2.0, 2.0))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--viz-index", type=int, default=0)
    p.add_argument("--jobs", type=_positive, default=1)

    p = sub.add_parser("evaluate", parents=[common], help="BLEU, SARI, FKGL and length ratio")
    p.add_argument("--src", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--refs", required=True, help="one line per segment, references separated by tabs")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient self-check")
    return parser


# flags whose values may legitimately start with '-'
_SIGNED_VALUE_FLAGS = ("--z", "--range")


def _join_signed_values(argv: Sequence[str]) -> list[str]:
    out, it = [], iter(argv)
    for a in it:
        if a in _SIGNED_VALUE_FLAGS:
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(_join_signed_values(sys.argv[1:] if argv is None else argv))
    if args.command == "translate":
        if args.mode == "prior" and args.z is None:
            parser.error("translate --mode prior requires --z (prior mode needs a latent code)")
        if args.mode == "prior" and args.cvae is None:
            parser.error("translate --mode prior requires --cvae")
    if args.command == "train-cvae" and not 0.0 <= args.heldout_frac < 1.0:
        parser.error("--heldout-frac must be in [0, 1)")
    if args.command == "synth" and args.min_len > args.max_len:
        parser.error("--min-len exceeds --max-len")
    return args


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def _load_s2s(path) -> tuple[S.Seq2SeqParams, C.Vocab]:
    params = io.load_checkpoint(path)
    if not isinstance(params, S.Seq2SeqParams):
        raise ValueError(f"{path} is not a seq2seq checkpoint")
    vocab = C.Vocab.load(vocab_path(path))
    if len(vocab) != params.config.vocab_size:
        raise ValueError(f"{vocab_path(path)} has {len(vocab)} entries, model expects {params.config.vocab_size}")
    return params, vocab


def _load_cvae(path, s2s: S.Seq2SeqParams) -> V.CvaeParams:
    params = io.load_checkpoint(path)
    if not isinstance(params, V.CvaeParams):
        raise ValueError(f"{path} is not a CVAE checkpoint")
    c = params.config
    if (c.cond_dim, c.max_src_len, c.max_tgt_len) != (s2s.config.hidden_dim, s2s.config.max_src_len, s2s.config.max_tgt_len):
        raise ValueError("CVAE checkpoint does not match the seq2seq model's dimensions")
    return params


def cmd_synth(args) -> None:
    common = dict(vocab_size=args.vocab_size, min_len=args.min_len, max_len=args.max_len, seed=args.seed)
    if args.task == "copy":
        spec = C.SynthSpec.copy(**common)
    else:
        spec = C.SynthSpec.simplify_mix(args.identity, args.truncate, args.substitute, **common)
    io.atomic_write_text(args.out, C.format_tsv(C.synth_corpus(spec, args.n)))


def cmd_train_s2s(args) -> None:
    train = C.load_parallel_tsv(args.train)
    if not train:
        raise ValueError(f"{args.train} holds no sentence pairs")
    vocab = C.build_vocab(train, args.vocab)
    config = S.Seq2SeqConfig(len(vocab), emb_dim=args.emb, hidden_dim=args.dim, max_src_len=args.max_src_len,
                             max_tgt_len=args.max_tgt_len, init_scale=args.init_scale, emb_init_scale=args.emb_init_scale)
    params = S.Seq2SeqParams.init(config, stream(args.seed, "s2s", "init"))

    def enc(pairs, side, n):
        return C.encode_corpus([getattr(p, side) for p in pairs], vocab, n)

    val = None
    if args.val:
        vp = C.load_parallel_tsv(args.val)
        val = (enc(vp, "source", args.max_src_len), enc(vp, "target", args.max_tgt_len))
    S.train_seq2seq(
        params,
        enc(train, "source", args.max_src_len),
        enc(train, "target", args.max_tgt_len),
        S.TrainConfig(args.epochs, args.batch, args.lr, args.clip, args.target_accuracy),
        stream(args.seed, "s2s", "shuffle"),
        val=val,
        log=lambda row: _log(args, json.dumps(row)),
    )
    io.save_checkpoint(params, args.out)
    vocab_text = "".join(t + "\n" for t in vocab.itos[len(C.RESERVED):])
    io.atomic_write_text(vocab_path(args.out), vocab_text)


def cmd_collect_attn(args) -> None:
    params, vocab = _load_s2s(args.model)
    pairs = C.load_parallel_tsv(args.data)
    src = C.encode_corpus([p.source for p in pairs], vocab, params.config.max_src_len)
    records = S.collect_attention_dataset(params, src)
    _log(args, f"collected {len(records)} attention matrices from {len(pairs)} sources")
    c = params.config
    io.save_attention_dataset(records, args.out, c.max_tgt_len, c.max_src_len, c.hidden_dim)


def cmd_train_cvae(args) -> None:
    s2s, _ = _load_s2s(args.model)
    data = io.load_attention_dataset(args.attn)
    if (data.max_tgt_len, data.max_src_len, data.cond_dim) != (s2s.config.max_tgt_len, s2s.config.max_src_len, s2s.config.hidden_dim):
        raise ValueError(f"{args.attn} dimensions do not match {args.model}")
    records = data.records
    if not records:
        raise ValueError(f"{args.attn} holds no attention matrices")
    order = stream(args.seed, "cvae", "split").permutation(len(records))
    n_held = int(len(records) * args.heldout_frac)
    held = [records[i] for i in order[:n_held]]
    train = [records[i] for i in order[n_held:]]
    model_cfg = V.CvaeConfig(data.max_tgt_len, data.max_src_len, data.cond_dim, latent_dim=args.latent,
                             hidden=(args.hidden, args.hidden))
    completion = not args.no_eos_completion
    train_cfg = V.CvaeTrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, beta=args.beta,
                                  kl_warmup=args.kl_warmup, reduction="sum" if completion else "mean",
                                  eos_completion=completion)
    params, history = V.train_cvae(train, model_cfg, train_cfg, stream(args.seed, "cvae", "init"),
                                   stream(args.seed, "cvae", "train"), heldout=held or None,
                                   log=lambda row: _log(args, json.dumps(row)))
    if held:
        prep = V.complete_records if completion else list
        A_tr, m_tr, _ = V.stack_records(prep(train))
        A_h, m_h, _ = V.stack_records(prep(held))
        base = V.baseline_ce(A_h, m_h, V.mean_attention_baseline(A_tr))
        history.append({"baseline_heldout_recon": base})
        _log(args, f"held-out recon {history[-2]['heldout_recon']:.4f} vs mean-matrix baseline {base:.4f}")
    io.save_checkpoint(params, args.out)
    if args.history:
        io.atomic_write_text(args.history, json.dumps(history, indent=1) + "\n")


def cmd_translate(args) -> None:
    params, vocab = _load_s2s(args.model)
    lines = C.load_lines(args.input)
    src = C.encode_corpus(lines, vocab, params.config.max_src_len)
    prior = None
    if args.mode == "prior":
        cv = _load_cvae(args.cvae, params)
        if len(args.z) != cv.config.latent_dim:
            raise UsageError(f"--z has {len(args.z)} components, the CVAE expects {cv.config.latent_dim}")
        prior = V.generate_prior_attention(src, params, cv, args.z) if len(src) else None
    out = S.translate_corpus(src, params, prior=prior, renorm_prior=args.renorm_prior) if len(src) else []
    io.atomic_write_text(args.output, "".join(" ".join(vocab.decode(t)) + "\n" for t, _ in out))
    if args.dump_attn:
        for k, (_, A) in enumerate(out):
            io.export_attention_pgm(A, Path(args.dump_attn) / f"sent_{k}.pgm")


def cmd_sweep(args) -> None:
    params, vocab = _load_s2s(args.model)
    cv = _load_cvae(args.cvae, params)
    pairs = C.load_parallel_tsv(args.data)
    lo, hi = args.range
    report = io.run_sweep(params, cv, pairs, vocab, io.SweepGrid(lo, hi, args.grid), viz_index=args.viz_index,
                          out_dir=args.out_dir, jobs=args.jobs, seed=args.seed)
    for objective in ("bleu", "sari"):
        z, score = io.select_best_z(report, objective)
        _log(args, f"best {objective}: {score:.3f} at z=({z[0]:.6g}, {z[1]:.6g})")


def _read_refs(path) -> list[list[list[str]]]:
    with open(path, encoding="utf-8") as fh:
        return [[C.tokenize(r) for r in line.split("\t")] for line in fh.read().splitlines()]


def cmd_evaluate(args) -> None:
    rep = metrics.evaluate(C.load_lines(args.src), C.load_lines(args.hyp), _read_refs(args.refs))
    print(f"BLEU {rep.bleu:.3f}")
    print(f"SARI {rep.sari:.3f}")
    print(f"FKGL {rep.fkgl:.3f}")
    print(f"LENGTH {rep.length_ratio:.3f}")


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for r in gradient_suite(args.seed):
        worst = max(worst, r.max_rel_error)
        print(f"{r.name:<22} max rel error {r.max_rel_error:.3e} ({r.worst_param}) {'ok' if r.ok() else 'FAIL'}")
    return 0 if worst <= 1e-6 else 1


COMMANDS = {
    "synth": cmd_synth,
    "train-s2s": cmd_train_s2s,
    "collect-attn": cmd_collect_attn,
    "train-cvae": cmd_train_cvae,
    "translate": cmd_translate,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(args: argparse.Namespace) -> int:
    try:
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(f"priorattn {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, T.ShapeError) as exc:
        print(f"priorattn {args.command}: {exc}", file=sys.stderr)
        return 1


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
