"""Full pipeline for one seed: synth, train-s2s, collect-attn, train-cvae, sweep.

Drives the command-line entry point so the artifacts on disk are exactly what
a user running the commands by hand would get.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from . import artifacts_io as io
from .cli import main as cli


def call(*argv) -> None:
    code = cli([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"step {argv[0]} failed with exit code {code}")


def run_pipeline(out: Path, seed: int, n_train: int = 4000, n_eval: int = 200, s2s_epochs: int = 15,
                 cvae_epochs: int = 60, quiet: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    q = ["--quiet"] if quiet else []
    t0 = time.time()
    call("synth", "--task", "simplify-mix", "--n", n_train, "--out", out / "train.tsv", "--seed", seed, *q)
    call("synth", "--task", "simplify-mix", "--n", n_eval, "--out", out / "eval.tsv", "--seed", seed + 1, *q)
    call("train-s2s", "--train", out / "train.tsv", "--out", out / "s2s.bin", "--epochs", s2s_epochs,
         "--batch", 32, "--lr", 1.0, "--seed", seed, *q)
    call("collect-attn", "--model", out / "s2s.bin", "--data", out / "train.tsv", "--out", out / "attn.bin",
         "--seed", seed, *q)
    call("train-cvae", "--model", out / "s2s.bin", "--attn", out / "attn.bin", "--out", out / "cvae.bin",
         "--epochs", cvae_epochs, "--history", out / "cvae_history.json", "--seed", seed, *q)
    call("sweep", "--model", out / "s2s.bin", "--cvae", out / "cvae.bin", "--data", out / "eval.tsv",
         "--grid", 8, "--range", "-2:2", "--out-dir", out / "sweep", "--seed", seed, *q)
    return summarize(out, seed, time.time() - t0)


def summarize(out: Path, seed: int, seconds: float) -> dict:
    rows = io.parse_sweep_csv((out / "sweep" / "sweep.csv").read_text())
    ratios = [r.length_ratio for r in rows]
    shortest = [r for r in rows if r.length_ratio == min(ratios)]
    z_bleu, bleu = io.select_best_z(rows, "bleu")
    z_short, _ = io.select_best_z(shortest, "bleu")
    history = json.loads((out / "cvae_history.json").read_text())
    return {
        "seed": seed,
        "rows": len(rows),
        "length_ratio_spread": max(ratios) - min(ratios),
        "best_bleu_z": z_bleu,
        "best_bleu": bleu,
        "shortest_z": z_short,
        "heldout_recon": history[-2]["heldout_recon"],
        "baseline_recon": history[-1]["baseline_heldout_recon"],
        "min_kl": min(r["kl"] for r in history if "kl" in r),
        "seconds": seconds,
    }

