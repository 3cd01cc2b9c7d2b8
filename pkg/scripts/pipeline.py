"""Run synth -> train-s2s -> collect-attn -> train-cvae -> sweep for one seed.

Usage: python scripts/pipeline.py OUT_DIR [--seed 42] [--n-train 4000] [--n-eval 200]

Prints the sweep summary (length-ratio spread, best-BLEU code, best-BLEU code
among the shortest outputs, CVAE held-out recon against the mean-matrix
baseline) as JSON.
"""

import argparse
import json
from pathlib import Path

from priorattn.experiment import run_pipeline

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--n-train", type=int, default=4000)
    ap.add_argument("--n-eval", type=int, default=200)
    ap.add_argument("--verbose", action="store_true")
    a = ap.parse_args()
    print(json.dumps(run_pipeline(Path(a.out), a.seed, a.n_train, a.n_eval, quiet=not a.verbose), indent=1))
