#!/usr/bin/env python3
"""
Write a clustered GloVe-format embedding file for desk-scale runs.

Words are grouped into clusters of near-synonyms (tight Gaussian blobs
around well separated centres) so that the mechanism has somewhere
plausible to move each word.

  python other-scripts/make_synthetic_glove.py --words 50000 --dim 50 --out synth50k.txt
"""

import argparse
from pathlib import Path

import numpy as np
from tqdm import tqdm

WORDS = 50_000
DIM = 50
CLUSTER_SIZE = 10
SPREAD = 0.35       # std-dev of a word around its cluster centre
CENTRE_SCALE = 1.0  # std-dev of the cluster centres


def synthetic_vectors(words: int, dim: int, cluster_size: int, spread: float,
                      centre_scale: float, seed: int) -> np.ndarray:
    gen = np.random.default_rng(seed)
    n_clusters = -(-words // cluster_size)
    centres = gen.normal(0.0, centre_scale, size=(n_clusters, dim))
    owner = np.repeat(np.arange(n_clusters), cluster_size)[:words]
    return centres[owner] + gen.normal(0.0, spread, size=(words, dim))


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--words", type=int, default=WORDS)
    parser.add_argument("--dim", type=int, default=DIM)
    parser.add_argument("--cluster-size", type=int, default=CLUSTER_SIZE)
    parser.add_argument("--spread", type=float, default=SPREAD)
    parser.add_argument("--centre-scale", type=float, default=CENTRE_SCALE)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()

    vecs = synthetic_vectors(args.words, args.dim, args.cluster_size, args.spread,
                             args.centre_scale, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for i, row in enumerate(tqdm(vecs, desc="write", unit="word")):
            f.write(f"w{i:06d} " + " ".join(f"{x:.6f}" for x in row) + "\n")
    print(f"[DONE] {args.words} words x {args.dim} dims → {args.out}")


if __name__ == "__main__":
    main()
