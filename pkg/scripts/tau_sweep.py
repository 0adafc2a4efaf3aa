#!/usr/bin/env python3
"""Sweep the similarity threshold and report final retrieval quality per
value, one CSV row per threshold."""

import argparse
from dataclasses import replace

from ssml.synthdata import SynthSpec, generate
from ssml.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--taus", default="0.2,0.4,0.6,0.8,0.95")
    ap.add_argument("--identities", type=int, default=50)
    ap.add_argument("--per-id", type=int, default=20)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    corpus = generate(SynthSpec(args.identities, args.per_id, d_in=32,
                                intra_noise=args.noise, seed=7))
    base = TrainConfig(epochs=args.epochs, batch_size=64, seed=args.seed)
    print("tau,rank1,rank5,map,mine_precision,mine_recall")
    for tau in (float(t) for t in args.taus.split(",")):
        result = train(replace(base, tau=tau), corpus.features, corpus.identities,
                       corpus.query_indices, corpus.gallery_indices)
        final = result.reports[-1]
        print(f"{tau},{final.rank(1):.6f},{final.rank(5):.6f},{final.mean_ap:.6f},"
              f"{final.mining_precision:.6f},{final.mining_recall:.6f}")


if __name__ == "__main__":
    main()
