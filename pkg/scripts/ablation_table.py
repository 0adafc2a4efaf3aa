#!/usr/bin/env python3
"""Run the loss x mining-strategy grid on a synthetic corpus and emit the
comparison table as CSV."""

import argparse

from ssml.synthdata import SynthSpec, generate
from ssml.trainer import TrainConfig, ablation_csv_lines, ablation_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--identities", type=int, default=50)
    ap.add_argument("--per-id", type=int, default=20)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--loss-kinds", default="dtl,general_triplet")
    ap.add_argument("--mining-kinds", default="ps,rank,adj,intersection")
    args = ap.parse_args()

    corpus = generate(SynthSpec(args.identities, args.per_id, d_in=32,
                                intra_noise=args.noise, seed=7))
    config = TrainConfig(epochs=args.epochs, batch_size=64, seed=args.seed)
    rows = ablation_run(config, corpus.features, corpus.identities,
                        corpus.query_indices, corpus.gallery_indices,
                        loss_kinds=args.loss_kinds.split(","),
                        mining_kinds=args.mining_kinds.split(","))
    print("\n".join(ablation_csv_lines(rows)))


if __name__ == "__main__":
    main()
