"""Base-to-new generalization: train on half the classes, test on both halves.

For each seed, trains the refinement block on few-shot episodes drawn from
the base half of a synthetic bank, then reports base accuracy, new-class
zero-shot-style accuracy through the trained block, and their harmonic mean.

Usage: python3 scripts/base_new_generalization.py [--seeds 0,1,2] [--shots N]
"""

from __future__ import annotations

import argparse

import numpy as np

from apt.analysis import harmonic_mean, variance_report
from apt.bank import SynthSpec, generate_synthetic_bank, sample_episode, split_base_new
from apt.block import BlockConfig
from apt.classifier import accuracy
from apt.trainer import TrainConfig, train


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--per-class", type=int, default=48)
    ap.add_argument("--intra", type=float, default=0.8)
    ap.add_argument("--shots", type=int, default=16)
    ap.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                    default=[0, 1, 2], metavar="N[,N...]")
    ap.add_argument("--bank-seed", type=int, default=0)
    return ap.parse_args()


def main():
    args = parse_args()
    bank = generate_synthetic_bank(SynthSpec(
        num_classes=args.classes, dim=args.dim, tokens_per_image=4,
        samples_per_class=args.per_class, intra_class_sigma=args.intra,
        inter_class_sigma=1.0, seed=args.bank_seed,
    ))
    base, new = split_base_new(bank)
    config = BlockConfig(dim=args.dim)

    feats = np.stack([r.feature for r in bank.images])
    labels = np.array([r.label for r in bank.images])
    rep = variance_report(feats, labels)
    print(f"bank variance: intra {rep['intra_class_variance']:.4f}, "
          f"inter {rep['inter_class_variance']:.4f}, "
          f"ratio {rep['intra_over_inter']:.4f}")
    print()
    print(f"{'seed':>4}  {'base':>7}  {'new':>7}  {'H':>7}")

    rows = []
    for seed in args.seeds:
        episode = sample_episode(base, shots=args.shots, seed=seed)
        model = train(base, episode, config, TrainConfig(seed=seed))
        new_test = [i for i, r in enumerate(new.images) if r.split_tag == "test"]
        acc_base = accuracy(model.params, config, base, episode.test_indices)
        # new classes: same trained block, their own text rows as queries
        acc_new = accuracy(model.params, config, new, new_test)
        h = harmonic_mean(acc_base, acc_new)
        rows.append((acc_base, acc_new, h))
        print(f"{seed:>4}  {acc_base:7.4f}  {acc_new:7.4f}  {h:7.4f}")

    mean = np.mean(rows, axis=0)
    print(f"{'mean':>4}  {mean[0]:7.4f}  {mean[1]:7.4f}  {mean[2]:7.4f}")


if __name__ == "__main__":
    main()
