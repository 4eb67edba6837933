"""Sweep shot counts on a synthetic bank and tabulate accuracy per seed.

Trains one refinement block per (shots, seed) cell with the standard epoch
budget for that shot count, then prints test accuracy next to the zero-shot
baseline. Deterministic for a fixed argument set.

Usage: python3 scripts/few_shot_sweep.py [--classes K] [--dim D] [--seeds 0,1,2]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from apt.bank import SynthSpec, generate_synthetic_bank, sample_episode
from apt.block import BlockConfig
from apt.classifier import accuracy, zero_shot_accuracy
from apt.trainer import SHOT_GRID, TrainConfig, train


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--tokens", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=48)
    ap.add_argument("--intra", type=float, default=0.8, help="within-class noise scale")
    ap.add_argument("--inter", type=float, default=1.0, help="class-mean dispersion")
    ap.add_argument("--shots", type=lambda s: [int(x) for x in s.split(",")],
                    default=list(SHOT_GRID), metavar="N[,N...]")
    ap.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                    default=[0, 1, 2], metavar="N[,N...]")
    ap.add_argument("--epochs", type=int, default=None,
                    help="override the per-shot epoch budget")
    ap.add_argument("--bank-seed", type=int, default=0)
    return ap.parse_args()


def main():
    args = parse_args()
    bank = generate_synthetic_bank(SynthSpec(
        num_classes=args.classes, dim=args.dim, tokens_per_image=args.tokens,
        samples_per_class=args.per_class, intra_class_sigma=args.intra,
        inter_class_sigma=args.inter, seed=args.bank_seed,
    ))
    test_idx = [i for i, r in enumerate(bank.images) if r.split_tag == "test"]
    zs = zero_shot_accuracy(bank, test_idx)
    print(f"bank: {args.classes} classes, dim {args.dim}, "
          f"{args.per_class}/class, intra {args.intra}")
    print(f"zero-shot test accuracy: {zs:.4f}")
    print()
    print(f"{'shots':>5}  " + "  ".join(f"seed {s:>2}" for s in args.seeds)
          + f"  {'mean':>7}  {'gain':>7}")

    config = BlockConfig(dim=args.dim)
    for shots in args.shots:
        t0 = time.perf_counter()
        accs = []
        for seed in args.seeds:
            episode = sample_episode(bank, shots=shots, seed=seed)
            model = train(bank, episode, config,
                          TrainConfig(epochs=args.epochs, seed=seed))
            accs.append(accuracy(model.params, config, bank,
                                 episode.test_indices))
        mean = float(np.mean(accs))
        cells = "  ".join(f"{a:7.4f}" for a in accs)
        print(f"{shots:>5}  {cells}  {mean:7.4f}  {mean - zs:+7.4f}"
              f"   [{time.perf_counter() - t0:.1f}s]")


if __name__ == "__main__":
    main()
