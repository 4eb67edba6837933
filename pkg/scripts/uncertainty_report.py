"""Calibration and OOD report for one trained refinement block.

Trains on a synthetic in-distribution bank, runs the MC-dropout suite on the
test split, prints a reliability table, then compares entropy-based
confidence against a disjoint synthetic bank standing in for OOD inputs.

Usage: python3 scripts/uncertainty_report.py [--mc-samples M] [--bins P]
"""

from __future__ import annotations

import argparse

import numpy as np

from apt.bank import (
    EmbeddingBank,
    ImageRecord,
    SynthSpec,
    generate_synthetic_bank,
    sample_episode,
)
from apt.block import BlockConfig
from apt.trainer import TrainConfig, train
from apt.uq import evaluate_uq, ood_evaluate, reliability_data


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--per-class", type=int, default=48)
    ap.add_argument("--intra", type=float, default=0.8)
    ap.add_argument("--shots", type=int, default=16)
    ap.add_argument("--mc-samples", type=int, default=100)
    ap.add_argument("--bins", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def make_ood_bank(bank: EmbeddingBank, args) -> EmbeddingBank:
    """OOD stand-in scored against the in-distribution text rows.

    Samples features orthogonal to the span of the class prototypes: every
    cosine sits at noise level, so no class dominates and the MC passes
    tie-break at random. Requires dim > num_classes.
    """
    d, t = bank.dim, bank.tokens_per_image
    text = bank.text_embeddings.astype(np.float64)
    q, _ = np.linalg.qr(text.T)  # (d, k) orthonormal basis of the span

    rng = np.random.default_rng(args.seed + 1000)
    scale = float(np.linalg.norm(text, axis=1).mean())
    n = args.per_class * bank.num_classes
    records = []
    for _ in range(n):
        g = rng.normal(0.0, 1.0, size=d)
        g -= q @ (q.T @ g)
        feat = g * (scale / np.linalg.norm(g))
        toks = feat + rng.normal(0.0, 0.5 * args.intra, size=(t, d))
        toks[0] = feat
        records.append(ImageRecord(views=toks[None].astype(np.float32),
                                   label=0, split_tag="test"))
    return EmbeddingBank(dim=d, class_names=list(bank.class_names),
                         text_embeddings=bank.text_embeddings,
                         images=records, tokens_per_image=t)


def main():
    args = parse_args()
    spec = SynthSpec(num_classes=args.classes, dim=args.dim, tokens_per_image=4,
                     samples_per_class=args.per_class,
                     intra_class_sigma=args.intra, inter_class_sigma=1.0,
                     seed=args.seed)
    bank = generate_synthetic_bank(spec)
    ood_bank = make_ood_bank(bank, args)

    config = BlockConfig(dim=args.dim)
    episode = sample_episode(bank, shots=args.shots, seed=args.seed)
    model = train(bank, episode, config, TrainConfig(seed=args.seed))

    result = evaluate_uq(model.params, config, bank, episode.test_indices,
                         samples=args.mc_samples, seed=args.seed,
                         bins=args.bins, jobs=args.jobs)
    print(f"test accuracy      {result.accuracy:.4f}")
    print(f"mean confidence    {result.mean_confidence:.4f}")
    print(f"mean entropy       {result.mean_entropy:.4f}")
    print(f"ECE ({args.bins} bins)      {result.ece_value:.4f}")
    print()
    print(f"{'bin':>12}  {'count':>5}  {'mean conf':>9}  {'mean acc':>8}")
    for lo, hi, count, conf, acc in reliability_data(result.bins):
        conf_s = f"{conf:9.4f}" if conf is not None else "        -"
        acc_s = f"{acc:8.4f}" if acc is not None else "       -"
        print(f"[{lo:4.2f}, {hi:4.2f}]  {count:>5}  {conf_s}  {acc_s}")

    ood_test = [i for i, r in enumerate(ood_bank.images) if r.split_tag == "test"]
    report = ood_evaluate(model.params, config, bank, episode.test_indices,
                          ood_bank, ood_test, samples=args.mc_samples,
                          seed=args.seed, bins=args.bins, jobs=args.jobs)
    print()
    s = report.summary
    print(f"ID  mean confidence  {s['id_mean_confidence']:.4f}   "
          f"mean entropy {s['id_mean_entropy']:.4f}")
    print(f"OOD mean confidence  {s['ood_mean_confidence']:.4f}   "
          f"mean entropy {s['ood_mean_entropy']:.4f}")
    print(f"confidence gap       {s['confidence_gap']:+.4f}")
    print(f"AUROC (ID vs OOD)    {s['auroc_id_vs_ood']:.4f}")


if __name__ == "__main__":
    main()
