"""Command-line interface.

Every command is deterministic given its flags; files are written to a
temp path and renamed into place so prior outputs are never left half
overwritten. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import analysis, uq as uqmod
from .bank import (
    SynthSpec,
    generate_synthetic_bank,
    indices_with_tag,
    load_bank,
    sample_episode,
    save_bank,
    split_base_new,
    split_counts,
)
from .block import KV_POLICIES, BlockConfig
from .classifier import DEFAULT_TAU, accuracy, zero_shot_accuracy
from .errors import AptError, IoFailure, MissingArtifacts, UsageError
from .trainer import (
    SHOT_GRID,
    TrainConfig,
    TrainedModel,
    load_checkpoint,
    save_checkpoint,
    train,
)

DEFAULT_OUT_ROOT = "apt-runs"


# --- artifact writers (temp + rename, stable ordering) ---

def _atomic_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_json(path: str, obj) -> None:
    _atomic_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    _atomic_text(path, buf.getvalue())


def _out_dir(args) -> str:
    out = args.out if args.out is not None else os.path.join(DEFAULT_OUT_ROOT, args.command)
    os.makedirs(out, exist_ok=True)
    return out


# --- flag plumbing ---

def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _add_shared(p, *, bank_required=True):
    p.add_argument("--bank", required=bank_required, help="embedding bank file")
    p.add_argument("--out", default=None, help="output directory (default apt-runs/<cmd>)")
    p.add_argument("--seed", type=_seed_list, default=[0], metavar="N[,N...]",
                   help="seed or comma-separated seed list (default 0)")


def _add_train_flags(p):
    p.add_argument("--shots", type=int, choices=list(SHOT_GRID), default=16,
                   help="labeled images per class (default 16)")
    p.add_argument("--lr", type=float, default=1e-3, help="base learning rate (default 0.001)")
    p.add_argument("--epochs", type=int, default=None, help="epoch budget (default from shots)")
    p.add_argument("--dropout", type=float, default=0.2, help="dropout rate (default 0.2)")
    p.add_argument("--heads", type=int, default=8, help="attention heads (default 8)")
    p.add_argument("--eval-every", type=int, default=1, help="validation cadence in epochs")


def _add_model_flags(p):
    p.add_argument("--tau", type=float, default=DEFAULT_TAU,
                   help="softmax temperature (default 0.01)")
    p.add_argument("--kv-policy", choices=list(KV_POLICIES), default="all",
                   help="which token rows feed attention keys/values")


def _add_uq_flags(p):
    p.add_argument("--mc-samples", type=int, default=100,
                   help="stochastic passes per image (default 100)")
    p.add_argument("--bins", type=int, default=10, help="calibration bins (default 10)")
    p.add_argument("--max-entropy", choices=["empirical", "ln_k"], default="empirical",
                   help="entropy normaliser: per-set empirical max or ln(k)")
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluation threads")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="apt",
        description="Few-shot prompt adaptation on precomputed embedding banks.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding bank")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--tokens", type=int, default=4)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--intra", type=float, default=0.05,
                   help="per-dimension image noise scale")
    p.add_argument("--inter", type=float, default=1.0,
                   help="per-dimension class-mean dispersion")
    p.add_argument("--seed", type=_seed_list, default=[0], metavar="N")
    p.add_argument("-o", "--output", default="bank.aptb", help="bank file to write")

    p = sub.add_parser("extract-manifest", help="validate a bank and dump its manifest")
    _add_shared(p)

    p = sub.add_parser("zeroshot", help="zero-shot accuracy from the raw text rows")
    _add_shared(p)
    _add_model_flags(p)
    p.add_argument("--split", choices=["train_pool", "val", "test"], default="test")

    p = sub.add_parser("train", help="train the refinement block on a few-shot episode")
    _add_shared(p)
    _add_train_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("eval", help="deterministic test accuracy of a checkpoint")
    _add_shared(p)
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint to evaluate (default: train one first)")

    p = sub.add_parser("uq", help="Monte-Carlo-dropout calibration suite")
    _add_shared(p)
    _add_train_flags(p)
    _add_model_flags(p)
    _add_uq_flags(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint to evaluate (default: train one first)")

    p = sub.add_parser("ood", help="compare confidence on an out-of-distribution bank")
    _add_shared(p)
    _add_train_flags(p)
    _add_model_flags(p)
    _add_uq_flags(p)
    p.add_argument("--ood-bank", required=True, help="bank of out-of-distribution records")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint to evaluate (default: train one first)")

    p = sub.add_parser("base-new", help="train on base classes, test generalization on new")
    _add_shared(p)
    _add_train_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("variance", help="intra-/inter-class variance of the bank features")
    _add_shared(p)

    return ap


# --- shared run pieces ---

def _block_config(bank, args) -> BlockConfig:
    return BlockConfig(
        dim=bank.dim,
        heads=args.heads,
        dropout_rate=args.dropout,
        kv_policy=args.kv_policy,
    )


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        tau=args.tau,
        epochs=args.epochs,
        eval_every=args.eval_every,
        seed=seed,
    )


def _train_one(bank, args, seed: int) -> tuple[TrainedModel, list[int]]:
    episode = sample_episode(bank, args.shots, seed)
    model = train(bank, episode, _block_config(bank, args), _train_config(args, seed))
    return model, episode.test_indices


def _ensure_model(bank, args, seed: int) -> tuple[TrainedModel, list[int]]:
    """Either load the named checkpoint or train a fresh model for this seed."""
    if getattr(args, "checkpoint", None):
        model = load_checkpoint(args.checkpoint, kv_policy=args.kv_policy)
        if model.block_config.dim != bank.dim:
            raise UsageError(
                f"checkpoint dim {model.block_config.dim} does not match bank dim {bank.dim}"
            )
        return model, indices_with_tag(bank, "test")
    return _train_one(bank, args, seed)


def _mean_and_range(values: list[float]) -> tuple[float, float]:
    mean = float(np.mean(values))
    spread = float(max(values) - min(values))
    return mean, spread


def _fmt_mean_range(values: list[float]) -> str:
    mean, spread = _mean_and_range(values)
    return f"{mean:.4f} ± {spread / 2.0:.4f}"


# --- subcommand bodies ---

def _cmd_synth(args) -> int:
    if len(args.seed) != 1:
        raise UsageError("synth takes a single seed")
    spec = SynthSpec(
        num_classes=args.classes,
        dim=args.dim,
        tokens_per_image=args.tokens,
        samples_per_class=args.per_class,
        intra_class_sigma=args.intra,
        inter_class_sigma=args.inter,
        seed=args.seed[0],
    )
    bank = generate_synthetic_bank(spec)
    save_bank(bank, args.output)
    counts = split_counts(args.per_class)
    print(
        f"wrote {args.output}: {bank.num_classes} classes x {args.per_class} images, "
        f"dim {bank.dim}, tokens {bank.tokens_per_image}, "
        f"split {counts[0]}/{counts[1]}/{counts[2]} per class"
    )
    return 0


def _cmd_extract_manifest(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    manifest = {
        "bank": os.path.abspath(args.bank),
        "dim": bank.dim,
        "num_classes": bank.num_classes,
        "class_names": list(bank.class_names),
        "tokens_per_image": bank.tokens_per_image,
        "num_images": len(bank.images),
        "split_sizes": {
            tag: len(indices_with_tag(bank, tag)) for tag in ("train_pool", "val", "test")
        },
        "metadata": dict(bank.metadata),
        "valid": True,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _cmd_zeroshot(args) -> int:
    bank = load_bank(args.bank)
    idx = indices_with_tag(bank, args.split)
    if not idx:
        raise UsageError(f"bank has no records in split {args.split!r}")
    acc = zero_shot_accuracy(bank, idx, tau=args.tau)
    print(f"{acc:.6f}")
    out = _out_dir(args)
    _write_json(
        os.path.join(out, "report.json"),
        {"command": "zeroshot", "bank": os.path.abspath(args.bank),
         "split": args.split, "tau": args.tau, "accuracy": acc},
    )
    return 0


def _cmd_train(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    accs, finals, ckpts = [], [], []
    epochs_used = None
    for seed in args.seed:
        model, test_idx = _train_one(bank, args, seed)
        path = os.path.join(out, f"checkpoint-s{seed}.aptc")
        save_checkpoint(model, path)
        test_acc = accuracy(model.params, model.block_config, bank, test_idx, tau=args.tau)
        accs.append(test_acc)
        finals.append(model.final_val_acc)
        ckpts.append(os.path.abspath(path))
        epochs_used = model.history[-1][0]
        print(f"seed {seed}: val {model.final_val_acc:.4f}  test {test_acc:.4f}")

    mean, spread = _mean_and_range(accs)
    report = {
        "command": "train",
        "bank": os.path.abspath(args.bank),
        "shots": args.shots,
        "lr": args.lr,
        "epochs": epochs_used,
        "dropout": args.dropout,
        "heads": args.heads,
        "tau": args.tau,
        "kv_policy": args.kv_policy,
        "seeds": args.seed,
        "checkpoints": ckpts,
        "accuracy_per_seed": accs,
        "accuracy_mean": mean,
        "accuracy_range": spread,
        "val_accuracy_per_seed": finals,
    }
    _write_json(os.path.join(out, "report.json"), report)
    print(f"test accuracy: {_fmt_mean_range(accs)} over {len(args.seed)} seed(s)")
    return 0


def _cmd_eval(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    accs = []
    for seed in args.seed:
        model, test_idx = _ensure_model(bank, args, seed)
        accs.append(accuracy(model.params, model.block_config, bank, test_idx, tau=args.tau))
    mean, spread = _mean_and_range(accs)
    _write_json(
        os.path.join(out, "report.json"),
        {"command": "eval", "bank": os.path.abspath(args.bank),
         "checkpoint": getattr(args, "checkpoint", None),
         "seeds": args.seed, "tau": args.tau,
         "accuracy_per_seed": accs, "accuracy_mean": mean, "accuracy_range": spread},
    )
    print(f"test accuracy: {_fmt_mean_range(accs)} over {len(args.seed)} seed(s)")
    return 0


def _max_entropy_value(args, bank) -> float | None:
    # None keeps the per-set empirical normaliser
    return math.log(bank.num_classes) if args.max_entropy == "ln_k" else None


def _uq_rows(result) -> list[list]:
    rows = []
    for pos, i in enumerate(result.indices):
        rows.append([
            i,
            f"{result.confidences[pos]:.10g}",
            f"{result.entropies[pos]:.10g}",
            int(result.preds[pos] == result.labels[pos]),
        ])
    return rows


def _reliability_rows(bins) -> list[list]:
    rows = []
    for b in bins:
        rows.append([
            f"{b.lo:.10g}",
            f"{b.hi:.10g}",
            b.count,
            "" if math.isnan(b.mean_confidence) else f"{b.mean_confidence:.10g}",
            "" if math.isnan(b.mean_accuracy) else f"{b.mean_accuracy:.10g}",
        ])
    return rows


def _bin_dicts(bins) -> list[dict]:
    return [
        {
            "bin_lo": b.lo,
            "bin_hi": b.hi,
            "count": b.count,
            "mean_conf": None if math.isnan(b.mean_confidence) else b.mean_confidence,
            "mean_acc": None if math.isnan(b.mean_accuracy) else b.mean_accuracy,
        }
        for b in bins
    ]


def _cmd_uq(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    seed = args.seed[0]
    model, test_idx = _ensure_model(bank, args, seed)
    result = uqmod.evaluate_uq(
        model.params, model.block_config, bank, test_idx,
        tau=args.tau, samples=args.mc_samples, seed=seed,
        bins=args.bins, max_entropy=_max_entropy_value(args, bank), jobs=args.jobs,
    )

    _write_csv(os.path.join(out, "conf_unc.csv"),
               ["image_id", "confidence", "entropy", "correct"], _uq_rows(result))
    _write_csv(os.path.join(out, "reliability.csv"),
               ["bin_lo", "bin_hi", "count", "mean_conf", "mean_acc"],
               _reliability_rows(result.bins))
    report = {
        "command": "uq",
        "bank": os.path.abspath(args.bank),
        "seed": seed,
        "mc_samples": args.mc_samples,
        "bins": args.bins,
        "max_entropy_mode": args.max_entropy,
        "max_entropy_used": result.max_entropy_used,
        "degenerate_max": result.degenerate_max,
        "dropout": args.dropout,
        "heads": args.heads,
        "tau": args.tau,
        "accuracy": result.accuracy,
        "mean_confidence": result.mean_confidence,
        "mean_entropy": result.mean_entropy,
        "ece": result.ece_value,
        "reliability": _bin_dicts(result.bins),
        "records": [
            {"image_id": i,
             "confidence": float(result.confidences[pos]),
             "entropy": float(result.entropies[pos]),
             "correct": bool(result.preds[pos] == result.labels[pos])}
            for pos, i in enumerate(result.indices)
        ],
    }
    _write_json(os.path.join(out, "report.json"), report)
    print(f"accuracy {result.accuracy:.4f}  ece {result.ece_value:.4f}  "
          f"mean entropy {result.mean_entropy:.4f}")
    return 0


def _cmd_ood(args) -> int:
    bank = load_bank(args.bank)
    ood_bank = load_bank(args.ood_bank)
    if ood_bank.dim != bank.dim:
        raise UsageError(f"OOD bank dim {ood_bank.dim} does not match ID bank dim {bank.dim}")
    out = _out_dir(args)
    seed = args.seed[0]
    model, test_idx = _ensure_model(bank, args, seed)
    ood_idx = indices_with_tag(ood_bank, "test") or list(range(len(ood_bank.images)))

    report_obj = uqmod.ood_evaluate(
        model.params, model.block_config, bank, test_idx, ood_bank, ood_idx,
        tau=args.tau, samples=args.mc_samples, seed=seed,
        bins=args.bins, max_entropy=_max_entropy_value(args, bank), jobs=args.jobs,
    )

    rows = []
    for name, res in (("id", report_obj.id_result), ("ood", report_obj.ood_result)):
        for pos, i in enumerate(res.indices):
            rows.append([name, i,
                         f"{res.confidences[pos]:.10g}",
                         f"{res.entropies[pos]:.10g}"])
    _write_csv(os.path.join(out, "ood.csv"),
               ["set", "image_id", "confidence", "entropy"], rows)
    summary = dict(report_obj.summary)
    report = {
        "command": "ood",
        "bank": os.path.abspath(args.bank),
        "ood_bank": os.path.abspath(args.ood_bank),
        "seed": seed,
        "mc_samples": args.mc_samples,
        "max_entropy_mode": args.max_entropy,
        "ood_labels_unusable": report_obj.ood_labels_unusable,
        **summary,
    }
    _write_json(os.path.join(out, "report.json"), report)
    print(f"mean entropy id {summary['id_mean_entropy']:.4f} vs ood "
          f"{summary['ood_mean_entropy']:.4f}; mean confidence id "
          f"{summary['id_mean_confidence']:.4f} vs ood {summary['ood_mean_confidence']:.4f}")
    return 0


def _cmd_base_new(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    base_bank, new_bank = split_base_new(bank)
    new_test = indices_with_tag(new_bank, "test")
    base_accs, new_accs, hms = [], [], []
    for seed in args.seed:
        model, base_test = _train_one(base_bank, args, seed)
        base_acc = accuracy(model.params, model.block_config, base_bank, base_test, tau=args.tau)
        new_acc = accuracy(model.params, model.block_config, new_bank, new_test, tau=args.tau)
        base_accs.append(base_acc)
        new_accs.append(new_acc)
        hms.append(analysis.harmonic_mean(base_acc, new_acc))
        print(f"seed {seed}: base {base_acc:.4f}  new {new_acc:.4f}  hm {hms[-1]:.4f}")

    report = {
        "command": "base-new",
        "bank": os.path.abspath(args.bank),
        "shots": args.shots,
        "lr": args.lr,
        "dropout": args.dropout,
        "heads": args.heads,
        "tau": args.tau,
        "seeds": args.seed,
        "base_classes": base_bank.num_classes,
        "new_classes": new_bank.num_classes,
        "base_accuracy_per_seed": base_accs,
        "new_accuracy_per_seed": new_accs,
        "harmonic_mean_per_seed": hms,
        "base_accuracy_mean": float(np.mean(base_accs)),
        "new_accuracy_mean": float(np.mean(new_accs)),
        "harmonic_mean": float(np.mean(hms)),
    }
    _write_json(os.path.join(out, "report.json"), report)
    print(f"harmonic mean: {_fmt_mean_range(hms)} over {len(args.seed)} seed(s)")
    return 0


def _cmd_variance(args) -> int:
    bank = load_bank(args.bank)
    out = _out_dir(args)
    feats = np.stack([rec.feature for rec in bank.images])
    labels = np.array([rec.label for rec in bank.images])
    rep = analysis.variance_report(feats, labels)
    rep = {"command": "variance", "bank": os.path.abspath(args.bank), **rep}
    _write_json(os.path.join(out, "report.json"), rep)
    print(f"intra {rep['intra_class_variance']:.6f}  inter {rep['inter_class_variance']:.6f}")
    return 0


def run_report(output_dir: str) -> dict:
    """Aggregate the report.json artifacts under a run directory.

    Returns {accuracy_mean, accuracy_per_seed, ece, mean_entropy}; keys whose
    artifact never ran are null. Raises MissingArtifacts when the directory
    holds no reports at all.
    """
    candidates = []
    if os.path.isdir(output_dir):
        for root in [output_dir] + sorted(
            os.path.join(output_dir, d) for d in os.listdir(output_dir)
            if os.path.isdir(os.path.join(output_dir, d))
        ):
            path = os.path.join(root, "report.json")
            if os.path.isfile(path):
                candidates.append(path)
    if not candidates:
        raise MissingArtifacts(f"no report.json under {output_dir}")

    summary = {"accuracy_mean": None, "accuracy_per_seed": None,
               "ece": None, "mean_entropy": None}
    for path in candidates:
        with open(path, encoding="utf-8") as f:
            rep = json.load(f)
        if summary["accuracy_per_seed"] is None and "accuracy_per_seed" in rep:
            summary["accuracy_per_seed"] = rep["accuracy_per_seed"]
            summary["accuracy_mean"] = rep.get(
                "accuracy_mean", float(np.mean(rep["accuracy_per_seed"]))
            )
        if summary["accuracy_mean"] is None and "accuracy" in rep:
            summary["accuracy_mean"] = rep["accuracy"]
            summary["accuracy_per_seed"] = [rep["accuracy"]]
        if summary["ece"] is None and "ece" in rep:
            summary["ece"] = rep["ece"]
        if summary["mean_entropy"] is None and "mean_entropy" in rep:
            summary["mean_entropy"] = rep["mean_entropy"]
    return summary


_HANDLERS = {
    "synth": _cmd_synth,
    "extract-manifest": _cmd_extract_manifest,
    "zeroshot": _cmd_zeroshot,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "uq": _cmd_uq,
    "ood": _cmd_ood,
    "base-new": _cmd_base_new,
    "variance": _cmd_variance,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except AptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
