"""Command-line entry point: `apt-extract --data DIR --out PATH [...]`."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import DEFAULT_MODEL, DEFAULT_SPLIT_RATIOS, DEFAULT_TEMPLATE, ExtractorConfig
from .errors import ExtractError
from .extract import extract


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="apt-extract",
        description="Export frozen encoder embeddings of a class-per-folder "
                    "image dataset into an APTB bank.",
    )
    ap.add_argument("--data", required=True, help="dataset root, one folder per class")
    ap.add_argument("--out", required=True, help="bank file to write (.aptb)")
    ap.add_argument("--template", default=DEFAULT_TEMPLATE,
                    help="prompt template; {} is the class name, {domain} the dataset name")
    ap.add_argument("--model", default=DEFAULT_MODEL,
                    help=f"encoder identifier (default {DEFAULT_MODEL})")
    ap.add_argument("--domain", default=None,
                    help="word for the template's {domain} slot (default: dataset folder name)")
    ap.add_argument("--views", type=int, default=1,
                    help="views per image; view 0 is the deterministic center crop")
    ap.add_argument("--split-seed", type=int, default=0,
                    help="seed for the per-class train_pool/val/test assignment")
    ap.add_argument("--ratios", type=_ratios, default=DEFAULT_SPLIT_RATIOS,
                    metavar="TRAIN,VAL,TEST", help="split fractions, must sum to 1")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = ExtractorConfig(
            data_dir=args.data,
            out_path=args.out,
            template=args.template,
            model=args.model,
            domain=args.domain,
            split_ratios=args.ratios,
            split_seed=args.split_seed,
            views=args.views,
        )
        path = extract(config)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
