"""Regenerate the bundled synthetic corpus (and optional larger splits)."""

import argparse
from pathlib import Path

from jointex.data import write_corpus
from jointex.synthetic import generate

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "jointex" / "fixtures" / "synthetic20.tsv"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    sents = generate(args.n, seed=args.seed)
    write_corpus(sents, args.out)
    print(f"wrote {len(sents)} sentences to {args.out}")


if __name__ == "__main__":
    main()
