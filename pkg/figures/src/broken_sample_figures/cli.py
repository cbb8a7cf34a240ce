"""Command line entry point: figures --kind {roc,power} --in csv... --out path."""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figures", description=__doc__)
    parser.add_argument("--kind", choices=["roc", "power"], required=True)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="one or more harness CSV files")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--title", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = render(FigureSpec(kind=args.kind, inputs=args.inputs,
                                 out=args.out, title=args.title))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
