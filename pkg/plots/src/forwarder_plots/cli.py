"""plots command line entry point: curves, heatmap and trajectory figures."""
from __future__ import annotations

import argparse
import sys

from .figures import plot_curves, plot_heatmap, plot_trajectory
from .io import PlotDataError


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render static figures from training run artifacts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curves", help="mean-return curves for several runs")
    p.add_argument("metrics", nargs="+", help="metrics CSV files")
    p.add_argument("-o", "--out", required=True, help="output image path")

    p = sub.add_parser("heatmap", help="arrangement x weight sweep grid")
    p.add_argument("csv", help="heatmap CSV file")
    p.add_argument("-o", "--out", required=True, help="output image path")

    p = sub.add_parser("trajectory", help="demo episode trajectory figure")
    p.add_argument("jsonl", help="demo JSONL file")
    p.add_argument("-o", "--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "curves":
            plot_curves(args.metrics, args.out)
        elif args.command == "heatmap":
            plot_heatmap(args.csv, args.out)
        else:
            plot_trajectory(args.jsonl, args.out)
    except (PlotDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
