"""Command line entry: render harness CSVs to image files."""

import argparse
import json
import sys

from .figures import FIGURE_KINDS, FigureSpec, render, spec_from_mapping
from .reader import EmptyData, SchemaMismatch


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qsun-render",
        description="Draw one figure from harness CSV output (PNG and SVG).",
    )
    p.add_argument("csv", nargs="*", help="input CSV file(s), all of one schema")
    p.add_argument("--spec", help="JSON file holding the full figure spec")
    p.add_argument("--kind", choices=sorted(FIGURE_KINDS),
                   help="figure kind (default: inferred from the CSV header)")
    p.add_argument("--out", help="output image stem, .png and .svg are written")
    p.add_argument("--title", help="figure title (default: the figure kind)")
    p.add_argument("--xlabel", help="x axis label override")
    p.add_argument("--ylabel", help="y axis label override")
    p.add_argument("--no-legend", action="store_true", help="suppress the legend")
    p.add_argument("--dpi", type=int, default=150, help="raster resolution (default 150)")
    return p


def _spec_from_args(args) -> FigureSpec:
    if args.spec:
        if args.csv or args.out:
            raise ValueError("--spec replaces positional CSV paths and --out")
        try:
            with open(args.spec) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ValueError(f"--spec: no such file: {args.spec}")
        except json.JSONDecodeError as e:
            raise ValueError(f"--spec: not valid JSON: {e}")
        if not isinstance(d, dict):
            raise ValueError("--spec: the file must hold one JSON object")
        return spec_from_mapping(d)
    if not args.csv:
        raise ValueError("give CSV file(s) or --spec")
    if not args.out:
        raise ValueError("--out is required with positional CSV input")
    return FigureSpec(
        csv=tuple(args.csv),
        out=args.out,
        kind=args.kind,
        title=args.title,
        xlabel=args.xlabel,
        ylabel=args.ylabel,
        legend=not args.no_legend,
        dpi=args.dpi,
    )


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code or 0
    try:
        spec = _spec_from_args(args)
        png, svg = render(spec)
    except (SchemaMismatch, EmptyData, ValueError, OSError) as e:
        print(f"qsun-render: error: {e}", file=sys.stderr)
        return 2
    print(png)
    print(svg)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
