"""Batch figure renderer: figplots --in sweep.csv --kind distance --out fig.svg"""

from __future__ import annotations

import argparse
import sys

from .render import SCHEMAS, PlotJob, SchemaError, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="figplots", description=__doc__)
    parser.add_argument("--in", dest="input_csv", required=True, help="sweep CSV path")
    parser.add_argument("--kind", required=True, choices=sorted(SCHEMAS))
    parser.add_argument("--out", required=True, help="output image (.svg or .png)")
    parser.add_argument("--dpi", type=int, default=150)
    parser.add_argument("--no-shade", action="store_true", help="skip cliff shading")
    parser.add_argument("--no-markers", action="store_true", help="skip cutoff markers")
    args = parser.parse_args(argv)

    job = PlotJob(
        input_csv=args.input_csv,
        kind=args.kind,
        output=args.out,
        dpi=args.dpi,
        shade_cliff=not args.no_shade,
        mark_cutoffs=not args.no_markers,
    )
    try:
        info = render(job)
    except (SchemaError, OSError) as exc:
        print(f"figplots: error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {info.output} ({info.kind}, {info.rows} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
