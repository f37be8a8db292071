"""Command-line interface: render one figure per invocation."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, render
from .reportio import MissingColumnsError

__all__ = ["main", "entrypoint"]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit",
                                     description="render diagnostic figures from experiment reports")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("--report", required=True, help="report JSON or CSV")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--method", default="JLBC")
    p.add_argument("--boundary", default="", help="boundary JSON (if not embedded in the report)")
    p.add_argument("--fit", default="", help="error-fit JSON (if not embedded in the report)")
    p.add_argument("--xscale", default="linear", choices=["linear", "log"])
    p.add_argument("--yscale", default="linear", choices=["linear", "log"])
    p.add_argument("--out", required=True, help="output image path (.svg)")

    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return 2 if exc.code else 0
    spec = FigureSpec(report=args.report, kind=args.kind, out=args.out, method=args.method,
                      boundary=args.boundary, fit=args.fit, xscale=args.xscale, yscale=args.yscale)
    try:
        out = render(spec)
    except (MissingColumnsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out} (+ sidecar {out}.json)")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
