"""Command-line entry point for the evaluation worker."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .server import serve, serve_tcp


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="eval-worker",
        description="Evaluate candidate programs against reference implementations "
                    "over a newline-delimited JSON protocol.",
    )
    parser.add_argument("--port", type=int, default=None,
                        help="serve over TCP on this port instead of stdio")
    parser.add_argument("--device", default="cpu", choices=["cpu"],
                        help="evaluation device (this build is CPU-only)")
    args = parser.parse_args(argv)
    if args.port is not None:
        serve_tcp(args.port)
    else:
        serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
