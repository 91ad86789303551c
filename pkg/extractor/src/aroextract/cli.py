"""CLI: one subcommand, `extract`.

    aroextract extract --model hash:64 --kind text --manifest caps.jsonl --out caps.aroe

Exit codes: 0 success, 1 usage/model error, 2 data error. Any skipped
(unreadable) image also yields exit 2; readable rows are still written so a
partial run is inspectable.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import __version__
from .encoders import build_encoder
from .errors import ExtractorError, UsageError
from .extract import ExtractionJob, run


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="aroextract", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"aroextract {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed a manifest into an AROE file")
    p.add_argument("--model", required=True, help="hash:<dim> or clip:<hf-model-id>")
    p.add_argument("--kind", required=True, choices=["image", "text"])
    p.add_argument("--manifest", required=True, help="JSONL manifest")
    p.add_argument("--out", required=True, help="output AROE path")
    p.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = ExtractionJob(
            model_id=args.model,
            kind=args.kind,
            manifest=args.manifest,
            out=args.out,
            batch_size=args.batch_size,
        )
        result = run(job, build_encoder(args.model))
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.written} {args.kind} embeddings to {args.out}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable inputs", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
