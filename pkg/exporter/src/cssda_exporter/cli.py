"""Command line for the embedding exporter.

Exit codes match the consumer's convention: 0 ok, 1 usage, 2 data/format/
encoder error (including a failed verification).
"""
from __future__ import annotations

import argparse
import sys

from .encoders import HASH_ENCODER
from .errors import ExporterError
from .export import export, verify


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def cmd_export(args) -> int:
    result = export(args.texts, args.encoder, args.out,
                    labels_path=args.labels_out,
                    manifest_path=args.manifest_out)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {result.manifest.count} x {result.manifest.dim} embeddings "
          f"to {result.embeddings_path}", file=sys.stderr)
    print(result.manifest.content_hash)
    return 0


def cmd_verify(args) -> int:
    problems = verify(args.embeddings, args.manifest)
    if problems:
        for problem in problems:
            print(problem)
        return 2
    print("ok")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cssda-embed", description=__doc__)
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    exp = commands.add_parser("export", help="embed a texts CSV")
    exp.add_argument("--texts", required=True)
    exp.add_argument("--encoder", default=HASH_ENCODER,
                     help=f"'{HASH_ENCODER}' or a transformer name/path")
    exp.add_argument("--out", required=True)
    exp.add_argument("--labels-out", default=None)
    exp.add_argument("--manifest-out", default=None)
    exp.set_defaults(func=cmd_export)

    ver = commands.add_parser("verify",
                              help="check an embedding file against its manifest")
    ver.add_argument("--embeddings", required=True)
    ver.add_argument("--manifest", required=True)
    ver.set_defaults(func=cmd_verify)
    return parser


def entry(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise _UsageError("a command is required (export, verify)")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
