"""Command-line exporter: turn a manifest plus frozen weights into a PCFF file.

Each command prints one machine-readable JSON summary line to stdout on
success. Exit codes match the detector CLI: 0 success, 1 usage, 2 io or
file-format failure, 3 validation failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .backbones import BackboneSpec, make_stub_weights
from .errors import FileFormatError, ImageError, ValidationError
from .export import export_features


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _cmd_export(args) -> None:
    spec = BackboneSpec(
        name=args.name,
        weights=args.weights,
        dim=args.dim,
        preprocessing=args.preprocess,
    )
    summary = export_features(
        args.manifest,
        spec,
        args.out,
        batch_size=args.batch,
        split=args.split,
    )
    _emit(summary)


def _cmd_make_weights(args) -> None:
    out = make_stub_weights(args.out, dim=args.dim, side=args.side, seed=args.seed)
    _emit({"out": str(out), "dim": args.dim, "side": args.side, "seed": args.seed})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfexport", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="embed a manifest with frozen weights")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True, help="backbone weights archive (.npz)")
    p.add_argument("--name", required=True, help="backend tag stored in the output")
    p.add_argument("--dim", required=True, type=int, help="expected output width")
    p.add_argument("--preprocess", default="", help="preprocessing note for the summary")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=("train", "val", "test"))
    p.add_argument("--batch", type=int, default=16)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("make-weights", help="write a random frozen stub projection")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "batch", 1) < 1:
        print("error: --batch must be at least 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (FileFormatError, ImageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
