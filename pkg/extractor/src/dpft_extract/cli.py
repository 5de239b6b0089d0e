"""Command-line front end.

Two subcommands:

    extract   run a backbone over an image tree and write DPFT outputs
    inspect   print the header of a DPFT file or the summary of a manifest

Exit codes follow the engine convention: 0 on success, 2 for bad input
(unknown flags, missing paths, malformed arguments), 3 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ValidationError, ExtractError
from .encoder import ExtractJob, extract, SUPPORTED_BACKBONES
from . import fileio


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dpft-extract",
        description="Extract image-folder embeddings into DPFT feature files.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_ex = sub.add_parser("extract", help="run a backbone over an image tree")
    p_ex.add_argument("--data-dir", required=True, help="dataset root with one subdirectory per class")
    p_ex.add_argument("--out-dir", required=True, help="directory for the output files")
    p_ex.add_argument("--backbone", default="resnet18", choices=SUPPORTED_BACKBONES)
    p_ex.add_argument("--init-seed", type=int, default=0, help="seed for the random backbone weights")
    p_ex.add_argument("--batch-size", type=int, default=32)
    p_ex.add_argument("--image-size", type=int, default=224)
    p_ex.add_argument("--template", default="a photo of a {}", help="prompt template for class anchors, {} is the class name")
    p_ex.add_argument("--no-logits", action="store_true", help="skip the logits file")
    p_ex.add_argument("--no-anchors", action="store_true", help="skip the anchors file")

    p_in = sub.add_parser("inspect", help="describe a DPFT file or manifest")
    p_in.add_argument("path", help="a .dpft file or a manifest.json")

    return parser


def cmd_extract(args):
    job = ExtractJob(
        data_dir=args.data_dir,
        out_dir=args.out_dir,
        backbone=args.backbone,
        init_seed=args.init_seed,
        batch_size=args.batch_size,
        image_size=args.image_size,
        template=args.template,
        write_logits=not args.no_logits,
        write_anchors=not args.no_anchors,
    )
    result = extract(job)
    print(
        f"wrote {result.count} rows of dim {result.dim} "
        f"for {len(result.classes)} classes to {result.out_dir}"
    )
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable files, see manifest")
    return 0


def cmd_inspect(args):
    path = Path(args.path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    if path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        for key in ("backbone", "init_seed", "count", "dim"):
            print(f"{key}: {doc.get(key)}")
        print(f"classes: {len(doc.get('classes', []))}")
        print(f"skipped: {len(doc.get('skipped', []))}")
        return 0
    matrix, normalized = fileio.read_features(path)
    print(f"rows: {matrix.shape[0]}")
    print(f"dim: {matrix.shape[1]}")
    print(f"normalized: {normalized}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handler = {"extract": cmd_extract, "inspect": cmd_inspect}[args.command]
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except fileio.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
