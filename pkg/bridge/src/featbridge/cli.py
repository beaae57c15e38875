"""Command line for the extraction bridge.

Exit codes: 0 ok, 1 usage, 2 data error (bad manifest or image set).
"""

import argparse
import logging
import sys

from .encoders import variant_dim
from .extract import (BridgeConfig, ManifestError, extract_features,
                      extract_ner, read_manifest, run_bridge, write_jsonl)
from .sample import CAPTIONS, make_sample_corpus


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _variant(text):
    try:
        variant_dim(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def _add_knobs(p):
    p.add_argument("--clip-variant", type=_variant, default="ViT-B/32",
                   help="ViT-B/32, ViT-B/16, ViT-L/14, or stub-N")
    p.add_argument("--threshold", type=float, default=0.7,
                   help="detection score cutoff (default 0.7)")
    p.add_argument("--max-objects", type=int, default=10,
                   help="object slots per record; match the consumer's N_obj")


def _config(args, features_out=None, ner_out=None):
    return BridgeConfig(
        manifest=args.manifest, features_out=features_out, ner_out=ner_out,
        clip_variant=args.clip_variant, threshold=args.threshold,
        max_objects=args.max_objects,
    )


def cmd_run(args):
    config = _config(args, args.features_out, args.ner_out)
    written, skipped = run_bridge(config)
    print(f"wrote {len(written)} records to {args.features_out} and "
          f"{args.ner_out}" + (f" ({len(skipped)} skipped)" if skipped else ""))
    return 0


def cmd_features(args):
    config = _config(args)
    records, skipped = extract_features(read_manifest(args.manifest), config)
    write_jsonl(records, args.out)
    print(f"wrote {len(records)} feature records to {args.out}"
          + (f" ({len(skipped)} skipped)" if skipped else ""))
    return 0


def cmd_ner(args):
    records = extract_ner(read_manifest(args.manifest))
    write_jsonl(records, args.out)
    tagged = sum(1 for r in records if r["entities"])
    print(f"wrote {len(records)} NER records to {args.out} ({tagged} with entities)")
    return 0


def cmd_make_sample(args):
    manifest = make_sample_corpus(args.out, count=args.count)
    print(f"wrote {args.count}-image sample corpus; manifest at {manifest}")
    return 0


def build_parser():
    parser = _Parser(prog="featbridge",
                     description="image+caption corpus -> feature / NER files")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="extract both files with matching id sets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-out", required=True)
    p.add_argument("--ner-out", required=True)
    _add_knobs(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("features", help="extract the feature file only")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_knobs(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("ner", help="extract the NER file only")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ner)

    p = sub.add_parser("make-sample", help="write a small demo corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=len(CAPTIONS))
    p.set_defaults(func=cmd_make_sample)

    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ManifestError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
