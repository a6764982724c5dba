"""Command line entry point: mfv-extract."""
from __future__ import annotations

import argparse
import sys

from .encoders import build_encoders, load_encoder_config
from .errors import ConfigError, ExtractorError
from .pipeline import ERROR_LOG, run_extraction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfv-extract",
        description="Encode (audio file, caption) pairs into the MFV1 feature "
                    "tree and manifest the relevance scorer trains on.",
    )
    parser.add_argument("--audio-dir", required=True,
                        help="directory the captions' audio filenames resolve against")
    parser.add_argument("--captions", required=True,
                        help="JSONL with pair_id, audio, text and optional label/split")
    parser.add_argument("--out", required=True, help="output feature tree root")
    parser.add_argument("--encoders", default=None,
                        help="encoder config JSON; omit for the built-in defaults")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel extraction threads (default 1)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    encoders = build_encoders(load_encoder_config(args.encoders))
    report = run_extraction(args.audio_dir, args.captions, args.out, encoders,
                            workers=args.workers)
    counts = report.split_counts
    print(f"wrote {len(report.ok)} pairs to {args.out} "
          f"(train {counts['train']}, dev {counts['dev']}, test {counts['test']})")
    for name, enc in encoders.sims.items():
        print(f"  {name}: audio dim {enc.dim}, text dim {enc.dim}")
    if encoders.seq is not None:
        print(f"  seq: {encoders.seq.layers} layers x {encoders.seq.audio_dim} "
              f"audio dims, {encoders.seq.text_dim} text dims per token")
    if report.failed:
        for pair_id, msg in report.failed:
            print(f"error: pair {pair_id!r}: {msg}", file=sys.stderr)
        print(f"error: {len(report.failed)} of {len(report.ok) + len(report.failed)} "
              f"pairs failed; see {args.out}/{ERROR_LOG}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
