"""Command line entry point for extraction jobs."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .encoders import (
    DEFAULT_AUDIO_DIM,
    DEFAULT_AUDIO_LAYERS,
    DEFAULT_TEXT_DIM,
    HASH_BACKEND,
    make_audio_encoder,
    make_text_encoder,
)
from .extract import ExtractionJob, extract_audio, extract_metadata_text, extract_token_vectors

log = logging.getLogger("tagfuse_extractor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagfuse-extract",
        description="Extract audio/text embeddings into JMXE files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audio", help="audio manifest CSV -> JMXE of layer matrices")
    p.add_argument("--manifest", required=True, help="CSV of track_id,audio_path")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=HASH_BACKEND,
                   help=f"model id, or {HASH_BACKEND!r} for the deterministic backend")
    p.add_argument("--device", default="cpu")
    p.add_argument("--layers", type=int, default=None,
                   help="expected layer count (and the hash backend's layer count)")
    p.add_argument("--dim", type=int, default=None,
                   help="expected feature dim (and the hash backend's dim)")
    p.set_defaults(kind="audio")

    p = sub.add_parser("metadata", help="metadata JSONL -> JMXE of text vectors")
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=HASH_BACKEND)
    p.add_argument("--device", default="cpu")
    p.add_argument("--dim", type=int, default=None,
                   help="expected dim; the loaded encoder's hidden size otherwise")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(kind="metadata")

    p = sub.add_parser("tokens", help="metadata JSONL -> token vector table")
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=HASH_BACKEND)
    p.add_argument("--device", default="cpu")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(kind="tokens")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.kind == "audio":
            job = ExtractionJob(Path(args.manifest), Path(args.out), args.model,
                                device=args.device, expected_layers=args.layers,
                                expected_dim=args.dim)
            encoder = make_audio_encoder(args.model, device=args.device,
                                         layers=args.layers or DEFAULT_AUDIO_LAYERS,
                                         dim=args.dim or DEFAULT_AUDIO_DIM)
            extract_audio(job, encoder)
        else:
            job = ExtractionJob(Path(args.metadata), Path(args.out), args.model,
                                device=args.device, batch_size=args.batch_size,
                                expected_dim=args.dim)
            encoder = make_text_encoder(args.model, device=args.device,
                                        dim=args.dim or DEFAULT_TEXT_DIM,
                                        batch_size=args.batch_size)
            if args.kind == "metadata":
                extract_metadata_text(job, encoder)
            else:
                extract_token_vectors(job, encoder)
    except (ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except (RuntimeError, OSError) as exc:
        log.error("runtime failure: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
