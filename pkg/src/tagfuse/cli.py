"""Single entry point exposing every pipeline stage as a subcommand.

Exit codes: 0 success, 1 input/config error, 2 runtime failure. Logs go to
stderr; data goes to files (or stdout for the query/report commands).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import audiostats, evaluation, imputation, jamendo, metadata
from .embeddings import EmbeddingFormatError, read_embeddings, write_embeddings
from .fusion import FusionConfig, FusionConfigError, ProjectionMatrix, fuse
from .index import build_index, read_index, top_k, write_index
from .metadata import read_captions_jsonl, read_metadata_jsonl, segment_zero_captions

log = logging.getLogger("tagfuse")

ENDPOINT_ENV = "TAGFUSE_ENDPOINT"
CREDENTIAL_ENV = "JAMENDO_CLIENT_ID"


class ConfigError(ValueError):
    """Bad flags, config file, or missing inputs (exit code 1)."""


@dataclass
class RunConfig:
    """Declarative defaults loaded from a JSON config file; flags win."""

    data: dict

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls({})
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        if "fusion" in data:
            try:
                FusionConfig(**data["fusion"])
            except (TypeError, FusionConfigError) as exc:
                raise ConfigError(f"config fusion section invalid: {exc}") from None
        return cls(data)

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node


def _resolve(flag_value: Any, cfg: RunConfig, key: str, default: Any = None) -> Any:
    if flag_value is not None:
        return flag_value
    return cfg.get(key, default)


def _require_inputs(**paths: str | None) -> None:
    missing = [f"--{name.replace('_', '-')}" for name, p in paths.items() if p is None]
    if missing:
        raise ConfigError(f"missing required input(s): {', '.join(missing)}")
    absent = [p for p in paths.values() if p is not None and not Path(p).exists()]
    if absent:
        raise ConfigError(f"input path(s) do not exist: {', '.join(absent)}")


def _fusion_config(args: argparse.Namespace, cfg: RunConfig) -> FusionConfig:
    lambda_audio = _resolve(args.lambda_audio, cfg, "fusion.lambda_audio", 0.6)
    lambda_meta = _resolve(args.lambda_meta, cfg, "fusion.lambda_meta", 0.4)
    try:
        return FusionConfig(lambda_audio=lambda_audio, lambda_meta=lambda_meta)
    except FusionConfigError as exc:
        raise ConfigError(str(exc)) from None


# --- subcommands ------------------------------------------------------------------


def _cmd_crawl(args: argparse.Namespace, cfg: RunConfig) -> int:
    credential = os.environ.get(CREDENTIAL_ENV, "")
    if not credential:
        raise ConfigError(f"set {CREDENTIAL_ENV} to your API client id")
    api = jamendo.ApiConfig(
        base_url=_resolve(args.base_url, cfg, "jamendo.base_url", "https://api.jamendo.com/v3.0"),
        client_credential=credential,
        page_size=_resolve(args.page_size, cfg, "jamendo.page_size", 200),
        year_range=(args.year_start, args.year_end),
        rate_limit=_resolve(args.rate_limit, cfg, "jamendo.rate_limit", 1.0),
    )
    client = jamendo.JamendoClient(api)
    stats = jamendo.crawl(client, args.out, args.checkpoint,
                          max_pages=args.max_pages, download_dir=args.download_audio)
    log.info("crawl done: %d pages, %d records, %d skipped, %d flagged short, %d downloaded",
             stats.pages, stats.records, stats.skipped, stats.flagged_short, stats.downloaded)
    return 0


def _cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.embeddings is None and args.metadata is None:
        raise ConfigError("nothing to ingest: pass --embeddings and/or --metadata")
    if args.embeddings is not None:
        _require_inputs(embeddings=args.embeddings)
        coll = read_embeddings(args.embeddings)
        write_embeddings(coll, args.out or args.embeddings)
        log.info("validated %d embeddings (layers=%d dim=%d)", len(coll), coll.layers, coll.dim)
    if args.metadata is not None:
        _require_inputs(metadata=args.metadata)
        records = read_metadata_jsonl(args.metadata)
        metadata.write_metadata_jsonl(records.values(), args.metadata_out or args.metadata)
        log.info("validated %d metadata records", len(records))
    return 0


def _cmd_embed_check(args: argparse.Namespace, cfg: RunConfig) -> int:
    for path in args.paths:
        _require_inputs(path=path)
        coll = read_embeddings(path)
        print(f"{path}: ok count={len(coll)} layers={coll.layers} dim={coll.dim}")
    return 0


def _cmd_build_index(args: argparse.Namespace, cfg: RunConfig) -> int:
    audio_path = _resolve(args.audio_embeddings, cfg, "paths.audio_embeddings")
    meta_path = _resolve(args.metadata_embeddings, cfg, "paths.metadata_embeddings")
    out_path = _resolve(args.out, cfg, "paths.index")
    _require_inputs(audio_embeddings=audio_path, metadata_embeddings=meta_path)
    if out_path is None:
        raise ConfigError("missing --out for the index file")
    fusion_cfg = _fusion_config(args, cfg)
    seed = _resolve(args.seed, cfg, "seed", 0)

    audio = read_embeddings(audio_path)
    meta = read_embeddings(meta_path)
    if meta.layers != 1:
        raise ConfigError(f"metadata embeddings must have layers=1, got {meta.layers}")
    audio_ids = set(audio.ids.tolist())
    meta_ids = set(meta.ids.tolist())
    if audio_ids != meta_ids:
        raise ConfigError(
            f"track sets differ: {len(audio_ids - meta_ids)} audio-only, "
            f"{len(meta_ids - audio_ids)} metadata-only"
        )
    proj = ProjectionMatrix(
        seed=seed,
        input_dim=audio.layers * audio.dim,
        output_dim=_resolve(args.projection_dim, cfg, "projection.output_dim", meta.dim),
        sparsity=_resolve(args.sparsity, cfg, "projection.sparsity", 0.0),
    )
    flat = audio.values.reshape(len(audio), -1)
    projected = proj.apply_many(flat)
    meta_by_id = {int(tid): meta.values[i, 0] for i, tid in enumerate(meta.ids)}
    fused = []
    degenerate = 0
    for i, tid in enumerate(audio.ids.tolist()):
        fv = fuse(projected[i], meta_by_id[int(tid)], fusion_cfg, track_id=int(tid))
        if fv.degenerate:
            degenerate += 1
        fused.append(fv)
    index = build_index(fused, projection=proj)
    write_index(index, out_path)
    if degenerate:
        log.warning("%d fused vectors are degenerate (all-zero)", degenerate)
    log.info("index built: %d vectors of dim %d -> %s", len(index), index.dim, out_path)
    return 0


def _cmd_retrieve(args: argparse.Namespace, cfg: RunConfig) -> int:
    index_path = _resolve(args.index, cfg, "paths.index")
    _require_inputs(index=index_path)
    index = read_index(index_path)
    result = top_k(index, args.query_id, k=_resolve(args.k, cfg, "k", 10))
    indent = None if args.json else 2
    print(json.dumps(result.to_json_dict(), indent=indent, sort_keys=True))
    return 0


def _cmd_impute(args: argparse.Namespace, cfg: RunConfig) -> int:
    metadata_path = _resolve(args.metadata, cfg, "paths.metadata")
    captions_path = _resolve(args.captions, cfg, "paths.captions")
    index_path = _resolve(args.index, cfg, "paths.index")
    out_path = _resolve(args.out, cfg, "paths.output")
    _require_inputs(metadata=metadata_path, captions=captions_path, index=index_path)
    if out_path is None:
        raise ConfigError("missing --out for imputation results")
    base_url = args.endpoint_url or os.environ.get(ENDPOINT_ENV) or cfg.get("endpoint.base_url")
    if not base_url:
        raise ConfigError(f"no completion endpoint: pass --endpoint-url or set {ENDPOINT_ENV}")

    endpoint = imputation.CompletionEndpoint(
        base_url=base_url,
        max_tokens=_resolve(args.max_tokens, cfg, "endpoint.max_tokens", 128),
        temperature=_resolve(args.temperature, cfg, "endpoint.temperature", 0.0),
        timeout=_resolve(None, cfg, "endpoint.timeout", 30.0),
        max_retries=_resolve(None, cfg, "endpoint.max_retries", 3),
    )
    records = read_metadata_jsonl(metadata_path)
    captions = segment_zero_captions(read_captions_jsonl(captions_path))
    index = read_index(index_path)
    engine = imputation.ImputationEngine(
        metadata=records,
        captions=captions,
        index=index,
        endpoint=endpoint,
        k=_resolve(args.k, cfg, "k", 10),
        generic_seed=_resolve(args.generic_seed, cfg, "generic_seed", 0),
        hold_out=tuple(args.hold_out.split(",")) if args.hold_out else (),
        retry_on_parse_failure=args.retry_parse,
    )
    if args.track_ids:
        query_ids = [int(t) for t in args.track_ids.split(",")]
    else:
        indexed = {int(i) for i in index.ids.tolist()}
        query_ids = sorted(tid for tid in records if tid in captions and tid in indexed)
    if args.limit is not None:
        query_ids = query_ids[: args.limit]
    outcomes = engine.impute_many(
        query_ids,
        mode=args.mode,
        max_in_flight=_resolve(args.max_in_flight, cfg, "max_in_flight", 4),
    )
    imputation.write_outcomes_jsonl(outcomes, out_path)
    filled = sum(
        1 for o in outcomes
        if any(v is metadata.Provenance.IMPUTED for v in o.record.provenance.values())
    )
    log.info(
        "imputed %d/%d tracks (%d skipped, %d parse failures, %d errors) -> %s",
        filled, len(outcomes), sum(o.skipped for o in outcomes),
        sum(o.parse_failed for o in outcomes),
        sum(o.error is not None for o in outcomes), out_path,
    )
    return 0


def _provider(args: argparse.Namespace) -> evaluation.TokenVectorProvider:
    if args.vectors:
        _require_inputs(vectors=args.vectors)
        return evaluation.FileVectorProvider(args.vectors)
    if args.embedding_url:
        return evaluation.HttpVectorProvider(args.embedding_url)
    raise ConfigError("need a token-vector source: --vectors FILE or --embedding-url URL")


def _cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    provider = _provider(args)
    fields = args.fields.split(",") if args.fields else list(evaluation.EVAL_FIELDS)
    originals_override = None
    if args.original:
        _require_inputs(original=args.original)
        originals_override = read_metadata_jsonl(args.original)

    reports_by_mode: dict[str, dict[str, evaluation.FieldReport]] = {}
    for imputations_path in args.imputations:
        _require_inputs(imputations=imputations_path)
        outcomes = imputation.read_outcomes_jsonl(imputations_path)
        if not outcomes:
            raise ConfigError(f"no imputation outcomes in {imputations_path}")
        mode = outcomes[0].mode
        imputeds = {o.record.track_id: o.record.imputed for o in outcomes}
        originals = originals_override or {
            o.record.track_id: o.record.original for o in outcomes
        }
        by_field: dict[str, evaluation.FieldReport] = {}
        for field_name in fields:
            pairs = evaluation.sample_field_pairs(
                originals, imputeds, field_name,
                sample_size=_resolve(args.sample_size, cfg, "sample_size", 5000),
                seed=_resolve(args.seed, cfg, "seed", 7),
            )
            if not pairs:
                raise ConfigError(f"no evaluable pairs for field {field_name!r}")
            by_field[field_name] = evaluation.evaluate_field(pairs, provider, field_name)
        reports_by_mode[mode] = by_field

    output = (
        evaluation.report_to_json(reports_by_mode)
        if args.json else evaluation.format_report_table(reports_by_mode)
    )
    if args.out:
        Path(args.out).write_text(output + "\n", encoding="utf-8")
    else:
        print(output)
    return 0


def _cmd_stats(args: argparse.Namespace, cfg: RunConfig) -> int:
    paths: list[Path] = [Path(p) for p in args.wav_files]
    if args.audio_dir:
        _require_inputs(audio_dir=args.audio_dir)
        paths.extend(sorted(Path(args.audio_dir).glob("*.wav")))
    if not paths:
        raise ConfigError("no WAV inputs given")
    streams = [audiostats.read_wav(p) for p in paths]
    rows = audiostats.dataset_stats(streams)
    if args.csv_out:
        Path(args.csv_out).write_text(audiostats.stats_csv(rows), encoding="utf-8")
    print(audiostats.stats_table(rows))
    return 0


def _cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require_inputs(original=args.original, imputations=args.imputations)
    originals = list(read_metadata_jsonl(args.original).values())
    outcomes = imputation.read_outcomes_jsonl(args.imputations)
    imputeds = [o.record.imputed for o in outcomes]
    fields = args.fields.split(",") if args.fields else list(evaluation.EVAL_FIELDS)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for field_name in fields:
        csv_text = evaluation.distribution_csv(originals, imputeds, field_name)
        target = out_dir / f"{field_name}_distribution.csv"
        target.write_text(csv_text, encoding="utf-8")
        log.info("wrote %s", target)
    return 0


# --- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagfuse",
        description="Fused audio/metadata retrieval and music metadata imputation pipeline.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crawl", help="fetch instrumental track metadata pages")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--base-url")
    p.add_argument("--page-size", type=int)
    p.add_argument("--year-start", type=int, default=2008)
    p.add_argument("--year-end", type=int, default=2023)
    p.add_argument("--rate-limit", type=float)
    p.add_argument("--max-pages", type=int)
    p.add_argument("--download-audio", metavar="DIR")
    p.set_defaults(func=_cmd_crawl)

    p = sub.add_parser("ingest", help="validate and re-emit canonical files")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--metadata")
    p.add_argument("--metadata-out")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("embed-check", help="validate embedding files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=_cmd_embed_check)

    p = sub.add_parser("build-index", help="project, fuse, and index embeddings")
    p.add_argument("--audio-embeddings")
    p.add_argument("--metadata-embeddings")
    p.add_argument("--out")
    p.add_argument("--lambda-audio", type=float)
    p.add_argument("--lambda-meta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--projection-dim", type=int)
    p.add_argument("--sparsity", type=float)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("retrieve", help="query the index for nearest neighbors")
    p.add_argument("--index")
    p.add_argument("--query-id", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--json", action="store_true", help="compact single-line JSON")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("impute", help="fill missing metadata via the completion endpoint")
    p.add_argument("--metadata")
    p.add_argument("--captions")
    p.add_argument("--index")
    p.add_argument("--out")
    p.add_argument("--mode", choices=("retrieval", "generic"), default="retrieval")
    p.add_argument("--k", type=int)
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--generic-seed", type=int)
    p.add_argument("--hold-out", help="comma-separated fields to blank before imputing")
    p.add_argument("--track-ids", help="comma-separated query ids (default: all eligible)")
    p.add_argument("--limit", type=int)
    p.add_argument("--endpoint-url", help=f"completion endpoint (default: ${ENDPOINT_ENV})")
    p.add_argument("--retry-parse", action="store_true",
                   help="retry once with a JSON-only suffix on parse failure")
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("evaluate", help="score imputed metadata against originals")
    p.add_argument("--imputations", nargs="+", required=True)
    p.add_argument("--original", help="metadata JSONL with the true originals (held-out runs)")
    p.add_argument("--vectors", help="token vectors file for BERT-Score")
    p.add_argument("--embedding-url", help="token embedding HTTP service")
    p.add_argument("--fields")
    p.add_argument("--sample-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="signal statistics over WAV files")
    p.add_argument("wav_files", nargs="*")
    p.add_argument("--audio-dir")
    p.add_argument("--csv-out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("report", help="original vs imputed value distributions")
    p.add_argument("--original", required=True)
    p.add_argument("--imputations", required=True)
    p.add_argument("--fields")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except (ConfigError, FusionConfigError, FileNotFoundError, ValueError,
            EmbeddingFormatError, KeyError, jamendo.AuthError) as exc:
        log.error("%s", exc)
        return 1
    except (RuntimeError, OSError) as exc:
        log.error("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
