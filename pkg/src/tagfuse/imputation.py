"""Neighbor-conditioned metadata imputation over an HTTP completion endpoint.

Per track: retrieve neighbors, build an in-context prompt from their
(metadata, caption) pairs, call the completion endpoint, parse the returned
JSON object, and merge fill-only-missing into the original record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .index import SearchIndex, top_k
from .metadata import (
    IMPUTABLE_FIELDS,
    LIST_FIELDS,
    CaptionRecord,
    ImputationRecord,
    Provenance,
    TrackMetadata,
    mask_fields,
    merge_imputed,
    metadata_from_json_dict,
    metadata_to_json_dict,
    missing_fields,
    render_metadata_text,
)

log = logging.getLogger(__name__)

PROMPT_TEMPLATE_ID = "icl-json-v1"

_PROMPT_HEADER = (
    "You annotate instrumental music. Each example below pairs the metadata of "
    "a track with a caption describing how it sounds. For the final caption, "
    "respond with a single JSON object with the keys \"speed\", \"genres\", "
    "\"instruments\" and \"vartags\"; \"speed\" is a string and the other "
    "values are lists of short strings."
)

RETRY_SUFFIX = "\nRespond with JSON only."


class ContextShortfallError(RuntimeError):
    """Not enough captioned candidates to build the requested context."""


class MissingCaptionError(RuntimeError):
    """The query track has no caption to prompt with."""


class UnknownTrackError(KeyError):
    """Query id has no metadata record."""


class TransportError(RuntimeError):
    """Endpoint unreachable or persistently failing after all retries."""


class RequestError(RuntimeError):
    """Non-retryable HTTP failure."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"completion endpoint returned {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


@dataclass(frozen=True)
class InContextExample:
    metadata_text: str
    caption: str

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise ValueError("in-context example caption is empty")


@dataclass(frozen=True)
class PromptSpec:
    """Everything needed to render one prompt deterministically.

    Examples are expected in descending neighbor-similarity order, which is
    how the engine constructs them.
    """

    examples: tuple[InContextExample, ...]
    target_caption: str
    template_id: str = PROMPT_TEMPLATE_ID

    def __post_init__(self) -> None:
        if not self.examples:
            raise ValueError("prompt needs at least one in-context example")
        if not self.target_caption.strip():
            raise ValueError("target caption is empty")


@dataclass(frozen=True)
class CompletionEndpoint:
    """HTTP completion contract: POST {prompt, max_tokens, temperature} -> {text}."""

    base_url: str
    max_tokens: int = 128
    temperature: float = 0.0
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")


def _one_line(text: str) -> str:
    return " ".join(text.split())


def build_prompt(spec: PromptSpec) -> str:
    """Render the fixed template; identical specs yield identical bytes."""
    blocks = [_PROMPT_HEADER, ""]
    for ex in spec.examples:
        blocks.append(f"Metadata: {_one_line(ex.metadata_text)}")
        blocks.append(f"Caption: {_one_line(ex.caption)}")
        blocks.append("")
    blocks.append(f"Caption: {_one_line(spec.target_caption)}")
    blocks.append("Metadata:")
    return "\n".join(blocks)


def call_llm(endpoint: CompletionEndpoint, prompt: str) -> str:
    """Fetch one completion, retrying transport errors and 429/5xx responses."""
    payload = {
        "prompt": prompt,
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
    }
    last_error = "no attempt made"
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(endpoint.base_url, json=payload, timeout=endpoint.timeout)
        except requests.RequestException as exc:
            last_error = str(exc)
            log.warning("completion attempt %d failed: %s", attempt + 1, exc)
            continue
        if resp.status_code == 200:
            try:
                body = resp.json()
                return str(body["text"])
            except (ValueError, KeyError) as exc:
                raise RequestError(200, f"malformed completion body: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = f"HTTP {resp.status_code}"
            log.warning("completion attempt %d got %s, retrying", attempt + 1, last_error)
            continue
        raise RequestError(resp.status_code, resp.text[:200])
    raise TransportError(
        f"completion endpoint failed after {endpoint.max_retries + 1} attempts: {last_error}"
    )


@dataclass(frozen=True)
class ParsedCompletion:
    metadata: TrackMetadata
    parse_failed: bool


def _coerce_scalar(value: object) -> str:
    if isinstance(value, (list, tuple)):
        value = value[0] if value else ""
    if value is None or isinstance(value, bool):
        return ""
    return str(value).strip().lower()


def _coerce_list(value: object) -> tuple[str, ...]:
    if value is None or isinstance(value, bool):
        return ()
    if isinstance(value, (int, float)):
        value = str(value)
    if isinstance(value, str):
        value = value.split(",")
    if not isinstance(value, (list, tuple)):
        return ()
    out = []
    for item in value:
        if item is None or isinstance(item, (dict, list, tuple)):
            continue
        text = str(item).strip().lower()
        if text:
            out.append(text)
    return tuple(out)


def parse_metadata_completion(text: str, track_id: int = 0) -> ParsedCompletion:
    """Extract metadata from the first balanced JSON object in a completion.

    Unknown keys are ignored, values are lowercased and coerced to the field's
    schema shape. When no object parses, an all-missing record is returned
    with the parse-failure flag set rather than raising.
    """
    decoder = json.JSONDecoder()
    obj = None
    idx = text.find("{")
    while idx != -1:
        try:
            candidate, _ = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
        idx = text.find("{", idx + 1)
    if obj is None:
        return ParsedCompletion(TrackMetadata(track_id=track_id), True)

    flat: dict[str, object] = {}
    for key, value in obj.items():
        name = str(key).strip().lower()
        if name == "tags" and isinstance(value, dict):
            for sub, subval in value.items():
                flat.setdefault(str(sub).strip().lower(), subval)
        else:
            flat.setdefault(name, value)

    kwargs: dict[str, object] = {"track_id": track_id}
    for name in IMPUTABLE_FIELDS:
        if name not in flat:
            continue
        if name in LIST_FIELDS:
            kwargs[name] = _coerce_list(flat[name])
        else:
            kwargs[name] = _coerce_scalar(flat[name])
    return ParsedCompletion(TrackMetadata(**kwargs), False)


@dataclass(frozen=True)
class ImputationOutcome:
    """One track's merge result plus the audit trail of how it was produced."""

    record: ImputationRecord
    mode: str
    neighbor_ids: tuple[int, ...] = ()
    prompt_sha256: str = ""
    raw_completion: str = ""
    parse_failed: bool = False
    skipped: bool = False
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "track_id": self.record.track_id,
            "mode": self.mode,
            "original": metadata_to_json_dict(self.record.original),
            "imputed": metadata_to_json_dict(self.record.imputed),
            "provenance": {k: v.value for k, v in sorted(self.record.provenance.items())},
            "neighbor_ids": list(self.neighbor_ids),
            "prompt_sha256": self.prompt_sha256,
            "parse_failed": self.parse_failed,
            "skipped": self.skipped,
            "error": self.error,
        }


def outcome_from_json_dict(d: Mapping) -> ImputationOutcome:
    original = metadata_from_json_dict(d["original"])
    imputed = metadata_from_json_dict(d["imputed"])
    provenance = {k: Provenance(v) for k, v in d["provenance"].items()}
    record = ImputationRecord(int(d["track_id"]), original, imputed, provenance)
    return ImputationOutcome(
        record=record,
        mode=d.get("mode", "retrieval"),
        neighbor_ids=tuple(int(i) for i in d.get("neighbor_ids", ())),
        prompt_sha256=d.get("prompt_sha256", ""),
        raw_completion=d.get("raw_completion", ""),
        parse_failed=bool(d.get("parse_failed", False)),
        skipped=bool(d.get("skipped", False)),
        error=d.get("error"),
    )


def write_outcomes_jsonl(outcomes: Iterable[ImputationOutcome], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(json.dumps(outcome.to_json_dict(), sort_keys=True))
            fh.write("\n")


def read_outcomes_jsonl(path: str | Path) -> list[ImputationOutcome]:
    outcomes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                outcomes.append(outcome_from_json_dict(json.loads(line)))
    return outcomes


class ImputationEngine:
    """Shared read-only stores plus the per-track imputation loop."""

    def __init__(
        self,
        metadata: Mapping[int, TrackMetadata],
        captions: Mapping[int, CaptionRecord],
        index: SearchIndex,
        endpoint: CompletionEndpoint,
        k: int = 10,
        generic_seed: int = 0,
        hold_out: Sequence[str] = (),
        retry_on_parse_failure: bool = False,
    ):
        self.metadata = dict(metadata)
        self.captions = dict(captions)
        self.index = index
        self.endpoint = endpoint
        self.k = k
        self.generic_seed = generic_seed
        self.hold_out = tuple(hold_out)
        self.retry_on_parse_failure = retry_on_parse_failure

    def select_context(self, query_id: int, mode: str) -> list[tuple[TrackMetadata, CaptionRecord]]:
        """Neighbor (metadata, caption) pairs, ranked for retrieval mode."""
        if mode == "retrieval":
            result = top_k(self.index, query_id, self.k)
            ids = list(result.ids())
            uncaptioned = [tid for tid in ids if tid not in self.captions]
            if len(ids) < self.k or uncaptioned:
                raise ContextShortfallError(
                    f"query {query_id}: need {self.k} captioned neighbors, got "
                    f"{len(ids) - len(uncaptioned)} (missing captions: {uncaptioned})"
                )
        elif mode == "generic":
            pool = sorted(
                int(tid) for tid in self.index.ids
                if int(tid) != query_id and int(tid) in self.captions and int(tid) in self.metadata
            )
            if len(pool) < self.k:
                raise ContextShortfallError(
                    f"query {query_id}: need {self.k} captioned candidates, pool has {len(pool)}"
                )
            rng = np.random.Generator(np.random.Philox(key=self.generic_seed))
            ids = [pool[i] for i in rng.choice(len(pool), size=self.k, replace=False)]
        else:
            raise ValueError(f"unknown context mode {mode!r}")
        missing_meta = [tid for tid in ids if tid not in self.metadata]
        if missing_meta:
            raise ContextShortfallError(f"query {query_id}: no metadata for neighbors {missing_meta}")
        return [(self.metadata[tid], self.captions[tid]) for tid in ids]

    def impute_track(self, query_id: int, mode: str = "retrieval") -> ImputationOutcome:
        try:
            original = self.metadata[query_id]
        except KeyError:
            raise UnknownTrackError(f"track_id {query_id} not in metadata store") from None
        if self.hold_out:
            original = mask_fields(original, self.hold_out)
        if not missing_fields(original):
            return ImputationOutcome(
                record=merge_imputed(original, original), mode=mode, skipped=True
            )
        caption = self.captions.get(query_id)
        if caption is None:
            raise MissingCaptionError(f"track_id {query_id} has no caption")

        context = self.select_context(query_id, mode)
        spec = PromptSpec(
            examples=tuple(
                InContextExample(render_metadata_text(meta), cap.text) for meta, cap in context
            ),
            target_caption=caption.text,
        )
        prompt = build_prompt(spec)
        raw = call_llm(self.endpoint, prompt)
        parsed = parse_metadata_completion(raw, track_id=query_id)
        if parsed.parse_failed and self.retry_on_parse_failure:
            raw = call_llm(self.endpoint, prompt + RETRY_SUFFIX)
            parsed = parse_metadata_completion(raw, track_id=query_id)
        record = merge_imputed(original, parsed.metadata)
        return ImputationOutcome(
            record=record,
            mode=mode,
            neighbor_ids=tuple(meta.track_id for meta, _ in context),
            prompt_sha256=hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            raw_completion=raw,
            parse_failed=parsed.parse_failed,
        )

    def impute_many(
        self,
        query_ids: Sequence[int],
        mode: str = "retrieval",
        max_in_flight: int = 4,
    ) -> list[ImputationOutcome]:
        """Batch imputation; per-track failures are recorded, never fatal.

        Results come back in input order regardless of worker scheduling.
        """
        def run(query_id: int) -> ImputationOutcome:
            try:
                return self.impute_track(query_id, mode)
            except Exception as exc:  # noqa: BLE001 - record-and-continue by contract
                log.warning("imputation failed for track %d: %s", query_id, exc)
                original = self.metadata.get(query_id, TrackMetadata(track_id=query_id))
                if self.hold_out:
                    original = mask_fields(original, self.hold_out)
                return ImputationOutcome(
                    record=merge_imputed(original, TrackMetadata(track_id=query_id)),
                    mode=mode,
                    error=f"{type(exc).__name__}: {exc}",
                )

        if max_in_flight <= 1 or len(query_ids) <= 1:
            return [run(tid) for tid in query_ids]
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(run, query_ids))
