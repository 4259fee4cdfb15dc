"""Track metadata schema, missing-field semantics, and fill-only-missing merge.

The canonical on-disk form is JSON Lines with a nested ``tags`` object
(``genres``, ``instruments``, ``vartags``); in memory everything is flat and
immutable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

SCALAR_FIELDS = ("vocalinstrumental", "lang", "gender", "speed")
LIST_FIELDS = ("genres", "instruments", "vartags")

# lang/gender are always empty for instrumental collections; they are carried
# through I/O untouched but never imputed, rendered, or evaluated.
EXCLUDED_FIELDS = frozenset({"lang", "gender"})

# Fixed rendering / imputation order.
IMPUTABLE_FIELDS = ("vocalinstrumental", "speed", "genres", "instruments", "vartags")


class TrackIdMismatchError(ValueError):
    """Merge was handed two records for different tracks (caller bug)."""


class Provenance(str, Enum):
    ORIGINAL = "original"
    IMPUTED = "imputed"
    STILL_MISSING = "still-missing"


def _clean_scalar(value: object) -> str:
    if value is None:
        return ""
    return str(value).strip()


def _clean_list(values: object) -> tuple[str, ...]:
    """Trim entries, drop empties, dedup case-insensitively (first wins)."""
    if values is None:
        return ()
    if isinstance(values, str):
        raise TypeError("list field expects a sequence of strings, got a bare string")
    out: list[str] = []
    seen: set[str] = set()
    for raw in values:
        entry = str(raw).strip()
        if not entry:
            continue
        key = entry.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(entry)
    return tuple(out)


@dataclass(frozen=True)
class TrackMetadata:
    """One track's metadata record; missing means empty string / empty tuple."""

    track_id: int
    vocalinstrumental: str = ""
    lang: str = ""
    gender: str = ""
    speed: str = ""
    genres: tuple[str, ...] = ()
    instruments: tuple[str, ...] = ()
    vartags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if int(self.track_id) < 0:
            raise ValueError(f"track_id must be unsigned, got {self.track_id}")
        object.__setattr__(self, "track_id", int(self.track_id))
        for name in SCALAR_FIELDS:
            object.__setattr__(self, name, _clean_scalar(getattr(self, name)))
        for name in LIST_FIELDS:
            object.__setattr__(self, name, _clean_list(getattr(self, name)))

    def field_missing(self, name: str) -> bool:
        value = getattr(self, name)
        return value == "" if name in SCALAR_FIELDS else len(value) == 0


@dataclass(frozen=True)
class CaptionRecord:
    """Natural-language description of one 30-second segment of a track."""

    track_id: int
    segment_index: int
    text: str

    def __post_init__(self) -> None:
        if self.track_id < 0:
            raise ValueError("track_id must be unsigned")
        if self.segment_index < 0:
            raise ValueError("segment_index must be unsigned")
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValueError(f"caption text for track {self.track_id} is empty")


@dataclass(frozen=True)
class ImputationRecord:
    """Original plus imputed metadata with a per-field provenance flag."""

    track_id: int
    original: TrackMetadata
    imputed: TrackMetadata
    provenance: Mapping[str, Provenance]

    def __post_init__(self) -> None:
        if self.original.track_id != self.track_id or self.imputed.track_id != self.track_id:
            raise TrackIdMismatchError("record track_id does not match its metadata")
        for name in IMPUTABLE_FIELDS:
            flag = self.provenance[name]
            if flag is Provenance.ORIGINAL:
                if getattr(self.original, name) != getattr(self.imputed, name):
                    raise ValueError(f"provenance=original but {name} changed")
            elif flag is Provenance.IMPUTED:
                if not self.original.field_missing(name) or self.imputed.field_missing(name):
                    raise ValueError(f"provenance=imputed invalid for {name}")
            elif flag is Provenance.STILL_MISSING:
                if not self.imputed.field_missing(name):
                    raise ValueError(f"provenance=still-missing but {name} is populated")


def missing_fields(m: TrackMetadata) -> set[str]:
    """Names of the missing fields, excluding the always-empty lang/gender."""
    return {name for name in IMPUTABLE_FIELDS if m.field_missing(name)}


def render_metadata_text(m: TrackMetadata) -> str:
    """Deterministic single-line rendering used for text embedding and prompts.

    Fixed key order; missing fields render as ``key: none``; list values are
    joined with ", ".
    """
    parts = []
    for name in IMPUTABLE_FIELDS:
        value = getattr(m, name)
        if name in LIST_FIELDS:
            text = ", ".join(value) if value else "none"
        else:
            text = value if value else "none"
        parts.append(f"{name}: {text}")
    return "; ".join(parts)


def mask_fields(m: TrackMetadata, fields: Iterable[str]) -> TrackMetadata:
    """Copy of ``m`` with the given fields blanked (for held-out evaluation)."""
    updates: dict[str, object] = {}
    for name in fields:
        if name not in IMPUTABLE_FIELDS:
            raise ValueError(f"cannot mask unknown field {name!r}")
        updates[name] = () if name in LIST_FIELDS else ""
    return replace(m, **updates)


def merge_imputed(original: TrackMetadata, candidate: TrackMetadata) -> ImputationRecord:
    """Fill-only-missing merge: present original values are never overwritten."""
    if original.track_id != candidate.track_id:
        raise TrackIdMismatchError(
            f"track_id mismatch: original={original.track_id} candidate={candidate.track_id}"
        )
    updates: dict[str, object] = {}
    provenance: dict[str, Provenance] = {}
    for name in IMPUTABLE_FIELDS:
        if not original.field_missing(name):
            provenance[name] = Provenance.ORIGINAL
        elif not candidate.field_missing(name):
            updates[name] = getattr(candidate, name)
            provenance[name] = Provenance.IMPUTED
        else:
            provenance[name] = Provenance.STILL_MISSING
    imputed = replace(original, **updates)
    return ImputationRecord(original.track_id, original, imputed, provenance)


# --- JSON Lines persistence -------------------------------------------------

def metadata_to_json_dict(m: TrackMetadata) -> dict:
    return {
        "track_id": m.track_id,
        "vocalinstrumental": m.vocalinstrumental,
        "lang": m.lang,
        "gender": m.gender,
        "speed": m.speed,
        "tags": {
            "genres": list(m.genres),
            "instruments": list(m.instruments),
            "vartags": list(m.vartags),
        },
    }


def metadata_from_json_dict(d: Mapping) -> TrackMetadata:
    if "track_id" not in d:
        raise ValueError("metadata record missing track_id")
    tags = d.get("tags") or {}
    return TrackMetadata(
        track_id=int(d["track_id"]),
        vocalinstrumental=d.get("vocalinstrumental", ""),
        lang=d.get("lang", ""),
        gender=d.get("gender", ""),
        speed=d.get("speed", ""),
        genres=tags.get("genres", ()),
        instruments=tags.get("instruments", ()),
        vartags=tags.get("vartags", ()),
    )


def write_metadata_jsonl(records: Iterable[TrackMetadata], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in records:
            fh.write(json.dumps(metadata_to_json_dict(m), sort_keys=True))
            fh.write("\n")


def iter_metadata_jsonl(path: str | Path) -> Iterator[TrackMetadata]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield metadata_from_json_dict(json.loads(line))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad metadata record: {exc}") from exc


def read_metadata_jsonl(path: str | Path) -> dict[int, TrackMetadata]:
    """Load a metadata collection, enforcing track_id uniqueness."""
    records: dict[int, TrackMetadata] = {}
    for m in iter_metadata_jsonl(path):
        if m.track_id in records:
            raise ValueError(f"duplicate track_id {m.track_id} in {path}")
        records[m.track_id] = m
    return records


def write_captions_jsonl(records: Iterable[CaptionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in records:
            fh.write(json.dumps(
                {"track_id": c.track_id, "segment_index": c.segment_index, "text": c.text},
                sort_keys=True,
            ))
            fh.write("\n")


def read_captions_jsonl(path: str | Path) -> dict[int, list[CaptionRecord]]:
    """Load captions grouped by track; every captioned track must have segment 0."""
    grouped: dict[int, list[CaptionRecord]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                rec = CaptionRecord(int(d["track_id"]), int(d["segment_index"]), d["text"])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad caption record: {exc}") from exc
            grouped.setdefault(rec.track_id, []).append(rec)
    for track_id, recs in grouped.items():
        if not any(r.segment_index == 0 for r in recs):
            raise ValueError(f"track {track_id} has captions but no segment 0")
        recs.sort(key=lambda r: r.segment_index)
    return grouped


def segment_zero_captions(grouped: Mapping[int, Sequence[CaptionRecord]]) -> dict[int, CaptionRecord]:
    """First-segment caption per track (the representative excerpt)."""
    return {tid: recs[0] for tid, recs in grouped.items() if recs and recs[0].segment_index == 0}
