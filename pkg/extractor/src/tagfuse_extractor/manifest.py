"""Extraction inputs: audio manifest CSV and metadata JSONL.

The metadata text serialization here mirrors the retrieval pipeline's
canonical rendering (fixed key order, missing fields as ``key: none``, list
values joined with ", ") so both components embed identical strings.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

SCALAR_FIELDS = ("vocalinstrumental", "speed")
LIST_FIELDS = ("genres", "instruments", "vartags")
RENDER_ORDER = ("vocalinstrumental", "speed", "genres", "instruments", "vartags")


def read_audio_manifest(path: str | Path) -> list[tuple[int, Path]]:
    """CSV rows of ``track_id,audio_path``; ids must be unique."""
    rows: list[tuple[int, Path]] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().lower() == "track_id":
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'track_id,audio_path'")
            track_id = int(row[0])
            if track_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate track_id {track_id}")
            seen.add(track_id)
            rows.append((track_id, Path(row[1].strip())))
    return rows


def render_text(record: dict) -> str:
    """Single-line metadata rendering matching the pipeline's canonical form."""
    tags = record.get("tags") or {}
    parts = []
    for name in RENDER_ORDER:
        if name in LIST_FIELDS:
            values = [str(v).strip() for v in tags.get(name, []) if str(v).strip()]
            text = ", ".join(values) if values else "none"
        else:
            value = str(record.get(name, "")).strip()
            text = value if value else "none"
        parts.append(f"{name}: {text}")
    return "; ".join(parts)


def read_metadata_texts(path: str | Path) -> list[tuple[int, str]]:
    """(track_id, rendered text) per JSONL record, in file order."""
    rows: list[tuple[int, str]] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "track_id" not in record:
                raise ValueError(f"{path}:{lineno}: record has no track_id")
            track_id = int(record["track_id"])
            if track_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate track_id {track_id}")
            seen.add(track_id)
            rows.append((track_id, render_text(record)))
    return rows


_EDGE_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"


def vocabulary(texts: list[tuple[int, str]]) -> list[str]:
    """Sorted lowercase token vocabulary over the rendered metadata values."""
    tokens: set[str] = set()
    for _, text in texts:
        for raw in text.lower().replace(";", " ").replace(":", " ").split():
            tok = raw.strip(_EDGE_PUNCT)
            if tok:
                tokens.add(tok)
    return sorted(tokens)
