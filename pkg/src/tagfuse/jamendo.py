"""Jamendo API ingestion: paginated instrumental-track crawl with rate
limiting, per-record skip-and-log normalization, and resumable checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import requests

from .metadata import TrackMetadata, metadata_to_json_dict

log = logging.getLogger(__name__)

MIN_TRACK_SECONDS = 30.0  # anything shorter cannot yield one caption segment


class AuthError(RuntimeError):
    """Credential rejected; retrying will not help."""


class ApiError(RuntimeError):
    """API kept failing after retries or returned an unusable payload."""


@dataclass(frozen=True)
class ApiConfig:
    base_url: str = "https://api.jamendo.com/v3.0"
    client_credential: str = ""
    page_size: int = 200  # API maximum
    year_range: tuple[int, int] = (2008, 2023)
    rate_limit: float = 1.0  # requests per second
    timeout: float = 30.0
    max_retries: int = 5

    def __post_init__(self) -> None:
        if self.page_size < 1:
            raise ValueError("page_size must be >= 1")
        if self.year_range[0] > self.year_range[1]:
            raise ValueError(f"invalid year_range {self.year_range}")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")


@dataclass(frozen=True, eq=False)
class NormalizedTrack:
    metadata: TrackMetadata
    audio_url: str
    duration: float
    too_short: bool


def _tag_list(info: Mapping, name: str) -> list:
    tags = info.get("tags")
    if isinstance(tags, Mapping):
        value = tags.get(name)
        if isinstance(value, list):
            return value
    return []


def normalize_record(raw: Mapping) -> NormalizedTrack:
    """Map one raw API track object onto the metadata schema.

    Fields may live at the top level or under ``musicinfo``; absent fields
    become missing, unknown fields are dropped. A record without an id is
    rejected.
    """
    track_id = raw.get("id")
    if track_id is None:
        raise ValueError("record has no id")
    info = raw.get("musicinfo") if isinstance(raw.get("musicinfo"), Mapping) else {}

    def pick(name: str) -> str:
        value = info.get(name, raw.get(name, ""))
        return value if isinstance(value, str) else ""

    metadata = TrackMetadata(
        track_id=int(track_id),
        vocalinstrumental=pick("vocalinstrumental"),
        lang=pick("lang"),
        gender=pick("gender"),
        speed=pick("speed"),
        genres=_tag_list(info, "genres") or _tag_list(raw, "genres"),
        instruments=_tag_list(info, "instruments") or _tag_list(raw, "instruments"),
        vartags=_tag_list(info, "vartags") or _tag_list(raw, "vartags"),
    )
    duration = float(raw.get("duration", 0.0) or 0.0)
    audio_url = raw.get("audiodownload") or raw.get("audio") or ""
    return NormalizedTrack(metadata, audio_url, duration, duration < MIN_TRACK_SECONDS)


def _release_year(raw: Mapping) -> int | None:
    date = raw.get("releasedate")
    if isinstance(date, str) and len(date) >= 4 and date[:4].isdigit():
        return int(date[:4])
    return None


class JamendoClient:
    """Paginated track fetcher honoring a requests-per-second budget."""

    def __init__(self, cfg: ApiConfig, session: requests.Session | None = None):
        if not cfg.client_credential:
            raise AuthError("no client credential configured")
        self.cfg = cfg
        self._session = session or requests.Session()
        self._last_request = 0.0

    def _throttle(self) -> None:
        interval = 1.0 / self.cfg.rate_limit
        delta = time.monotonic() - self._last_request
        if delta < interval:
            time.sleep(interval - delta)
        self._last_request = time.monotonic()

    def _get(self, params: dict) -> dict:
        url = f"{self.cfg.base_url}/tracks"
        for attempt in range(self.cfg.max_retries + 1):
            self._throttle()
            try:
                resp = self._session.get(url, params=params, timeout=self.cfg.timeout)
            except requests.RequestException as exc:
                log.warning("track page request failed (%s), attempt %d", exc, attempt + 1)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"credential rejected with HTTP {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                retry_after = resp.headers.get("Retry-After")
                delay = float(retry_after) if retry_after else min(2.0 ** attempt, 30.0)
                log.warning("HTTP %d, backing off %.1fs", resp.status_code, delay)
                time.sleep(delay)
                continue
            if resp.status_code != 200:
                raise ApiError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ApiError(f"non-JSON response body: {exc}") from exc
        raise ApiError(f"giving up after {self.cfg.max_retries + 1} attempts")

    def fetch_track_page(self, offset: int) -> tuple[list[dict], bool]:
        """One page of instrumental tracks inside the configured year range.

        Returns the raw record dicts (malformed entries skipped and logged)
        and whether more pages remain.
        """
        start, end = self.cfg.year_range
        body = self._get({
            "client_id": self.cfg.client_credential,
            "format": "json",
            "limit": self.cfg.page_size,
            "offset": offset,
            "vocalinstrumental": "instrumental",
            "datebetween": f"{start}-01-01_{end}-12-31",
            "include": "musicinfo",
        })
        results = body.get("results")
        if not isinstance(results, list):
            raise ApiError("response has no results list")
        page: list[dict] = []
        for raw in results:
            if not isinstance(raw, Mapping) or raw.get("id") is None:
                log.warning("skipping malformed record at offset %d", offset)
                continue
            year = _release_year(raw)
            if year is not None and not start <= year <= end:
                continue
            vocal = raw.get("vocalinstrumental") or (
                raw.get("musicinfo", {}).get("vocalinstrumental")
                if isinstance(raw.get("musicinfo"), Mapping) else ""
            )
            if vocal and vocal != "instrumental":
                continue
            page.append(dict(raw))
        return page, len(results) == self.cfg.page_size


@dataclass
class CrawlStats:
    pages: int = 0
    records: int = 0
    skipped: int = 0
    flagged_short: int = 0
    downloaded: int = 0
    last_offset: int = 0


def _read_checkpoint(path: Path) -> int:
    if path.exists():
        return int(json.loads(path.read_text())["offset"])
    return 0


def _write_checkpoint(path: Path, offset: int) -> None:
    path.write_text(json.dumps({"offset": offset}))


def crawl(
    client: JamendoClient,
    out_path: str | Path,
    checkpoint_path: str | Path,
    max_pages: int | None = None,
    download_dir: str | Path | None = None,
) -> CrawlStats:
    """Crawl pages from the checkpoint offset, appending metadata JSONL.

    The checkpoint is advanced only after a page is fully written, so a
    restarted crawl produces the same record multiset as an uninterrupted one.
    """
    out_path = Path(out_path)
    checkpoint_path = Path(checkpoint_path)
    stats = CrawlStats(last_offset=_read_checkpoint(checkpoint_path))
    if download_dir is not None:
        download_dir = Path(download_dir)
        download_dir.mkdir(parents=True, exist_ok=True)

    while max_pages is None or stats.pages < max_pages:
        page, has_more = client.fetch_track_page(stats.last_offset)
        rows: list[NormalizedTrack] = []
        for raw in page:
            try:
                rows.append(normalize_record(raw))
            except (ValueError, TypeError) as exc:
                stats.skipped += 1
                log.warning("skipping record at offset %d: %s", stats.last_offset, exc)
        with open(out_path, "a", encoding="utf-8") as fh:
            for track in rows:
                fh.write(json.dumps(metadata_to_json_dict(track.metadata), sort_keys=True))
                fh.write("\n")
        for track in rows:
            if track.too_short:
                stats.flagged_short += 1
                log.info("track %d flagged: %.1fs < %.0fs", track.metadata.track_id,
                         track.duration, MIN_TRACK_SECONDS)
            elif download_dir is not None and track.audio_url:
                if _download(client, track, download_dir):
                    stats.downloaded += 1
        stats.pages += 1
        stats.records += len(rows)
        stats.last_offset += client.cfg.page_size
        _write_checkpoint(checkpoint_path, stats.last_offset)
        if not has_more:
            break
    return stats


def _download(client: JamendoClient, track: NormalizedTrack, download_dir: Path) -> bool:
    target = download_dir / f"{track.metadata.track_id}.mp3"
    if target.exists():
        return False
    try:
        client._throttle()
        resp = client._session.get(track.audio_url, timeout=client.cfg.timeout)
        resp.raise_for_status()
    except requests.RequestException as exc:
        log.warning("audio download failed for track %d: %s", track.metadata.track_id, exc)
        return False
    target.write_bytes(resp.content)
    return True
