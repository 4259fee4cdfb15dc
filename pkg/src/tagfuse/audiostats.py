"""Signal statistics over PCM streams for dataset validation reports."""

from __future__ import annotations

import csv
import io
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class WavFormatError(ValueError):
    """File is not a WAV variant this reader supports."""


@dataclass(frozen=True, eq=False)
class PcmStream:
    """Mono sample stream normalized to [-1, 1]."""

    track_id: int
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"track {self.track_id}: sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.size and not np.isfinite(samples).all():
            raise ValueError(f"track {self.track_id}: non-finite samples")
        object.__setattr__(self, "samples", samples)


def duration_seconds(p: PcmStream) -> float:
    return p.samples.shape[0] / p.sample_rate


def rms_energy(p: PcmStream) -> float:
    if p.samples.shape[0] == 0:
        raise ValueError(f"track {p.track_id}: RMS undefined for an empty stream")
    return float(np.sqrt(np.mean(np.square(p.samples))))


def zero_crossing_rate(p: PcmStream) -> float:
    """Fraction of adjacent sample pairs with a strict sign change.

    Zeros never count as crossings, so silence boundaries are not double
    counted.
    """
    if p.samples.shape[0] < 2:
        raise ValueError(f"track {p.track_id}: ZCR needs at least 2 samples")
    crossings = np.count_nonzero(p.samples[:-1] * p.samples[1:] < 0.0)
    return crossings / (p.samples.shape[0] - 1)


@dataclass(frozen=True)
class CollectionStats:
    mean: float
    median: float
    mode: float


def collection_stats(values: Iterable[float]) -> CollectionStats:
    """Mean, midpoint median, and mode over 3-decimal-rounded values
    (ties resolved to the smallest value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("collection_stats needs at least one value")
    rounded = np.round(arr, 3)
    counts = Counter(rounded.tolist())
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return CollectionStats(float(arr.mean()), float(np.median(arr)), float(mode))


# --- minimal WAV reader --------------------------------------------------------

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path: str | Path, track_id: int | None = None) -> PcmStream:
    """Decode a RIFF/WAVE file: PCM 16/24/32-bit or float32, any channel count.

    Multi-channel audio is mixed down to mono by averaging channels. When
    ``track_id`` is not given, leading digits of the file stem are used (0 if
    none).
    """
    path = Path(path)
    if track_id is None:
        digits = ""
        for ch in path.stem:
            if not ch.isdigit():
                break
            digits += ch
        track_id = int(digits) if digits else 0
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset:offset + 4]
        (chunk_size,) = struct.unpack_from("<I", data, offset + 4)
        body = data[offset + 8: offset + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: fmt chunk too small")
            audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if audio_format == _EXTENSIBLE and len(body) >= 26:
                (audio_format,) = struct.unpack_from("<H", body, 24)
            fmt = (audio_format, channels, sample_rate, bits)
        elif chunk_id == b"data":
            payload = body
        offset += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: channel count {channels}")

    if audio_format == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif audio_format == _PCM and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _PCM and bits == 32:
        samples = np.frombuffer(payload, dtype="<i4").astype(np.float64) / 2147483648.0
    elif audio_format == _PCM and bits == 24:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 3], dtype=np.uint8)
        raw = raw.reshape(-1, 3)
        as_int = (
            raw[:, 0].astype(np.int32)
            | raw[:, 1].astype(np.int32) << 8
            | raw[:, 2].astype(np.int32) << 16
        )
        as_int = np.where(as_int >= 1 << 23, as_int - (1 << 24), as_int)
        samples = as_int.astype(np.float64) / float(1 << 23)
    else:
        raise WavFormatError(f"{path}: unsupported format={audio_format} bits={bits}")

    frames = samples.shape[0] // channels
    samples = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return PcmStream(track_id, sample_rate, np.clip(samples, -1.0, 1.0))


# --- reporting -------------------------------------------------------------------

MEASURES = ("Length (seconds)", "RMS Energy", "Zero Crossing Rate")


def dataset_stats(streams: Iterable[PcmStream]) -> dict[str, CollectionStats]:
    """Per-measure summary over a stream collection (Table-style rows)."""
    durations: list[float] = []
    rms: list[float] = []
    zcr: list[float] = []
    for stream in streams:
        durations.append(duration_seconds(stream))
        rms.append(rms_energy(stream))
        zcr.append(zero_crossing_rate(stream))
    if not durations:
        raise ValueError("no streams to summarize")
    return {
        "Length (seconds)": collection_stats(durations),
        "RMS Energy": collection_stats(rms),
        "Zero Crossing Rate": collection_stats(zcr),
    }


def stats_csv(rows: Mapping[str, CollectionStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "mean", "median", "mode"])
    for measure, s in rows.items():
        writer.writerow([measure, f"{s.mean:.3f}", f"{s.median:.3f}", f"{s.mode:.3f}"])
    return buf.getvalue()


def stats_table(rows: Mapping[str, CollectionStats]) -> str:
    label_w = max(len(m) for m in rows) + 2
    lines = [f"{'Measure':<{label_w}}{'Mean':>12}{'Median':>12}{'Mode':>12}"]
    for measure, s in rows.items():
        lines.append(f"{measure:<{label_w}}{s.mean:>12.3f}{s.median:>12.3f}{s.mode:>12.3f}")
    return "\n".join(lines)
