"""Minimal RIFF/WAVE decoding for extraction jobs (PCM 16/24/32 and float32)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class DecodeError(ValueError):
    """File could not be decoded as supported WAV audio."""


def read_wav_mono(path: str | Path) -> tuple[np.ndarray, int]:
    """Return (mono samples in [-1, 1], sample_rate); channels are averaged."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError(f"{path}: not a RIFF/WAVE file")
    fmt = payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset:offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        body = data[offset + 8: offset + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise DecodeError(f"{path}: fmt chunk too small")
            audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if audio_format == 0xFFFE and len(body) >= 26:
                (audio_format,) = struct.unpack_from("<H", body, 24)
            fmt = (audio_format, channels, rate, bits)
        elif chunk_id == b"data":
            payload = body
        offset += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise DecodeError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, bits = fmt
    if channels < 1 or rate <= 0:
        raise DecodeError(f"{path}: bad fmt values")

    if audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif audio_format == 1 and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 1 and bits == 32:
        samples = np.frombuffer(payload, dtype="<i4").astype(np.float64) / 2147483648.0
    elif audio_format == 1 and bits == 24:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 3], dtype=np.uint8)
        raw = raw.reshape(-1, 3)
        values = (raw[:, 0].astype(np.int32)
                  | raw[:, 1].astype(np.int32) << 8
                  | raw[:, 2].astype(np.int32) << 16)
        values = np.where(values >= 1 << 23, values - (1 << 24), values)
        samples = values.astype(np.float64) / float(1 << 23)
    else:
        raise DecodeError(f"{path}: unsupported format={audio_format} bits={bits}")

    frames = samples.shape[0] // channels
    if frames == 0:
        raise DecodeError(f"{path}: no audio frames")
    mono = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return np.clip(mono, -1.0, 1.0), rate
