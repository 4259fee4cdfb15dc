from __future__ import annotations

import json
import struct

import numpy as np
import pytest


def _write_wav(path, samples: np.ndarray, rate: int) -> None:
    payload = np.asarray(samples, dtype="<f4").tobytes()
    fmt_chunk = struct.pack("<HHIIHH", 3, 1, rate, rate * 4, 4, 32)
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
            + b"data" + struct.pack("<I", len(payload)) + payload)
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


@pytest.fixture
def make_wav(tmp_path):
    """Factory writing a float32 mono WAV; returns its path."""

    def factory(name: str, frequency: float = 220.0, seconds: float = 1.0,
                rate: int = 8000, silent: bool = False):
        t = np.arange(int(rate * seconds)) / rate
        samples = np.zeros_like(t) if silent else 0.5 * np.sin(2 * np.pi * frequency * t)
        path = tmp_path / name
        _write_wav(path, samples, rate)
        return path

    return factory


@pytest.fixture
def metadata_jsonl(tmp_path):
    """Five-record metadata file in the pipeline's JSONL schema."""
    records = [
        {"track_id": 1, "vocalinstrumental": "instrumental", "lang": "", "gender": "",
         "speed": "medium", "tags": {"genres": ["electronic", "pop"],
                                     "instruments": ["synth"], "vartags": ["calm"]}},
        {"track_id": 2, "vocalinstrumental": "instrumental", "lang": "", "gender": "",
         "speed": "", "tags": {"genres": [], "instruments": [], "vartags": []}},
        {"track_id": 3, "vocalinstrumental": "instrumental", "lang": "", "gender": "",
         "speed": "fast", "tags": {"genres": ["rock"], "instruments": ["guitar", "drums"],
                                   "vartags": ["energetic"]}},
        {"track_id": 4, "vocalinstrumental": "instrumental", "lang": "", "gender": "",
         "speed": "medium", "tags": {"genres": ["electronic", "pop"],
                                     "instruments": ["synth"], "vartags": ["calm"]}},
        {"track_id": 5, "vocalinstrumental": "", "lang": "", "gender": "",
         "speed": "", "tags": {"genres": [], "instruments": [], "vartags": []}},
    ]
    path = tmp_path / "metadata.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path
