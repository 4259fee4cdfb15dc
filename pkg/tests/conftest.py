from __future__ import annotations

import hashlib
import json
from types import SimpleNamespace

import numpy as np
import pytest

from tagfuse.embeddings import AudioEmbedding, MetadataEmbedding
from tagfuse.fusion import FusionConfig, ProjectionMatrix, fuse, project
from tagfuse.index import build_index
from tagfuse.metadata import CaptionRecord, TrackMetadata

from .helpers import LocalHttpServer

GENRES = ("pop", "electronic", "hip-hop", "rock", "jazz", "techno")
INSTRUMENTS = ("bass", "drums", "guitar", "piano", "synth")
VARTAGS = ("intense", "energetic", "peaceful", "dreamy", "dark")
SPEEDS = ("slow", "medium", "fast", "very fast")


def deterministic_completion(prompt: str) -> str:
    """Mock LLM: metadata derived stably from the target caption.

    Captions containing NOJSON produce prose with no JSON object, to exercise
    the parse-failure path. All schema fields are always populated so a
    fill-only-missing violation would be visible.
    """
    target = [line for line in prompt.splitlines() if line.startswith("Caption: ")][-1][9:]
    if "NOJSON" in target:
        return "Sorry, I could not derive structured metadata for that caption."
    digest = hashlib.sha256(target.encode("utf-8")).digest()
    payload = {
        "speed": SPEEDS[digest[0] % len(SPEEDS)],
        "genres": sorted({GENRES[digest[1] % 6], GENRES[digest[2] % 6]}),
        "instruments": sorted({INSTRUMENTS[digest[3] % 5], INSTRUMENTS[digest[4] % 5]}),
        "vartags": sorted({VARTAGS[digest[5] % 5], VARTAGS[digest[6] % 5]}),
    }
    return "Here is the metadata: " + json.dumps(payload, sort_keys=True)


def completion_handler(method: str, path: str, body: bytes) -> tuple[int, object]:
    prompt = json.loads(body.decode("utf-8"))["prompt"]
    return 200, {"text": deterministic_completion(prompt)}


@pytest.fixture
def mock_llm():
    with LocalHttpServer(completion_handler) as server:
        yield server


def build_corpus(n: int = 100, seed: int = 11, dim: int = 8, layers: int = 2):
    """Synthetic corpus: metadata with mixed missingness, captions, and a
    fused retrieval index built through the real projection/fusion path."""
    rng = np.random.default_rng(seed)
    metadata: dict[int, TrackMetadata] = {}
    captions: dict[int, CaptionRecord] = {}
    audio: list[AudioEmbedding] = []
    meta_emb: list[MetadataEmbedding] = []
    for tid in range(1, n + 1):
        complete = tid % 10 == 0
        metadata[tid] = TrackMetadata(
            track_id=tid,
            vocalinstrumental="instrumental",
            speed="" if (tid % 3 == 0 and not complete) else SPEEDS[tid % 4],
            genres=() if (tid % 2 == 0 and not complete) else (GENRES[tid % 6],),
            instruments=() if (tid % 2 == 1 and not complete) else (INSTRUMENTS[tid % 5],),
            vartags=() if (tid % 5 == 2 and not complete) else (VARTAGS[tid % 5],),
        )
        suffix = " NOJSON" if tid % 20 == 7 else ""
        captions[tid] = CaptionRecord(tid, 0, f"synthetic arpeggio study number {tid}{suffix}")
        audio.append(AudioEmbedding(tid, rng.normal(size=(layers, dim)).astype(np.float32)))
        meta_emb.append(MetadataEmbedding(tid, rng.normal(size=dim).astype(np.float32)))

    proj = ProjectionMatrix(seed=5, input_dim=layers * dim, output_dim=dim)
    cfg = FusionConfig(0.6, 0.4)
    fused = [fuse(project(a, proj), m, cfg) for a, m in zip(audio, meta_emb)]
    index = build_index(fused, projection=proj)
    return SimpleNamespace(
        metadata=metadata,
        captions=captions,
        index=index,
        audio=audio,
        meta_emb=meta_emb,
        projection=proj,
        fusion=cfg,
    )


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()
