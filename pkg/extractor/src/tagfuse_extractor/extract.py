"""Extraction jobs: audio tracks and metadata records to JMXE files, plus the
token-vector table for BERT-Score."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import AudioEncoder, TextEncoder, average_layers
from .jmxe import write_jmxe, write_token_vectors
from .manifest import read_audio_manifest, read_metadata_texts, vocabulary
from .wav import DecodeError, read_wav_mono

log = logging.getLogger(__name__)


@dataclass
class ExtractionJob:
    """One extraction run: input listing, model selection, output target."""

    input_path: Path
    output_path: Path
    model_id: str
    device: str = "cpu"
    batch_size: int = 16
    expected_layers: int | None = None
    expected_dim: int | None = None


@dataclass
class ExtractionReport:
    written: int
    skipped: int


def _check_dims(job: ExtractionJob, layers: int, dim: int) -> None:
    if job.expected_layers is not None and layers != job.expected_layers:
        raise ValueError(f"encoder emits {layers} layers, job expects {job.expected_layers}")
    if job.expected_dim is not None and dim != job.expected_dim:
        raise ValueError(f"encoder emits dim {dim}, job expects {job.expected_dim}")


def extract_audio(job: ExtractionJob, encoder: AudioEncoder) -> ExtractionReport:
    """Frame-averaged per-layer matrices for every decodable manifest track.

    Undecodable tracks are logged and skipped; the job keeps going. Records
    are written in manifest order.
    """
    _check_dims(job, encoder.layers, encoder.dim)
    rows = read_audio_manifest(job.input_path)
    ids: list[int] = []
    matrices: list[np.ndarray] = []
    skipped = 0
    for track_id, audio_path in rows:
        try:
            samples, rate = read_wav_mono(audio_path)
            hidden = encoder.hidden_states(samples, rate)
        except (DecodeError, OSError, ValueError) as exc:
            skipped += 1
            log.warning("skipping track %d (%s): %s", track_id, audio_path, exc)
            continue
        matrices.append(average_layers(hidden))
        ids.append(track_id)
    write_jmxe(ids, matrices, job.output_path)
    log.info("wrote %d audio embeddings (%d skipped) -> %s", len(ids), skipped, job.output_path)
    return ExtractionReport(written=len(ids), skipped=skipped)


def extract_metadata_text(job: ExtractionJob, encoder: TextEncoder) -> ExtractionReport:
    """One text-encoder vector per metadata record; header dim follows the
    loaded encoder, not a constant."""
    _check_dims(job, 1, encoder.dim)
    rows = read_metadata_texts(job.input_path)
    texts = [text for _, text in rows]
    vectors = encoder.encode(texts)
    matrices = [vectors[i].reshape(1, -1) for i in range(len(rows))]
    write_jmxe([tid for tid, _ in rows], matrices, job.output_path)
    log.info("wrote %d metadata embeddings (dim=%d) -> %s",
             len(rows), encoder.dim, job.output_path)
    return ExtractionReport(written=len(rows), skipped=0)


def extract_token_vectors(job: ExtractionJob, encoder: TextEncoder) -> ExtractionReport:
    """Per-token vectors over the metadata vocabulary, for the score provider."""
    rows = read_metadata_texts(job.input_path)
    tokens = vocabulary(rows)
    vectors = encoder.encode(tokens)
    table = {token: vectors[i] for i, token in enumerate(tokens)}
    write_token_vectors(table, job.output_path)
    log.info("wrote %d token vectors (dim=%d) -> %s", len(table), encoder.dim, job.output_path)
    return ExtractionReport(written=len(table), skipped=0)
