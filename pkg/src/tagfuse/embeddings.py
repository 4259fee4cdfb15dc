"""Binary embedding containers and the "JMXE" on-disk format.

Layout (little-endian): magic ``JMXE``, u32 version=1, u32 record_count,
u32 layers (1 for text embeddings), u32 dim, then per record a u64 track_id
followed by layers*dim f32 values, layer-major. Fixed-stride records keep the
file memory-mappable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

JMXE_MAGIC = b"JMXE"
JMXE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, count, layers, dim


class EmbeddingFormatError(Exception):
    """Base class for embedding container violations."""


class MagicError(EmbeddingFormatError):
    """File does not start with the expected magic bytes."""


class VersionError(EmbeddingFormatError):
    """Unsupported container version."""


class TruncatedFileError(EmbeddingFormatError):
    """Payload ends before the record count promised by the header."""


class ShapeError(EmbeddingFormatError):
    """Header shape and payload disagree, or shapes are inconsistent."""


class NonFiniteError(EmbeddingFormatError):
    """A record contains NaN or infinity."""


@dataclass(frozen=True, eq=False)
class AudioEmbedding:
    """Per-track layer matrix: one averaged feature row per encoder layer."""

    track_id: int
    matrix: np.ndarray  # (layers, dim) float32

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ShapeError(f"track {self.track_id}: matrix must be (layers, dim), got {mat.shape}")
        if not np.isfinite(mat).all():
            raise NonFiniteError(f"track {self.track_id}: non-finite values in audio embedding")
        object.__setattr__(self, "matrix", mat)

    @property
    def layers(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class MetadataEmbedding:
    """Single text-encoder vector for a track's rendered metadata."""

    track_id: int
    vector: np.ndarray  # (dim,) float32

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] < 1:
            raise ShapeError(f"track {self.track_id}: vector must be 1-D, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise NonFiniteError(f"track {self.track_id}: non-finite values in metadata embedding")
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True, eq=False)
class FrameStack:
    """Raw per-frame, per-layer features before temporal averaging."""

    track_id: int
    tensor: np.ndarray  # (frames, layers, dim)

    def __post_init__(self) -> None:
        t = np.asarray(self.tensor, dtype=np.float32)
        if t.ndim != 3 or t.shape[0] < 1:
            raise ShapeError(f"track {self.track_id}: tensor must be (T, layers, dim) with T >= 1")
        object.__setattr__(self, "tensor", t)

    @property
    def frames(self) -> int:
        return self.tensor.shape[0]


def average_frames(fs: FrameStack) -> AudioEmbedding:
    """Mean over the frame axis; the per-layer structure is preserved."""
    if not np.isfinite(fs.tensor).all():
        raise NonFiniteError(f"track {fs.track_id}: non-finite values in frame stack")
    return AudioEmbedding(fs.track_id, fs.tensor.mean(axis=0, dtype=np.float64).astype(np.float32))


Record = Union[AudioEmbedding, MetadataEmbedding]


@dataclass(eq=False)
class EmbeddingCollection:
    """A homogeneous set of embeddings in file order."""

    ids: np.ndarray     # (count,) uint64
    values: np.ndarray  # (count, layers, dim) float32

    @property
    def layers(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def __len__(self) -> int:
        return self.ids.shape[0]

    def records(self) -> Iterator[Record]:
        single_layer = self.layers == 1
        for i in range(len(self)):
            tid = int(self.ids[i])
            if single_layer:
                yield MetadataEmbedding(tid, self.values[i, 0])
            else:
                yield AudioEmbedding(tid, self.values[i])

    def id_index(self) -> dict[int, int]:
        return {int(tid): i for i, tid in enumerate(self.ids)}


def _as_collection(records: Iterable[Record] | EmbeddingCollection) -> EmbeddingCollection:
    if isinstance(records, EmbeddingCollection):
        return records
    ids: list[int] = []
    mats: list[np.ndarray] = []
    shape: tuple[int, int] | None = None
    for rec in records:
        mat = rec.matrix if isinstance(rec, AudioEmbedding) else rec.vector.reshape(1, -1)
        if shape is None:
            shape = mat.shape
        elif mat.shape != shape:
            raise ShapeError(f"heterogeneous record shapes: {mat.shape} vs {shape}")
        ids.append(rec.track_id)
        mats.append(mat)
    if shape is None:
        return EmbeddingCollection(np.empty(0, dtype=np.uint64), np.empty((0, 1, 1), dtype=np.float32))
    return EmbeddingCollection(
        np.asarray(ids, dtype=np.uint64),
        np.stack(mats).astype(np.float32, copy=False),
    )


def write_embeddings(records: Iterable[Record] | EmbeddingCollection, path: str | Path) -> None:
    """Serialize to the JMXE format; identical input produces identical bytes."""
    coll = _as_collection(records)
    count = len(coll)
    layers = coll.layers if count else 1
    dim = coll.dim if count else 1
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(JMXE_MAGIC, JMXE_VERSION, count, layers, dim))
            for i in range(count):
                fh.write(struct.pack("<Q", int(coll.ids[i])))
                fh.write(np.ascontiguousarray(coll.values[i], dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"failed writing embeddings to {path}: {exc}") from exc


def read_embeddings(path: str | Path) -> EmbeddingCollection:
    """Parse and fully validate a JMXE file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, version, count, layers, dim = _HEADER.unpack_from(data, 0)
    if magic != JMXE_MAGIC:
        raise MagicError(f"{path}: bad magic {magic!r}")
    if version != JMXE_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if layers < 1 or dim < 1:
        raise ShapeError(f"{path}: invalid shape layers={layers} dim={dim}")
    record_bytes = 8 + layers * dim * 4
    expected = _HEADER.size + count * record_bytes
    if len(data) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for {count} records, found {len(data)}"
        )
    if len(data) > expected:
        raise ShapeError(f"{path}: {len(data) - expected} trailing bytes after last record")
    rec_dtype = np.dtype([("id", "<u8"), ("vec", "<f4", (layers, dim))])
    raw = np.frombuffer(data, dtype=rec_dtype, count=count, offset=_HEADER.size)
    ids = raw["id"].astype(np.uint64)
    values = np.ascontiguousarray(raw["vec"], dtype=np.float32)
    if count and not np.isfinite(values).all():
        bad = np.flatnonzero(~np.isfinite(values).reshape(count, -1).all(axis=1))[0]
        raise NonFiniteError(f"{path}: non-finite values in record for track {int(ids[bad])}")
    if len(set(ids.tolist())) != count:
        raise ShapeError(f"{path}: duplicate track_id in collection")
    return EmbeddingCollection(ids, values.reshape(count, layers, dim))
