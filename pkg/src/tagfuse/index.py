"""Exact top-k cosine retrieval over an immutable dense index.

The scan is brute force by design: similarities are accumulated in float64 so
chunked/parallel execution returns exactly the same ranking as a single full
pass, and ties are broken by ascending track_id for reproducible neighbor
sets.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .embeddings import (
    MagicError,
    NonFiniteError,
    ShapeError,
    TruncatedFileError,
    VersionError,
)
from .fusion import FusedVector, ProjectionMatrix

JMXI_MAGIC = b"JMXI"
JMXI_VERSION = 1
# magic, version, count, dim, seed, proj input dim, proj output dim, sparsity
_HEADER = struct.Struct("<4sIIIQIId")

DEFAULT_K = 10
_CHUNK_ROWS = 8192


class DuplicateIdError(ValueError):
    """Two fused vectors share a track_id."""


class UnknownIdError(KeyError):
    """Query id is not present in the index."""


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked neighbor list for one query."""

    query_id: int | None
    neighbors: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        sims = [s for _, s in self.neighbors]
        if any(b > a + 1e-12 for a, b in zip(sims, sims[1:])):
            raise ValueError("neighbor similarities must be non-increasing")
        ids = [tid for tid, _ in self.neighbors]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate track_id in neighbors")
        if self.query_id is not None and self.query_id in ids:
            raise ValueError("query_id must not appear in its own neighbors")

    def ids(self) -> tuple[int, ...]:
        return tuple(tid for tid, _ in self.neighbors)

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "neighbors": [{"track_id": tid, "similarity": sim} for tid, sim in self.neighbors],
        }


@dataclass(eq=False)
class SearchIndex:
    """Immutable id table plus a dense matrix of unit (or zero) rows."""

    ids: np.ndarray       # (n,) uint64
    matrix: np.ndarray    # (n, dim) float32
    projection: ProjectionMatrix | None = None
    _pos: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._pos:
            self._pos = {int(tid): i for i, tid in enumerate(self.ids)}

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def position(self, track_id: int) -> int:
        try:
            return self._pos[int(track_id)]
        except KeyError:
            raise UnknownIdError(f"track_id {track_id} not in index") from None


def build_index(
    fused: Iterable[FusedVector],
    projection: ProjectionMatrix | None = None,
) -> SearchIndex:
    """Assemble the scan matrix; duplicate ids are rejected."""
    vectors = list(fused)
    if not vectors:
        return SearchIndex(np.empty(0, dtype=np.uint64), np.empty((0, 0), dtype=np.float32), projection)
    seen: set[int] = set()
    for fv in vectors:
        if fv.track_id in seen:
            raise DuplicateIdError(f"duplicate track_id {fv.track_id}")
        seen.add(fv.track_id)
    ids = np.asarray([fv.track_id for fv in vectors], dtype=np.uint64)
    matrix = np.stack([fv.vector for fv in vectors]).astype(np.float32, copy=False)
    return SearchIndex(ids, matrix, projection)


def _chunk_candidates(
    matrix: np.ndarray,
    ids: np.ndarray,
    start: int,
    stop: int,
    query: np.ndarray,
    need: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Top ``need`` rows of one chunk under the (-sim, id) total order.

    All rows tied with the cut-off similarity are kept before truncating so
    no global winner can be lost at a chunk boundary.
    """
    sims = matrix[start:stop].astype(np.float64) @ query
    m = stop - start
    if m <= need:
        cand = np.arange(m)
    else:
        part = np.argpartition(-sims, need - 1)[:need]
        cutoff = sims[part].min()
        cand = np.flatnonzero(sims >= cutoff)
    order = np.lexsort((ids[start:stop][cand], -sims[cand]))
    cand = cand[order][:need]
    return sims[cand], cand + start


def top_k(
    index: SearchIndex,
    query: Union[int, np.integer, np.ndarray],
    k: int = DEFAULT_K,
    workers: int | None = None,
    chunk_rows: int = _CHUNK_ROWS,
) -> RetrievalResult:
    """Exact k nearest neighbors by cosine, self excluded for id queries.

    Returns fewer than k neighbors only when the collection is smaller.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    if isinstance(query, (int, np.integer)):
        query_id: int | None = int(query)
        pos = index.position(query_id)
        q = index.matrix[pos].astype(np.float64)
    else:
        query_id = None
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != index.dim:
            raise ValueError(f"query dim {q.shape} does not match index dim {index.dim}")
        norm = np.linalg.norm(q)
        if norm > 0.0:
            q = q / norm

    n = len(index)
    if n == 0:
        return RetrievalResult(query_id, ())
    # One extra candidate per chunk absorbs the excluded self row.
    need = k + (1 if query_id is not None else 0)
    spans = [(s, min(s + chunk_rows, n)) for s in range(0, n, chunk_rows)]

    def scan(span: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        return _chunk_candidates(index.matrix, index.ids, span[0], span[1], q, need)

    if len(spans) == 1 or (workers is not None and workers <= 1):
        parts = [scan(span) for span in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(scan, spans))

    sims = np.concatenate([p[0] for p in parts])
    rows = np.concatenate([p[1] for p in parts]).astype(np.int64)
    if query_id is not None:
        keep = rows != index.position(query_id)
        sims, rows = sims[keep], rows[keep]
    order = np.lexsort((index.ids[rows], -sims))[:k]
    neighbors = tuple(
        (int(index.ids[rows[i]]), float(np.clip(sims[i], -1.0, 1.0))) for i in order
    )
    return RetrievalResult(query_id, neighbors)


# --- JMXI persistence ---------------------------------------------------------

def write_index(index: SearchIndex, path: str | Path) -> None:
    proj = index.projection
    seed = proj.seed if proj else 0
    in_dim = proj.input_dim if proj else 0
    out_dim = proj.output_dim if proj else 0
    sparsity = proj.sparsity if proj else 0.0
    count = len(index)
    dim = index.dim if count else 0
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(JMXI_MAGIC, JMXI_VERSION, count, dim,
                                  seed, in_dim, out_dim, sparsity))
            fh.write(np.ascontiguousarray(index.ids, dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"failed writing index to {path}: {exc}") from exc


def read_index(path: str | Path) -> SearchIndex:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, version, count, dim, seed, in_dim, out_dim, sparsity = _HEADER.unpack_from(data, 0)
    if magic != JMXI_MAGIC:
        raise MagicError(f"{path}: bad magic {magic!r}")
    if version != JMXI_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + count * 8 + count * dim * 4
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise ShapeError(f"{path}: {len(data) - expected} trailing bytes")
    offset = _HEADER.size
    ids = np.frombuffer(data, dtype="<u8", count=count, offset=offset).astype(np.uint64)
    offset += count * 8
    matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    matrix = matrix.astype(np.float32).reshape(count, dim) if count else np.empty((0, 0), np.float32)
    if count and not np.isfinite(matrix).all():
        raise NonFiniteError(f"{path}: non-finite values in index matrix")
    if len(set(ids.tolist())) != count:
        raise ShapeError(f"{path}: duplicate track_id in index")
    if count:
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        bad = (np.abs(norms - 1.0) > 1e-5) & (norms != 0.0)
        if bad.any():
            raise ShapeError(f"{path}: row for track {int(ids[np.flatnonzero(bad)[0]])} is not unit norm")
    projection = None
    if in_dim and out_dim:
        projection = ProjectionMatrix(seed=seed, input_dim=in_dim, output_dim=out_dim, sparsity=sparsity)
    return SearchIndex(ids, matrix, projection)
