"""Writer for the JMXE embedding container consumed by the retrieval pipeline.

Wire format (little-endian): magic "JMXE", u32 version=1, u32 record_count,
u32 layers, u32 dim, then per record a u64 track_id followed by layers*dim
f32 values, layer-major.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"JMXE"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def write_jmxe(ids: Sequence[int], matrices: Sequence[np.ndarray], path: str | Path) -> None:
    """Serialize records in the given order; shapes must be homogeneous."""
    if len(ids) != len(matrices):
        raise ValueError(f"{len(ids)} ids for {len(matrices)} matrices")
    shapes = {m.shape for m in matrices}
    if len(shapes) > 1:
        raise ValueError(f"heterogeneous record shapes: {sorted(shapes)}")
    if matrices:
        layers, dim = matrices[0].shape
    else:
        layers, dim = 1, 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ids), layers, dim))
        for track_id, matrix in zip(ids, matrices):
            if not np.isfinite(matrix).all():
                raise ValueError(f"track {track_id}: refusing to write non-finite values")
            fh.write(struct.pack("<Q", int(track_id)))
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def write_token_vectors(table: dict[str, np.ndarray], path: str | Path) -> None:
    """Word2vec-style text table: ``count dim`` header, then token + values."""
    dims = {v.shape[0] for v in table.values()}
    if len(dims) > 1:
        raise ValueError(f"token vectors have mixed dims: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {dim}\n")
        for token in sorted(table):
            values = " ".join(f"{v:.8f}" for v in table[token])
            fh.write(f"{token} {values}\n")
