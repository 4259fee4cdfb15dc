"""Sparse random projection, weighted late fusion, and cosine similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .embeddings import AudioEmbedding, MetadataEmbedding

# Rows of the projection matrix are generated in fixed-size blocks so the
# draw sequence (and therefore the matrix) is pinned byte-for-byte.
_ROW_BLOCK = 64

DEFAULT_INPUT_DIM = 25 * 1024
DEFAULT_OUTPUT_DIM = 768


class DimensionMismatchError(ValueError):
    """Input dimensionality does not match the projection."""


class FusionConfigError(ValueError):
    """Invalid lambda weighting."""


class DegenerateVectorError(ValueError):
    """Raised only where a degenerate vector cannot be represented."""


@dataclass(frozen=True)
class ProjectionMatrix:
    """Very sparse random projection, regenerable from (seed, D, k, s).

    Entries take the values +sqrt(s/k), 0, -sqrt(s/k) with probabilities
    1/(2s), 1 - 1/s, 1/(2s); s defaults to sqrt(D). Only the parameters are
    ever persisted; the matrix is rebuilt on demand from a counter-based
    generator (Philox), which makes it bit-identical across runs and thread
    counts.
    """

    seed: int
    input_dim: int = DEFAULT_INPUT_DIM
    output_dim: int = DEFAULT_OUTPUT_DIM
    sparsity: float = 0.0  # 0 means "use sqrt(input_dim)"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("projection dims must be >= 1")
        if self.sparsity == 0.0:
            object.__setattr__(self, "sparsity", math.sqrt(self.input_dim))
        if self.sparsity < 1.0:
            raise ValueError(f"sparsity parameter must be >= 1, got {self.sparsity}")

    @cached_property
    def _matrix(self) -> sparse.csr_matrix:
        k, d, s = self.output_dim, self.input_dim, self.sparsity
        scale = math.sqrt(s / k)
        half_p = 1.0 / (2.0 * s)
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        for start in range(0, k, _ROW_BLOCK):
            block = min(_ROW_BLOCK, k - start)
            u = rng.random((block, d))
            plus = u < half_p
            minus = u >= 1.0 - half_p
            for local, mask, value in ((0, plus, scale), (1, minus, -scale)):
                r, c = np.nonzero(mask)
                rows.append((r + start).astype(np.int64))
                cols.append(c.astype(np.int64))
                vals.append(np.full(r.shape[0], value, dtype=np.float64))
        row_idx = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        col_idx = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
        data = np.concatenate(vals) if vals else np.empty(0, dtype=np.float64)
        return sparse.csr_matrix((data, (row_idx, col_idx)), shape=(k, d))

    def apply(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.shape[0] != self.input_dim:
            actual = flat.shape[0] if flat.ndim == 1 else flat.shape
            raise DimensionMismatchError(
                f"projection expects {self.input_dim} inputs, got {actual}"
            )
        return self._matrix @ flat

    def apply_many(self, flat_rows: np.ndarray) -> np.ndarray:
        """Project a (n, D) batch to (n, k)."""
        flat_rows = np.asarray(flat_rows, dtype=np.float64)
        if flat_rows.ndim != 2 or flat_rows.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"projection expects (n, {self.input_dim}), got {flat_rows.shape}"
            )
        return (self._matrix @ flat_rows.T).T


def project(audio: AudioEmbedding | np.ndarray, proj: ProjectionMatrix) -> np.ndarray:
    """Project a layer-major flattened audio embedding down to ``output_dim``."""
    matrix = audio.matrix if isinstance(audio, AudioEmbedding) else np.asarray(audio)
    return proj.apply(matrix.reshape(-1))


@dataclass(frozen=True)
class FusionConfig:
    """Convex weighting of the audio and metadata components."""

    lambda_audio: float = 0.6
    lambda_meta: float = 0.4

    def __post_init__(self) -> None:
        for name, lam in (("lambda_audio", self.lambda_audio), ("lambda_meta", self.lambda_meta)):
            if not 0.0 <= lam <= 1.0:
                raise FusionConfigError(f"{name} must be in [0, 1], got {lam}")
        if abs(self.lambda_audio + self.lambda_meta - 1.0) > 1e-9:
            raise FusionConfigError(
                f"lambda_audio + lambda_meta must equal 1, got "
                f"{self.lambda_audio} + {self.lambda_meta}"
            )


@dataclass(frozen=True, eq=False)
class FusedVector:
    """Unit-norm retrieval vector for one track (or all-zero when degenerate)."""

    track_id: int
    vector: np.ndarray  # (dim,) float32
    degenerate: bool = False
    zero_components: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1:
            raise ValueError("fused vector must be 1-D")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if self.degenerate:
            if norm != 0.0:
                raise ValueError("degenerate fused vector must be all-zero")
        elif abs(norm - 1.0) > 1e-6:
            raise ValueError(f"fused vector norm {norm} is not 1 within 1e-6")
        object.__setattr__(self, "vector", vec)


def _unit(vec: np.ndarray) -> tuple[np.ndarray, bool]:
    v = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        return np.zeros_like(v), True
    return v / norm, False


def fuse(
    audio_proj: np.ndarray,
    meta: MetadataEmbedding | np.ndarray,
    cfg: FusionConfig,
    track_id: int | None = None,
) -> FusedVector:
    """Combine L2-normalized components as lambda_audio*a + lambda_meta*m.

    Each component is normalized first so the lambdas weigh directions, not
    raw magnitudes; a zero-norm component contributes zero and is flagged.
    The sum is re-normalized; if it is itself zero the result is flagged
    degenerate rather than raising.
    """
    if isinstance(meta, MetadataEmbedding):
        meta_vec = meta.vector
        tid = meta.track_id if track_id is None else track_id
    else:
        meta_vec = np.asarray(meta)
        if track_id is None:
            raise ValueError("track_id required when meta is a raw vector")
        tid = track_id
    audio_proj = np.asarray(audio_proj, dtype=np.float64)
    if audio_proj.shape != meta_vec.shape:
        raise DimensionMismatchError(
            f"component dims differ: audio {audio_proj.shape} vs meta {meta_vec.shape}"
        )
    audio_unit, audio_zero = _unit(audio_proj)
    meta_unit, meta_zero = _unit(meta_vec)
    zero_components = tuple(
        name for name, flag in (("audio", audio_zero), ("meta", meta_zero)) if flag
    )
    combined = cfg.lambda_audio * audio_unit + cfg.lambda_meta * meta_unit
    norm = np.linalg.norm(combined)
    if norm < 1e-12:
        return FusedVector(tid, np.zeros(combined.shape[0], dtype=np.float32),
                           degenerate=True, zero_components=zero_components)
    return FusedVector(tid, (combined / norm).astype(np.float32),
                       degenerate=False, zero_components=zero_components)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; zero vectors score 0 by convention."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cosine dims differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
