from __future__ import annotations

import numpy as np
import pytest

from tagfuse.embeddings import MagicError, NonFiniteError, ShapeError, TruncatedFileError
from tagfuse.fusion import FusedVector, ProjectionMatrix
from tagfuse.index import (
    DuplicateIdError,
    RetrievalResult,
    UnknownIdError,
    build_index,
    read_index,
    top_k,
    write_index,
)


def _unit_rows(n: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _index(n: int = 30, dim: int = 6, seed: int = 0, ids=None):
    rows = _unit_rows(n, dim, seed)
    ids = list(range(n)) if ids is None else ids
    return build_index([FusedVector(tid, rows[i].astype(np.float32)) for i, tid in enumerate(ids)])


def naive_top_k(index, query_vec: np.ndarray, k: int, exclude_id: int | None = None):
    """Independent oracle: full similarity vector, one global sort."""
    q = np.asarray(query_vec, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm > 0:
        q = q / norm
    sims = index.matrix.astype(np.float64) @ q
    order = np.lexsort((index.ids, -sims))
    out = []
    for i in order:
        tid = int(index.ids[i])
        if exclude_id is not None and tid == exclude_id:
            continue
        out.append((tid, sims[i]))
        if len(out) == k:
            break
    return out


class TestBuild:
    def test_duplicate_id_rejected(self):
        rows = _unit_rows(2, 4, 1)
        with pytest.raises(DuplicateIdError):
            build_index([FusedVector(5, rows[0].astype(np.float32)),
                         FusedVector(5, rows[1].astype(np.float32))])

    def test_empty_index(self):
        index = build_index([])
        assert len(index) == 0
        assert top_k(index, np.zeros(0), k=3).neighbors == ()

    def test_size_matches_record_count(self):
        assert len(_index(17)) == 17

    def test_rebuild_gives_identical_results(self):
        a, b = _index(40, seed=3), _index(40, seed=3)
        q = _unit_rows(1, 6, 99)[0]
        assert top_k(a, q, k=7).neighbors == top_k(b, q, k=7).neighbors


class TestTopK:
    def test_exact_duplicate_ranks_first_with_similarity_one(self):
        rows = _unit_rows(10, 5, 2)
        vectors = [FusedVector(i, rows[i].astype(np.float32)) for i in range(10)]
        vectors.append(FusedVector(100, rows[0].astype(np.float32)))
        index = build_index(vectors)
        result = top_k(index, 0, k=3)
        assert result.neighbors[0][0] == 100
        assert result.neighbors[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_k_larger_than_collection(self):
        index = _index(5)
        result = top_k(index, 2, k=50)
        assert len(result.neighbors) == 4  # all non-self items
        assert 2 not in result.ids()

    def test_matches_naive_oracle(self):
        index = _index(200, dim=8, seed=4)
        for qid in (0, 57, 199):
            got = top_k(index, qid, k=10, chunk_rows=32, workers=3)
            expected = naive_top_k(index, index.matrix[index.position(qid)], 10, exclude_id=qid)
            assert got.ids() == tuple(tid for tid, _ in expected)

    def test_ties_broken_by_ascending_track_id(self):
        row = _unit_rows(1, 4, 5)[0].astype(np.float32)
        ids = [9, 3, 27, 1, 14, 6]
        index = build_index([FusedVector(tid, row) for tid in ids])
        result = top_k(index, 9, k=3, chunk_rows=2)
        assert result.ids() == (1, 3, 6)

    def test_parallel_equals_serial(self):
        index = _index(500, dim=8, seed=6)
        q = _unit_rows(1, 8, 123)[0]
        serial = top_k(index, q, k=10, workers=1, chunk_rows=64)
        parallel = top_k(index, q, k=10, workers=4, chunk_rows=64)
        assert serial.neighbors == parallel.neighbors

    def test_query_scale_invariance(self):
        index = _index(60, dim=5, seed=8)
        q = _unit_rows(1, 5, 77)[0]
        assert top_k(index, q, k=10).ids() == top_k(index, 250.0 * q, k=10).ids()

    def test_unknown_query_id(self):
        with pytest.raises(UnknownIdError):
            top_k(_index(5), 999, k=2)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            top_k(_index(5), 1, k=0)

    def test_result_invariants_enforced(self):
        with pytest.raises(ValueError):
            RetrievalResult(1, ((2, 0.5), (3, 0.9)))
        with pytest.raises(ValueError):
            RetrievalResult(1, ((1, 0.5),))
        with pytest.raises(ValueError):
            RetrievalResult(None, ((2, 0.5), (2, 0.4)))


class TestJmxiFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        proj = ProjectionMatrix(seed=11, input_dim=24, output_dim=6)
        index = _index(12, dim=6, seed=9)
        index.projection = proj
        a, b = tmp_path / "a.jmxi", tmp_path / "b.jmxi"
        write_index(index, a)
        loaded = read_index(a)
        write_index(loaded, b)
        assert a.read_bytes() == b.read_bytes()
        assert np.array_equal(loaded.matrix, index.matrix)
        assert np.array_equal(loaded.ids, index.ids)
        assert loaded.projection == proj

    def test_queries_identical_after_reload(self, tmp_path):
        index = _index(50, dim=6, seed=10)
        path = tmp_path / "i.jmxi"
        write_index(index, path)
        loaded = read_index(path)
        assert top_k(index, 7, k=10).neighbors == top_k(loaded, 7, k=10).neighbors

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "i.jmxi"
        write_index(_index(3), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"WHAT"
        path.write_bytes(bytes(data))
        with pytest.raises(MagicError):
            read_index(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "i.jmxi"
        write_index(_index(3), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            read_index(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "i.jmxi"
        write_index(_index(3), path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(ShapeError):
            read_index(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "i.jmxi"
        write_index(_index(3, dim=4), path)
        data = bytearray(path.read_bytes())
        data[-4:] = np.float32(np.inf).tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(NonFiniteError):
            read_index(path)
