from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tagfuse.embeddings import AudioEmbedding, MetadataEmbedding
from tagfuse.fusion import (
    DimensionMismatchError,
    FusedVector,
    FusionConfig,
    FusionConfigError,
    ProjectionMatrix,
    cosine,
    fuse,
    project,
)


class TestProjection:
    def test_zero_maps_to_zero(self):
        proj = ProjectionMatrix(seed=1, input_dim=12, output_dim=4)
        audio = AudioEmbedding(1, np.zeros((3, 4), dtype=np.float32))
        assert np.array_equal(project(audio, proj), np.zeros(4))

    def test_linearity(self):
        proj = ProjectionMatrix(seed=2, input_dim=12, output_dim=4)
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4)).astype(np.float32)
        assert np.allclose(project(AudioEmbedding(1, 2 * a), proj),
                           2 * project(AudioEmbedding(1, a), proj))

    def test_deterministic_across_instances(self):
        x = np.random.default_rng(1).normal(size=64)
        y1 = ProjectionMatrix(seed=9, input_dim=64, output_dim=8).apply(x)
        y2 = ProjectionMatrix(seed=9, input_dim=64, output_dim=8).apply(x)
        assert np.array_equal(y1, y2)

    def test_different_seeds_differ(self):
        x = np.ones(64)
        y1 = ProjectionMatrix(seed=1, input_dim=64, output_dim=8).apply(x)
        y2 = ProjectionMatrix(seed=2, input_dim=64, output_dim=8).apply(x)
        assert not np.array_equal(y1, y2)

    def test_entry_values_and_density(self):
        proj = ProjectionMatrix(seed=3, input_dim=400, output_dim=50)
        dense = proj._matrix.toarray()
        s = proj.sparsity
        scale = math.sqrt(s / proj.output_dim)
        values = set(np.unique(dense).tolist())
        assert values <= {-scale, 0.0, scale}
        nnz_fraction = np.count_nonzero(dense) / dense.size
        assert nnz_fraction == pytest.approx(1.0 / s, rel=0.35)

    def test_dimension_mismatch_names_dims(self):
        proj = ProjectionMatrix(seed=1, input_dim=12, output_dim=4)
        with pytest.raises(DimensionMismatchError, match="12"):
            project(AudioEmbedding(1, np.zeros((3, 5), dtype=np.float32)), proj)

    def test_apply_many_matches_apply(self):
        proj = ProjectionMatrix(seed=4, input_dim=20, output_dim=6)
        rows = np.random.default_rng(5).normal(size=(7, 20))
        batch = proj.apply_many(rows)
        for i in range(7):
            assert np.allclose(batch[i], proj.apply(rows[i]))


class TestFusionConfig:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(FusionConfigError, match="1"):
            FusionConfig(0.5, 0.6)

    def test_weights_must_be_in_unit_interval(self):
        with pytest.raises(FusionConfigError):
            FusionConfig(1.2, -0.2)

    @pytest.mark.parametrize("la,lm", [(1.0, 0.0), (0.0, 1.0), (0.6, 0.4), (0.4, 0.6)])
    def test_paper_configurations_accepted(self, la, lm):
        cfg = FusionConfig(la, lm)
        assert cfg.lambda_audio == la


class TestFuse:
    def test_audio_only_is_normalized_projection(self):
        audio = np.array([3.0, 4.0, 0.0])
        meta = MetadataEmbedding(1, np.array([9.0, 9.0, 9.0], dtype=np.float32))
        fv = fuse(audio, meta, FusionConfig(1.0, 0.0))
        assert np.allclose(fv.vector, np.array([0.6, 0.8, 0.0]), atol=1e-7)

    def test_meta_only_ignores_audio(self):
        meta = MetadataEmbedding(1, np.array([0.0, 2.0], dtype=np.float32))
        fv1 = fuse(np.array([5.0, 5.0]), meta, FusionConfig(0.0, 1.0))
        fv2 = fuse(np.array([-1.0, 7.0]), meta, FusionConfig(0.0, 1.0))
        assert np.array_equal(fv1.vector, fv2.vector)
        assert np.allclose(fv1.vector, [0.0, 1.0])

    def test_best_configuration_is_convex_combination(self):
        audio = np.array([1.0, 0.0])
        meta = MetadataEmbedding(1, np.array([0.0, 1.0], dtype=np.float32))
        fv = fuse(audio, meta, FusionConfig(0.6, 0.4))
        expected = np.array([0.6, 0.4]) / np.linalg.norm([0.6, 0.4])
        assert np.allclose(fv.vector, expected, atol=1e-7)
        assert np.linalg.norm(fv.vector) == pytest.approx(1.0, abs=1e-6)

    def test_zero_component_flagged(self):
        meta = MetadataEmbedding(1, np.array([0.0, 1.0], dtype=np.float32))
        fv = fuse(np.zeros(2), meta, FusionConfig(0.6, 0.4))
        assert fv.zero_components == ("audio",)
        assert not fv.degenerate
        assert np.allclose(fv.vector, [0.0, 1.0])

    def test_both_zero_is_degenerate_not_a_crash(self):
        meta = MetadataEmbedding(1, np.zeros(2, dtype=np.float32))
        fv = fuse(np.zeros(2), meta, FusionConfig(0.6, 0.4))
        assert fv.degenerate
        assert np.array_equal(fv.vector, np.zeros(2, dtype=np.float32))

    def test_dim_mismatch(self):
        meta = MetadataEmbedding(1, np.ones(3, dtype=np.float32))
        with pytest.raises(DimensionMismatchError):
            fuse(np.ones(2), meta, FusionConfig(0.6, 0.4))

    def test_unit_invariant_enforced(self):
        with pytest.raises(ValueError):
            FusedVector(1, np.array([0.5, 0.5], dtype=np.float32))


class TestCosine:
    def test_self_similarity(self):
        v = np.array([0.3, -2.0, 5.0])
        assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_known_value(self):
        assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
            0.70710678, abs=1e-8
        )

    def test_zero_vector_convention(self):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine(np.ones(2), np.ones(3))


_vec = arrays(np.float64, st.integers(2, 6), elements=st.floats(-50, 50))


@settings(max_examples=50)
@given(u=_vec)
def test_cosine_scale_invariant(u):
    v = u[::-1].copy()
    base = cosine(u, v)
    assert cosine(3.5 * u, v) == pytest.approx(base, abs=1e-9)
    assert -1.0 <= base <= 1.0


@settings(max_examples=50)
@given(u=_vec)
def test_cosine_symmetric(u):
    v = np.roll(u, 1)
    assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-12)
