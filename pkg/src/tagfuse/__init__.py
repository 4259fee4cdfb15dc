"""tagfuse: fused audio/metadata retrieval and music metadata imputation."""

from .embeddings import (
    AudioEmbedding,
    EmbeddingCollection,
    FrameStack,
    MetadataEmbedding,
    average_frames,
    read_embeddings,
    write_embeddings,
)
from .fusion import FusedVector, FusionConfig, ProjectionMatrix, cosine, fuse, project
from .index import RetrievalResult, SearchIndex, build_index, read_index, top_k, write_index
from .metadata import (
    CaptionRecord,
    ImputationRecord,
    Provenance,
    TrackMetadata,
    merge_imputed,
    missing_fields,
    render_metadata_text,
)

__version__ = "0.1.0"

__all__ = [
    "AudioEmbedding",
    "CaptionRecord",
    "EmbeddingCollection",
    "FrameStack",
    "FusedVector",
    "FusionConfig",
    "ImputationRecord",
    "MetadataEmbedding",
    "ProjectionMatrix",
    "Provenance",
    "RetrievalResult",
    "SearchIndex",
    "TrackMetadata",
    "average_frames",
    "build_index",
    "cosine",
    "fuse",
    "merge_imputed",
    "missing_fields",
    "project",
    "read_embeddings",
    "read_index",
    "render_metadata_text",
    "top_k",
    "write_embeddings",
    "write_index",
    "__version__",
]
