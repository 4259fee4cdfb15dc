"""tagfuse_extractor: offline embedding extraction for the tagfuse pipeline."""

from .encoders import (
    HashAudioEncoder,
    HashTextEncoder,
    average_layers,
    make_audio_encoder,
    make_text_encoder,
)
from .extract import (
    ExtractionJob,
    ExtractionReport,
    extract_audio,
    extract_metadata_text,
    extract_token_vectors,
)
from .jmxe import write_jmxe, write_token_vectors

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob",
    "ExtractionReport",
    "HashAudioEncoder",
    "HashTextEncoder",
    "average_layers",
    "extract_audio",
    "extract_metadata_text",
    "extract_token_vectors",
    "make_audio_encoder",
    "make_text_encoder",
    "write_jmxe",
    "write_token_vectors",
    "__version__",
]
