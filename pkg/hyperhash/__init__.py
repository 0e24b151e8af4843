"""Spatially aware image retrieval with hyperdimensional scenes and trainable hyperplane hashing."""

__version__ = "1.0.0"

from .errors import (  # noqa: E402
    CorruptFileError,
    HyperHashError,
    IncompatibleArtifactError,
    InvalidArgumentError,
    UndefinedSimilarityError,
)
from .hamming_index import RetrievalIndex, index_build, index_load, index_save, query_topk  # noqa: E402
from .utilities import ConfigManager, PipelineConfig  # noqa: E402

__all__ = [
    "ConfigManager",
    "CorruptFileError",
    "HyperHashError",
    "IncompatibleArtifactError",
    "InvalidArgumentError",
    "PipelineConfig",
    "RetrievalIndex",
    "UndefinedSimilarityError",
    "index_build",
    "index_load",
    "index_save",
    "query_topk",
]
