"""Task-aware selection of transferability metrics from text embeddings."""
from importlib.metadata import PackageNotFoundError, version as _version

from ._backend import BACKEND
from .core import DataError, DegenerateWarning, EmbeddingCorpus, MetaTaskTable
from .rankcorr import ndcg, weighted_kendall_tau

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = ["BACKEND", "DataError", "DegenerateWarning", "EmbeddingCorpus", "MetaTaskTable",
           "ndcg", "weighted_kendall_tau", "__version__"]
