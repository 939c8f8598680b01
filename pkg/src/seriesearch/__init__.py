"""Disk-backed exact k-NN similarity search for fixed-length data series."""

from .build import BuildTrace, SeriesIndex, build_index
from .persist import IndexSettings, QueryableIndex, load_index, write_index
from .query import QueryConfig, QueryEngine, ResultSet, exact_knn

__version__ = "0.1.0"

__all__ = [
    "BuildTrace",
    "IndexSettings",
    "QueryConfig",
    "QueryEngine",
    "QueryableIndex",
    "ResultSet",
    "SeriesIndex",
    "build_index",
    "exact_knn",
    "load_index",
    "write_index",
    "__version__",
]
