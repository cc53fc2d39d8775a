from .base import (Layout, average_fanout, identity_layout, load_counts, random_layout,
                   save_counts, trace_fanout, training_access_counts)
from .kmeans import KMeansModel, kmeans, kmeans_layout, recursive_kmeans_layout
from .shp import NodeStats, shp_depth, shp_layout

__all__ = [
    "Layout", "average_fanout", "identity_layout", "load_counts", "random_layout",
    "save_counts", "trace_fanout", "training_access_counts", "KMeansModel", "kmeans",
    "kmeans_layout", "recursive_kmeans_layout", "NodeStats", "shp_depth", "shp_layout",
]
