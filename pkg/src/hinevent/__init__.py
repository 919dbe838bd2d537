"""Event mining over typed message graphs: meta-path similarity, learned
path weights, density clustering, and a time-sliced streaming pipeline."""

from .hin import Hin, NodeRef, NodeType, RelationType, SchemaError
from .ingest import EnrichmentTables, MessageRecord, build_event_layer, build_hin, parse_corpus
from .metapath import (
    MetaPath,
    MetaPathSet,
    count_matrix,
    default_detection_pathset,
    default_evolution_pathset,
    enumerate_symmetric_metapaths,
    per_path_similarity_matrices,
    similarity,
    similarity_matrix,
    uniform_weights,
)
from .clustering import (
    DistanceMatrix,
    connected_components_labels,
    dbscan,
    from_similarity,
    get_neighbors,
)
from .evaluation import SyntheticSpec, accuracy_and_macro_f1, generate_synthetic, nmi, threshold_sweep
from .streaming import RetrievalConfig, StreamConfig, StreamSession, run_stream

__version__ = "0.1.0"

__all__ = [
    "Hin", "NodeRef", "NodeType", "RelationType", "SchemaError",
    "EnrichmentTables", "MessageRecord", "build_event_layer", "build_hin", "parse_corpus",
    "MetaPath", "MetaPathSet", "count_matrix", "default_detection_pathset",
    "default_evolution_pathset", "enumerate_symmetric_metapaths",
    "per_path_similarity_matrices", "similarity", "similarity_matrix", "uniform_weights",
    "DistanceMatrix", "connected_components_labels", "dbscan", "from_similarity",
    "get_neighbors",
    "SyntheticSpec", "accuracy_and_macro_f1", "generate_synthetic", "nmi", "threshold_sweep",
    "RetrievalConfig", "StreamConfig", "StreamSession", "run_stream",
]
