"""Similarity-encoded graph neural networks for individual fairness."""

from .encoding import SimilarityEncoding, laplacian_encoding, random_walk_encoding
from .errors import NumericalError, ValidationError
from .evaluation import MetricsReport, err_at_k, fairness_report, macro_ovr_auc, ndcg_at_k
from .graph import GraphBundle, normalize_adjacency, row_cosine_topk, sparse_dense_multiply
from .io import load_bundle, save_bundle
from .models import ModelParams, backward, forward, init_params
from .similarity import (ConsistencyProfile, FusionConfig, OracleSimilarity, build_knn_graph,
                         oracle_similarity, similarity_consistency)
from .synthetic import SbmSpec, generate_sbm
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "ConsistencyProfile",
    "FusionConfig",
    "GraphBundle",
    "MetricsReport",
    "ModelParams",
    "NumericalError",
    "OracleSimilarity",
    "SbmSpec",
    "SimilarityEncoding",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "backward",
    "build_knn_graph",
    "err_at_k",
    "fairness_report",
    "forward",
    "generate_sbm",
    "init_params",
    "laplacian_encoding",
    "load_bundle",
    "macro_ovr_auc",
    "ndcg_at_k",
    "normalize_adjacency",
    "oracle_similarity",
    "random_walk_encoding",
    "row_cosine_topk",
    "save_bundle",
    "similarity_consistency",
    "sparse_dense_multiply",
    "train",
]
