"""Oracle similarity construction and similarity-consistency analysis.

Two oracles blend feature and structure information:

* topology fusion mixes the self-looped normalized adjacency with a
  normalized feature-kNN adjacency and takes row cosines of the result;
* feature fusion turns hop distances into bounded positional features,
  compresses them by PCA and appends them to ``X`` before the row cosine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .errors import ValidationError
from .graph import GraphBundle, as_csr, normalize_adjacency, row_cosine_topk

__all__ = [
    "OracleSimilarity",
    "FusionConfig",
    "ConsistencyProfile",
    "build_knn_graph",
    "topology_fusion_matrix",
    "oracle_from_topology_fusion",
    "all_pairs_distances",
    "map_distances",
    "pca_reduce",
    "oracle_from_feature_fusion",
    "oracle_similarity",
    "feature_oracle",
    "similarity_consistency",
    "write_oracle",
    "read_oracle",
]

UNREACHABLE_VALUE = -1.5

_ORCS_MAGIC = b"ORCS"
_ORCS_PAIR = np.dtype([("index", "<u4"), ("score", "<f8")])


@dataclass(frozen=True, eq=False)
class OracleSimilarity:
    """Per-node top-k neighbours and their similarity scores (n x k each)."""

    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        val = np.ascontiguousarray(self.scores, dtype=np.float64)
        if idx.ndim != 2 or idx.shape != val.shape:
            raise ValidationError("indices and scores must be equal-shape n x k arrays")
        n, k = idx.shape
        if n and k:
            if idx.min() < 0 or idx.max() >= n:
                raise ValidationError("neighbour index out of range")
            if np.any(idx == np.arange(n)[:, None]):
                raise ValidationError("a node cannot be its own neighbour")
            ordered = np.sort(idx, axis=1)
            if np.any(ordered[:, 1:] == ordered[:, :-1]):
                raise ValidationError("duplicate neighbour within a row")
            if np.any(np.diff(val, axis=1) > 0):
                raise ValidationError("scores must be non-increasing within each row")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "scores", val)

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def to_sparse(self) -> sp.csr_matrix:
        """Directed sparse matrix with ``S[i, j]`` for each stored pair."""
        rows = np.repeat(np.arange(self.n), self.k)
        return as_csr(sp.csr_matrix((self.scores.ravel(), (rows, self.indices.ravel())),
                                    shape=(self.n, self.n)))

    def __eq__(self, other):
        if not isinstance(other, OracleSimilarity):
            return NotImplemented
        return (np.array_equal(self.indices, other.indices)
                and np.array_equal(self.scores, other.scores))


@dataclass(frozen=True)
class FusionConfig:
    kind: str = "topology"
    k: int = 10
    lam: float = 0.5
    d_sim: int = 16

    def __post_init__(self):
        if self.kind not in ("topology", "feature"):
            raise ValidationError(f"unknown fusion kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.k < 1:
            raise ValidationError(f"k must be positive, got {self.k}")
        if self.kind == "feature" and self.d_sim < 1:
            raise ValidationError(f"d_sim must be positive, got {self.d_sim}")


@dataclass(frozen=True, eq=False)
class ConsistencyProfile:
    """Per-node overlap of feature and structure top-k sets."""

    consistency: np.ndarray
    k: int
    histogram: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.ascontiguousarray(self.consistency, dtype=np.float64)
        c.setflags(write=False)
        object.__setattr__(self, "consistency", c)
        if not self.histogram:
            counts = np.bincount(np.rint(c * self.k).astype(np.int64), minlength=self.k + 1)
            hist = {level / self.k: int(counts[level]) for level in range(self.k + 1)}
            object.__setattr__(self, "histogram", hist)

    @property
    def levels(self) -> np.ndarray:
        """Integer overlap counts ``c * k``."""
        return np.rint(self.consistency * self.k).astype(np.int64)


def build_knn_graph(sim: OracleSimilarity) -> sp.csr_matrix:
    """Binary kNN adjacency, symmetrized by union.

    Only neighbours with a strictly positive score become edges; a zero or
    negative cosine is not similarity, and keeping such entries would wire
    nodes together purely by index order.
    """
    n = sim.n
    keep = sim.scores > 0
    rows = np.repeat(np.arange(n), sim.k)[keep.ravel()]
    cols = sim.indices.ravel()[keep.ravel()]
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    a = a + a.T
    a = as_csr(a)
    a.data[:] = 1.0
    return a


def feature_oracle(g: GraphBundle, k: int) -> OracleSimilarity:
    """Plain feature-cosine oracle (the one used for fairness evaluation)."""
    return row_cosine_topk(g.features, k, exclude_self=True)


def topology_fusion_matrix(g: GraphBundle, cfg: FusionConfig) -> sp.csr_matrix:
    """``lam * norm(A + I) + (1 - lam) * norm(A_k)`` with ``A_k`` the feature kNN graph."""
    if cfg.kind != "topology":
        raise ValidationError("topology_fusion_matrix needs a topology FusionConfig")
    structure = normalize_adjacency(g.adjacency, add_self_loops=True)
    knn = build_knn_graph(feature_oracle(g, cfg.k))
    feature = normalize_adjacency(knn, add_self_loops=False)
    return as_csr(cfg.lam * structure + (1.0 - cfg.lam) * feature)


def oracle_from_topology_fusion(g: GraphBundle, cfg: FusionConfig) -> OracleSimilarity:
    return row_cosine_topk(topology_fusion_matrix(g, cfg), cfg.k, exclude_self=True)


def all_pairs_distances(adjacency) -> np.ndarray:
    """Hop-count distance matrix; ``inf`` marks unreachable pairs."""
    adj = as_csr(adjacency)
    if adj.shape[0] != adj.shape[1]:
        raise ValidationError(f"adjacency must be square, got {adj.shape}")
    # Unweighted shortest paths are a BFS per source.
    return shortest_path(adj, method="D", directed=False, unweighted=True)


def map_distances(m) -> np.ndarray:
    """Squash hop distances into [-1, 1] by ``cos(pi * d / row_max)``.

    Unreachable pairs become -1.5. A row whose finite maximum is 0 (an
    isolated node) maps its finite entries to 1.
    """
    m = np.asarray(m, dtype=np.float64)
    finite = np.isfinite(m)
    row_max = np.where(finite, m, 0.0).max(axis=1, keepdims=True)
    safe = np.where(row_max > 0, row_max, 1.0)
    mapped = np.where(row_max > 0, np.cos(np.pi * np.where(finite, m, 0.0) / safe), 1.0)
    return np.where(finite, mapped, UNREACHABLE_VALUE)


def pca_reduce(m, d_sim: int, return_variance: bool = False):
    """Project column-centred ``m`` on its top ``d_sim`` principal directions.

    Directions are ordered by decreasing variance and signed so that each
    one's largest-magnitude coordinate is positive.
    """
    m = np.asarray(m, dtype=np.float64)
    rows, cols = m.shape
    if not 1 <= d_sim <= min(rows, cols):
        raise ValidationError(f"d_sim must lie in [1, {min(rows, cols)}], got {d_sim}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("PCA input must be finite")
    centred = m - m.mean(axis=0, keepdims=True)
    _, sing, vt = np.linalg.svd(centred, full_matrices=False)
    comps = vt[:d_sim].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d_sim), pivot])
    comps *= signs[:, None]
    proj = centred @ comps.T
    if return_variance:
        denom = max(rows - 1, 1)
        return proj, sing[:d_sim] ** 2 / denom
    return proj


def feature_fusion_matrix(g: GraphBundle, d_sim: int) -> np.ndarray:
    """Synthetic features ``[X | PCA(mapped distances)]``; no rescaling of either block."""
    positional = pca_reduce(map_distances(all_pairs_distances(g.adjacency)), d_sim)
    return np.hstack([g.features, positional])


def oracle_from_feature_fusion(g: GraphBundle, cfg: FusionConfig) -> OracleSimilarity:
    if cfg.kind != "feature":
        raise ValidationError("oracle_from_feature_fusion needs a feature FusionConfig")
    return row_cosine_topk(feature_fusion_matrix(g, cfg.d_sim), cfg.k, exclude_self=True)


def oracle_similarity(g: GraphBundle, cfg: FusionConfig) -> OracleSimilarity:
    if cfg.kind == "topology":
        return oracle_from_topology_fusion(g, cfg)
    return oracle_from_feature_fusion(g, cfg)


def similarity_consistency(g: GraphBundle, k: int) -> ConsistencyProfile:
    """Fraction of each node's feature top-k that is also in its adjacency-row top-k."""
    if not 1 <= k < g.n:
        raise ValidationError(f"k must satisfy 1 <= k < n (k={k}, n={g.n})")
    s_f = row_cosine_topk(g.features, k).indices
    s_t = row_cosine_topk(g.adjacency, k).indices
    overlap = np.array([np.intersect1d(a, b, assume_unique=True).size
                        for a, b in zip(s_f, s_t)], dtype=np.float64)
    return ConsistencyProfile(overlap / k, k)


def write_oracle(path, sim: OracleSimilarity) -> None:
    """Binary layout: ``ORCS``, n and k as uint32 LE, then n*k (uint32 index, float64 score)."""
    pairs = np.empty(sim.indices.size, dtype=_ORCS_PAIR)
    pairs["index"] = sim.indices.ravel()
    pairs["score"] = sim.scores.ravel()
    with open(path, "wb") as fh:
        fh.write(_ORCS_MAGIC + struct.pack("<II", sim.n, sim.k))
        fh.write(pairs.tobytes())


def read_oracle(path) -> OracleSimilarity:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _ORCS_MAGIC:
        raise ValidationError(f"{path}: not an ORCS file")
    n, k = struct.unpack_from("<II", blob, 4)
    pairs = np.frombuffer(blob, dtype=_ORCS_PAIR, offset=12)
    if pairs.size != n * k:
        raise ValidationError(f"{path}: expected {n * k} pairs, found {pairs.size}")
    return OracleSimilarity(pairs["index"].astype(np.int64).reshape(n, k),
                            pairs["score"].astype(np.float64).reshape(n, k))
