"""Attributed graph container and the sparse primitives shared by every stage.

Sparse matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free
column indices; dense matrices are C-ordered float64 ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

__all__ = [
    "GraphBundle",
    "as_csr",
    "normalize_adjacency",
    "sparse_dense_multiply",
    "row_cosine_topk",
]


def as_csr(mat) -> sp.csr_matrix:
    """Canonical CSR copy: float64, summed duplicates, sorted indices."""
    out = sp.csr_matrix(mat, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.sort_indices()
    out.eliminate_zeros()
    return out


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GraphBundle:
    """Unweighted, undirected attributed graph with a node-classification split.

    ``adjacency`` is binary and symmetric with an empty diagonal; ``m`` counts
    each undirected edge once.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        adj = as_csr(self.adjacency)
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise ValidationError(f"adjacency must be square, got {adj.shape}")
        if x.ndim != 2 or x.shape[0] != n:
            raise ValidationError(f"features must be {n} x d, got {x.shape}")
        if x.shape[1] == 0:
            raise ValidationError("feature matrix has no columns")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        if y.shape != (n,):
            raise ValidationError(f"labels must have length {n}, got {y.shape}")
        if n and y.min() < 0:
            raise ValidationError("labels must be non-negative")
        if np.any(adj.data != 1.0):
            raise ValidationError("adjacency must be binary")
        if adj.diagonal().any():
            raise ValidationError("adjacency must have an empty diagonal")
        if (adj != adj.T).nnz:
            raise ValidationError("adjacency must be symmetric")

        splits = {}
        for name in ("train", "val", "test"):
            idx = np.asarray(getattr(self, name), dtype=np.int64).ravel()
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValidationError(f"{name} split has out-of-range node ids")
            if np.unique(idx).size != idx.size:
                raise ValidationError(f"{name} split has repeated node ids")
            splits[name] = idx
        seen = np.concatenate(list(splits.values()))
        if np.unique(seen).size != seen.size:
            raise ValidationError("train/val/test splits overlap")
        if n and int(y.max()) + 1 < 2:
            raise ValidationError("need at least two classes")

        adj.data.setflags(write=False)
        adj.indices.setflags(write=False)
        adj.indptr.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        for name, idx in splits.items():
            object.__setattr__(self, name, _frozen(idx))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def m(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @classmethod
    def from_edges(cls, n, edges, features, labels, train, val, test) -> "GraphBundle":
        """Build from an undirected edge list (each edge listed once)."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValidationError("self-loops are not allowed in the edge list")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        adj.sum_duplicates()
        adj.data[:] = 1.0
        return cls(adj, features, labels, train, val, test)

    def edge_list(self) -> np.ndarray:
        """Upper-triangular (i < j) edges in row-major order."""
        upper = sp.triu(self.adjacency, k=1, format="coo")
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def permuted(self, perm) -> "GraphBundle":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        adj = self.adjacency[perm][:, perm]
        return GraphBundle(adj, self.features[perm], self.labels[perm],
                           np.sort(inv[self.train]), np.sort(inv[self.val]),
                           np.sort(inv[self.test]))


def normalize_adjacency(adjacency, add_self_loops: bool = True) -> sp.csr_matrix:
    """Symmetric degree normalization ``D^-1/2 A D^-1/2``.

    With ``add_self_loops`` the identity is added first. Zero-degree rows
    stay zero instead of producing infinities.
    """
    adj = as_csr(adjacency)
    if adj.shape[0] != adj.shape[1]:
        raise ValidationError(f"adjacency must be square, got {adj.shape}")
    if add_self_loops:
        adj = as_csr(adj + sp.identity(adj.shape[0], format="csr"))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    out = adj.tocoo()
    vals = inv_sqrt[out.row] * out.data * inv_sqrt[out.col]
    return as_csr(sp.csr_matrix((vals, (out.row, out.col)), shape=adj.shape))


def sparse_dense_multiply(s, d) -> np.ndarray:
    """Sparse-times-dense product.

    Rows are accumulated in ascending column order (the CSR storage order),
    so repeated calls are bit-identical.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    if s.shape[1] != d.shape[0]:
        raise ValidationError(f"cannot multiply {s.shape} by {d.shape}")
    s = s if sp.isspmatrix_csr(s) and s.has_sorted_indices else as_csr(s)
    return np.asarray(s @ d)


def _unit_rows(mat):
    """Row-normalized copy (zero rows stay zero) and the row norms."""
    if sp.issparse(mat):
        mat = as_csr(mat)
        norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
        scale = np.zeros_like(norms)
        scale[norms > 0] = 1.0 / norms[norms > 0]
        return as_csr(sp.diags(scale) @ mat), norms
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    scale = np.zeros_like(norms)
    scale[norms > 0] = 1.0 / norms[norms > 0]
    return mat * scale[:, None], norms


def row_cosine_topk(mat, k: int, exclude_self: bool = True, block_size: int = 512):
    """Top-``k`` cosine neighbours of every row of ``mat``.

    Returns an :class:`~sagif.similarity.OracleSimilarity`. Rows with zero
    norm have cosine 0 against every row. Equal scores are ordered by the
    smaller column index. Cosines are clipped to [-1, 1].
    """
    from .similarity import OracleSimilarity

    n = mat.shape[0]
    if k < 1 or k >= n:
        raise ValidationError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    unit, _ = _unit_rows(mat)
    indices = np.empty((n, k), dtype=np.int64)
    scores = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        block = unit[start:stop] @ unit.T
        block = block.toarray() if sp.issparse(block) else np.asarray(block)
        np.clip(block, -1.0, 1.0, out=block)
        if exclude_self:
            rows = np.arange(stop - start)
            block[rows, rows + start] = -np.inf
        # k-th largest value per row; every entry >= it is a candidate so
        # ties at the boundary are resolved by index below, not by partition order.
        kth = -np.partition(-block, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            cand = np.flatnonzero(block[r] >= kth[r])
            order = np.lexsort((cand, -block[r, cand]))[:k]
            indices[start + r] = cand[order]
            scores[start + r] = block[r, cand[order]]
    return OracleSimilarity(indices, scores)
