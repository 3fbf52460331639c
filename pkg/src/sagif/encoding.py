"""Initial similarity encodings computed from the oracle kNN graph."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import NumericalError, ValidationError
from .graph import as_csr, normalize_adjacency

__all__ = [
    "SimilarityEncoding",
    "laplacian_encoding",
    "random_walk_encoding",
    "encode",
    "write_encoding",
    "read_encoding",
]

DENSE_EIGEN_LIMIT = 4096
_TIE_TOL = 1e-10
_SENC_MAGIC = b"SENC"
_METHOD_CODES = {"laplacian": 0, "random_walk": 1}


@dataclass(frozen=True, eq=False)
class SimilarityEncoding:
    """Dense ``n x d_sim`` encoding plus how it was produced.

    ``eigenvalues`` is only set by the Laplacian method.
    """

    matrix: np.ndarray
    method: str
    k: int = 0
    eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise ValidationError("encoding must be a 2-D matrix")
        if not np.all(np.isfinite(mat)):
            raise NumericalError("encoding contains non-finite values")
        if self.method not in _METHOD_CODES:
            raise ValidationError(f"unknown encoding method {self.method!r}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_sim(self) -> int:
        return self.matrix.shape[1]


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[pivot, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vecs * signs


def _order_eigenpairs(vals: np.ndarray, vecs: np.ndarray, keep: int):
    """First ``keep`` pairs in ascending eigenvalue order.

    A cluster of numerically equal eigenvalues is ordered lexicographically
    by its sign-fixed vectors, so the basis choice inside a degenerate
    eigenspace does not depend on solver output order.
    """
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    group = np.concatenate([[0], np.cumsum(np.diff(vals) > _TIE_TOL)])
    order = np.arange(vals.size)
    start = 0
    while start < min(keep, vals.size):
        stop = start + int(np.sum(group == group[start]))
        if stop - start > 1:
            block = sorted(range(start, stop), key=lambda j: tuple(vecs[:, j]))
            order[start:stop] = block
        start = stop
    order = order[:keep]
    return vals[order], vecs[:, order]


def _smallest_eigenpairs(lap: sp.csr_matrix, count: int):
    n = lap.shape[0]
    if n <= DENSE_EIGEN_LIMIT:
        vals, vecs = np.linalg.eigh(lap.toarray())
        return vals[:count], vecs[:, :count]
    # Smallest of L = largest of 2I - L, which ARPACK finds reliably.
    shifted = as_csr(2.0 * sp.identity(n, format="csr") - lap)
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        vals, vecs = eigsh(shifted, k=count, which="LA", tol=1e-10, maxiter=5000, v0=v0)
    except ArpackNoConvergence as exc:
        raise NumericalError(f"Laplacian eigensolver did not converge: {exc}") from exc
    vals = 2.0 - vals
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def laplacian_encoding(a_k, d_sim: int, k: int = 0) -> SimilarityEncoding:
    """Eigenvectors of the ``d_sim`` smallest non-trivial eigenvalues of
    ``I - D^-1/2 A D^-1/2``.

    One zero eigenvector per connected component is skipped. Isolated nodes
    are left out of the factorization and get all-zero rows; a graph with no
    edges at all therefore encodes to zeros.
    """
    adj = as_csr(a_k)
    n = adj.shape[0]
    if d_sim < 0 or d_sim + 1 > n:
        raise ValidationError(f"d_sim must satisfy 0 <= d_sim < n (d_sim={d_sim}, n={n})")
    out = np.zeros((n, d_sim))
    if d_sim == 0:
        return SimilarityEncoding(out, "laplacian", k, np.zeros(0))
    active = np.flatnonzero(np.diff(adj.indptr) > 0)
    if active.size == 0:
        return SimilarityEncoding(out, "laplacian", k, np.zeros(0))

    sub = adj[active][:, active]
    n_comp, _ = connected_components(sub, directed=False)
    available = active.size - n_comp
    if d_sim > available:
        raise ValidationError(
            f"d_sim={d_sim} exceeds the {available} non-trivial eigenvectors of the kNN graph")
    lap = as_csr(sp.identity(active.size, format="csr") - normalize_adjacency(sub, False))

    if active.size <= DENSE_EIGEN_LIMIT:
        vals, vecs = _smallest_eigenpairs(lap, active.size)
        vals, vecs = vals[n_comp:], _sign_fix(vecs[:, n_comp:])
        vals, vecs = _order_eigenpairs(vals, vecs, d_sim)
    else:
        vals, vecs = _smallest_eigenpairs(lap, n_comp + d_sim)
        vals, vecs = vals[n_comp:], _sign_fix(vecs[:, n_comp:])
    out[active] = vecs
    return SimilarityEncoding(out, "laplacian", k, vals)


def random_walk_encoding(a_k, d_sim: int, k: int = 0, block_size: int = 1024) -> SimilarityEncoding:
    """Return probabilities ``(RW^t)_ii`` for ``t = 1..d_sim`` with ``RW = A D^-1``.

    Powers are applied to column blocks of the identity so memory stays
    ``n x block_size``; isolated nodes get all-zero rows.
    """
    adj = as_csr(a_k)
    n = adj.shape[0]
    if d_sim < 0 or d_sim + 1 > n:
        raise ValidationError(f"d_sim must satisfy 0 <= d_sim < n (d_sim={d_sim}, n={n})")
    deg = np.asarray(adj.sum(axis=0)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    walk = as_csr(adj @ sp.diags(inv))
    out = np.zeros((n, d_sim))
    for start in range(0, n, block_size):
        cols = np.arange(start, min(start + block_size, n))
        state = np.zeros((n, cols.size))
        state[cols, np.arange(cols.size)] = 1.0
        for t in range(d_sim):
            state = walk @ state
            out[cols, t] = state[cols, np.arange(cols.size)]
    return SimilarityEncoding(out, "random_walk", k)


def encode(a_k, d_sim: int, method: str = "laplacian", k: int = 0) -> SimilarityEncoding:
    if method == "laplacian":
        return laplacian_encoding(a_k, d_sim, k)
    if method == "random_walk":
        return random_walk_encoding(a_k, d_sim, k)
    raise ValidationError(f"unknown encoding method {method!r}")


def write_encoding(path, enc: SimilarityEncoding) -> None:
    """Binary layout: ``SENC``, method byte, n and d_sim as uint32 LE, row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_SENC_MAGIC + struct.pack("<BII", _METHOD_CODES[enc.method], enc.n, enc.d_sim))
        fh.write(enc.matrix.astype("<f8").tobytes())


def read_encoding(path) -> SimilarityEncoding:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _SENC_MAGIC:
        raise ValidationError(f"{path}: not a SENC file")
    code, n, d_sim = struct.unpack_from("<BII", blob, 4)
    methods = {v: key for key, v in _METHOD_CODES.items()}
    if code not in methods:
        raise ValidationError(f"{path}: unknown method byte {code}")
    data = np.frombuffer(blob, dtype="<f8", offset=13)
    if data.size != n * d_sim:
        raise ValidationError(f"{path}: expected {n * d_sim} values, found {data.size}")
    return SimilarityEncoding(data.reshape(n, d_sim).astype(np.float64), methods[code])
