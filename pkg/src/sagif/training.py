"""Losses, the pairwise-fairness regularizer, Adam, and the training loop."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .encoding import SimilarityEncoding, encode
from .errors import NumericalError, ValidationError
from .graph import GraphBundle, as_csr, normalize_adjacency, sparse_dense_multiply
from .models import ModelParams, backward, forward, init_params
from .similarity import (FusionConfig, OracleSimilarity, build_knn_graph, feature_oracle,
                         oracle_similarity)

__all__ = [
    "METHODS",
    "TrainConfig",
    "TrainResult",
    "Prepared",
    "cross_entropy_loss",
    "similarity_loss",
    "inform_regularizer",
    "AdamState",
    "adam_step",
    "descriptor_for",
    "prepare",
    "train",
]

METHODS = ("vanilla", "inform", "sagif")
BACKBONES = ("gcn", "sgc")
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    method: str = "vanilla"
    backbone: str = "gcn"
    epochs: int = 500
    lr: float = 0.01
    weight_decay: float = 1e-5
    hidden: int = 16
    alpha: float = 0.1
    inform_alpha: float = 1e-6
    k: int = 10
    lam: float = 0.5
    d_sim: int = 16
    fusion: str = "topology"
    encoding: str = "laplacian"
    seed: int = 0
    patience: int | None = None
    select: str = "best"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.backbone not in BACKBONES:
            raise ValidationError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")
        if self.alpha < 0 or self.inform_alpha < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.select not in ("best", "final"):
            raise ValidationError("select must be 'best' or 'final'")
        if self.encoding not in ("laplacian", "random_walk"):
            raise ValidationError(f"unknown encoding method {self.encoding!r}")
        FusionConfig(self.fusion, self.k, self.lam, max(self.d_sim, 1))

    @property
    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.fusion, self.k, self.lam, max(self.d_sim, 1))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainResult:
    params: ModelParams
    trace: dict[str, list[float]]
    best_epoch: int
    best_val_acc: float
    config: TrainConfig
    encoding: SimilarityEncoding | None = None
    oracle: OracleSimilarity | None = None
    wall_seconds: float = field(default=0.0, compare=False)


@dataclass
class Prepared:
    """Everything the epoch loop needs that does not change between epochs."""

    norm_adj: sp.csr_matrix
    ax: np.ndarray
    oracle: OracleSimilarity | None = None
    encoding: SimilarityEncoding | None = None
    inform_laplacian: sp.csr_matrix | None = None


def cross_entropy_loss(logits, labels, train_idx):
    """Mean softmax cross-entropy over ``train_idx`` and its gradient."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValidationError("cross-entropy needs at least one training node")
    z = logits[train_idx]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_prob = shifted - log_norm
    y = np.asarray(labels)[train_idx]
    rows = np.arange(train_idx.size)
    loss = -log_prob[rows, y].mean()
    grad = np.zeros_like(logits, dtype=np.float64)
    prob = np.exp(log_prob)
    prob[rows, y] -= 1.0
    grad[train_idx] = prob / train_idx.size
    return float(loss), grad


def _train_pairs(oracle: OracleSimilarity, train_idx):
    in_train = np.zeros(oracle.n, dtype=bool)
    in_train[train_idx] = True
    rows = np.repeat(np.asarray(train_idx, dtype=np.int64), oracle.k)
    cols = oracle.indices[train_idx].ravel()
    target = oracle.scores[train_idx].ravel()
    keep = in_train[cols]
    return rows[keep], cols[keep], target[keep]


def similarity_loss(sim_repr, oracle: OracleSimilarity, train_idx, pairs=None):
    """Squared gap between representation cosines and oracle scores.

    Only pairs where both ends are training nodes count; the sum is scaled by
    ``1 / (k * |train|)``. Rows with norm below 1e-12 have cosine 0 and
    receive no gradient.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    p = np.asarray(sim_repr, dtype=np.float64)
    grad = np.zeros_like(p)
    if train_idx.size == 0 or p.shape[1] == 0:
        return 0.0, grad
    rows, cols, target = pairs if pairs is not None else _train_pairs(oracle, train_idx)
    scale = 1.0 / (oracle.k * train_idx.size)
    norms = np.linalg.norm(p, axis=1)
    live = norms >= _NORM_FLOOR
    inv = np.zeros_like(norms)
    inv[live] = 1.0 / norms[live]
    unit = p * inv[:, None]
    cos = np.einsum("ij,ij->i", unit[rows], unit[cols])
    resid = cos - target
    loss = scale * float(resid @ resid)
    # d cos / d p_i = (u_j - cos * u_i) / |p_i|
    coef = 2.0 * scale * resid
    gi = (unit[cols] - cos[:, None] * unit[rows]) * (coef * inv[rows])[:, None]
    gj = (unit[rows] - cos[:, None] * unit[cols]) * (coef * inv[cols])[:, None]
    np.add.at(grad, rows, gi)
    np.add.at(grad, cols, gj)
    return loss, grad


def oracle_laplacian(oracle: OracleSimilarity) -> sp.csr_matrix:
    """``diag(rowsum(S)) - S`` for ``S`` symmetrized by elementwise max."""
    s = oracle.to_sparse()
    s = as_csr(s.maximum(s.T))
    deg = np.asarray(s.sum(axis=1)).ravel()
    return as_csr(sp.diags(deg) - s)


def inform_regularizer(logits, oracle: OracleSimilarity, laplacian=None):
    """``2 Tr(Y^T L_S Y)`` and its gradient ``4 L_S Y``."""
    lap = oracle_laplacian(oracle) if laplacian is None else laplacian
    ly = sparse_dense_multiply(lap, logits)
    return 2.0 * float(np.sum(logits * ly)), 4.0 * ly


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction.

    Weight decay is the coupled L2 form (``g + wd * theta``) and applies to
    every parameter, biases included.
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name in params:
        g = grads[name] + weight_decay * params[name] if weight_decay else grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def descriptor_for(cfg: TrainConfig) -> str:
    if cfg.method == "sagif":
        return f"sagif_{cfg.backbone}"
    return "gcn2" if cfg.backbone == "gcn" else "sgc1"


def prepare(g: GraphBundle, cfg: TrainConfig, encoding: SimilarityEncoding | None = None,
            oracle: OracleSimilarity | None = None) -> Prepared:
    """Fixed inputs: normalized adjacency, oracle, and (for sagif) the encoding.

    A precomputed ``encoding``/``oracle`` is used as-is.
    """
    norm_adj = normalize_adjacency(g.adjacency, add_self_loops=True)
    ax = sparse_dense_multiply(norm_adj, g.features)
    prep = Prepared(norm_adj, ax)
    if cfg.method == "sagif":
        prep.oracle = oracle if oracle is not None else oracle_similarity(g, cfg.fusion_config)
        if encoding is None:
            if cfg.d_sim == 0:
                encoding = SimilarityEncoding(np.zeros((g.n, 0)), cfg.encoding, cfg.k)
            else:
                knn = build_knn_graph(prep.oracle)
                encoding = encode(knn, cfg.d_sim, cfg.encoding, cfg.k)
        prep.encoding = encoding
    elif cfg.method == "inform":
        prep.oracle = oracle if oracle is not None else feature_oracle(g, cfg.k)
        prep.inform_laplacian = oracle_laplacian(prep.oracle)
    return prep


def accuracy(logits, labels, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits[idx], axis=1) == np.asarray(labels)[idx]))


def train(g: GraphBundle, cfg: TrainConfig, prepared: Prepared | None = None) -> TrainResult:
    """Full-batch training.

    The loss is cross-entropy on the training nodes plus ``alpha`` times the
    similarity loss (sagif) or ``inform_alpha`` times the pairwise-fairness
    quadratic form (inform). With ``select='best'`` the parameters of the
    epoch with the highest validation accuracy (earliest on ties) are kept.
    """
    start = time.perf_counter()
    prep = prepared if prepared is not None else prepare(g, cfg)
    descriptor = descriptor_for(cfg)
    d_sim = prep.encoding.d_sim if prep.encoding is not None else 0
    params = init_params(descriptor, g.d, g.num_classes, cfg.hidden, d_sim, cfg.seed)
    p0 = prep.encoding.matrix if prep.encoding is not None else None
    pairs = _train_pairs(prep.oracle, g.train) if cfg.method == "sagif" else None

    state = AdamState()
    trace = {"task": [], "similarity": [], "total": [], "val_acc": []}
    best_val, best_epoch, best_params = -1.0, 0, params.copy()
    stale = 0
    for epoch in range(cfg.epochs):
        out = forward(params, prep.norm_adj, g.features, p0, prep.ax)
        task, grad_logits = cross_entropy_loss(out.logits, g.labels, g.train)
        extra, grad_sim, weight = 0.0, None, 0.0
        if cfg.method == "sagif":
            extra, grad_sim = similarity_loss(out.sim_repr, prep.oracle, g.train, pairs)
            weight = cfg.alpha
            grad_sim = weight * grad_sim
        elif cfg.method == "inform":
            extra, grad_reg = inform_regularizer(out.logits, prep.oracle, prep.inform_laplacian)
            weight = cfg.inform_alpha
            grad_logits = grad_logits + weight * grad_reg
        total = task + weight * extra
        if not np.isfinite(total):
            raise NumericalError(f"non-finite loss at epoch {epoch}")

        val_acc = accuracy(out.logits, g.labels, g.val)
        trace["task"].append(task)
        trace["similarity"].append(extra)
        trace["total"].append(total)
        trace["val_acc"].append(val_acc)
        if val_acc > best_val:
            best_val, best_epoch, best_params = val_acc, epoch, params.copy()
            stale = 0
        else:
            stale += 1

        grads = backward(out, params, prep.norm_adj, grad_logits, grad_sim)
        adam_step(params.weights, grads, state, cfg.lr, cfg.weight_decay)
        if cfg.patience is not None and stale >= cfg.patience:
            break

    if cfg.select == "final":
        best_params, best_epoch = params, len(trace["total"])
        final = forward(params, prep.norm_adj, g.features, p0, prep.ax)
        best_val = accuracy(final.logits, g.labels, g.val)
    return TrainResult(best_params, trace, best_epoch, best_val, cfg,
                       prep.encoding, prep.oracle, time.perf_counter() - start)
