"""GCN / SGC backbones and the dual-stream similarity-encoded variants.

Everything is plain numpy with hand-written reverse mode. ``norm_adj`` is
the symmetric self-looped normalization, so ``norm_adj.T == norm_adj`` and
the backward pass reuses it in place of its transpose.

Descriptors:

``gcn2``
    ``H = relu(A X W1 + b1)``; ``logits = A H W2 + b2``.
``sgc1``
    ``logits = (A X) W + b``.
``sagif_gcn``
    main layer ``H = relu(A [X, P0] W_main + b_main)``, similarity layer
    ``P = A P0 W_sim + b_sim``, GCN head ``logits = A [H, P] W_head + b_head``.
``sagif_sgc``
    one shared propagation ``A [X, P0]``; ``P = (A P0) W_sim + b_sim``;
    linear head ``logits = [A X, P] W_head + b_head``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .graph import sparse_dense_multiply

__all__ = [
    "DESCRIPTORS",
    "ModelParams",
    "ForwardTrace",
    "init_params",
    "forward",
    "forward_vanilla_gcn",
    "forward_vanilla_sgc",
    "forward_sagif",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

DESCRIPTORS = ("gcn2", "sgc1", "sagif_gcn", "sagif_sgc")
_CKPT_MAGIC = b"SGIF"


@dataclass
class ModelParams:
    descriptor: str
    weights: dict[str, np.ndarray]
    d: int
    hidden: int
    d_sim: int
    num_classes: int

    def copy(self) -> "ModelParams":
        return ModelParams(self.descriptor, {k: v.copy() for k, v in self.weights.items()},
                           self.d, self.hidden, self.d_sim, self.num_classes)

    def __getitem__(self, name):
        return self.weights[name]

    @property
    def uses_encoding(self) -> bool:
        return self.descriptor.startswith("sagif")


@dataclass
class ForwardTrace:
    descriptor: str
    logits: np.ndarray
    sim_repr: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)


def _shapes(descriptor, d, hidden, d_sim, num_classes):
    """Ordered ``name -> shape``; order fixes the RNG draw sequence."""
    if descriptor == "gcn2":
        return {"w1": (d, hidden), "b1": (1, hidden),
                "w2": (hidden, num_classes), "b2": (1, num_classes)}
    if descriptor == "sgc1":
        return {"w": (d, num_classes), "b": (1, num_classes)}
    if descriptor == "sagif_gcn":
        return {"w_main": (d + d_sim, hidden), "b_main": (1, hidden),
                "w_head": (hidden + d_sim, num_classes), "b_head": (1, num_classes),
                "w_sim": (d_sim, d_sim), "b_sim": (1, d_sim)}
    if descriptor == "sagif_sgc":
        return {"w_head": (d + d_sim, num_classes), "b_head": (1, num_classes),
                "w_sim": (d_sim, d_sim), "b_sim": (1, d_sim)}
    raise ValidationError(f"unknown architecture {descriptor!r}; expected one of {DESCRIPTORS}")


def init_params(descriptor: str, d: int, num_classes: int, hidden: int = 16,
                d_sim: int = 0, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    With ``d_sim == 0`` a ``sagif_*`` model draws exactly the same numbers
    as its vanilla counterpart.
    """
    if descriptor.endswith("sgc") or descriptor == "sgc1":
        hidden = 0
    if not descriptor.startswith("sagif"):
        d_sim = 0
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in _shapes(descriptor, d, hidden, d_sim, num_classes).items():
        if name.startswith("b"):
            weights[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1])) if sum(shape) else 0.0
            weights[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(descriptor, weights, d, hidden, d_sim, num_classes)


def _check(params: ModelParams, x, p0=None):
    if x.shape[1] != params.d:
        raise ValidationError(f"model expects {params.d} input features, got {x.shape[1]}")
    if params.uses_encoding:
        if p0 is None:
            raise ValidationError(f"{params.descriptor} needs a similarity encoding")
        if p0.shape != (x.shape[0], params.d_sim):
            raise ValidationError(f"encoding must be {(x.shape[0], params.d_sim)}, got {p0.shape}")


def forward_vanilla_gcn(params: ModelParams, norm_adj, x) -> ForwardTrace:
    _check(params, x)
    w = params.weights
    z1 = sparse_dense_multiply(norm_adj, x @ w["w1"]) + w["b1"]
    h1 = np.maximum(z1, 0.0)
    logits = sparse_dense_multiply(norm_adj, h1 @ w["w2"]) + w["b2"]
    return ForwardTrace("gcn2", logits, None, {"x": x, "z1": z1, "h1": h1})


def forward_vanilla_sgc(params: ModelParams, norm_adj, x, ax=None) -> ForwardTrace:
    """``ax`` may carry a precomputed ``A X`` (it never changes during training)."""
    _check(params, x)
    w = params.weights
    if ax is None:
        ax = sparse_dense_multiply(norm_adj, x)
    logits = ax @ w["w"] + w["b"]
    return ForwardTrace("sgc1", logits, None, {"ax": ax})


def forward_sagif(params: ModelParams, norm_adj, x, p0, ax=None) -> ForwardTrace:
    _check(params, x, p0)
    w = params.weights
    if params.descriptor == "sagif_gcn":
        xp = np.concatenate([x, p0], axis=1)
        z1 = sparse_dense_multiply(norm_adj, xp @ w["w_main"]) + w["b_main"]
        h1 = np.maximum(z1, 0.0)
        p1 = sparse_dense_multiply(norm_adj, p0 @ w["w_sim"]) + w["b_sim"]
        hp = np.concatenate([h1, p1], axis=1)
        logits = sparse_dense_multiply(norm_adj, hp @ w["w_head"]) + w["b_head"]
        return ForwardTrace("sagif_gcn", logits, p1,
                            {"xp": xp, "p0": p0, "z1": z1, "hp": hp})
    if params.descriptor == "sagif_sgc":
        if ax is None:
            ax = sparse_dense_multiply(norm_adj, x)
        p1 = sparse_dense_multiply(norm_adj, p0 @ w["w_sim"]) + w["b_sim"]
        hp = np.concatenate([ax, p1], axis=1)
        logits = hp @ w["w_head"] + w["b_head"]
        return ForwardTrace("sagif_sgc", logits, p1, {"p0": p0, "hp": hp})
    raise ValidationError(f"forward_sagif cannot run {params.descriptor!r}")


def forward(params: ModelParams, norm_adj, x, p0=None, ax=None) -> ForwardTrace:
    if params.descriptor == "gcn2":
        return forward_vanilla_gcn(params, norm_adj, x)
    if params.descriptor == "sgc1":
        return forward_vanilla_sgc(params, norm_adj, x, ax)
    return forward_sagif(params, norm_adj, x, p0, ax)


def backward(trace: ForwardTrace, params: ModelParams, norm_adj, grad_logits,
             grad_sim=None) -> dict[str, np.ndarray]:
    """Gradients of every parameter given upstream ``dL/dlogits`` and ``dL/dP``."""
    if trace.descriptor != params.descriptor:
        raise ValidationError(f"trace from {trace.descriptor!r} cannot drive {params.descriptor!r}")
    w, c = params.weights, trace.cache
    g = np.asarray(grad_logits, dtype=np.float64)
    grads = {}

    if params.descriptor == "gcn2":
        ag = sparse_dense_multiply(norm_adj, g)
        grads["w2"] = c["h1"].T @ ag
        grads["b2"] = g.sum(axis=0, keepdims=True)
        dz1 = (ag @ w["w2"].T) * (c["z1"] > 0)
        adz1 = sparse_dense_multiply(norm_adj, dz1)
        grads["w1"] = c["x"].T @ adz1
        grads["b1"] = dz1.sum(axis=0, keepdims=True)
        return grads

    if params.descriptor == "sgc1":
        grads["w"] = c["ax"].T @ g
        grads["b"] = g.sum(axis=0, keepdims=True)
        return grads

    d_sim = params.d_sim
    if params.descriptor == "sagif_gcn":
        ag = sparse_dense_multiply(norm_adj, g)
        grads["w_head"] = c["hp"].T @ ag
        grads["b_head"] = g.sum(axis=0, keepdims=True)
        dhp = ag @ w["w_head"].T
        split = params.hidden
        dz1 = dhp[:, :split] * (c["z1"] > 0)
        grads["w_main"] = c["xp"].T @ sparse_dense_multiply(norm_adj, dz1)
        grads["b_main"] = dz1.sum(axis=0, keepdims=True)
    else:
        grads["w_head"] = c["hp"].T @ g
        grads["b_head"] = g.sum(axis=0, keepdims=True)
        dhp = g @ w["w_head"].T
        split = params.d

    dp1 = dhp[:, split:split + d_sim]
    if grad_sim is not None:
        dp1 = dp1 + grad_sim
    grads["w_sim"] = c["p0"].T @ sparse_dense_multiply(norm_adj, dp1)
    grads["b_sim"] = dp1.sum(axis=0, keepdims=True)
    return grads


def save_checkpoint(path, params: ModelParams) -> None:
    """``SGIF``, descriptor (uint32 length + UTF-8), then per parameter:
    uint32 name length, name, uint32 rows, uint32 cols, row-major float64."""
    desc = params.descriptor.encode()
    parts = [_CKPT_MAGIC, struct.pack("<I", len(desc)), desc]
    for name, arr in params.weights.items():
        arr = np.atleast_2d(arr)
        raw = name.encode()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<II", *arr.shape),
                  arr.astype("<f8").tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValidationError(f"{path}: not an SGIF checkpoint")
    (length,) = struct.unpack_from("<I", blob, 4)
    pos = 8 + length
    descriptor = blob[8:pos].decode()
    weights = {}
    while pos < len(blob):
        (length,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4:pos + 4 + length].decode()
        pos += 4 + length
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        count = rows * cols
        weights[name] = np.frombuffer(blob, "<f8", count, pos).reshape(rows, cols).astype(np.float64)
        pos += 8 * count
    if descriptor == "gcn2":
        d, hidden = weights["w1"].shape
        d_sim, classes = 0, weights["w2"].shape[1]
    elif descriptor == "sgc1":
        d, classes = weights["w"].shape
        hidden = d_sim = 0
    elif descriptor == "sagif_gcn":
        d_sim = weights["w_sim"].shape[0]
        hidden = weights["w_main"].shape[1]
        d = weights["w_main"].shape[0] - d_sim
        classes = weights["w_head"].shape[1]
    elif descriptor == "sagif_sgc":
        d_sim = weights["w_sim"].shape[0]
        hidden = 0
        d = weights["w_head"].shape[0] - d_sim
        classes = weights["w_head"].shape[1]
    else:
        raise ValidationError(f"{path}: unknown descriptor {descriptor!r}")
    expected = _shapes(descriptor, d, hidden, d_sim, classes)
    if {k: v.shape for k, v in weights.items()} != expected:
        raise ValidationError(f"{path}: parameter shapes do not match {descriptor}")
    return ModelParams(descriptor, weights, d, hidden, d_sim, classes)
