"""Stochastic-block-model graphs with tunable feature/structure agreement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import GraphBundle

__all__ = ["SbmSpec", "generate_sbm", "split_nodes"]


@dataclass(frozen=True)
class SbmSpec:
    """``mu`` is the probability that a node's features are drawn from its own
    block centroid and its own neighbourhood; otherwise both come from a
    randomly chosen other node, which decouples features from topology."""

    blocks: int = 3
    block_size: int = 50
    p_in: float = 0.3
    p_out: float = 0.01
    dim: int = 64
    noise: float = 0.5
    mu: float = 1.0
    centroid_scale: float = 0.5

    def __post_init__(self):
        for name in ("p_in", "p_out", "mu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.blocks < 2 or self.block_size < 1 or self.dim < 1:
            raise ValidationError("need >= 2 blocks, >= 1 node per block and >= 1 feature")
        if self.noise < 0 or self.centroid_scale < 0:
            raise ValidationError("noise and centroid_scale must be non-negative")

    @property
    def n(self) -> int:
        return self.blocks * self.block_size


def split_nodes(labels, rng, fractions=(0.05, 0.10)):
    """Train/val/test split stratified by label; the test split takes the remainder.

    Every class gets at least one training node, so small graphs never train
    on a subset of the classes.
    """
    labels = np.asarray(labels)
    parts = ([], [], [])
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_train = max(1, int(round(fractions[0] * members.size)))
        n_val = int(round(fractions[1] * members.size))
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def generate_sbm(spec: SbmSpec, seed: int = 0) -> GraphBundle:
    """Sample the graph, features, labels (= block) and a 5/10/85 split.

    Features are ``centroid_scale * c[b] + A R + noise`` where ``R`` holds
    one random signature per node, so aligned nodes have feature cosines that
    track the cosines of their adjacency rows.
    """
    rng = np.random.default_rng(seed)
    n = spec.n
    labels = np.repeat(np.arange(spec.blocks), spec.block_size)

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_in, spec.p_out)
    draw = rng.random((n, n)) < prob
    iu, ju = np.nonzero(np.triu(draw, k=1))
    adj = np.zeros((n, n))
    adj[iu, ju] = adj[ju, iu] = 1.0

    signatures = rng.standard_normal((n, spec.dim)) / np.sqrt(spec.dim)
    profile = adj @ signatures
    scale = np.linalg.norm(profile, axis=1).mean() if profile.any() else 1.0
    centroids = rng.standard_normal((spec.blocks, spec.dim)) / np.sqrt(spec.dim) * scale

    aligned = rng.random(n) < spec.mu
    donor = rng.permutation(n)
    source = np.where(aligned, np.arange(n), donor)
    features = (spec.centroid_scale * centroids[labels[source]] + profile[source]
                + spec.noise * scale / np.sqrt(spec.dim) * rng.standard_normal((n, spec.dim)))

    train, val, test = split_nodes(labels, rng)
    return GraphBundle.from_edges(n, np.stack([iu, ju], axis=1), features, labels,
                                  train, val, test)
