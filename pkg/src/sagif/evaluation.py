"""Utility and ranking-based individual-fairness metrics.

For an evaluated node, the other test nodes are ranked twice: by cosine of
model outputs (prediction) and by cosine of raw features (oracle). NDCG@k
uses the oracle cosines as continuous gains; ERR@k grades the oracle's own
top-k into ``g_max..1`` and everything else 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .graph import GraphBundle
from .similarity import ConsistencyProfile, similarity_consistency

__all__ = [
    "MetricsReport",
    "softmax",
    "macro_ovr_auc",
    "output_similarity",
    "ndcg_at_k",
    "err_at_k",
    "err_from_grades",
    "fairness_report",
]

MIN_GROUP_SIZE = 10


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _unit(mat) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def macro_ovr_auc(logits, labels, eval_idx) -> float:
    """Unweighted mean of one-vs-rest ROC AUCs over classes present in ``eval_idx``.

    Each AUC is the Mann-Whitney statistic on softmax scores with midranks
    for ties.
    """
    eval_idx = np.asarray(eval_idx, dtype=np.int64)
    if eval_idx.size == 0:
        raise ValidationError("AUC needs a non-empty evaluation set")
    prob = softmax(np.asarray(logits)[eval_idx])
    y = np.asarray(labels)[eval_idx]
    present = np.unique(y)
    if present.size < 2:
        raise ValidationError("AUC needs at least two classes in the evaluation set")
    aucs = []
    for c in present:
        pos = y == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        ranks = rankdata(prob[:, c])
        aucs.append((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
    return float(np.mean(aucs))


def output_similarity(trace_or_logits, space: str = "probabilities") -> np.ndarray:
    """Row-normalized output vectors; ``unit[i] @ unit[j]`` is the output cosine.

    ``space='probabilities'`` applies softmax first; ``'logits'`` uses the raw
    model outputs.
    """
    logits = getattr(trace_or_logits, "logits", trace_or_logits)
    if space == "probabilities":
        return _unit(softmax(logits))
    if space == "logits":
        return _unit(logits)
    raise ValidationError(f"unknown output space {space!r}")


def _ndcg_rows(pred: np.ndarray, oracle: np.ndarray, k: int) -> np.ndarray:
    gains = np.clip(np.where(np.isfinite(oracle), oracle, 0.0), 0.0, None)
    order = np.argsort(-pred, axis=1, kind="stable")[:, :k]
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = np.take_along_axis(gains, order, axis=1) @ discount
    ideal = -np.sort(-gains, axis=1)[:, :k] @ discount
    return np.divide(dcg, ideal, out=np.ones_like(dcg), where=ideal > 0)


def _grades_rows(oracle: np.ndarray, k: int, g_max: int) -> np.ndarray:
    ranked = np.argsort(-oracle, axis=1, kind="stable")[:, :k]
    grades = np.zeros(oracle.shape, dtype=np.int64)
    levels = g_max - (np.arange(k) * g_max) // k
    np.put_along_axis(grades, ranked, np.broadcast_to(levels, ranked.shape), axis=1)
    return grades


def _err_cascade(grades: np.ndarray, g_max: int) -> np.ndarray:
    stop = (2.0 ** grades - 1.0) / 2.0 ** g_max
    reach = np.cumprod(np.concatenate([np.ones((stop.shape[0], 1)), 1.0 - stop[:, :-1]], axis=1),
                       axis=1)
    return (stop * reach / np.arange(1, stop.shape[1] + 1)).sum(axis=1)


def _err_rows(pred: np.ndarray, oracle: np.ndarray, k: int, g_max: int) -> np.ndarray:
    grades = _grades_rows(oracle, k, g_max)
    order = np.argsort(-pred, axis=1, kind="stable")[:, :k]
    return _err_cascade(np.take_along_axis(grades, order, axis=1), g_max)


def _as_pair(predicted_scores, oracle_scores, k):
    pred = np.asarray(predicted_scores, dtype=np.float64).ravel()
    orac = np.asarray(oracle_scores, dtype=np.float64).ravel()
    if pred.shape != orac.shape:
        raise ValidationError("predicted and oracle scores must align")
    if not 1 <= k <= pred.size:
        raise ValidationError(f"k={k} must lie in [1, {pred.size}]")
    return pred[None, :], orac[None, :]


def ndcg_at_k(predicted_scores, oracle_scores, k: int) -> float:
    """NDCG@k of the predicted ranking with oracle scores as gains.

    Negative oracle scores count as zero gain. Returns 1 when no candidate
    has positive gain. Predicted ties go to the smaller candidate index.
    """
    pred, orac = _as_pair(predicted_scores, oracle_scores, k)
    return float(_ndcg_rows(pred, orac, k)[0])


def err_from_grades(grades, g_max: int = 4) -> float:
    """ERR of a graded list already in ranked order."""
    grades = np.asarray(grades, dtype=np.int64).reshape(1, -1)
    return float(_err_cascade(grades, g_max)[0])


def err_at_k(predicted_scores, oracle_scores, k: int, g_max: int = 4) -> float:
    """ERR@k with grades taken from oracle rank.

    The oracle's r-th best candidate (0-based, r < k) gets grade
    ``g_max - floor(r * g_max / k)``; all others get 0.
    """
    if g_max < 1:
        raise ValidationError("g_max must be >= 1")
    pred, orac = _as_pair(predicted_scores, oracle_scores, k)
    return float(_err_rows(pred, orac, k, g_max)[0])


@dataclass
class MetricsReport:
    auc: float
    accuracy: float
    ndcg_at_k: float
    err_at_k: float
    k: int
    n_evaluated: int
    groups: list[dict] = field(default_factory=list)
    per_node_ndcg: np.ndarray | None = field(default=None, repr=False)
    per_node_err: np.ndarray | None = field(default=None, repr=False)

    def reportable_groups(self, min_size: int = MIN_GROUP_SIZE) -> list[dict]:
        """Consistency groups with more than ``min_size`` nodes."""
        return [grp for grp in self.groups if grp["count"] > min_size]

    def to_dict(self) -> dict:
        return {"auc": self.auc, "accuracy": self.accuracy, "ndcg_at_k": self.ndcg_at_k,
                "err_at_k": self.err_at_k, "k": self.k, "n_evaluated": self.n_evaluated,
                "groups": self.groups}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def groups_csv(self, min_size: int = MIN_GROUP_SIZE) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["consistency", "count", "ndcg_at_k"])
        for grp in self.reportable_groups(min_size):
            writer.writerow([repr(grp["consistency"]), grp["count"], repr(grp["ndcg_at_k"])])
        return buf.getvalue()


def fairness_report(g: GraphBundle, trace_or_logits, k: int = 10,
                    profile: ConsistencyProfile | None = None, nodes=None,
                    g_max: int = 4, space: str = "probabilities",
                    block_size: int = 1024) -> MetricsReport:
    """Ranking-fairness, AUC and accuracy on the test split.

    ``nodes`` (default: all test nodes) selects which test nodes are
    averaged; candidates are always the other test nodes. ``profile`` is
    computed with the same ``k`` when not supplied.
    """
    logits = np.asarray(getattr(trace_or_logits, "logits", trace_or_logits))
    test = np.asarray(g.test, dtype=np.int64)
    if test.size <= k:
        raise ValidationError(f"need more than k={k} test nodes, have {test.size}")
    nodes = test if nodes is None else np.asarray(nodes, dtype=np.int64)
    pos = np.full(g.n, -1, dtype=np.int64)
    pos[test] = np.arange(test.size)
    if np.any(pos[nodes] < 0):
        raise ValidationError("evaluated nodes must belong to the test split")

    out_unit = output_similarity(logits, space)[test]
    feat_unit = _unit(g.features)[test]
    ndcg = np.empty(nodes.size)
    err = np.empty(nodes.size)
    for start in range(0, nodes.size, block_size):
        rows = pos[nodes[start:start + block_size]]
        pred = out_unit[rows] @ out_unit.T
        orac = feat_unit[rows] @ feat_unit.T
        self_col = (np.arange(rows.size), rows)
        pred[self_col] = -np.inf
        orac[self_col] = -np.inf
        ndcg[start:start + rows.size] = _ndcg_rows(pred, orac, k)
        err[start:start + rows.size] = _err_rows(pred, orac, k, g_max)

    if profile is None:
        profile = similarity_consistency(g, k)
    levels = profile.levels[nodes]
    groups = []
    for level in np.unique(levels):
        members = levels == level
        groups.append({"consistency": float(level) / profile.k, "count": int(members.sum()),
                       "ndcg_at_k": float(ndcg[members].mean())})

    pred_labels = np.argmax(logits[test], axis=1)
    return MetricsReport(
        auc=macro_ovr_auc(logits, g.labels, test),
        accuracy=float(np.mean(pred_labels == g.labels[test])),
        ndcg_at_k=float(ndcg.mean()),
        err_at_k=float(err.mean()),
        k=k,
        n_evaluated=int(nodes.size),
        groups=groups,
        per_node_ndcg=ndcg,
        per_node_err=err,
    )
