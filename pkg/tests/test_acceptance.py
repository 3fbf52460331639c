"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary. Criterion 7 (and the primary form of 8) need a real Cora
bundle in the directory named by ``SAGIF_CORA_BUNDLE``.
"""

import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from sagif.cli import main
from sagif.encoding import laplacian_encoding, random_walk_encoding
from sagif.evaluation import err_at_k, fairness_report, ndcg_at_k
from sagif.graph import normalize_adjacency, row_cosine_topk
from sagif.io import load_bundle
from sagif.models import backward, forward, init_params
from sagif.similarity import all_pairs_distances, build_knn_graph, similarity_consistency
from sagif.synthetic import SbmSpec, generate_sbm
from sagif.training import (AdamState, TrainConfig, adam_step, cross_entropy_loss,
                            inform_regularizer, prepare, similarity_loss, train)

from conftest import ACCEPTANCE_LINES, central_difference, random_adjacency
from test_similarity import floyd_warshall

pytestmark = pytest.mark.acceptance

CORA = os.environ.get("SAGIF_CORA_BUNDLE")
SWEEP_MUS = (0.0, 0.25, 0.5, 0.75, 1.0)
SEEDS = range(5)


def record(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def record_skip(number, detail):
    line = f"[SKIP] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    pytest.skip(line)


def evaluate_runs(g, cfg, profile, seeds=SEEDS, k=10):
    prep = prepare(g, cfg)
    p0 = None if prep.encoding is None else prep.encoding.matrix
    reports = []
    for seed in seeds:
        res = train(g, cfg.replace(seed=seed), prep)
        out = forward(res.params, prep.norm_adj, g.features, p0, prep.ax)
        reports.append(fairness_report(g, out, k, profile))
    return reports


def test_1_gradient_oracles():
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    for inst in range(20):
        rng = np.random.default_rng(1000 + inst)
        adj = random_adjacency(8, 0.35, rng)
        a = normalize_adjacency(adj)
        x = rng.standard_normal((8, 4))
        y = rng.integers(0, 3, 8)
        train_idx = np.sort(rng.choice(8, 5, replace=False))
        for descriptor in ("gcn2", "sgc1", "sagif_gcn", "sagif_sgc"):
            d_sim = 3 if descriptor.startswith("sagif") else 0
            p = init_params(descriptor, 4, 3, hidden=5, d_sim=d_sim, seed=inst)
            for name, w in p.weights.items():
                if name.startswith("b"):
                    w[...] = rng.standard_normal(w.shape) * 0.1
            p0 = rng.standard_normal((8, d_sim)) if d_sim else None
            oracle = row_cosine_topk(rng.standard_normal((8, 5)), 3) if d_sim else None

            def loss():
                t = forward(p, a, x, p0)
                val = cross_entropy_loss(t.logits, y, train_idx)[0]
                if d_sim:
                    val += 0.7 * similarity_loss(t.sim_repr, oracle, train_idx)[0]
                return val

            t = forward(p, a, x, p0)
            _, g_logits = cross_entropy_loss(t.logits, y, train_idx)
            g_sim = 0.7 * similarity_loss(t.sim_repr, oracle, train_idx)[1] if d_sim else None
            grads = backward(t, p, a, g_logits, g_sim)
            for name, w in p.weights.items():
                num = central_difference(loss, w, h=1e-5)
                err = np.abs(grads[name] - num)
                bound = 1e-8 + 1e-4 * np.maximum(np.abs(grads[name]), np.abs(num))
                worst = max(worst, float(np.max(err / bound, initial=0.0)))
                checked += w.size
    elapsed = time.perf_counter() - start
    record(1, worst <= 1.0 and elapsed < 30,
           f"{checked} partials on 20 instances x 4 architectures, worst error/tolerance "
           f"{worst:.3f}, {elapsed:.1f}s")


def test_2_inform_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 31))
        k = int(rng.integers(1, min(6, n)))
        oracle = row_cosine_topk(rng.random((n, 4)), k)
        yhat = rng.standard_normal((n, 3))
        s = np.zeros((n, n))
        for i in range(n):
            for j, v in zip(oracle.indices[i], oracle.scores[i]):
                s[i, j] = max(s[i, j], v)
                s[j, i] = max(s[j, i], v)
        brute = 0.0
        for i in range(n):
            for j in range(n):
                brute += s[i, j] * float(np.sum((yhat[i] - yhat[j]) ** 2))
        worst = max(worst, abs(inform_regularizer(yhat, oracle)[0] - brute))
    record(2, worst <= 1e-9, f"100 instances, max |2Tr(Y'LY) - pairwise sum| = {worst:.2e}")


def _hand_ndcg(order, gains, k):
    dcg = sum(max(gains[j], 0.0) / math.log2(r + 2) for r, j in enumerate(order[:k]))
    ideal = sorted((max(v, 0.0) for v in gains), reverse=True)
    idcg = sum(ideal[r] / math.log2(r + 2) for r in range(k))
    return 1.0 if idcg == 0 else dcg / idcg


def _hand_err(order, oracle, k, g_max=4):
    by_oracle = sorted(range(len(oracle)), key=lambda j: (-oracle[j], j))
    grade = {j: 0 for j in range(len(oracle))}
    for r, j in enumerate(by_oracle[:k]):
        grade[j] = g_max - (r * g_max) // k
    total, reach = 0.0, 1.0
    for r, j in enumerate(order[:k], start=1):
        stop = (2 ** grade[j] - 1) / 2 ** g_max
        total += reach * stop / r
        reach *= 1 - stop
    return total


_MONOTONE_FAILURES = []


@settings(max_examples=1000, deadline=None, database=None)
@given(st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
def _monotone_property(n, seed):
    r = np.random.default_rng(seed)
    pred = r.standard_normal(n)
    oracle = r.random(n)
    k = int(r.integers(1, n + 1))
    for f in (np.exp, np.arctan, lambda v: 5 * v - 2, lambda v: v ** 3):
        if ndcg_at_k(f(pred), oracle, k) != ndcg_at_k(pred, oracle, k) or \
                err_at_k(f(pred), oracle, k) != err_at_k(pred, oracle, k):
            _MONOTONE_FAILURES.append((n, seed))


def test_3_ranking_metric_oracles():
    rng = np.random.default_rng(3)
    cases, worst = 0, 0.0
    for n in (1, 2, 3, 4):
        for _ in range(5):
            oracle = rng.random(n) * 2 - 0.3
            for k in range(1, n + 1):
                for perm in itertools.permutations(range(n)):
                    pred = np.empty(n)
                    pred[list(perm)] = np.arange(n, 0, -1, dtype=float)
                    worst = max(worst, abs(ndcg_at_k(pred, oracle, k) - _hand_ndcg(perm, oracle, k)),
                                abs(err_at_k(pred, oracle, k) - _hand_err(perm, oracle, k)))
                    cases += 1
    _MONOTONE_FAILURES.clear()
    _monotone_property()
    ok = worst <= 1e-12 and not _MONOTONE_FAILURES
    record(3, ok, f"{cases} permutation cases, max deviation {worst:.1e}; 1000 monotone-transform "
                  f"cases, {len(_MONOTONE_FAILURES)} failures")


def test_4_shortest_path_oracle():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 16))
        dense = random_adjacency(n, float(rng.uniform(0.05, 0.5)), rng,
                                 ensure_edge=False).toarray()
        if not np.array_equal(all_pairs_distances(sp.csr_matrix(dense)),
                              floyd_warshall(dense.tolist())):
            mismatches += 1
    record(4, mismatches == 0, f"200 random graphs (n <= 15), {mismatches} mismatches vs Floyd-Warshall")


def test_5_spectral_suite():
    rng = np.random.default_rng(5)
    worst_res, lo, hi, worst_rw, rw_range_ok = 0.0, np.inf, -np.inf, 0.0, True
    for _ in range(30):
        n = int(rng.integers(6, 40))
        x = rng.random((n, 5))
        k = int(rng.integers(2, 5))
        a = build_knn_graph(row_cosine_topk(x, k))
        dense = a.toarray()
        deg = dense.sum(1)
        inv = np.where(deg > 0, 1 / np.sqrt(np.maximum(deg, 1)), 0.0)
        lap = np.eye(n) - dense * inv[:, None] * inv[None, :]
        full = np.linalg.eigvalsh(lap)
        lo, hi = min(lo, full.min()), max(hi, full.max())
        d_sim = min(3, n - int(np.sum(full < 1e-9)))  # non-trivial part of the spectrum
        if d_sim >= 1:
            enc = laplacian_encoding(a, d_sim)
            for j in range(d_sim):
                u = enc.matrix[:, j]
                worst_res = max(worst_res, float(np.linalg.norm(lap @ u - enc.eigenvalues[j] * u)))
        rw = random_walk_encoding(a, 5)
        col_deg = np.where(deg > 0, deg, 1)
        step = dense / col_deg[None, :]
        ref = np.stack([np.diag(np.linalg.matrix_power(step, t)) for t in range(1, 6)], axis=1)
        worst_rw = max(worst_rw, float(np.abs(rw.matrix - ref).max()))
        rw_range_ok &= bool(rw.matrix.min() >= 0 and rw.matrix.max() <= 1 + 1e-12)
    k4 = laplacian_encoding(sp.csr_matrix(np.ones((4, 4)) - np.eye(4)), 3).eigenvalues
    k4_err = float(np.abs(k4 - 4 / 3).max())
    ok = (worst_res <= 1e-6 and lo >= -1e-12 and hi <= 2 + 1e-12 and k4_err <= 1e-9
          and worst_rw <= 1e-10 and rw_range_ok)
    record(5, ok, f"max residual {worst_res:.1e}; spectrum in [{lo:.2e}, {hi:.4f}]; "
                  f"K4 error {k4_err:.1e}; random-walk max deviation {worst_rw:.1e}, "
                  f"in [0,1]: {rw_range_ok}")


def test_6_consistency_correlation():
    start = time.perf_counter()
    pooled = {}
    per_mu = []
    for mu in SWEEP_MUS:
        g = generate_sbm(SbmSpec(blocks=3, block_size=200, mu=mu), seed=0)
        profile = similarity_consistency(g, 10)
        (rep,) = evaluate_runs(g, TrainConfig(), profile, seeds=[0])
        for level, value in zip(profile.levels[g.test], rep.per_node_ndcg):
            pooled.setdefault(int(level), []).append(value)
        per_mu.append(f"mu={mu}: " + " ".join(f"{grp['consistency']:.1f}/{grp['ndcg_at_k']:.3f}"
                                                for grp in rep.reportable_groups()))
    levels = sorted(lv for lv, vals in pooled.items() if len(vals) > 10)
    means = [float(np.mean(pooled[lv])) for lv in levels]
    rho = float(spearmanr(levels, means)[0]) if len(levels) > 1 else float("nan")
    elapsed = time.perf_counter() - start
    for line in per_mu:
        print(line)
    table = ", ".join(f"{lv / 10:.1f}:{m:.3f} (n={len(pooled[lv])})" for lv, m in zip(levels, means))
    record(6, rho > 0 and elapsed < 300,
           f"pooled groups {table}; Spearman rho = {rho:.3f}; {elapsed:.1f}s")


@pytest.mark.skipif(not CORA, reason="set SAGIF_CORA_BUNDLE to a Cora bundle directory")
def test_7_cora_reproduction():
    start = time.perf_counter()
    g = load_bundle(Path(CORA))
    profile = similarity_consistency(g, 10)
    gcn = evaluate_runs(g, TrainConfig(backbone="gcn"), profile)
    sgc = evaluate_runs(g, TrainConfig(backbone="sgc"), profile)
    auc = 100 * np.mean([r.auc for r in gcn])
    ndcg = 100 * np.mean([r.ndcg_at_k for r in gcn])
    ndcg_sgc = 100 * np.mean([r.ndcg_at_k for r in sgc])
    elapsed = time.perf_counter() - start
    ok = (abs(auc - 95.62) <= 2.0 and abs(ndcg - 58.57) <= 3.0 and abs(ndcg_sgc - 67.52) <= 3.0
          and elapsed < 600)
    record(7, ok, f"GCN AUC {auc:.2f} (95.62 +/- 2), GCN NDCG@10 {ndcg:.2f} (58.57 +/- 3), "
                  f"SGC NDCG@10 {ndcg_sgc:.2f} (67.52 +/- 3), {elapsed:.0f}s")


def test_7_skip_notice():
    if CORA:
        pytest.skip("Cora bundle supplied; criterion 7 runs above")
    record_skip(7, "no Cora bundle (set SAGIF_CORA_BUNDLE); reproduction not attempted")


def test_8_sagif_direction():
    if CORA:
        g = load_bundle(Path(CORA))
        where = "Cora"
    else:
        g = generate_sbm(SbmSpec(blocks=3, block_size=200, mu=0.25), seed=0)
        where = "mu=0.25 SBM fallback"
    profile = similarity_consistency(g, 10)
    vanilla = evaluate_runs(g, TrainConfig(method="vanilla", backbone="sgc"), profile)
    sagif = evaluate_runs(g, TrainConfig(method="sagif", backbone="sgc"), profile)
    v_ndcg = 100 * np.mean([r.ndcg_at_k for r in vanilla])
    s_ndcg = 100 * np.mean([r.ndcg_at_k for r in sagif])
    v_auc = 100 * np.mean([r.auc for r in vanilla])
    s_auc = 100 * np.mean([r.auc for r in sagif])
    if CORA:
        ok = s_ndcg - v_ndcg >= 1.5 and v_auc - s_auc <= 1.0
    else:
        ok = s_ndcg >= v_ndcg - 0.5 and s_ndcg > v_ndcg
    record(8, ok, f"{where}, 5 seeds: NDCG@10 SaGIF {s_ndcg:.3f} vs vanilla {v_ndcg:.3f} "
                  f"(gap {s_ndcg - v_ndcg:+.3f}); AUC {s_auc:.2f} vs {v_auc:.2f}")


def _task_trace_without_similarity(g, cfg, prep):
    """Reference epoch loop that never evaluates the similarity loss."""
    params = init_params(f"sagif_{cfg.backbone}", g.d, g.num_classes, cfg.hidden,
                         prep.encoding.d_sim, cfg.seed)
    state = AdamState()
    trace = []
    for _ in range(cfg.epochs):
        out = forward(params, prep.norm_adj, g.features, prep.encoding.matrix, prep.ax)
        task, grad = cross_entropy_loss(out.logits, g.labels, g.train)
        trace.append(task)
        grads = backward(out, params, prep.norm_adj, grad, np.zeros_like(out.sim_repr))
        adam_step(params.weights, grads, state, cfg.lr, cfg.weight_decay)
    return trace


def test_9_degeneracy():
    g = generate_sbm(SbmSpec(blocks=3, block_size=40, dim=16), seed=9)
    bit_equal = []
    for backbone in ("gcn", "sgc"):
        cfg = TrainConfig(backbone=backbone, epochs=60, seed=3, d_sim=0, select="final")
        rv = train(g, cfg)
        rs = train(g, cfg.replace(method="sagif"))
        pv, ps = prepare(g, rv.config), prepare(g, rs.config)
        lv = forward(rv.params, pv.norm_adj, g.features).logits
        ls = forward(rs.params, ps.norm_adj, g.features, ps.encoding.matrix).logits
        bit_equal.append(np.array_equal(lv, ls) and rv.trace["task"] == rs.trace["task"])
    cfg = TrainConfig(method="sagif", epochs=60, alpha=0.0, d_sim=6, seed=1)
    prep = prepare(g, cfg)
    with_ls = train(g, cfg, prep).trace["task"]
    without_ls = _task_trace_without_similarity(g, cfg, prep)
    same_task = with_ls == without_ls
    record(9, all(bit_equal) and same_task,
           f"d_sim=0 bit-equal to vanilla (gcn, sgc): {bit_equal}; alpha=0 task trace identical "
           f"to a loop without similarity loss: {same_task}")


def _tree(directory):
    return {str(p.relative_to(directory)): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_10_determinism(tmp_path):
    def pipeline(root, jobs):
        bundle = root / "bundle"
        codes = [
            main(["generate", "--block-size", "20", "--dim", "12", "--mu", "0.5", "--seed", "7",
                  "--out", str(bundle)]),
            main(["analyze", str(bundle), "--k", "5", "--out", str(root / "analyze")]),
            main(["encode", str(bundle), "--d-sim", "4", "--k", "5", "--out", str(root / "enc")]),
            main(["train", str(bundle), "--methods", "vanilla,inform,sagif", "--seeds", "0,1",
                  "--backbone", "sgc", "--epochs", "40", "--d-sim", "4", "--k", "5",
                  "--eval-k", "5", "--jobs", str(jobs), "--out", str(root / "train")]),
            main(["evaluate", str(bundle), "--checkpoint", str(root / "train/sagif-sgc-seed1.sgif"),
                  "--encoding", str(root / "train/sagif-sgc-seed1.senc"), "--eval-k", "5",
                  "--out", str(root / "eval")]),
            main(["analyze", str(bundle), "--k", "5", "--out", str(root / "analyze2"),
                  "--checkpoint", str(root / "train/vanilla-sgc-seed0.sgif")]),
        ]
        return codes, _tree(root)

    codes_a, tree_a = pipeline(tmp_path / "a", 1)
    codes_b, tree_b = pipeline(tmp_path / "b", 2)
    differing = sorted(name for name in set(tree_a) | set(tree_b) if tree_a.get(name) != tree_b.get(name))
    ok = codes_a == codes_b == [0] * 6 and not differing and len(tree_a) > 10
    record(10, ok, f"{len(tree_a)} files from generate/analyze/encode/train/evaluate reruns, "
                   f"{len(differing)} differ{': ' + ', '.join(differing) if differing else ''}")
