"""File-producing commands behind the CLI.

Every command is deterministic in its inputs and seed; outputs are written
atomically and never include timing information, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import encode, read_encoding, write_encoding
from .errors import ValidationError
from .evaluation import MetricsReport, fairness_report
from .graph import GraphBundle, normalize_adjacency
from .io import atomic_write, bundle_fingerprint, load_bundle, save_bundle
from .models import forward, load_checkpoint, save_checkpoint
from .similarity import (ConsistencyProfile, FusionConfig, build_knn_graph, oracle_similarity,
                         similarity_consistency, write_oracle)
from .synthetic import SbmSpec, generate_sbm
from .training import METHODS, TrainConfig, TrainResult, prepare, train

log = logging.getLogger(__name__)

LR_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)
D_SIM_GRID = (8, 16, 32, 64, 128)
AGGREGATE_METRICS = ("auc", "accuracy", "ndcg_at_k", "err_at_k")


@dataclass
class ExperimentSpec:
    dataset: Path
    methods: list[str]
    seeds: list[int]
    base: TrainConfig = field(default_factory=TrainConfig)
    out: Path = Path("results")
    eval_k: int = 10
    grid: bool = False

    def __post_init__(self):
        self.dataset = Path(self.dataset)
        self.out = Path(self.out)
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValidationError(f"unknown method(s) {bad}; expected a subset of {METHODS}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_generate(spec: SbmSpec, seed: int, out) -> GraphBundle:
    g = generate_sbm(spec, seed)
    save_bundle(g, out)
    return g


def consistency_histogram_csv(profile: ConsistencyProfile) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["consistency", "count"])
    for level, count in sorted(profile.histogram.items()):
        writer.writerow([repr(level), count])
    return buf.getvalue()


def _resolve_encoding(g, params, encoding_path, cfg: TrainConfig):
    if not params.uses_encoding:
        return None
    if encoding_path is not None:
        enc = read_encoding(encoding_path)
    else:
        cfg = cfg.replace(method="sagif", d_sim=params.d_sim)
        enc = prepare(g, cfg).encoding
    if enc.d_sim != params.d_sim or enc.n != g.n:
        raise ValidationError(f"encoding is {enc.n} x {enc.d_sim}, model needs {g.n} x {params.d_sim}")
    return enc.matrix


def cmd_analyze(bundle, k: int, out, checkpoint=None, encoding=None,
                cfg: TrainConfig | None = None) -> ConsistencyProfile:
    """Consistency histogram; with a checkpoint also the per-group NDCG table."""
    g = load_bundle(bundle)
    out = Path(out)
    profile = similarity_consistency(g, k)
    atomic_write(out / "consistency.csv", consistency_histogram_csv(profile))
    if checkpoint is not None:
        report = cmd_evaluate(bundle, checkpoint, out, k, encoding, cfg, g=g, profile=profile)
        log.info("mean NDCG@%d over %d test nodes: %.4f", k, report.n_evaluated, report.ndcg_at_k)
    return profile


def encoding_cache_key(bundle, fusion: FusionConfig, method: str, d_sim: int) -> str:
    h = hashlib.sha256()
    h.update(bundle_fingerprint(bundle).encode())
    h.update(json.dumps([fusion.kind, fusion.k, fusion.lam, fusion.d_sim, method, d_sim]).encode())
    return h.hexdigest()[:16]


def cmd_encode(bundle, fusion: FusionConfig, method: str, d_sim: int, out) -> Path:
    """Oracle, kNN graph and initial encoding; cached by content hash."""
    out = Path(out)
    key = encoding_cache_key(bundle, fusion, method, d_sim)
    path = out / f"encoding-{key}.senc"
    if path.exists():
        log.info("cache hit: %s", path)
        return path
    g = load_bundle(bundle)
    oracle = oracle_similarity(g, fusion)
    enc = encode(build_knn_graph(oracle), d_sim, method, fusion.k)
    out.mkdir(parents=True, exist_ok=True)
    oracle_path = out / f"oracle-{key}.orcs"
    tmp = out / f".oracle-{key}.tmp"
    write_oracle(tmp, oracle)
    tmp.replace(oracle_path)
    tmp = out / f".encoding-{key}.tmp"
    write_encoding(tmp, enc)
    tmp.replace(path)
    return path


def cmd_evaluate(bundle, checkpoint, out, k: int = 10, encoding=None,
                 cfg: TrainConfig | None = None, g: GraphBundle | None = None,
                 profile: ConsistencyProfile | None = None) -> MetricsReport:
    g = load_bundle(bundle) if g is None else g
    params = load_checkpoint(checkpoint)
    p0 = _resolve_encoding(g, params, encoding, cfg or TrainConfig())
    trace = forward(params, normalize_adjacency(g.adjacency), g.features, p0)
    report = fairness_report(g, trace, k, profile)
    out = Path(out)
    atomic_write(out / "metrics.json", report.to_json())
    atomic_write(out / "groups.csv", report.groups_csv())
    return report


def _run_one(g: GraphBundle, cfg: TrainConfig, prep, eval_k: int, profile):
    result = train(g, cfg, prep)
    trace = forward(result.params, prep.norm_adj, g.features,
                    prep.encoding.matrix if prep.encoding is not None else None, prep.ax)
    report = fairness_report(g, trace, eval_k, profile)
    return result, report


def _grid_candidates(cfg: TrainConfig):
    d_sims = D_SIM_GRID if cfg.method == "sagif" else (cfg.d_sim,)
    return [cfg.replace(lr=lr, d_sim=d) for d in d_sims for lr in LR_GRID]


def _run_grid(g, cfg: TrainConfig, preps: dict, eval_k, profile):
    best = None
    for cand in _grid_candidates(cfg):
        result, report = _run_one(g, cand, preps[cand.d_sim], eval_k, profile)
        if best is None or result.best_val_acc > best[0].best_val_acc:
            best = (result, report)
    return best


def run_record(result: TrainResult, report: MetricsReport) -> dict:
    cfg = result.config
    return {
        "method": cfg.method,
        "backbone": cfg.backbone,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "metrics": report.to_dict(),
        "best_epoch": result.best_epoch,
        "best_val_acc": result.best_val_acc,
        "trace": result.trace,
    }


def aggregate_rows(records: list[dict], methods) -> list[dict]:
    """Mean and population standard deviation of each metric per method."""
    rows = []
    for method in methods:
        recs = [r for r in records if r["method"] == method]
        if not recs:
            continue
        row = {"method": method, "backbone": recs[0]["backbone"], "n_seeds": len(recs)}
        for metric in AGGREGATE_METRICS:
            values = np.array([r["metrics"][metric] for r in recs])
            row[f"{metric}_mean"] = float(np.mean(values))
            row[f"{metric}_std"] = float(np.std(values))
        rows.append(row)
    return rows


def aggregate_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = ["method", "backbone", "n_seeds"] + [f"{m}_{s}" for m in AGGREGATE_METRICS
                                                  for s in ("mean", "std")]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([row[f] if isinstance(row[f], (str, int)) else repr(row[f]) for f in fields])
    return buf.getvalue()


def cmd_train(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    """Train and evaluate every (method, seed); one JSON + checkpoint per run,
    then ``aggregate.csv``. Finished runs stay on disk if a later one fails."""
    g = load_bundle(spec.dataset)
    out = spec.out
    out.mkdir(parents=True, exist_ok=True)
    profile = similarity_consistency(g, spec.eval_k)

    tasks = []
    for method in spec.methods:
        base = spec.base.replace(method=method)
        if spec.grid:
            d_sims = sorted({c.d_sim for c in _grid_candidates(base)})
            preps = {d: prepare(g, base.replace(d_sim=d)) for d in d_sims}
        else:
            preps = {base.d_sim: prepare(g, base)}
        for seed in spec.seeds:
            tasks.append((base.replace(seed=seed), preps))

    def submit(pool, cfg, preps):
        if spec.grid:
            return pool.submit(_run_grid, g, cfg, preps, spec.eval_k, profile)
        return pool.submit(_run_one, g, cfg, preps[cfg.d_sim], spec.eval_k, profile)

    records = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [submit(pool, cfg, preps) for cfg, preps in tasks]
            for future in futures:
                records.append(_persist(out, *future.result()))
    else:
        for cfg, preps in tasks:
            if spec.grid:
                result, report = _run_grid(g, cfg, preps, spec.eval_k, profile)
            else:
                result, report = _run_one(g, cfg, preps[cfg.d_sim], spec.eval_k, profile)
            records.append(_persist(out, result, report))

    atomic_write(out / "aggregate.csv", aggregate_csv(aggregate_rows(records, spec.methods)))
    return records


def _persist(out: Path, result: TrainResult, report: MetricsReport) -> dict:
    cfg = result.config
    stem = f"{cfg.method}-{cfg.backbone}-seed{cfg.seed}"
    record = run_record(result, report)
    atomic_write(out / f"{stem}.json", _dumps(record))
    tmp = out / f".{stem}.sgif.tmp"
    save_checkpoint(tmp, result.params)
    tmp.replace(out / f"{stem}.sgif")
    if result.encoding is not None:
        tmp = out / f".{stem}.senc.tmp"
        write_encoding(tmp, result.encoding)
        tmp.replace(out / f"{stem}.senc")
    log.info("%s: auc=%.4f ndcg@%d=%.4f err@%d=%.4f", stem, report.auc, report.k,
             report.ndcg_at_k, report.k, report.err_at_k)
    return record
