"""On-disk graph bundles and atomic file writes.

A bundle directory holds::

    manifest.json   {"n": ..., "m": ..., "d": ..., "classes": ...}
    edges.tsv       one undirected edge per line, "i<TAB>j", 0-based
    features.csv    n rows of d comma-separated decimals
    labels.txt      one integer label per line
    splits.json     {"train": [...], "val": [...], "test": [...]}

``m`` counts undirected edges once. Published edge counts for citation
graphs usually count both directions, i.e. ``2 * m``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import GraphBundle

__all__ = ["atomic_write", "load_bundle", "save_bundle", "bundle_fingerprint"]


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def save_bundle(g: GraphBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"n": g.n, "m": g.m, "d": g.d, "classes": g.num_classes}
    atomic_write(directory / "manifest.json", json.dumps(manifest, sort_keys=True) + "\n")
    atomic_write(directory / "edges.tsv", "".join(f"{i}\t{j}\n" for i, j in g.edge_list()))
    atomic_write(directory / "features.csv", "".join(_format_row(r) + "\n" for r in g.features))
    atomic_write(directory / "labels.txt", "".join(f"{int(y)}\n" for y in g.labels))
    splits = {name: getattr(g, name).tolist() for name in ("train", "val", "test")}
    atomic_write(directory / "splits.json", json.dumps(splits) + "\n")
    return directory


def load_bundle(directory) -> GraphBundle:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"bundle directory {directory} does not exist")
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        n, m, d = int(manifest["n"]), int(manifest["m"]), int(manifest["d"])
        classes = int(manifest["classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{directory}/manifest.json is malformed: {exc}") from exc
    if d < 1:
        raise ValidationError(f"{directory}: bundle has an empty feature matrix")

    edge_text = (directory / "edges.tsv").read_text().split()
    try:
        edges = np.array(edge_text, dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise ValidationError(f"{directory}/edges.tsv is malformed: {exc}") from exc

    feature_lines = [ln for ln in (directory / "features.csv").read_text().splitlines() if ln.strip()]
    try:
        features = np.array([[float(v) for v in ln.split(",")] for ln in feature_lines])
    except ValueError as exc:
        raise ValidationError(f"{directory}/features.csv is malformed: {exc}") from exc
    if features.shape != (n, d):
        raise ValidationError(f"{directory}: features are {features.shape}, manifest says {(n, d)}")

    labels = np.array((directory / "labels.txt").read_text().split(), dtype=np.int64)
    splits = json.loads((directory / "splits.json").read_text())
    try:
        g = GraphBundle.from_edges(n, edges, features, labels,
                                   splits["train"], splits["val"], splits["test"])
    except KeyError as exc:
        raise ValidationError(f"{directory}/splits.json lacks {exc}") from exc
    if g.m != m:
        raise ValidationError(f"{directory}: {g.m} distinct undirected edges, manifest says {m}")
    if labels.size and labels.max() >= classes:
        raise ValidationError(f"{directory}: label {labels.max()} >= classes={classes}")
    return g


def bundle_fingerprint(directory) -> str:
    """SHA-256 over the bundle's five files, for cache keys."""
    import hashlib

    h = hashlib.sha256()
    for name in ("manifest.json", "edges.tsv", "features.csv", "labels.txt", "splits.json"):
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()
