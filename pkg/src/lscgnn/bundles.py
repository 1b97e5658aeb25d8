"""On-disk dataset bundles.

A homogeneous bundle is a directory with:
    meta.json      {"num_nodes": int, "num_features": int, "num_classes": int}
    edges.tsv      one canonical edge per line, "src<TAB>dst"
    features.tsv   sparse triplets, "node<TAB>feature_index<TAB>value"
    labels.tsv     "node<TAB>class" (absent for unlabelled data)

A heterogeneous bundle instead has:
    node_types.json        {"types": [{"name", "num_nodes", "num_features"}]}
    features_<name>.tsv    sparse triplets per node type
    rel_<src>__<name>__<dst>.tsv   directed "src<TAB>dst" lines per relation

All files are UTF-8 with LF line endings and 0-based indices.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .autodiff import Tensor
from .graphs import EdgeSet, Graph, HeteroGraph


class BundleError(Exception):
    """Malformed or inconsistent bundle contents."""


def _parse_lines(path, n_fields, converters):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise BundleError(f"{path}:{lineno}: expected {n_fields} fields, got {len(parts)}")
            try:
                rows.append(tuple(c(p) for c, p in zip(converters, parts)))
            except ValueError as exc:
                raise BundleError(f"{path}:{lineno}: {exc}") from None
    return rows


def _load_sparse_features(path, num_nodes, num_features) -> Tensor:
    mat = np.zeros((num_nodes, num_features), dtype=np.float64)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise BundleError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                node, fidx, value = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise BundleError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= node < num_nodes:
                raise BundleError(f"{path}:{lineno}: node {node} out of range")
            if not 0 <= fidx < num_features:
                raise BundleError(f"{path}:{lineno}: feature index {fidx} out of range")
            mat[node, fidx] = value
    return Tensor(mat)


def _load_edges(path, num_nodes) -> EdgeSet:
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise BundleError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise BundleError(f"{path}:{lineno}: {exc}") from None
            if u == v:
                raise BundleError(f"{path}:{lineno}: self-loop ({u},{v}) not allowed")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise BundleError(f"{path}:{lineno}: edge ({u},{v}) out of range")
            pairs.append((u, v))
    return EdgeSet(pairs) if pairs else EdgeSet([])


def _load_homogeneous(path: str) -> Graph:
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"{meta_path}: {exc}") from None
    for key in ("num_nodes", "num_features", "num_classes"):
        if key not in meta:
            raise BundleError(f"{meta_path}: missing key {key!r}")
    n, f, c = int(meta["num_nodes"]), int(meta["num_features"]), int(meta["num_classes"])

    edges = _load_edges(os.path.join(path, "edges.tsv"), n)
    features = _load_sparse_features(os.path.join(path, "features.tsv"), n, f)

    labels = None
    labels_path = os.path.join(path, "labels.tsv")
    if os.path.exists(labels_path):
        rows = _parse_lines(labels_path, 2, (int, int))
        labels = np.full(n, -1, dtype=np.int64)
        for lineno, (node, cls) in enumerate(rows, start=1):
            if not 0 <= node < n:
                raise BundleError(f"{labels_path}:{lineno}: node {node} out of range")
            if labels[node] != -1:
                raise BundleError(f"{labels_path}:{lineno}: node {node} labelled twice")
            if not 0 <= cls < c:
                raise BundleError(f"{labels_path}:{lineno}: class {cls} out of range")
            labels[node] = cls
        if (labels == -1).any():
            missing = int(np.argmax(labels == -1))
            raise BundleError(f"{labels_path}: node {missing} has no label")
    return Graph(n, features, edges, labels=labels, num_classes=c)


def _load_hetero(path: str) -> HeteroGraph:
    types_path = os.path.join(path, "node_types.json")
    try:
        with open(types_path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"{types_path}: {exc}") from None
    if "types" not in spec:
        raise BundleError(f"{types_path}: missing key 'types'")
    feats = {}
    counts = {}
    for entry in spec["types"]:
        name = entry["name"]
        n, f = int(entry["num_nodes"]), int(entry["num_features"])
        counts[name] = n
        feats[name] = _load_sparse_features(
            os.path.join(path, f"features_{name}.tsv"), n, f)
    g = HeteroGraph(feats)
    for fname in sorted(os.listdir(path)):
        if not (fname.startswith("rel_") and fname.endswith(".tsv")):
            continue
        stem = fname[len("rel_"):-len(".tsv")]
        parts = stem.split("__")
        if len(parts) != 3:
            raise BundleError(f"{os.path.join(path, fname)}: relation file name "
                              f"must look like rel_<src>__<name>__<dst>.tsv")
        src_t, rel_name, dst_t = parts
        if src_t not in counts or dst_t not in counts:
            raise BundleError(f"{os.path.join(path, fname)}: unknown node type in name")
        rows = _parse_lines(os.path.join(path, fname), 2, (int, int))
        src = np.array([r[0] for r in rows], dtype=np.int64)
        dst = np.array([r[1] for r in rows], dtype=np.int64)
        try:
            g.add_relation(src_t, rel_name, dst_t, src, dst)
        except ValueError as exc:
            raise BundleError(f"{os.path.join(path, fname)}: {exc}") from None
    return g


def load_bundle(path: str):
    """Load a bundle directory as Graph or HeteroGraph (auto-detected)."""
    if not os.path.isdir(path):
        raise BundleError(f"{path}: not a directory")
    if os.path.exists(os.path.join(path, "node_types.json")):
        return _load_hetero(path)
    if not os.path.exists(os.path.join(path, "meta.json")):
        raise BundleError(f"{path}: neither meta.json nor node_types.json found")
    return _load_homogeneous(path)


def _write_sparse_features(path, values: np.ndarray):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        nodes, fidx = np.nonzero(values)
        for n_, f_ in zip(nodes, fidx):
            fh.write(f"{n_}\t{f_}\t{float(values[n_, f_])!r}\n")


def write_bundle(g, path: str) -> None:
    """Write a Graph or HeteroGraph as a bundle directory."""
    os.makedirs(path, exist_ok=True)
    if isinstance(g, HeteroGraph):
        types = [{"name": t, "num_nodes": g.num_nodes(t),
                  "num_features": g.node_features[t].shape[1]}
                 for t in g.node_features]
        with open(os.path.join(path, "node_types.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"types": types}, fh, indent=1)
            fh.write("\n")
        for t in g.node_features:
            _write_sparse_features(os.path.join(path, f"features_{t}.tsv"),
                                   g.node_features[t].values)
        for (src_t, name, dst_t), rel in g.relations.items():
            fname = os.path.join(path, f"rel_{src_t}__{name}__{dst_t}.tsv")
            with open(fname, "w", encoding="utf-8", newline="\n") as fh:
                for s, d in zip(rel.src_idx, rel.dst_idx):
                    fh.write(f"{s}\t{d}\n")
        return

    meta = {"num_nodes": g.num_nodes, "num_features": g.num_features,
            "num_classes": g.num_classes}
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(path, "edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for u, v in g.edge_set.pairs:
            fh.write(f"{u}\t{v}\n")
    _write_sparse_features(os.path.join(path, "features.tsv"), g.features.values)
    if g.labels is not None:
        with open(os.path.join(path, "labels.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for node, cls in enumerate(g.labels):
                fh.write(f"{node}\t{cls}\n")


def convert_planetoid(in_dir: str, name: str, out_dir: str) -> Graph:
    """Convert raw citation-benchmark pickles (ind.<name>.*) to a bundle.

    Utility for users who have the original files; needs scipy to unpickle
    the sparse feature matrices.
    """
    import pickle

    def load_pickle(suffix):
        fname = os.path.join(in_dir, f"ind.{name}.{suffix}")
        with open(fname, "rb") as fh:
            return pickle.load(fh, encoding="latin1")

    tx, ty, allx, ally, graph = (load_pickle(s) for s in
                                 ("tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(os.path.join(in_dir, f"ind.{name}.test.index"), dtype=np.int64)

    # Row j of tx/ty belongs to node test_idx[j]; index gaps (isolated test
    # nodes in some datasets) are left as zero rows.
    n = max(allx.shape[0] + tx.shape[0], int(test_idx.max()) + 1)
    feats = np.zeros((n, allx.shape[1]))
    feats[:allx.shape[0]] = np.asarray(allx.todense())
    feats[test_idx] = np.asarray(tx.todense())

    onehot = np.zeros((n, ally.shape[1]))
    onehot[:ally.shape[0]] = ally
    onehot[test_idx] = ty
    labels = onehot.argmax(axis=1)

    pairs = []
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v:
                pairs.append((u, v))
    g = Graph(feats.shape[0], Tensor(feats), EdgeSet(pairs),
              labels=labels, num_classes=onehot.shape[1])
    write_bundle(g, out_dir)
    return g
