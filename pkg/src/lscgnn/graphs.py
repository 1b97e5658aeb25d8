"""Graph data model: canonical edge sets, CSR adjacency, heterogeneous graphs.

Graphs are undirected and simple. The canonical edge set stores each edge
once as (min(u,v), max(u,v)); the CSR adjacency stores both directions.
Self-loops exist only as an adjacency view (``with_self_loops``) and never
enter the canonical edge set.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

_KEY_SHIFT = 32  # node ids fit in 31 bits, pack (u, v) into one int64


class EdgeSet:
    """Sorted, deduplicated set of canonical undirected node pairs."""

    __slots__ = ("pairs",)

    def __init__(self, pairs):
        arr = np.asarray(pairs, dtype=np.int64)
        if arr.size == 0:
            arr = np.empty((0, 2), dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"EdgeSet needs (E,2) pairs, got shape {arr.shape}")
        if arr.shape[0]:
            if (arr < 0).any():
                raise ValueError("EdgeSet: negative node index")
            lo = np.minimum(arr[:, 0], arr[:, 1])
            hi = np.maximum(arr[:, 0], arr[:, 1])
            if (lo == hi).any():
                bad = int(lo[(lo == hi).argmax()])
                raise ValueError(f"EdgeSet: self-loop ({bad},{bad}) not allowed")
            keys = np.unique((lo << _KEY_SHIFT) | hi)
            arr = np.column_stack([keys >> _KEY_SHIFT, keys & ((1 << _KEY_SHIFT) - 1)])
        self.pairs = arr

    def _keys(self) -> np.ndarray:
        return (self.pairs[:, 0] << _KEY_SHIFT) | self.pairs[:, 1]

    def __len__(self):
        return self.pairs.shape[0]

    def __eq__(self, other):
        return isinstance(other, EdgeSet) and np.array_equal(self.pairs, other.pairs)

    def __contains__(self, pair):
        u, v = int(pair[0]), int(pair[1])
        if u == v:
            return False
        key = (min(u, v) << _KEY_SHIFT) | max(u, v)
        keys = self._keys()
        i = np.searchsorted(keys, key)
        return i < keys.size and keys[i] == key

    def union(self, other: "EdgeSet") -> "EdgeSet":
        return EdgeSet(np.vstack([self.pairs, other.pairs]))

    def difference(self, other: "EdgeSet") -> "EdgeSet":
        mask = ~np.isin(self._keys(), other._keys())
        return EdgeSet(self.pairs[mask])

    def intersection(self, other: "EdgeSet") -> "EdgeSet":
        mask = np.isin(self._keys(), other._keys())
        return EdgeSet(self.pairs[mask])

    def __repr__(self):
        return f"EdgeSet({len(self)} edges)"


def edge_difference(a: EdgeSet, b: EdgeSet) -> EdgeSet:
    """Canonical pairs present in ``a`` but not in ``b``."""
    return a.difference(b)


def _build_csr(num_nodes: int, pairs: np.ndarray, self_loops: bool):
    """CSR (offsets, targets) from canonical pairs, both directions stored."""
    parts = [pairs, pairs[:, ::-1]]
    if self_loops:
        loop = np.arange(num_nodes, dtype=np.int64)
        parts.append(np.column_stack([loop, loop]))
    directed = np.vstack(parts) if pairs.size else (
        np.column_stack([np.arange(num_nodes, dtype=np.int64)] * 2) if self_loops
        else np.empty((0, 2), dtype=np.int64))
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[order]
    counts = np.bincount(directed[:, 0], minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, directed[:, 1].copy()


class Graph:
    """Undirected simple graph: CSR adjacency plus node features and labels."""

    def __init__(self, num_nodes: int, features: Tensor, edges: EdgeSet,
                 labels=None, num_classes: int = 0, has_self_loops: bool = False):
        if features.values.ndim != 2 or features.shape[0] != num_nodes:
            raise ValueError(
                f"features must be ({num_nodes}, F), got {features.shape}")
        if len(edges) and int(edges.pairs.max()) >= num_nodes:
            raise ValueError(
                f"edge endpoint {int(edges.pairs.max())} out of range for {num_nodes} nodes")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (num_nodes,):
                raise ValueError(f"labels must have shape ({num_nodes},), got {labels.shape}")
            if num_classes <= 0:
                raise ValueError("labelled graph needs num_classes > 0")
            if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
                raise ValueError(f"label out of range [0, {num_classes})")
        self.num_nodes = int(num_nodes)
        self.features = features
        self.edge_set = edges
        self.labels = labels
        self.num_classes = int(num_classes)
        self.has_self_loops = bool(has_self_loops)
        self.csr_offsets, self.csr_targets = _build_csr(num_nodes, edges.pairs, has_self_loops)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edge_set)

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[i]:self.csr_offsets[i + 1]]

    def directed_pairs(self):
        """Per CSR entry: (row index it belongs to, neighbor index)."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        return rows, self.csr_targets

    def __repr__(self):
        return (f"Graph(N={self.num_nodes}, E={self.num_edges}, "
                f"F={self.num_features}, C={self.num_classes})")


def assemble(num_nodes: int, features: Tensor, edges: EdgeSet,
             labels=None, num_classes: int = 0) -> Graph:
    """Validated graph from parts; the standard constructor for derived graphs."""
    return Graph(num_nodes, features, edges, labels=labels, num_classes=num_classes)


def with_self_loops(g: Graph) -> Graph:
    """Adjacency view where every node neighbors itself.

    The canonical edge set is unchanged; only the CSR gains the loops.
    """
    out = Graph.__new__(Graph)
    out.num_nodes = g.num_nodes
    out.features = g.features
    out.edge_set = g.edge_set
    out.labels = g.labels
    out.num_classes = g.num_classes
    out.has_self_loops = True
    out.csr_offsets, out.csr_targets = _build_csr(g.num_nodes, g.edge_set.pairs, True)
    return out


def induced_edges(g: Graph, nodes) -> EdgeSet:
    """Edges of ``g`` with both endpoints inside the node subset."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= g.num_nodes):
        raise IndexError(f"node subset out of range for {g.num_nodes} nodes")
    member = np.zeros(g.num_nodes, dtype=bool)
    member[nodes] = True
    pairs = g.edge_set.pairs
    if not pairs.size:
        return EdgeSet([])
    mask = member[pairs[:, 0]] & member[pairs[:, 1]]
    return EdgeSet(pairs[mask])


class Relation:
    """One typed edge set of a heterogeneous graph, stored directed.

    Messages flow source -> destination; the CSR is grouped by destination
    so each destination row lists its source neighbors. Reverse direction
    of a cross-type relation is a separate Relation.
    """

    def __init__(self, src_type: str, name: str, dst_type: str,
                 src_idx, dst_idx, num_src: int, num_dst: int):
        src_idx = np.asarray(src_idx, dtype=np.int64)
        dst_idx = np.asarray(dst_idx, dtype=np.int64)
        if src_idx.shape != dst_idx.shape or src_idx.ndim != 1:
            raise ValueError("relation endpoint arrays must be equal-length vectors")
        if src_idx.size and (src_idx.min() < 0 or src_idx.max() >= num_src):
            raise ValueError(f"relation {name}: source index out of range for {num_src} nodes")
        if dst_idx.size and (dst_idx.min() < 0 or dst_idx.max() >= num_dst):
            raise ValueError(f"relation {name}: destination index out of range for {num_dst} nodes")
        self.src_type = src_type
        self.name = name
        self.dst_type = dst_type
        self.src_idx = src_idx
        self.dst_idx = dst_idx
        order = np.lexsort((src_idx, dst_idx))
        counts = np.bincount(dst_idx, minlength=num_dst)
        self.csr_offsets = np.zeros(num_dst + 1, dtype=np.int64)
        np.cumsum(counts, out=self.csr_offsets[1:])
        self.csr_targets = src_idx[order].copy()

    @property
    def key(self):
        return (self.src_type, self.name, self.dst_type)

    @property
    def num_edges(self) -> int:
        return self.src_idx.shape[0]

    def directed_pairs(self):
        """(destination row per entry, source index per entry), CSR order."""
        rows = np.repeat(np.arange(self.csr_offsets.size - 1, dtype=np.int64),
                         np.diff(self.csr_offsets))
        return rows, self.csr_targets


class HeteroGraph:
    """Typed node sets with per-type features and per-relation adjacency."""

    def __init__(self, node_features: dict[str, Tensor]):
        for name, feats in node_features.items():
            if feats.values.ndim != 2:
                raise ValueError(f"node type {name}: features must be 2-d")
        self.node_features = dict(node_features)
        self.relations: dict[tuple, Relation] = {}
        self.meta: dict = {}

    def num_nodes(self, type_name: str) -> int:
        return self.node_features[type_name].shape[0]

    def add_relation(self, src_type: str, name: str, dst_type: str, src_idx, dst_idx):
        rel = Relation(src_type, name, dst_type, src_idx, dst_idx,
                       self.num_nodes(src_type), self.num_nodes(dst_type))
        self.relations[rel.key] = rel
        return rel

    def add_undirected_same_type(self, type_name: str, name: str, edges: EdgeSet):
        """Same-type undirected relation: both directions enter one CSR."""
        p = edges.pairs
        src = np.concatenate([p[:, 0], p[:, 1]])
        dst = np.concatenate([p[:, 1], p[:, 0]])
        return self.add_relation(type_name, name, type_name, src, dst)

    def add_cross_pair(self, src_type: str, name: str, dst_type: str, src_idx, dst_idx):
        """Cross-type relation plus its explicit reverse (suffix ``_rev``)."""
        fwd = self.add_relation(src_type, name, dst_type, src_idx, dst_idx)
        rev = self.add_relation(dst_type, f"{name}_rev", src_type, dst_idx, src_idx)
        return fwd, rev

    def with_relations(self, keys) -> "HeteroGraph":
        """Same node sets, restricted to the listed relations."""
        out = HeteroGraph(self.node_features)
        out.meta = dict(self.meta)
        for key in keys:
            rel = self.relations[key]
            out.add_relation(rel.src_type, rel.name, rel.dst_type, rel.src_idx, rel.dst_idx)
        return out

    def __repr__(self):
        types = ", ".join(f"{t}:{self.num_nodes(t)}" for t in self.node_features)
        return f"HeteroGraph({types}; {len(self.relations)} relations)"
