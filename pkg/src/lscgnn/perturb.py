"""Simulation protocol: graph decomposition, false-positive edge injection,
train/validation/test splits, and the synthetic heterogeneous generator.

Everything here is a pure function of (inputs, seed): repeated calls return
bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .graphs import EdgeSet, Graph, HeteroGraph, assemble, edge_difference, induced_edges
from .seeding import derive_seed, rng_for


@dataclass(frozen=True)
class DecompositionSpec:
    """Fraction of nodes sampled into the target graph, plus the draw seed."""
    target_ratio: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValueError(f"target_ratio must be in (0, 1], got {self.target_ratio}")


@dataclass(frozen=True)
class PerturbationSpec:
    """False-positive edge count as a fraction of the target edge count."""
    rate: float
    seed: int

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError(f"perturbation rate must be >= 0, got {self.rate}")


class SplitMasks:
    """Disjoint boolean train/validation/test masks covering one index space."""

    def __init__(self, train, validation, test):
        self.train = np.asarray(train, dtype=bool)
        self.validation = np.asarray(validation, dtype=bool)
        self.test = np.asarray(test, dtype=bool)
        if not (self.train.shape == self.validation.shape == self.test.shape):
            raise ValueError("split masks must share one shape")
        total = self.train.astype(int) + self.validation.astype(int) + self.test.astype(int)
        if not np.all(total == 1):
            raise ValueError("split masks must be disjoint and cover every position")

    def __len__(self):
        return self.train.size


def decompose(g: Graph, spec: DecompositionSpec):
    """Sample target nodes and split edges into target-internal vs external.

    Returns (target_nodes sorted, target edge set, regularization graph).
    The regularization graph keeps all N nodes (so the second encoder can
    emit rows for target nodes) but only the non-target-internal edges.
    """
    n_target = int(round(spec.target_ratio * g.num_nodes))
    if n_target == 0:
        raise ValueError(f"target_ratio {spec.target_ratio} selects 0 of {g.num_nodes} nodes")
    rng = np.random.default_rng(spec.seed)
    target_nodes = np.sort(rng.choice(g.num_nodes, size=n_target, replace=False))
    e_t = induced_edges(g, target_nodes)
    e_r = edge_difference(g.edge_set, e_t)
    g_r = assemble(g.num_nodes, g.features, e_r, labels=g.labels,
                   num_classes=g.num_classes)
    return target_nodes, e_t, g_r


def sample_non_edges(node_ids, existing: EdgeSet, count: int,
                     rng: np.random.Generator) -> EdgeSet:
    """Uniform sample of ``count`` distinct absent pairs among ``node_ids``.

    Pairs are drawn without replacement from all unordered non-self pairs of
    the given nodes that are not in ``existing``. Dense candidate spaces are
    enumerated outright; sparse ones use rejection sampling (still uniform).
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    m = node_ids.size
    total = m * (m - 1) // 2
    # Contract: every pair in `existing` lies within node_ids, so the count
    # of available non-edges is exact.
    available = total - len(existing)
    if count > available:
        raise ValueError(f"requested {count} non-edges but only {available} exist")
    if count == 0:
        return EdgeSet([])
    existing_keys = (np.minimum(existing.pairs[:, 0], existing.pairs[:, 1]).astype(np.int64) << 32) \
        | np.maximum(existing.pairs[:, 0], existing.pairs[:, 1]) if len(existing) else np.empty(0, np.int64)

    if total <= 200_000 or count > 0.1 * available:
        iu, iv = np.triu_indices(m, k=1)
        u = node_ids[iu]
        v = node_ids[iv]
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        keys = (lo << 32) | hi
        mask = ~np.isin(keys, existing_keys)
        candidates = np.column_stack([lo[mask], hi[mask]])
        pick = rng.choice(candidates.shape[0], size=count, replace=False)
        return EdgeSet(candidates[pick])

    chosen = set()
    existing_set = set(int(k) for k in existing_keys)
    out = []
    while len(out) < count:
        need = count - len(out)
        ia = rng.integers(0, m, size=max(64, 2 * need))
        ib = rng.integers(0, m, size=ia.size)
        for a, b in zip(ia, ib):
            if a == b:
                continue
            u, v = int(node_ids[a]), int(node_ids[b])
            if u > v:
                u, v = v, u
            key = (u << 32) | v
            if key in existing_set or key in chosen:
                continue
            chosen.add(key)
            out.append((u, v))
            if len(out) == count:
                break
    return EdgeSet(out)


def inject_noise(target_nodes, e_t: EdgeSet, spec: PerturbationSpec) -> EdgeSet:
    """Add floor(rate * |E_t|) uniformly sampled false edges among target nodes."""
    count = math.floor(spec.rate * len(e_t))
    if count == 0:
        return e_t
    rng = np.random.default_rng(spec.seed)
    injected = sample_non_edges(target_nodes, e_t, count, rng)
    return e_t.union(injected)


def split_nodes(target_nodes, ratios, seed: int) -> SplitMasks:
    """Uniform train/validation/test partition of the target nodes.

    Validation and test sizes are floored; the remainder goes to train.
    Masks are aligned with the order of ``target_nodes``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = np.asarray(target_nodes).size
    if n < 3:
        raise ValueError(f"need at least 3 nodes to split, got {n}")
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = np.random.default_rng(seed).permutation(n)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    return SplitMasks(train, val, test)


@dataclass
class LinkSplit:
    """Edge-level split for link prediction.

    ``masks`` indexes positions of the positive edge set; validation and test
    negatives are fixed non-edge pairs sampled once per seed (train negatives
    are resampled each epoch by the trainer).
    """
    masks: SplitMasks
    val_negatives: EdgeSet
    test_negatives: EdgeSet


def split_edges_for_linkpred(e_pos: EdgeSet, ratios, seed: int, num_nodes: int,
                             forbidden: EdgeSet | None = None) -> LinkSplit:
    """Partition positive edges and attach fixed negatives for val/test.

    Negatives are uniform non-edges among the ``num_nodes`` nodes, disjoint
    from the positives and from ``forbidden`` (e.g. known-noisy pairs).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n_edges = len(e_pos)
    if n_edges < 3:
        raise ValueError(f"need at least 3 positive edges, got {n_edges}")
    n_val = math.floor(ratios[1] * n_edges)
    n_test = math.floor(ratios[2] * n_edges)
    n_train = n_edges - n_val - n_test
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_edges)
    train = np.zeros(n_edges, dtype=bool)
    val = np.zeros(n_edges, dtype=bool)
    test = np.zeros(n_edges, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    masks = SplitMasks(train, val, test)

    avoid = e_pos if forbidden is None else e_pos.union(forbidden)
    all_nodes = np.arange(num_nodes, dtype=np.int64)
    val_neg = sample_non_edges(all_nodes, avoid, n_val, rng)
    test_neg = sample_non_edges(all_nodes, avoid.union(val_neg), n_test, rng)
    return LinkSplit(masks, val_neg, test_neg)


def synth_hetero(n_a: int, n_b: int, seed: int, noise_rate: float,
                 clusters: int = 4,
                 p_in=(0.08, 0.10, 0.15), p_out=(0.005, 0.004, 0.004),
                 feature_dims=(32, 16), feature_noise: float = 1.0):
    """Planted-community two-type graph (types A and B), clean and noisy.

    Latent clusters drive A-A, B-B and A-B edge probabilities (``p_in`` vs
    ``p_out`` per relation, in that order) and cluster-informative node
    features. The noisy variant perturbs only B-B edges at ``noise_rate``.
    Cluster assignments are stored in each graph's ``meta``.
    """
    if n_a < 10 or n_b < 10:
        raise ValueError(f"need at least 10 nodes per type, got {n_a}, {n_b}")
    k = int(clusters)
    f_a, f_b = feature_dims
    rng_cl = rng_for(seed, "hetero", "clusters")
    ca = rng_cl.integers(0, k, size=n_a)
    cb = rng_cl.integers(0, k, size=n_b)

    rng_feat = rng_for(seed, "hetero", "features")
    cent_a = rng_feat.normal(0.0, 1.0, size=(k, f_a))
    cent_b = rng_feat.normal(0.0, 1.0, size=(k, f_b))
    x_a = cent_a[ca] + feature_noise * rng_feat.normal(0.0, 1.0, size=(n_a, f_a))
    x_b = cent_b[cb] + feature_noise * rng_feat.normal(0.0, 1.0, size=(n_b, f_b))

    def planted_pairs(n, assign, prob_in, prob_out, rng):
        iu, iv = np.triu_indices(n, k=1)
        p = np.where(assign[iu] == assign[iv], prob_in, prob_out)
        mask = rng.random(iu.size) < p
        return np.column_stack([iu[mask], iv[mask]])

    rng_edges = rng_for(seed, "hetero", "edges")
    e_aa = EdgeSet(planted_pairs(n_a, ca, p_in[0], p_out[0], rng_edges))
    e_bb = EdgeSet(planted_pairs(n_b, cb, p_in[1], p_out[1], rng_edges))
    ai, bi = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
    ai, bi = ai.ravel(), bi.ravel()
    p_ab = np.where(ca[ai] == cb[bi], p_in[2], p_out[2])
    ab_mask = rng_edges.random(ai.size) < p_ab
    ab_src, ab_dst = ai[ab_mask], bi[ab_mask]

    def build(bb_edges: EdgeSet) -> HeteroGraph:
        g = HeteroGraph({"A": Tensor(x_a.copy()), "B": Tensor(x_b.copy())})
        g.add_undirected_same_type("A", "aa", e_aa)
        g.add_undirected_same_type("B", "bb", bb_edges)
        g.add_cross_pair("A", "ab", "B", ab_src, ab_dst)
        g.meta["clusters_a"] = ca.copy()
        g.meta["clusters_b"] = cb.copy()
        return g

    clean = build(e_bb)
    if noise_rate > 0:
        noisy_bb = inject_noise(np.arange(n_b), e_bb,
                                PerturbationSpec(noise_rate, derive_seed(seed, "hetero", "noise")))
    else:
        noisy_bb = e_bb
    noisy = build(noisy_bb)
    return clean, noisy
