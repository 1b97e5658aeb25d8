"""Deterministic planted-partition citation-style benchmark generator.

Stands in for the public citation datasets when their raw files are not
available: nodes carry sparse binary bag-of-words-like features whose token
pool is class-biased, and edges prefer same-class endpoints. Scale presets
mirror the usual benchmark sizes so downstream code paths see realistic
shapes. These graphs are synthetic; drop real bundles into the data
directory to benchmark against the originals.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .graphs import EdgeSet, Graph
from .seeding import rng_for

# Difficulty knobs were tuned once so that a clean two-layer attention
# encoder lands in the high-0.8s macro ROC-AUC at target ratio 0.9 and
# structure noise measurably degrades it, mirroring the public benchmarks.
CITATION_PRESETS = {
    "cora": dict(num_nodes=2708, num_features=1433, num_classes=7,
                 avg_degree=3.9, homophily=0.94, tokens_per_node=22,
                 token_flip=0.42, label_flip=0.0),
    "citeseer": dict(num_nodes=3327, num_features=1200, num_classes=6,
                     avg_degree=2.8, homophily=0.93, tokens_per_node=20,
                     token_flip=0.45, label_flip=0.0),
}


def synth_citation(num_nodes: int, num_features: int, num_classes: int,
                   avg_degree: float, seed: int, homophily: float = 0.94,
                   tokens_per_node: int = 22, token_flip: float = 0.42,
                   label_flip: float = 0.0) -> Graph:
    """Graph with class-biased sparse binary features and homophilous edges.

    ``homophily`` is the fraction of edges drawn within a class;
    ``token_flip`` is the chance a node token is drawn from the global pool
    instead of its class pool (higher = harder features); ``label_flip``
    reassigns that fraction of observed labels uniformly at random after
    features and edges are built (class overlap, an irreducible error floor).
    """
    rng = rng_for(seed, "citation")
    labels = rng.integers(0, num_classes, size=num_nodes)
    by_class = [np.nonzero(labels == c)[0] for c in range(num_classes)]

    # Class token pools: contiguous slices of the vocabulary with 25% overlap
    # into the neighboring class's slice.
    pool_width = num_features // num_classes
    pools = []
    for c in range(num_classes):
        lo = c * pool_width
        hi = min(num_features, lo + pool_width + pool_width // 4)
        pools.append(np.arange(lo, hi))

    feats = np.zeros((num_nodes, num_features))
    for i in range(num_nodes):
        pool = pools[labels[i]]
        from_pool = rng.random(tokens_per_node) >= token_flip
        toks = np.where(from_pool,
                        pool[rng.integers(0, pool.size, tokens_per_node)],
                        rng.integers(0, num_features, tokens_per_node))
        feats[i, toks] = 1.0

    n_edges = int(round(avg_degree * num_nodes / 2))
    chosen = set()
    pairs = []
    while len(pairs) < n_edges:
        u = int(rng.integers(0, num_nodes))
        if rng.random() < homophily:
            members = by_class[labels[u]]
            if members.size < 2:
                continue
            v = int(members[rng.integers(0, members.size)])
        else:
            v = int(rng.integers(0, num_nodes))
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in chosen:
            continue
        chosen.add(key)
        pairs.append(key)

    if label_flip > 0:
        flip = rng.random(num_nodes) < label_flip
        labels = labels.copy()
        labels[flip] = rng.integers(0, num_classes, int(flip.sum()))

    return Graph(num_nodes, Tensor(feats), EdgeSet(pairs),
                 labels=labels, num_classes=num_classes)


def synth_citation_preset(name: str, seed: int = 7, **overrides) -> Graph:
    """Preset-sized synthetic citation graph ("cora" or "citeseer" scale)."""
    if name not in CITATION_PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(CITATION_PRESETS)}")
    params = dict(CITATION_PRESETS[name])
    params.update(overrides)
    return synth_citation(seed=seed, **params)
