"""Dual-encoder model, composite loss, training loops, ablation variants,
and feature-similarity edge filtering.

The main encoder reads the full (possibly noisy) graph; an optional second
encoder reads only the clean external edges, and a mean-squared penalty on
the two latent matrices (weighted by ``lam``) discourages the main encoder
from fitting edges the external structure does not support. Validation and
test metrics always come from the main encoder's latents alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .encoders import (Encoder, HeteroEncoder, build_encoder, init_param,
                       restore_params, snapshot_params)
from .graphs import EdgeSet, Graph, HeteroGraph, assemble, edge_difference
from .metrics import roc_auc_binary, roc_auc_macro_ovr
from .optim import AdamState, adam_step
from .perturb import (DecompositionSpec, PerturbationSpec, SplitMasks,
                      decompose, inject_noise, sample_non_edges, split_nodes)
from .seeding import derive_seed, rng_for

VARIANTS = ("lscgnn", "full-only", "target-only", "reg-only", "gcn", "lsc-jaccard")
TASKS = ("node-classification", "link-prediction")

DUAL_VARIANTS = ("lscgnn", "lsc-jaccard")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, parts: dict):
        self.epoch = epoch
        self.parts = parts
        super().__init__(f"non-finite loss at epoch {epoch}: {parts}")


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.005
    hidden: int = 32
    latent: int = 16
    lambda_grid: tuple = (0.0, 0.01, 0.1, 1.0, 10.0)
    seed: int = 0
    variant: str = "lscgnn"
    task: str = "node-classification"
    select_by: str = "auc"       # "auc" or "loss"
    head_loss: str = "ovr-bce"   # "ovr-bce" or "softmax"

    def __post_init__(self):
        if self.epochs <= 0 or self.lr <= 0 or self.hidden <= 0 or self.latent <= 0:
            raise ValueError("epochs, lr, hidden and latent must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.select_by not in ("auc", "loss"):
            raise ValueError(f"unknown select_by {self.select_by!r}")


@dataclass
class ExperimentRecord:
    dataset: str
    target_ratio: float
    perturb_rate: float
    variant: str
    lambda_: float
    seed: int
    best_epoch: int
    val_metric: float
    test_metric: float
    wall_seconds: float

    JSON_KEYS = ("dataset", "target_ratio", "perturb_rate", "variant", "lambda",
                 "seed", "best_epoch", "val_metric", "test_metric", "wall_seconds")

    def to_json_dict(self) -> dict:
        return {"dataset": self.dataset, "target_ratio": self.target_ratio,
                "perturb_rate": self.perturb_rate, "variant": self.variant,
                "lambda": self.lambda_, "seed": self.seed,
                "best_epoch": self.best_epoch, "val_metric": self.val_metric,
                "test_metric": self.test_metric, "wall_seconds": self.wall_seconds}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(dataset=d["dataset"], target_ratio=d["target_ratio"],
                   perturb_rate=d["perturb_rate"], variant=d["variant"],
                   lambda_=d["lambda"], seed=d["seed"], best_epoch=d["best_epoch"],
                   val_metric=d["val_metric"], test_metric=d["test_metric"],
                   wall_seconds=d["wall_seconds"])


# ---------------------------------------------------------------------------
# losses


def reg_loss(z: Tensor, z_prime: Tensor) -> Tensor:
    """Mean squared distance between the two latent matrices, normalized by
    node count times latent width. Gradients flow into both encoders."""
    return ad.mse_mean(z, z_prime)


def target_loss(logits: Tensor, labels, mask, num_classes: int,
                mode: str = "ovr-bce") -> Tensor:
    """Classification loss over the masked rows.

    Default is one-vs-rest binary cross-entropy against one-hot labels,
    averaged over masked rows and classes; ``mode="softmax"`` switches to
    softmax cross-entropy.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("target_loss over an empty mask")
    idx = np.nonzero(mask)[0]
    rows = ad.gather_rows(logits, idx)
    labels = np.asarray(labels, dtype=np.int64)
    if mode == "softmax":
        return ad.softmax_cross_entropy(rows, labels[idx])
    onehot = np.zeros((idx.size, num_classes))
    onehot[np.arange(idx.size), labels[idx]] = 1.0
    return ad.bce_with_logits(rows, Tensor(onehot))


def link_target_loss(z: Tensor, pos_pairs: np.ndarray, neg_pairs: np.ndarray) -> Tensor:
    """Binary cross-entropy on inner-product logits of sampled node pairs."""
    pairs = np.vstack([pos_pairs, neg_pairs])
    logits = ad.rows_dot(ad.gather_rows(z, pairs[:, 0]), ad.gather_rows(z, pairs[:, 1]))
    targets = np.concatenate([np.ones(len(pos_pairs)), np.zeros(len(neg_pairs))])
    return ad.bce_with_logits(logits, Tensor(targets))


# ---------------------------------------------------------------------------
# model


class ClassifierHead:
    """Linear map from latents to per-class logits."""

    def __init__(self, latent: int, num_classes: int, seed: int, path: str = "head"):
        self.path = path
        self.W = init_param(seed, f"{path}/W", (latent, num_classes))
        self.b = init_param(seed, f"{path}/b", (num_classes,))

    def parameters(self):
        return [(f"{self.path}/W", self.W), (f"{self.path}/b", self.b)]

    def apply(self, z: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(z, self.W), self.b)


class InnerProductHead:
    """Parameter-free link decoder: score(u, v) = z_u . z_v."""

    def parameters(self):
        return []

    def scores(self, z: Tensor, pairs: np.ndarray) -> Tensor:
        return ad.rows_dot(ad.gather_rows(z, pairs[:, 0]),
                           ad.gather_rows(z, pairs[:, 1]))


class LscModel:
    """Main encoder, optional regularization encoder, task head, penalty
    weight."""

    def __init__(self, f: Encoder, f_prime: Encoder | None, head, lam: float,
                 head_loss: str = "ovr-bce"):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        if f_prime is not None and f_prime.latent_dim != f.latent_dim:
            raise ValueError(f"latent dims differ: {f.latent_dim} vs {f_prime.latent_dim}")
        self.f = f
        self.f_prime = f_prime
        self.head = head
        self.lam = float(lam)
        self.head_loss = head_loss

    def parameters(self):
        out = list(self.f.parameters())
        if self.f_prime is not None:
            out.extend(self.f_prime.parameters())
        out.extend(self.head.parameters())
        return out


def total_loss(model: LscModel, g_main: Graph, g_reg: Graph | None, labels,
               mask, target_index, num_classes: int):
    """Task loss plus lam times the latent penalty; returns (loss, parts).

    Both latent matrices are restricted to the target-node rows before the
    penalty. Single-encoder models contribute no penalty term.
    """
    z = model.f.encode(g_main)
    z_t = ad.gather_rows(z, target_index)
    logits = model.head.apply(z_t)
    l_target = target_loss(logits, labels, mask, num_classes, mode=model.head_loss)
    if model.f_prime is None:
        return l_target, {"target": l_target.item(), "reg": 0.0}
    z_p = model.f_prime.encode(g_reg)
    z_p_t = ad.gather_rows(z_p, target_index)
    l_reg = reg_loss(z_t, z_p_t)
    total = ad.add(l_target, ad.scale(l_reg, model.lam))
    return total, {"target": l_target.item(), "reg": l_reg.item()}


# ---------------------------------------------------------------------------
# feature-similarity edge filtering


def jaccard_similarities(features: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Jaccard similarity of binarized (x > 0) feature supports per pair."""
    binary = features > 0
    a = binary[pairs[:, 0]]
    b = binary[pairs[:, 1]]
    inter = np.logical_and(a, b).sum(axis=1).astype(np.float64)
    union = np.logical_or(a, b).sum(axis=1).astype(np.float64)
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def jaccard_filter(g: Graph, threshold: float = 0.01) -> Graph:
    """Drop edges whose endpoint feature supports overlap too little."""
    pairs = g.edge_set.pairs
    if not pairs.size:
        return g
    sim = jaccard_similarities(g.features.values, pairs)
    kept = EdgeSet(pairs[sim > threshold])
    return Graph(g.num_nodes, g.features, kept, labels=g.labels,
                 num_classes=g.num_classes)


# ---------------------------------------------------------------------------
# task assembly (variant wiring)


@dataclass
class NodeTask:
    """Everything one node-classification run needs, fixed up front."""
    dataset: str
    g_main: Graph
    g_reg: Graph | None
    target_nodes: np.ndarray
    target_index: np.ndarray      # rows of g_main holding the target nodes
    labels: np.ndarray            # per target node, in target_nodes order
    masks: SplitMasks
    num_classes: int
    target_ratio: float = float("nan")
    perturb_rate: float = float("nan")
    e_target_noisy: EdgeSet = field(repr=False, default=None)
    e_reg: EdgeSet = field(repr=False, default=None)


def prepare_node_task(g: Graph, dataset: str, variant: str, target_ratio: float,
                      perturb_rate: float, master_seed: int,
                      split_ratios=(0.7, 0.1, 0.2),
                      jaccard_threshold: float = 0.01) -> NodeTask:
    """Decompose, perturb, split, and wire the graphs a variant trains on.

    All randomness comes from streams derived from ``master_seed``, one per
    stage, so any stage can be reproduced independently.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if g.labels is None:
        raise ValueError("node classification needs a labelled graph")
    target_nodes, e_t, g_r = decompose(
        g, DecompositionSpec(target_ratio, derive_seed(master_seed, "decompose")))
    e_t_noisy = inject_noise(target_nodes, e_t,
                             PerturbationSpec(perturb_rate, derive_seed(master_seed, "noise")))
    masks = split_nodes(target_nodes, split_ratios, derive_seed(master_seed, "split"))
    e_r = g_r.edge_set
    labels = g.labels[target_nodes]

    if variant == "target-only":
        remap = np.full(g.num_nodes, -1, dtype=np.int64)
        remap[target_nodes] = np.arange(target_nodes.size)
        local_pairs = remap[e_t_noisy.pairs] if len(e_t_noisy) else np.empty((0, 2), np.int64)
        g_main = Graph(target_nodes.size, Tensor(g.features.values[target_nodes]),
                       EdgeSet(local_pairs), labels=labels, num_classes=g.num_classes)
        target_index = np.arange(target_nodes.size)
        g_reg = None
    elif variant == "reg-only":
        g_main = g_r
        target_index = target_nodes
        g_reg = None
    else:
        e_main = e_t_noisy
        if variant == "lsc-jaccard":
            noisy_target = Graph(g.num_nodes, g.features, e_t_noisy)
            e_main = jaccard_filter(noisy_target, jaccard_threshold).edge_set
        g_main = assemble(g.num_nodes, g.features, e_main.union(e_r),
                          labels=g.labels, num_classes=g.num_classes)
        target_index = target_nodes
        g_reg = g_r if variant in DUAL_VARIANTS else None

    return NodeTask(dataset=dataset, g_main=g_main, g_reg=g_reg,
                    target_nodes=target_nodes, target_index=target_index,
                    labels=labels, masks=masks, num_classes=g.num_classes,
                    target_ratio=target_ratio, perturb_rate=perturb_rate,
                    e_target_noisy=e_t_noisy, e_reg=e_r)


def build_model(config: TrainConfig, num_features: int, num_classes: int,
                lam: float) -> LscModel:
    """Model for a node-classification variant: two-layer main encoder,
    one-layer regularization encoder (dual variants only), linear head.

    The main encoder's parameter paths are identical across variants, so
    equal seeds give equal initial weights whether or not the second
    encoder exists.
    """
    kind = "gcn" if config.variant == "gcn" else "gat"
    f = build_encoder(kind, [num_features, config.hidden, config.latent],
                      config.seed, "f")
    f_prime = None
    if config.variant in DUAL_VARIANTS:
        f_prime = build_encoder("gat", [num_features, config.latent],
                                config.seed, "f_prime")
    head = ClassifierHead(config.latent, num_classes, config.seed)
    return LscModel(f, f_prime, head, lam, head_loss=config.head_loss)


# ---------------------------------------------------------------------------
# training loops


def _class_scores(model: LscModel, task: NodeTask) -> np.ndarray:
    with no_grad():
        z = model.f.encode(task.g_main)
        logits = model.head.apply(ad.gather_rows(z, task.target_index))
        return ad.sigmoid(logits).values


def train(model: LscModel, config: TrainConfig, task: NodeTask):
    """Full-batch training with best-validation checkpointing.

    Returns (model restored to its best-validation parameters, record).
    Only the task metric drives validation; the penalty never does.
    """
    named = model.parameters()
    params = [t for _, t in named]
    adam = AdamState(params, lr=config.lr)
    labels = task.labels
    val_mask = task.masks.validation
    best_val = -np.inf
    best_loss = np.inf
    best_epoch = 0
    best_snapshot = None
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        loss, parts = total_loss(model, task.g_main, task.g_reg, labels,
                                 task.masks.train, task.target_index,
                                 task.num_classes)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(epoch, parts)
        backward(loss)
        adam_step(params, adam)

        scores = _class_scores(model, task)
        val_auc = roc_auc_macro_ovr(scores[val_mask], labels[val_mask])
        if config.select_by == "loss":
            with no_grad():
                z = model.f.encode(task.g_main)
                logits = model.head.apply(ad.gather_rows(z, task.target_index))
                vloss = target_loss(logits, labels, val_mask, task.num_classes,
                                    mode=model.head_loss).item()
            improved = vloss < best_loss
            best_loss = min(best_loss, vloss)
        else:
            improved = val_auc > best_val
        if improved:
            best_val = val_auc
            best_epoch = epoch
            best_snapshot = snapshot_params(named)

    restore_params(named, best_snapshot)
    scores = _class_scores(model, task)
    test_mask = task.masks.test
    test_auc = roc_auc_macro_ovr(scores[test_mask], labels[test_mask])
    record = ExperimentRecord(
        dataset=task.dataset, target_ratio=task.target_ratio,
        perturb_rate=task.perturb_rate,
        variant=config.variant, lambda_=model.lam, seed=config.seed,
        best_epoch=best_epoch, val_metric=best_val, test_metric=test_auc,
        wall_seconds=time.perf_counter() - started)
    return model, record


def select_lambda(records) -> float:
    """Lambda with the best validation metric; ties go to the smaller lambda."""
    records = list(records)
    if not records:
        raise ValueError("select_lambda needs at least one record")
    best = max(records, key=lambda r: (r.val_metric, -r.lambda_))
    return best.lambda_


# ---------------------------------------------------------------------------
# heterogeneous link prediction


@dataclass
class LinkTask:
    """One link-prediction run over a typed graph; target type's edges are
    scored by inner products of its latents."""
    dataset: str
    hg_main: HeteroGraph
    hg_reg: HeteroGraph | None
    target_type: str
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    neg_forbidden: EdgeSet
    num_target_nodes: int
    perturb_rate: float = float("nan")


class HeteroLscModel:
    def __init__(self, f: HeteroEncoder, f_prime: HeteroEncoder | None, lam: float):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        if f_prime is not None and f_prime.latent_dim != f.latent_dim:
            raise ValueError("latent dims differ between encoders")
        self.f = f
        self.f_prime = f_prime
        self.head = InnerProductHead()
        self.lam = float(lam)

    def parameters(self):
        out = list(self.f.parameters())
        if self.f_prime is not None:
            out.extend(self.f_prime.parameters())
        return out


def _pair_scores(z_values: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    logits = (z_values[pairs[:, 0]] * z_values[pairs[:, 1]]).sum(axis=1)
    return 1.0 / (1.0 + np.exp(-logits))


def _link_auc(z_values: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
    scores = np.concatenate([_pair_scores(z_values, pos), _pair_scores(z_values, neg)])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return roc_auc_binary(scores, labels.astype(np.int64))


def train_linkpred(model: HeteroLscModel, config: TrainConfig, task: LinkTask):
    """Link-prediction twin of ``train``: per-epoch resampled 1:1 train
    negatives, fixed validation/test negatives, best-val checkpointing."""
    named = model.parameters()
    params = [t for _, t in named]
    adam = AdamState(params, lr=config.lr)
    all_nodes = np.arange(task.num_target_nodes, dtype=np.int64)
    best_val = -np.inf
    best_epoch = 0
    best_snapshot = None
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        neg = sample_non_edges(all_nodes, task.neg_forbidden, len(task.train_pos),
                               rng_for(config.seed, "train-neg", epoch))
        z = model.f.encode(task.hg_main)[task.target_type]
        l_target = link_target_loss(z, task.train_pos, neg.pairs)
        if model.f_prime is not None:
            z_p = model.f_prime.encode(task.hg_reg)[task.target_type]
            loss = ad.add(l_target, ad.scale(reg_loss(z, z_p), model.lam))
        else:
            loss = l_target
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(epoch, {"target": l_target.item()})
        backward(loss)
        # Weights that only feed non-target node types at the last depth are
        # unreachable from this loss; their gradient is exactly zero.
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.values)
        adam_step(params, adam)

        with no_grad():
            zv = model.f.encode(task.hg_main)[task.target_type].values
        val_auc = _link_auc(zv, task.val_pos, task.val_neg)
        if val_auc > best_val:
            best_val = val_auc
            best_epoch = epoch
            best_snapshot = snapshot_params(named)

    restore_params(named, best_snapshot)
    with no_grad():
        zv = model.f.encode(task.hg_main)[task.target_type].values
    test_auc = _link_auc(zv, task.test_pos, task.test_neg)
    record = ExperimentRecord(
        dataset=task.dataset, target_ratio=1.0, perturb_rate=task.perturb_rate,
        variant=config.variant, lambda_=model.lam, seed=config.seed,
        best_epoch=best_epoch, val_metric=best_val, test_metric=test_auc,
        wall_seconds=time.perf_counter() - started)
    return model, record
