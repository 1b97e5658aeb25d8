"""Message-passing layers (attention, spectral-normalized, mean-aggregation)
stacked into encoders, plus the typed-relation encoder for heterogeneous
graphs.

Hidden layers use ELU; the final layer is linear so the latent space is
unconstrained. Parameters are Glorot-uniform, drawn from an RNG stream keyed
by (seed, parameter path), so a parameter's initial value depends only on its
name, never on which other parameters exist.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph, HeteroGraph, with_self_loops
from .seeding import rng_for


def glorot(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_param(seed: int, path: str, shape) -> Tensor:
    """Glorot-uniform parameter from the (seed, path)-keyed stream."""
    t = Tensor(glorot(shape, rng_for(seed, "init", path)), requires_grad=True)
    return t


def _apply_activation(x: Tensor, activation: str) -> Tensor:
    if activation == "elu":
        return ad.elu(x)
    if activation == "identity":
        return x
    raise ValueError(f"unknown activation {activation!r}")


class GatLayer:
    """Single-head attention layer: per-edge scores from concatenated
    transformed endpoint features, softmax-normalized per neighborhood."""

    needs_self_loops = True

    def __init__(self, f_in: int, f_out: int, seed: int, path: str,
                 leaky_slope: float = 0.2):
        self.f_in = f_in
        self.f_out = f_out
        self.leaky_slope = leaky_slope
        self.path = path
        self.W = init_param(seed, f"{path}/W", (f_in, f_out))
        self.a = init_param(seed, f"{path}/a", (2 * f_out,))

    def parameters(self):
        return [(f"{self.path}/W", self.W), (f"{self.path}/a", self.a)]

    def _scores(self, h: Tensor, adj: Graph):
        # a^T [wh_i || wh_j] splits into per-endpoint projections, so the
        # per-edge work stays on vectors instead of (E, 2*F_out) blocks.
        rows, cols = adj.directed_pairs()
        wh = ad.matmul(h, self.W)
        a2d = ad.reshape(self.a, (2, self.f_out))
        s_i = ad.matmul(wh, ad.reshape(ad.gather_rows(a2d, [0]), (self.f_out, 1)))
        s_j = ad.matmul(wh, ad.reshape(ad.gather_rows(a2d, [1]), (self.f_out, 1)))
        raw = ad.reshape(ad.add(ad.gather_rows(s_i, rows), ad.gather_rows(s_j, cols)),
                         (rows.size,))
        return wh, ad.leaky_relu(raw, self.leaky_slope), rows, cols

    def attention_scores(self, h: Tensor, adj: Graph) -> Tensor:
        """Unnormalized per-edge scores, one per CSR entry of ``adj``."""
        return self._scores(h, adj)[1]

    def forward(self, h: Tensor, adj: Graph, activation: str = "elu") -> Tensor:
        wh, scores, rows, cols = self._scores(h, adj)
        alpha = ad.segment_softmax(scores, rows)
        msg = ad.scale_rows(ad.gather_rows(wh, cols), alpha)
        agg = ad.scatter_sum(msg, rows, adj.num_nodes)
        return _apply_activation(agg, activation)


class GcnLayer:
    """Convolution with symmetric degree normalization over self-looped
    adjacency."""

    needs_self_loops = True

    def __init__(self, f_in: int, f_out: int, seed: int, path: str):
        self.f_in = f_in
        self.f_out = f_out
        self.path = path
        self.W = init_param(seed, f"{path}/W", (f_in, f_out))

    def parameters(self):
        return [(f"{self.path}/W", self.W)]

    def forward(self, h: Tensor, adj: Graph, activation: str = "elu") -> Tensor:
        rows, cols = adj.directed_pairs()
        deg = adj.degrees().astype(np.float64)
        norm = 1.0 / np.sqrt(deg[rows] * deg[cols])
        wh = ad.matmul(h, self.W)
        msg = ad.scale_rows(ad.gather_rows(wh, cols), Tensor(norm))
        agg = ad.scatter_sum(msg, rows, adj.num_nodes)
        return _apply_activation(agg, activation)


class SageLayer:
    """Self transform plus mean-aggregated neighbor transform; the mean over
    an empty neighborhood is the zero vector."""

    needs_self_loops = False

    def __init__(self, f_in: int, f_out: int, seed: int, path: str):
        self.f_in = f_in
        self.f_out = f_out
        self.path = path
        self.W_self = init_param(seed, f"{path}/W_self", (f_in, f_out))
        self.W_neigh = init_param(seed, f"{path}/W_neigh", (f_in, f_out))

    def parameters(self):
        return [(f"{self.path}/W_self", self.W_self),
                (f"{self.path}/W_neigh", self.W_neigh)]

    def forward(self, h: Tensor, adj: Graph, activation: str = "elu") -> Tensor:
        rows, cols = adj.directed_pairs()
        deg = adj.degrees().astype(np.float64)
        inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        total = ad.scatter_sum(ad.gather_rows(h, cols), rows, adj.num_nodes)
        mean = ad.scale_rows(total, Tensor(inv_deg))
        out = ad.add(ad.matmul(h, self.W_self), ad.matmul(mean, self.W_neigh))
        return _apply_activation(out, activation)


class Encoder:
    """Stack of message-passing layers mapping node features to latents."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("encoder needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.f_out != nxt.f_in:
                raise ValueError(
                    f"layer dims do not chain: {prev.f_out} -> {nxt.f_in}")
        self.layers = list(layers)

    @property
    def latent_dim(self) -> int:
        return self.layers[-1].f_out

    @property
    def input_dim(self) -> int:
        return self.layers[0].f_in

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def encode(self, g: Graph) -> Tensor:
        if g.num_features != self.input_dim:
            raise ValueError(
                f"graph has {g.num_features} features, encoder expects {self.input_dim}")
        needs_loops = any(l.needs_self_loops for l in self.layers)
        if needs_loops and not g.has_self_loops:
            adj_looped = getattr(g, "_looped_view", None)
            if adj_looped is None:
                adj_looped = with_self_loops(g)
                g._looped_view = adj_looped  # graphs are immutable; view is reusable
        else:
            adj_looped = g
        h = g.features
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            adj = adj_looped if layer.needs_self_loops else g
            h = layer.forward(h, adj, activation="elu" if i < last else "identity")
        return h


_LAYER_KINDS = {"gat": GatLayer, "gcn": GcnLayer, "sage": SageLayer}


def build_encoder(kind: str, dims, seed: int, prefix: str) -> Encoder:
    """Encoder of ``kind`` with widths dims[0] -> dims[1] -> ... -> dims[-1]."""
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}")
    if len(dims) < 2:
        raise ValueError("dims must list input and at least one output width")
    cls = _LAYER_KINDS[kind]
    layers = [cls(dims[i], dims[i + 1], seed, f"{prefix}/layer{i}")
              for i in range(len(dims) - 1)]
    return Encoder(layers)


class HeteroEncoder:
    """Per-relation mean-aggregation layers with node-level summation.

    At every depth each node type gets one self transform; each relation gets
    its own neighbor transform whose output is summed into the relation's
    destination type. When per-type feature widths differ, a learned linear
    projection per type maps inputs to a common width first.
    """

    def __init__(self, type_dims: dict[str, int], relation_keys, widths,
                 seed: int, prefix: str):
        if len(widths) < 1:
            raise ValueError("need at least one layer width")
        self.type_names = list(type_dims)
        self.relation_keys = list(relation_keys)
        for src_t, _name, dst_t in self.relation_keys:
            if src_t not in type_dims or dst_t not in type_dims:
                raise ValueError(f"relation references unknown node type: {src_t} or {dst_t}")
        self.widths = list(widths)
        self.prefix = prefix
        self._params = []

        dims = set(type_dims.values())
        self.projections = {}
        if len(dims) > 1:
            proj_dim = self.widths[0]
            in_dims = [proj_dim] + self.widths
            for t in self.type_names:
                p = init_param(seed, f"{prefix}/proj/{t}", (type_dims[t], proj_dim))
                self.projections[t] = p
                self._params.append((f"{prefix}/proj/{t}", p))
        else:
            in_dims = [dims.pop()] + self.widths

        self.self_weights = []   # depth -> {type: Tensor}
        self.neigh_weights = []  # depth -> {relation key: Tensor}
        for k in range(len(self.widths)):
            f_in, f_out = in_dims[k], in_dims[k + 1]
            selfs = {}
            for t in self.type_names:
                p = init_param(seed, f"{prefix}/depth{k}/self/{t}", (f_in, f_out))
                selfs[t] = p
                self._params.append((f"{prefix}/depth{k}/self/{t}", p))
            neighs = {}
            for key in self.relation_keys:
                src_t, name, dst_t = key
                p = init_param(seed, f"{prefix}/depth{k}/rel/{src_t}__{name}__{dst_t}",
                               (f_in, f_out))
                neighs[key] = p
                self._params.append(
                    (f"{prefix}/depth{k}/rel/{src_t}__{name}__{dst_t}", p))
            self.self_weights.append(selfs)
            self.neigh_weights.append(neighs)

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    def parameters(self):
        return list(self._params)

    def encode(self, hg: HeteroGraph) -> dict[str, Tensor]:
        for key in hg.relations:
            if key not in self.neigh_weights[0]:
                raise ValueError(f"graph relation {key} has no layer in this encoder")
        for key in self.relation_keys:
            if key not in hg.relations:
                raise ValueError(f"encoder expects relation {key}, absent from graph")

        h = {t: hg.node_features[t] for t in self.type_names}
        if self.projections:
            h = {t: ad.matmul(h[t], self.projections[t]) for t in self.type_names}
        last = len(self.widths) - 1
        for k in range(len(self.widths)):
            updated = {}
            for t in self.type_names:
                updated[t] = ad.matmul(h[t], self.self_weights[k][t])
            for key in self.relation_keys:
                src_t, _name, dst_t = key
                rel = hg.relations[key]
                rows, cols = rel.directed_pairs()
                n_dst = hg.num_nodes(dst_t)
                deg = np.diff(rel.csr_offsets).astype(np.float64)
                inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
                total = ad.scatter_sum(ad.gather_rows(h[src_t], cols), rows, n_dst)
                mean = ad.scale_rows(total, Tensor(inv_deg))
                updated[dst_t] = ad.add(updated[dst_t],
                                        ad.matmul(mean, self.neigh_weights[k][key]))
            activation = "elu" if k < last else "identity"
            h = {t: _apply_activation(updated[t], activation) for t in self.type_names}
        return h


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(params, path: str) -> None:
    """Write (path -> shape, row-major values) as JSON; round trip is
    bit-exact because floats serialize via repr."""
    payload = {name: {"shape": list(t.shape), "values": t.values.reshape(-1).tolist()}
               for name, t in params}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload.items()}


def restore_params(params, values: dict[str, np.ndarray]) -> None:
    for name, t in params:
        if name not in values:
            raise KeyError(f"checkpoint is missing parameter {name}")
        if tuple(values[name].shape) != t.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: "
                             f"{values[name].shape} vs {t.shape}")
        t.values[...] = values[name]


def snapshot_params(params) -> dict[str, np.ndarray]:
    return {name: t.values.copy() for name, t in params}
