"""Noise-robust graph learning via latent-space constrained dual encoders."""

from .autodiff import Tensor, backward, no_grad
from .graphs import EdgeSet, Graph, HeteroGraph, assemble, edge_difference, \
    induced_edges, with_self_loops
from .bundles import BundleError, load_bundle, write_bundle
from .perturb import DecompositionSpec, PerturbationSpec, SplitMasks, decompose, \
    inject_noise, split_edges_for_linkpred, split_nodes, synth_hetero
from .encoders import Encoder, GatLayer, GcnLayer, HeteroEncoder, SageLayer, \
    build_encoder
from .training import ExperimentRecord, LscModel, TrainConfig, jaccard_filter, \
    prepare_node_task, reg_loss, select_lambda, target_loss, total_loss, train
from .metrics import accuracy, aggregate, roc_auc_binary, roc_auc_macro_ovr

__version__ = "0.1.0"
