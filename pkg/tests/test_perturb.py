"""Decomposition, noise injection, splits, and the synthetic hetero generator."""

import numpy as np
import pytest

from lscgnn.autodiff import Tensor
from lscgnn.graphs import EdgeSet, Graph, edge_difference
from lscgnn.perturb import (DecompositionSpec, PerturbationSpec, SplitMasks,
                            decompose, inject_noise, sample_non_edges,
                            split_edges_for_linkpred, split_nodes, synth_hetero)


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, k=1)
    mask = rng.random(iu.size) < p
    return Graph(n, Tensor(rng.random((n, 3))),
                 EdgeSet(np.column_stack([iu[mask], iv[mask]])),
                 labels=rng.integers(0, 3, n), num_classes=3)


class TestDecompose:
    def test_ratio_one_takes_everything(self):
        g = random_graph(10, 0.4, 0)
        target, e_t, g_r = decompose(g, DecompositionSpec(1.0, seed=1))
        assert target.tolist() == list(range(10))
        assert e_t == g.edge_set
        assert g_r.num_edges == 0

    def test_path_hand_case(self):
        g = Graph(3, Tensor(np.zeros((3, 2))), EdgeSet([(0, 1), (1, 2)]))
        # Find a seed whose 2-node sample is {0, 1}.
        for seed in range(50):
            target, e_t, g_r = decompose(g, DecompositionSpec(2 / 3, seed=seed))
            if target.tolist() == [0, 1]:
                assert e_t.pairs.tolist() == [[0, 1]]
                assert g_r.edge_set.pairs.tolist() == [[1, 2]]
                assert g_r.num_nodes == 3
                break
        else:
            pytest.fail("no seed sampled {0,1}")

    def test_partition_property_over_seeds(self):
        g = random_graph(25, 0.25, 7)
        for seed in range(100):
            target, e_t, g_r = decompose(g, DecompositionSpec(0.6, seed=seed))
            e_r = g_r.edge_set
            assert len(e_t.intersection(e_r)) == 0
            assert e_t.union(e_r) == g.edge_set

    def test_zero_target_rejected(self):
        g = random_graph(10, 0.3, 1)
        with pytest.raises(ValueError, match="0"):
            decompose(g, DecompositionSpec(0.01, seed=0))


class TestInjectNoise:
    def test_rate_zero_is_identity(self):
        e = EdgeSet([(0, 1), (2, 3)])
        assert inject_noise(np.arange(5), e, PerturbationSpec(0.0, 1)) == e

    def test_exact_count_and_disjointness(self):
        g = random_graph(12, 0.2, 3)
        target = np.arange(12)
        e_t = g.edge_set
        while len(e_t) > 10:
            e_t = EdgeSet(e_t.pairs[:10])
        assert len(e_t) == 10
        out = inject_noise(target, e_t, PerturbationSpec(0.3, seed=5))
        injected = edge_difference(out, e_t)
        assert len(injected) == 3
        assert len(out) == 13
        assert len(injected.intersection(e_t)) == 0

    def test_complete_graph_has_no_room(self):
        iu, iv = np.triu_indices(5, k=1)
        k5 = EdgeSet(np.column_stack([iu, iv]))
        with pytest.raises(ValueError, match="only 0"):
            inject_noise(np.arange(5), k5, PerturbationSpec(0.3, seed=1))

    def test_deterministic_per_seed(self):
        g = random_graph(20, 0.2, 9)
        a = inject_noise(np.arange(20), g.edge_set, PerturbationSpec(0.25, seed=11))
        b = inject_noise(np.arange(20), g.edge_set, PerturbationSpec(0.25, seed=11))
        assert a == b

    def test_count_invariant_over_random_tuples(self):
        for trial in range(25):
            g = random_graph(15, 0.3, 200 + trial)
            rate = [0.0, 0.1, 0.2, 0.3][trial % 4]
            out = inject_noise(np.arange(15), g.edge_set,
                               PerturbationSpec(rate, seed=trial))
            assert len(out) == len(g.edge_set) + int(rate * len(g.edge_set))

    def test_rejection_branch_properties(self):
        # Large sparse candidate space routes through rejection sampling.
        nodes = np.arange(1000)
        existing = EdgeSet([(0, 1), (1, 2)])
        got = sample_non_edges(nodes, existing, 50, np.random.default_rng(3))
        assert len(got) == 50
        assert len(got.intersection(existing)) == 0


class TestSplitNodes:
    def test_floor_then_remainder_to_train(self):
        masks = split_nodes(np.arange(10), (0.7, 0.1, 0.2), seed=0)
        assert masks.train.sum() == 7
        assert masks.validation.sum() == 1
        assert masks.test.sum() == 2

    def test_same_seed_identical(self):
        a = split_nodes(np.arange(50), (0.7, 0.1, 0.2), seed=4)
        b = split_nodes(np.arange(50), (0.7, 0.1, 0.2), seed=4)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.validation, b.validation)
        assert np.array_equal(a.test, b.test)

    def test_thousand_node_proportions(self):
        masks = split_nodes(np.arange(1000), (0.7, 0.1, 0.2), seed=1)
        assert masks.train.sum() == 700
        assert masks.validation.sum() == 100
        assert masks.test.sum() == 200

    def test_too_few_nodes_rejected(self):
        with pytest.raises(ValueError):
            split_nodes(np.arange(2), (0.7, 0.1, 0.2), seed=0)

    def test_masks_validated(self):
        with pytest.raises(ValueError, match="disjoint"):
            SplitMasks([True, True], [True, False], [False, False])


class TestSplitEdgesForLinkpred:
    def test_size_arithmetic(self):
        pos = EdgeSet([(i, i + 1) for i in range(0, 20, 2)])  # 10 edges
        split = split_edges_for_linkpred(pos, (0.5, 0.2, 0.3), seed=0, num_nodes=20)
        assert split.masks.train.sum() == 5
        assert split.masks.validation.sum() == 2
        assert split.masks.test.sum() == 3
        assert len(split.val_negatives) == 2
        assert len(split.test_negatives) == 3

    def test_negatives_never_positive(self):
        for seed in range(30):
            g = random_graph(12, 0.3, 400 + seed)
            if len(g.edge_set) < 3:
                continue
            split = split_edges_for_linkpred(g.edge_set, (0.5, 0.2, 0.3),
                                             seed=seed, num_nodes=12)
            assert len(split.val_negatives.intersection(g.edge_set)) == 0
            assert len(split.test_negatives.intersection(g.edge_set)) == 0
            assert len(split.val_negatives.intersection(split.test_negatives)) == 0

    def test_negative_sampling_uniform_chi_square(self):
        # 4-node toy: positives {(0,1),(2,3)} leave 4 candidate non-edges.
        scipy_stats = pytest.importorskip("scipy.stats")
        pos = EdgeSet([(0, 1), (2, 3)])
        counts = {}
        for draw in range(10_000):
            got = sample_non_edges(np.arange(4), pos, 1,
                                   np.random.default_rng(draw))
            pair = tuple(got.pairs[0].tolist())
            counts[pair] = counts.get(pair, 0) + 1
        assert len(counts) == 4
        _stat, p = scipy_stats.chisquare(list(counts.values()))
        assert p > 0.01


class TestSynthHetero:
    def test_zero_noise_keeps_bb_clean(self):
        clean, noisy = synth_hetero(20, 25, seed=3, noise_rate=0.0)
        key = ("B", "bb", "B")
        assert np.array_equal(clean.relations[key].csr_targets,
                              noisy.relations[key].csr_targets)

    def test_noise_adds_only_bb_edges(self):
        clean, noisy = synth_hetero(20, 40, seed=5, noise_rate=0.3)
        for key in clean.relations:
            if key == ("B", "bb", "B"):
                assert noisy.relations[key].num_edges > clean.relations[key].num_edges
            else:
                assert np.array_equal(noisy.relations[key].csr_targets,
                                      clean.relations[key].csr_targets)

    def test_within_cluster_bb_fraction_dominates(self):
        clean, _ = synth_hetero(50, 200, seed=1, noise_rate=0.0, clusters=4)
        cb = clean.meta["clusters_b"]
        rel = clean.relations[("B", "bb", "B")]
        rows, cols = rel.directed_pairs()
        same = (cb[rows] == cb[cols]).sum()
        cross = rows.size - same
        # Normalize by the number of available pairs of each kind.
        same_pairs = sum(int(c) * (int(c) - 1) / 2 for c in np.bincount(cb))
        total_pairs = 200 * 199 / 2
        frac_within = same / 2 / same_pairs
        frac_cross = cross / 2 / (total_pairs - same_pairs)
        assert frac_within > frac_cross

    def test_same_seed_bitwise_identical(self):
        a_clean, a_noisy = synth_hetero(15, 18, seed=9, noise_rate=0.2)
        b_clean, b_noisy = synth_hetero(15, 18, seed=9, noise_rate=0.2)
        for a, b in ((a_clean, b_clean), (a_noisy, b_noisy)):
            for t in ("A", "B"):
                assert np.array_equal(a.node_features[t].values,
                                      b.node_features[t].values)
            for key in a.relations:
                assert np.array_equal(a.relations[key].csr_targets,
                                      b.relations[key].csr_targets)

    def test_minimum_sizes(self):
        with pytest.raises(ValueError):
            synth_hetero(5, 20, seed=0, noise_rate=0.0)
