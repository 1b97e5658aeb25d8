"""Losses vs loop oracles, variant wiring, training-loop contracts,
degenerate-lambda equivalence, and the feature-similarity filter."""

import math

import numpy as np
import pytest

from lscgnn import autodiff as ad
from lscgnn.autodiff import Tensor, no_grad
from lscgnn.graphs import EdgeSet, Graph
from lscgnn.synthdata import synth_citation
from lscgnn.training import (ExperimentRecord, LscModel, TrainConfig,
                             TrainingDiverged, build_model, jaccard_filter,
                             jaccard_similarities, link_target_loss,
                             prepare_node_task, reg_loss, select_lambda,
                             target_loss, total_loss, train)

from gradcheck import check_grads


def toy_graph(seed=0):
    return synth_citation(num_nodes=60, num_features=20, num_classes=3,
                          avg_degree=4.0, seed=seed, homophily=0.9,
                          tokens_per_node=5, token_flip=0.3)


def toy_config(**kw):
    defaults = dict(epochs=20, lr=0.01, hidden=8, latent=4, seed=3,
                    variant="lscgnn")
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestRegLoss:
    def test_zero_when_equal(self):
        z = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        assert reg_loss(z, Tensor(z.values.copy())).item() == 0.0

    def test_definition_all_ones_diff(self):
        z = Tensor(np.ones((2, 2)))
        zp = Tensor(np.zeros((2, 2)))
        assert reg_loss(z, zp).item() == 1.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(100):
            n, l = rng.integers(1, 8), rng.integers(1, 6)
            a = rng.normal(size=(n, l))
            b = rng.normal(size=(n, l))
            expect = 0.0
            for k in range(n):
                for m in range(l):
                    expect += (a[k, m] - b[k, m]) ** 2
            expect /= n * l
            got = reg_loss(Tensor(a), Tensor(b)).item()
            assert abs(got - expect) <= 1e-12

    def test_nonneg_symmetric(self):
        rng = np.random.default_rng(5)
        for trial in range(50):
            a = Tensor(rng.normal(size=(3, 4)))
            b = Tensor(rng.normal(size=(3, 4)))
            v = reg_loss(a, b).item()
            assert v >= 0.0
            assert v == reg_loss(b, a).item()


def ovr_bce_oracle(logits, labels, mask, n_classes):
    total, count = 0.0, 0
    for i in np.nonzero(mask)[0]:
        for c in range(n_classes):
            t = 1.0 if labels[i] == c else 0.0
            x = logits[i, c]
            total += max(x, 0.0) + math.log1p(math.exp(-abs(x))) - t * x
            count += 1
    return total / count


class TestTargetLoss:
    def test_perfect_logits_saturate(self):
        labels = np.array([0, 1, 2])
        logits = Tensor(np.where(np.eye(3, dtype=bool), 100.0, -100.0))
        loss = target_loss(logits, labels, [True] * 3, 3)
        assert loss.item() < 1e-8

    def test_zero_logits_give_ln2(self):
        loss = target_loss(Tensor(np.zeros((4, 5))), np.zeros(4, dtype=int),
                           [True] * 4, 5)
        assert abs(loss.item() - math.log(2.0)) < 1e-15

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(30):
            n, c = 7, 4
            logits = rng.normal(size=(n, c))
            labels = rng.integers(0, c, n)
            mask = rng.random(n) < 0.6
            if not mask.any():
                mask[0] = True
            got = target_loss(Tensor(logits), labels, mask, c).item()
            assert abs(got - ovr_bce_oracle(logits, labels, mask, c)) <= 1e-12

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            target_loss(Tensor(np.zeros((3, 2))), [0, 1, 0], [False] * 3, 2)

    def test_softmax_mode(self):
        logits = Tensor(np.zeros((2, 4)))
        loss = target_loss(logits, [0, 3], [True, True], 4, mode="softmax")
        assert abs(loss.item() - math.log(4.0)) < 1e-12

    def test_link_loss_is_bce_over_pairs(self):
        z = Tensor(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]))
        pos = np.array([[0, 1]])   # score 1
        neg = np.array([[0, 2]])   # score -1
        got = link_target_loss(z, pos, neg).item()
        expect = 0.5 * (math.log1p(math.exp(-1.0)) + math.log1p(math.exp(-1.0)))
        assert abs(got - expect) <= 1e-12


class TestTotalLoss:
    def setup_method(self):
        self.g = toy_graph()
        self.task = prepare_node_task(self.g, "toy", "lscgnn", 0.7, 0.2,
                                      master_seed=5)

    def test_lambda_zero_equals_target_exactly(self):
        cfg = toy_config()
        model = build_model(cfg, self.g.num_features, self.g.num_classes, lam=0.0)
        loss, parts = total_loss(model, self.task.g_main, self.task.g_reg,
                                 self.task.labels, self.task.masks.train,
                                 self.task.target_index, self.task.num_classes)
        assert loss.item() == parts["target"]

    def test_lambda_one_sum_matches(self):
        cfg = toy_config()
        model = build_model(cfg, self.g.num_features, self.g.num_classes, lam=1.0)
        loss, parts = total_loss(model, self.task.g_main, self.task.g_reg,
                                 self.task.labels, self.task.masks.train,
                                 self.task.target_index, self.task.num_classes)
        assert abs(loss.item() - (parts["target"] + parts["reg"])) <= 1e-15

    def test_lambda_ten_matches_independent_recomputation(self):
        cfg = toy_config()
        model = build_model(cfg, self.g.num_features, self.g.num_classes, lam=10.0)
        loss, _ = total_loss(model, self.task.g_main, self.task.g_reg,
                             self.task.labels, self.task.masks.train,
                             self.task.target_index, self.task.num_classes)
        with no_grad():
            z = model.f.encode(self.task.g_main)
            z_t = ad.gather_rows(z, self.task.target_index)
            logits = model.head.apply(z_t)
            l_t = target_loss(logits, self.task.labels, self.task.masks.train,
                              self.task.num_classes).item()
            z_p = model.f_prime.encode(self.task.g_reg)
            z_p_t = ad.gather_rows(z_p, self.task.target_index)
            l_r = reg_loss(z_t, z_p_t).item()
        assert abs(loss.item() - (l_t + 10.0 * l_r)) <= 1e-12

    def test_gradients_reach_both_encoders(self):
        # Small dedicated toy keeps the finite-difference sweep fast.
        g = synth_citation(num_nodes=10, num_features=4, num_classes=2,
                           avg_degree=3.0, seed=2, tokens_per_node=2)
        task = prepare_node_task(g, "toy", "lscgnn", 0.8, 0.2, master_seed=1)
        cfg = toy_config(hidden=3, latent=2)
        model = build_model(cfg, g.num_features, g.num_classes, lam=1.0)
        tensors = [t for _, t in model.parameters()]

        def loss():
            value, _ = total_loss(model, task.g_main, task.g_reg, task.labels,
                                  task.masks.train, task.target_index,
                                  task.num_classes)
            return value

        check_grads(loss, tensors, tol=1e-4)


class TestVariantWiring:
    def setup_method(self):
        self.g = toy_graph(seed=1)

    def dispatch(self, variant):
        return prepare_node_task(self.g, "toy", variant, 0.7, 0.2, master_seed=9)

    def test_target_only_never_reads_external_edges(self):
        task = self.dispatch("target-only")
        assert task.g_reg is None
        assert task.g_main.num_nodes == task.target_nodes.size
        assert len(task.g_main.edge_set) == len(task.e_target_noisy)

    def test_reg_only_never_reads_target_edges(self):
        task = self.dispatch("reg-only")
        assert task.g_reg is None
        assert len(task.g_main.edge_set.intersection(task.e_target_noisy)) == 0
        assert task.g_main.edge_set == task.e_reg

    def test_full_only_unions_everything(self):
        task = self.dispatch("full-only")
        assert task.g_reg is None
        assert task.g_main.edge_set == task.e_target_noisy.union(task.e_reg)

    def test_dual_reads_both(self):
        task = self.dispatch("lscgnn")
        assert task.g_reg is not None
        assert task.g_main.edge_set == task.e_target_noisy.union(task.e_reg)
        assert task.g_reg.edge_set == task.e_reg

    def test_jaccard_filters_only_target_edges(self):
        task = self.dispatch("lsc-jaccard")
        kept = task.g_main.edge_set
        assert len(kept.difference(task.e_target_noisy.union(task.e_reg))) == 0
        # external edges are never dropped
        assert len(task.e_reg.difference(kept)) == 0

    def test_parameter_count_roughly_doubles(self):
        cfg_full = toy_config(variant="full-only")
        cfg_dual = toy_config(variant="lscgnn")
        full = build_model(cfg_full, self.g.num_features, self.g.num_classes, 0.0)
        dual = build_model(cfg_dual, self.g.num_features, self.g.num_classes, 0.0)
        n_full = sum(t.size for _, t in full.parameters())
        n_dual = sum(t.size for _, t in dual.parameters())
        n_fprime = sum(t.size for _, t in dual.f_prime.parameters())
        n_head = sum(t.size for _, t in full.head.parameters())
        assert n_dual == n_full + n_fprime
        assert n_dual < 2 * n_full
        assert n_dual > 2 * (n_full - n_head) - n_full  # same order as 2x encoder

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            prepare_node_task(self.g, "toy", "mystery", 0.7, 0.2, master_seed=0)
        with pytest.raises(ValueError, match="variant"):
            TrainConfig(variant="mystery")


class TestJaccardFilter:
    def test_identical_rows_kept(self):
        feats = np.tile([[1.0, 0.0, 1.0]], (2, 1))
        g = Graph(2, Tensor(feats), EdgeSet([(0, 1)]))
        assert len(jaccard_filter(g, 0.01).edge_set) == 1

    def test_disjoint_supports_removed(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = Graph(2, Tensor(feats), EdgeSet([(0, 1)]))
        assert len(jaccard_filter(g, 0.01).edge_set) == 0

    def test_matches_set_overlap_oracle(self):
        rng = np.random.default_rng(10)
        feats = (rng.random((20, 12)) < 0.3).astype(float)
        iu, iv = np.triu_indices(20, k=1)
        pairs = np.column_stack([iu, iv])[rng.random(iu.size) < 0.2]
        sims = jaccard_similarities(feats, pairs)
        for k, (u, v) in enumerate(pairs):
            a = {i for i in range(12) if feats[u, i] > 0}
            b = {i for i in range(12) if feats[v, i] > 0}
            expect = len(a & b) / len(a | b) if (a | b) else 0.0
            assert abs(sims[k] - expect) <= 1e-15


class TestSelectLambda:
    def rec(self, lam, val):
        return ExperimentRecord("d", 0.7, 0.2, "lscgnn", lam, 0, 1, val, 0.0, 0.0)

    def test_single(self):
        assert select_lambda([self.rec(0.1, 0.8)]) == 0.1

    def test_best_wins(self):
        assert select_lambda([self.rec(0.0, 0.8), self.rec(1.0, 0.9)]) == 1.0

    def test_tie_goes_to_smaller(self):
        assert select_lambda([self.rec(0.0, 0.9), self.rec(10.0, 0.9)]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_lambda([])


class TestTrainLoop:
    def test_one_epoch_contract(self):
        g = toy_graph(seed=2)
        task = prepare_node_task(g, "toy", "full-only", 0.7, 0.0, master_seed=4)
        cfg = toy_config(epochs=1, variant="full-only")
        model = build_model(cfg, g.num_features, g.num_classes, 0.0)
        model, record = train(model, cfg, task)
        assert record.best_epoch == 1

        # The checkpoint equals the parameters after exactly one manual step.
        ref = build_model(cfg, g.num_features, g.num_classes, 0.0)
        from lscgnn.optim import AdamState, adam_step
        named = ref.parameters()
        params = [t for _, t in named]
        adam = AdamState(params, lr=cfg.lr)
        loss, _ = total_loss(ref, task.g_main, task.g_reg, task.labels,
                             task.masks.train, task.target_index, task.num_classes)
        ad.backward(loss)
        adam_step(params, adam)
        for (name_a, ta), (name_b, tb) in zip(model.parameters(), named):
            assert name_a == name_b
            assert np.array_equal(ta.values, tb.values)

    def test_determinism_identical_records(self):
        g = toy_graph(seed=3)
        task = prepare_node_task(g, "toy", "lscgnn", 0.7, 0.1, master_seed=6)
        cfg = toy_config(epochs=10)
        runs = []
        for _ in range(2):
            model = build_model(cfg, g.num_features, g.num_classes, 0.1)
            _, record = train(model, cfg, task)
            runs.append(record)
        a, b = runs
        assert a.val_metric == b.val_metric
        assert a.test_metric == b.test_metric
        assert a.best_epoch == b.best_epoch

    def test_lambda_zero_bitwise_equals_full_only(self):
        g = toy_graph(seed=4)
        seed = 11
        task_dual = prepare_node_task(g, "toy", "lscgnn", 0.7, 0.2, master_seed=seed)
        task_full = prepare_node_task(g, "toy", "full-only", 0.7, 0.2, master_seed=seed)
        cfg_dual = toy_config(epochs=15, seed=seed, variant="lscgnn")
        cfg_full = toy_config(epochs=15, seed=seed, variant="full-only")
        m_dual = build_model(cfg_dual, g.num_features, g.num_classes, 0.0)
        m_full = build_model(cfg_full, g.num_features, g.num_classes, 0.0)
        m_dual, rec_dual = train(m_dual, cfg_dual, task_dual)
        m_full, rec_full = train(m_full, cfg_full, task_full)

        with no_grad():
            z_dual = m_dual.f.encode(task_dual.g_main)
            z_full = m_full.f.encode(task_full.g_main)
            logits_dual = m_dual.head.apply(
                ad.gather_rows(z_dual, task_dual.target_index)).values
            logits_full = m_full.head.apply(
                ad.gather_rows(z_full, task_full.target_index)).values
        assert np.array_equal(logits_dual, logits_full)
        assert rec_dual.test_metric == rec_full.test_metric
        # f' received exactly zero gradient, so it never moved
        init_fprime = build_model(cfg_dual, g.num_features, g.num_classes, 0.0)
        for (pa, ta), (pb, tb) in zip(m_dual.f_prime.parameters(),
                                      init_fprime.f_prime.parameters()):
            assert np.array_equal(ta.values, tb.values)

    def test_monotone_pressure_on_reg_loss(self):
        g = toy_graph(seed=5)
        task = prepare_node_task(g, "toy", "lscgnn", 0.7, 0.2, master_seed=8)
        cfg = toy_config(epochs=120, seed=13)

        def final_reg(lam):
            model = build_model(cfg, g.num_features, g.num_classes, lam)
            model, _ = train(model, cfg, task)
            with no_grad():
                z = ad.gather_rows(model.f.encode(task.g_main), task.target_index)
                zp = ad.gather_rows(model.f_prime.encode(task.g_reg),
                                    task.target_index)
                return reg_loss(z, zp).item()

        assert final_reg(10.0) <= final_reg(0.0)

    def test_divergence_reports_epoch_and_parts(self):
        g = toy_graph(seed=6)
        task = prepare_node_task(g, "toy", "full-only", 0.7, 0.0, master_seed=2)
        cfg = toy_config(epochs=3, variant="full-only")
        model = build_model(cfg, g.num_features, g.num_classes, 0.0)
        model.f.layers[0].W.values[:] = np.inf
        with pytest.raises(TrainingDiverged) as err:
            train(model, cfg, task)
        assert err.value.epoch == 1
        assert "target" in err.value.parts

    def test_metrics_within_unit_interval(self):
        g = toy_graph(seed=7)
        task = prepare_node_task(g, "toy", "gcn", 0.9, 0.0, master_seed=3)
        cfg = toy_config(epochs=10, variant="gcn")
        model = build_model(cfg, g.num_features, g.num_classes, 0.0)
        _, record = train(model, cfg, task)
        assert 0.0 <= record.val_metric <= 1.0
        assert 0.0 <= record.test_metric <= 1.0
        assert record.wall_seconds > 0
