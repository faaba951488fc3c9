"""Acquisition strategies: budget exactness, determinism, selection laws."""

import numpy as np
import pytest
import scipy.stats

from mmal.data import Dataset, SynthConfig, generate_synthetic
from mmal.embedding import embedding_matrix
from mmal.errors import ConfigError
from mmal.model import (
    CONCAT,
    ModelDims,
    ModelParams,
    TrainConfig,
    init_model,
    train,
)
from mmal.strategies import (
    QueryRequest,
    kmeanspp_seed,
    run_query,
    select_badge,
    select_bmmal,
    select_coreset,
    select_entropy,
    select_random,
    split_pool_query,
)


def passthrough_model(d1: int, d2: int, k: int = 2) -> ModelParams:
    """Identity encoders and zero heads: z_mm is just the raw concatenation."""
    return ModelParams(
        fusion=CONCAT, enc_m1=None, enc_m2=None,
        w_m1=np.zeros((k, d1)), b_m1=np.zeros(k),
        w_m2=np.zeros((k, d2)), b_m2=np.zeros(k),
        w_mm=np.zeros((k, d1 + d2)), b_mm=np.zeros(k),
    )


def plain_dataset(x1: np.ndarray, x2: np.ndarray, k: int = 2) -> Dataset:
    n = len(x1)
    labels = np.arange(n) % k
    return Dataset(x_m1=x1, x_m2=x2, labels=labels, num_classes=k,
                   train_indices=np.arange(n),
                   test_indices=np.array([], dtype=np.int64))


@pytest.fixture(scope="module")
def trained_setup():
    ds = generate_synthetic(
        SynthConfig(n=500, num_classes=4, dim_m1=8, dim_m2=8,
                    snr_m1=1.2, snr_m2=1.2, dominant_fraction=0.7, seed=77)
    )
    model = init_model(ModelDims(8, 8, 4), seed=5)
    model = train(model, ds, ds.train_indices[:150], TrainConfig(epochs=15, seed=3))
    labeled = ds.train_indices[:150]
    pool = ds.train_indices[150:]
    return model, ds, labeled, pool


def request(pool, labeled, budget=20, seed=9, strategy="random", split=1):
    return QueryRequest(
        unlabeled_indices=pool, labeled_indices=labeled, budget=budget,
        rng_seed=seed, strategy=strategy, split=split,
    )


class TestRequestValidation:
    def test_zero_budget_rejected(self, trained_setup):
        _, _, labeled, pool = trained_setup
        with pytest.raises(ConfigError):
            request(pool, labeled, budget=0).validate()

    def test_budget_over_pool_rejected(self, trained_setup):
        _, _, labeled, pool = trained_setup
        with pytest.raises(ConfigError):
            request(pool, labeled, budget=pool.size + 1).validate()

    def test_overlapping_sets_rejected(self, trained_setup):
        _, _, labeled, pool = trained_setup
        with pytest.raises(ConfigError):
            request(np.concatenate([pool, labeled[:1]]), labeled).validate()

    def test_split_must_divide_budget(self, trained_setup):
        _, _, labeled, pool = trained_setup
        with pytest.raises(ConfigError):
            request(pool, labeled, budget=10, split=3).validate()


class TestSelectRandom:
    def test_full_budget_returns_everything(self, trained_setup):
        _, _, labeled, pool = trained_setup
        res = select_random(request(pool, labeled, budget=pool.size))
        assert sorted(res.selected.tolist()) == sorted(pool.tolist())

    def test_seed_determinism(self, trained_setup):
        _, _, labeled, pool = trained_setup
        a = select_random(request(pool, labeled, seed=4))
        b = select_random(request(pool, labeled, seed=4))
        c = select_random(request(pool, labeled, seed=5))
        assert np.array_equal(a.selected, b.selected)
        assert not np.array_equal(a.selected, c.selected)

    def test_exact_budget_distinct(self, trained_setup):
        _, _, labeled, pool = trained_setup
        res = select_random(request(pool, labeled, budget=33))
        assert res.selected.size == 33
        assert len(set(res.selected.tolist())) == 33


class TestSelectEntropy:
    def test_uniform_prediction_ranks_first(self):
        # sample 0 gets exactly uniform probabilities (zero feature), the
        # rest are pushed toward one class
        x1 = np.array([[0.0], [3.0], [5.0], [4.0]])
        x2 = np.zeros((4, 1))
        ds = plain_dataset(x1, x2, k=4)
        model = passthrough_model(1, 1, k=4)
        model.w_mm = np.array([[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
        res = select_entropy(request(np.arange(4), np.array([], dtype=int),
                                     budget=2), model, ds)
        assert res.selected[0] == 0
        assert res.diagnostics["score"][0] == pytest.approx(np.log(4), abs=1e-12)

    def test_confident_prediction_ranks_last(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_entropy(request(pool, labeled, budget=pool.size),
                             model, ds)
        scores = res.diagnostics["score"]
        order_scores = scores[np.searchsorted(pool, res.selected)]
        assert np.all(np.diff(order_scores) <= 1e-15)

    def test_scores_match_independent_recomputation(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_entropy(request(pool, labeled), model, ds)
        from mmal.model import forward_batch
        p = forward_batch(model, ds.x_m1[pool], ds.x_m2[pool]).p_mm
        reference = np.array([scipy.stats.entropy(row) for row in p])
        np.testing.assert_allclose(res.diagnostics["score"], reference,
                                   atol=1e-12)

    def test_ties_break_to_lower_index(self):
        x1 = np.zeros((5, 1))
        ds = plain_dataset(x1, x1.copy(), k=2)
        model = passthrough_model(1, 1, k=2)
        res = select_entropy(request(np.arange(5), np.array([], dtype=int),
                                     budget=3), model, ds)
        assert res.selected.tolist() == [0, 1, 2]


class TestSelectCoreset:
    def test_picks_farthest_point(self):
        x1 = np.array([[0.0], [1.0], [10.0]])
        ds = plain_dataset(x1, np.zeros((3, 1)))
        model = passthrough_model(1, 1)
        res = select_coreset(request(np.array([1, 2]), np.array([0]),
                                     budget=1), model, ds)
        assert res.selected.tolist() == [2]

    def test_full_budget_returns_everything(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_coreset(request(pool, labeled, budget=pool.size),
                             model, ds)
        assert sorted(res.selected.tolist()) == sorted(pool.tolist())

    def test_empty_labeled_starts_at_max_norm(self):
        x1 = np.array([[1.0], [-7.0], [3.0]])
        ds = plain_dataset(x1, np.zeros((3, 1)))
        model = passthrough_model(1, 1)
        res = select_coreset(request(np.arange(3), np.array([], dtype=int),
                                     budget=2), model, ds)
        assert res.selected[0] == 1

    def test_greedy_matches_brute_force(self):
        # every pick must maximize the min distance to the covered set
        rng = np.random.default_rng(8)
        x1 = rng.normal(size=(8, 3))
        x2 = rng.normal(size=(8, 2))
        ds = plain_dataset(x1, x2)
        model = passthrough_model(3, 2)
        labeled = np.array([0, 1])
        pool = np.arange(2, 8)
        res = select_coreset(request(pool, labeled, budget=4), model, ds)
        feats = np.concatenate([x1, x2], axis=1)
        covered = labeled.tolist()
        for pick in res.selected:
            dmin = np.array([
                min(np.linalg.norm(feats[i] - feats[c]) for c in covered)
                for i in pool
            ])
            assert pick == pool[int(np.argmax(dmin))]
            covered.append(int(pick))


class TestKmeansppSeed:
    def test_full_budget_returns_everything(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(12, 4))
        assert sorted(kmeanspp_seed(emb, 12, 3)) == list(range(12))

    def test_single_budget_is_argmax_norm(self):
        emb = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]])
        assert kmeanspp_seed(emb, 1, 0) == [1]

    def test_argmax_tie_breaks_low(self):
        emb = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 0.0]])
        assert kmeanspp_seed(emb, 1, 0) == [0]

    def test_far_point_always_selected(self):
        emb = np.zeros((100, 2))
        emb[37] = [10.0, 10.0]
        for seed in range(20):
            picks = kmeanspp_seed(emb, 2, seed)
            assert 37 in picks
            assert picks[0] == 37  # max norm goes first

    def test_zero_embeddings_fall_back_to_uniform(self, caplog):
        emb = np.zeros((10, 3))
        with caplog.at_level("WARNING"):
            picks = kmeanspp_seed(emb, 4, 11)
        assert len(set(picks)) == 4
        assert "fell back" in caplog.text

    def test_distinct_and_deterministic(self):
        rng = np.random.default_rng(2)
        emb = rng.normal(size=(50, 6))
        a = kmeanspp_seed(emb, 20, 9)
        assert len(set(a)) == 20
        assert a == kmeanspp_seed(emb, 20, 9)

    def test_budget_validation(self):
        with pytest.raises(ConfigError):
            kmeanspp_seed(np.ones((3, 2)), 4, 0)


class TestSelectBadge:
    def test_near_zero_embedding_never_first(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        matrix, _ = embedding_matrix(model, ds.x_m1[pool], ds.x_m2[pool])
        weakest = pool[int(np.argmin(np.linalg.norm(matrix, axis=1)))]
        for seed in range(5):
            res = select_badge(request(pool, labeled, budget=5, seed=seed),
                               model, ds)
            assert res.selected[0] != weakest

    def test_determinism_and_budget(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        a = select_badge(request(pool, labeled, budget=25, seed=3), model, ds)
        b = select_badge(request(pool, labeled, budget=25, seed=3), model, ds)
        assert np.array_equal(a.selected, b.selected)
        assert a.selected.size == 25
        assert a.peak_embedding_rows == pool.size

    def test_full_budget(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_badge(request(pool, labeled, budget=pool.size), model, ds)
        assert sorted(res.selected.tolist()) == sorted(pool.tolist())


class TestSelectBmmal:
    def test_identical_to_badge_when_balanced(self):
        # mirrored modalities give rho = 0 everywhere
        rng = np.random.default_rng(13)
        k, d, n = 3, 4, 60
        block = rng.normal(size=(k, d))
        model = ModelParams(
            fusion=CONCAT, enc_m1=None, enc_m2=None,
            w_m1=np.zeros((k, d)), b_m1=np.zeros(k),
            w_m2=np.zeros((k, d)), b_m2=np.zeros(k),
            w_mm=np.concatenate([block, block], axis=1), b_mm=np.zeros(k),
        )
        x = rng.normal(size=(n, d))
        ds = plain_dataset(x, x.copy(), k=k)
        pool = np.arange(n)
        labeled = np.array([], dtype=int)
        a = select_badge(request(pool, labeled, budget=12, seed=21), model, ds)
        b = select_bmmal(request(pool, labeled, budget=12, seed=21), model, ds)
        assert a.selected.tobytes() == b.selected.tobytes()
        assert np.all(b.diagnostics["rho"] == 0.0)

    def test_balanced_twin_has_larger_modulated_norm(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_bmmal(request(pool, labeled, budget=5), model, ds)
        norms = res.diagnostics["score"]
        plain, _ = embedding_matrix(model, ds.x_m1[pool], ds.x_m2[pool])
        plain_norms = np.linalg.norm(plain, axis=1)
        # same unmodulated magnitude, different rho: lower rho keeps more norm
        rho = res.diagnostics["rho"]
        assert np.all(norms <= plain_norms + 1e-12)
        boost = norms / np.maximum(plain_norms, 1e-300)
        lo, hi = rho < 0.2, rho > 0.6
        if lo.any() and hi.any():
            assert boost[lo].mean() > boost[hi].mean()

    def test_diagnostics_track_weights_and_contributions(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        res = select_bmmal(request(pool, labeled, budget=5), model, ds)
        phi = np.stack([res.diagnostics["phi_m1"], res.diagnostics["phi_m2"]],
                       axis=1)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-9)
        w = np.stack([res.diagnostics["w_m1"], res.diagnostics["w_m2"]], axis=1)
        assert np.all(np.max(w, axis=1) == 1.0)
        np.testing.assert_allclose(
            np.min(w, axis=1), 1.0 - res.diagnostics["rho"], atol=1e-12
        )

    def test_stronger_dominated_subset_suppressed_more(self, trained_setup):
        # dataset-level balance law, asserted on the selection diagnostics
        model, ds, labeled, pool = trained_setup
        res = select_bmmal(request(pool, labeled, budget=5), model, ds)
        phi1 = res.diagnostics["phi_m1"]
        phi2 = res.diagnostics["phi_m2"]
        rho = res.diagnostics["rho"]
        stronger = 0 if phi1.mean() > phi2.mean() else 1
        dom1 = phi1 >= phi2
        strong_mask = dom1 if stronger == 0 else ~dom1
        offweight = 1.0 - rho
        assert offweight[strong_mask].mean() <= offweight[~strong_mask].mean()


class TestSplitPoolQuery:
    def test_split_one_is_direct_call(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, budget=10, seed=3, strategy="badge")
        direct = select_badge(req, model, ds)
        from functools import partial
        wrapped = split_pool_query(req, partial(select_badge, model=model,
                                                dataset=ds))
        assert np.array_equal(direct.selected, wrapped.selected)

    def test_one_pick_per_chunk(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, budget=6, seed=3, strategy="badge", split=6)
        res = run_query(req, model, ds)
        assert res.selected.size == 6
        assert len(set(res.selected.tolist())) == 6

    def test_two_chunks_disjoint_union(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, budget=10, seed=3, strategy="bmmal", split=2)
        res = run_query(req, model, ds)
        assert res.selected.size == 10
        assert len(set(res.selected.tolist())) == 10
        assert res.peak_embedding_rows <= (pool.size + 1) // 2

    def test_indivisible_split_rejected(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, budget=10, seed=3, strategy="badge", split=4)
        with pytest.raises(ConfigError):
            run_query(req, model, ds)


class TestRunQuery:
    def test_unknown_strategy(self, trained_setup):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, strategy="oracle")
        with pytest.raises(ConfigError, match="unknown strategy"):
            run_query(req, model, ds)

    @pytest.mark.parametrize("strategy", ["random", "entropy", "coreset",
                                          "badge", "bmmal"])
    def test_contract_for_every_strategy(self, trained_setup, strategy):
        model, ds, labeled, pool = trained_setup
        req = request(pool, labeled, budget=15, seed=31, strategy=strategy)
        res = run_query(req, model, ds)
        assert res.selected.size == 15
        assert len(set(res.selected.tolist())) == 15
        assert np.isin(res.selected, pool).all()
        again = run_query(req, model, ds)
        assert np.array_equal(res.selected, again.selected)
