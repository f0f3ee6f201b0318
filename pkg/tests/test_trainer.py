"""
Tests for the ranking loss, its hand-written gradients and the training loop.
"""

import math
import statistics

import numpy as np
import pytest

from conftest import SEEDS_TRAIN, scalar_store, write_tsv
from kgalign.core.editdist import CharSource, ProjectedString, distance_dp
from kgalign.core.exceptions import DegenerateCatalogError, DivergenceError, MissingLatticeError
from kgalign.core.params import ENTITY, NULL, TYPE_PROJ, clamp_to_unit_ball, init, init_params
from kgalign.core.trainer import (
    GradientBuffer,
    backward_through_lattice,
    batch_objective,
    composite_penalty,
    finite_diff_grad,
    hinge,
    pair_loss,
    train,
)
from kgalign.db.kg_store import corruption_set, load_catalog
from kgalign.models.schemas import Dims, TrainConfig

H = 1e-6


def _config(**overrides) -> TrainConfig:
    base = dict(epochs=3, k_e=3, k_r=3, k_s=3, batch_size=2, lr=0.05, eval_every=0)
    base.update(overrides)
    return TrainConfig(**base)


def _random_store(catalog, seed, k=3, noise=0.3):
    store = init_params(catalog.num_entities, catalog.num_relations, catalog.num_types,
                        Dims(k_e=k, k_r=k, k_s=k), seed=seed, noise=noise)
    store.null_vec[:] = np.random.default_rng(seed).uniform(-0.3, 0.3, size=k)
    return store


def _assert_buffers_close(analytic: GradientBuffer, numeric: GradientBuffer, rtol=1e-5, atol=1e-7):
    assert set(analytic.keys()) == set(numeric.keys())
    for key in analytic.keys():
        np.testing.assert_allclose(analytic.get(key), numeric.get(key), rtol=rtol, atol=atol, err_msg=str(key))


# ---------------------------------------------------------------------------
# Hinge
# ---------------------------------------------------------------------------

class TestHinge:

    def test_equal_distances_give_margin(self):
        assert hinge(1.0, 0.37, 0.37) == 1.0

    def test_active(self):
        assert hinge(1.0, 0.5, 0.2) == pytest.approx(1.3)

    def test_inactive(self):
        assert hinge(1.0, 0.1, 2.0) == 0.0

    def test_nan_is_not_masked(self):
        assert math.isnan(hinge(1.0, float("nan"), 0.2))

    def test_pair_loss_with_identical_negative(self, tiny_catalog, tiny_store):
        seed = tiny_catalog.seeds["train"][0]
        pl = pair_loss(seed, seed.right, tiny_store, tiny_catalog, gamma_a=0.75)
        assert pl.value == 0.75
        assert pl.active
        for _, g in pl.grads.items():
            assert np.allclose(g, 0.0, atol=1e-12)

    def test_pair_loss_inactive_has_no_gradient(self, tiny_catalog):
        # true triple projects onto the L1 triple; the negative's tail is far from every char and from eps
        store = scalar_store(
            tiny_catalog,
            {"L1:alice": 0.2, "L1:paris": 0.3, "L2:a2": 0.2, "L2:p2": 0.3, "L2:l2": -0.9, "L2:b2": 0.5},
            {"L1:bornIn": 0.1, "L2:born": 0.1},
        )
        seed = tiny_catalog.seeds["train"][0]
        negative = tiny_catalog.resolve_atom("born(a2,l2)", seed.right.kg)
        first = pair_loss(seed, negative, store, tiny_catalog, gamma_a=1e-9)
        assert first.dist_neg > first.dist_pos

        gap = first.dist_neg - first.dist_pos
        pl = pair_loss(seed, negative, store, tiny_catalog, gamma_a=gap / 2)
        assert pl.value == 0.0
        assert not pl.active
        assert len(pl.grads) == 0
        assert pl.grads.is_zero()


# ---------------------------------------------------------------------------
# Composite penalty
# ---------------------------------------------------------------------------

class TestCompositePenalty:

    def _store(self):
        return init_params(4, 2, 1, Dims(k_e=3, k_r=3, k_s=3), seed=0, noise=0.0)

    def test_feasible_vectors_cost_nothing(self):
        store = self._store()
        src = CharSource((ENTITY, 0), (TYPE_PROJ, 0))
        result = composite_penalty([src], store, lambda_c=0.25)
        assert result.value == 0.0
        assert result.violations == 0
        assert len(result.grads) == 0

    def test_renormalized_rows_are_feasible(self):
        store = init_params(64, 2, 1, Dims(k_e=5, k_r=3, k_s=5), seed=4, noise=0.0)
        rows = np.random.default_rng(9).normal(size=(64, 5))
        store.entity_emb[:] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        clamp_to_unit_ball(store)
        sources = [CharSource((ENTITY, i), (TYPE_PROJ, 0)) for i in range(64)]
        result = composite_penalty(sources, store, lambda_c=0.25)
        assert result.violations == 0
        assert result.value == 0.0

    def test_hand_evaluated(self):
        store = self._store()
        store.entity_emb[0] = [math.sqrt(1.5), 0.0, 0.0]
        src = CharSource((ENTITY, 0), (TYPE_PROJ, 0))
        result = composite_penalty([src, src], store, lambda_c=0.25)
        assert result.value == pytest.approx(0.125)
        assert result.violations == 1
        assert result.grads.get((ENTITY, 0)) == pytest.approx([0.5 * math.sqrt(1.5), 0.0, 0.0])

    def test_disabled(self):
        store = self._store()
        store.entity_emb[0] = [5.0, 0.0, 0.0]
        result = composite_penalty([CharSource((ENTITY, 0), (TYPE_PROJ, 0))], store, lambda_c=0.0)
        assert result.value == 0.0

    def test_gradient_matches_finite_differences(self):
        store = self._store()
        rng = np.random.default_rng(3)
        store.entity_emb[:] = rng.uniform(-1, 1, size=store.entity_emb.shape)
        store.type_proj[0] *= 1.8
        sources = [CharSource((ENTITY, i), (TYPE_PROJ, 0)) for i in range(4)]
        result = composite_penalty(sources, store, lambda_c=0.4)
        assert result.violations > 0
        numeric = finite_diff_grad(lambda s: composite_penalty(sources, s, 0.4).value, store, H, result.grads.keys())
        _assert_buffers_close(result.grads, numeric)


# ---------------------------------------------------------------------------
# Finite-difference oracle and lattice backward pass
# ---------------------------------------------------------------------------

class TestFiniteDifferences:

    def test_linear_function_exact(self, tiny_store):
        numeric = finite_diff_grad(lambda s: 2.0 * s.null_vec[0] - 3.0 * s.null_vec[1], tiny_store, H, [(NULL, 0)])
        assert numeric.get((NULL, 0)) == pytest.approx([2.0, -3.0, 0.0], abs=1e-8)

    def test_square(self, tiny_store):
        tiny_store.null_vec[0] = 3.0
        numeric = finite_diff_grad(lambda s: s.null_vec[0] ** 2, tiny_store, H, [(NULL, 0)])
        assert numeric.get((NULL, 0))[0] == pytest.approx(6.0, abs=1e-8)
        assert tiny_store.null_vec[0] == 3.0

    def test_rejects_non_positive_step(self, tiny_store):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda s: 0.0, tiny_store, 0.0, [(NULL, 0)])


class TestLatticeBackward:

    def test_zero_ops_are_stationary(self):
        zeros = ProjectedString(np.zeros((3, 2)))
        lattice = distance_dp(zeros, ProjectedString(np.zeros((3, 2))), np.zeros(2), keep_lattice=True).lattice
        lg = backward_through_lattice(lattice, 1.0)
        assert not np.any(lg.x) and not np.any(lg.y) and not np.any(lg.eps)

    def test_requires_lattice(self):
        with pytest.raises(MissingLatticeError):
            backward_through_lattice(None, 1.0)

    @pytest.mark.parametrize("m, n", [(1, 1), (2, 3), (3, 3), (3, 4), (4, 2)])
    def test_char_and_null_gradients(self, m, n):
        rng = np.random.default_rng(m * 10 + n)
        x = rng.uniform(-1, 1, size=(m, 2))
        y = rng.uniform(-1, 1, size=(n, 2))
        eps = rng.uniform(-0.5, 0.5, size=2)

        def dist(x_, y_, e_):
            return distance_dp(ProjectedString(x_), ProjectedString(y_), e_).value

        lg = backward_through_lattice(
            distance_dp(ProjectedString(x), ProjectedString(y), eps, keep_lattice=True).lattice, 1.0
        )
        for arr, grad, which in ((x, lg.x, 0), (y, lg.y, 1), (eps, lg.eps, 2)):
            numeric = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                original = arr[idx]
                arr[idx] = original + H
                plus = dist(x, y, eps)
                arr[idx] = original - H
                minus = dist(x, y, eps)
                arr[idx] = original
                numeric[idx] = (plus - minus) / (2 * H)
            np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-9, err_msg=f"operand {which}")


# ---------------------------------------------------------------------------
# Full pair / batch gradients
# ---------------------------------------------------------------------------

class TestPairGradients:

    @pytest.mark.parametrize("config_seed", range(50))
    def test_pair_loss_matches_finite_differences(self, tiny_catalog, config_seed):
        store = _random_store(tiny_catalog, config_seed)
        rng = np.random.default_rng(config_seed)
        seed = tiny_catalog.seeds["train"][config_seed % 2]
        candidates = corruption_set(seed.right, tiny_catalog)
        negative = candidates[int(rng.integers(len(candidates)))]
        gamma = 10.0

        pl = pair_loss(seed, negative, store, tiny_catalog, gamma)
        assert pl.active
        numeric = finite_diff_grad(
            lambda s: pair_loss(seed, negative, s, tiny_catalog, gamma).value, store, H, pl.grads.keys()
        )
        _assert_buffers_close(pl.grads, numeric)

    @pytest.mark.parametrize("config_seed", range(5))
    def test_batch_objective_with_penalty(self, tiny_catalog, config_seed):
        store = _random_store(tiny_catalog, config_seed)
        store.type_proj *= 2.5
        store.rel_proj *= 2.5
        pairs = [(s, corruption_set(s.right, tiny_catalog)[config_seed]) for s in tiny_catalog.seeds["train"]]

        def objective(s):
            result = batch_objective(pairs, s, tiny_catalog, 10.0, 0.3)
            return result.loss + result.penalty

        result = batch_objective(pairs, store, tiny_catalog, 10.0, 0.3)
        assert result.violations > 0
        numeric = finite_diff_grad(objective, store, H, result.grads.keys())
        _assert_buffers_close(result.grads, numeric)

    def test_batch_is_order_invariant(self, tiny_catalog, tiny_store):
        pairs = [(s, c) for s in tiny_catalog.seeds["train"] for c in corruption_set(s.right, tiny_catalog)[:3]]
        forward = batch_objective(pairs, tiny_store, tiny_catalog, 1.0, 0.25)
        backward = batch_objective(list(reversed(pairs)), tiny_store, tiny_catalog, 1.0, 0.25)
        assert forward.loss == pytest.approx(backward.loss, rel=1e-12)
        assert forward.active == backward.active
        assert set(forward.grads.keys()) == set(backward.grads.keys())
        for key in forward.grads.keys():
            np.testing.assert_allclose(forward.grads.get(key), backward.grads.get(key), rtol=1e-10, atol=1e-15)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _norms_ok(store) -> bool:
    return (np.all(np.linalg.norm(store.entity_emb, axis=1) <= 1 + 1e-9)
            and np.all(np.linalg.norm(store.relation_emb, axis=1) <= 1 + 1e-9))


class TestTrain:

    def test_zero_learning_rate_leaves_parameters(self, tiny_catalog):
        config = _config(lr=0.0, epochs=4)
        store = init(tiny_catalog, config.dims, config.seed)
        before = store.copy()
        train(tiny_catalog, config, store=store)
        assert store.equals(before)

    def test_same_seed_is_bit_identical(self, tiny_catalog):
        store_a, report_a = train(tiny_catalog, _config(seed=7))
        store_b, report_b = train(tiny_catalog, _config(seed=7))
        assert store_a.equals(store_b)
        assert report_a.loss_sequence == report_b.loss_sequence

    def test_different_seed_differs(self, tiny_catalog):
        store_a, _ = train(tiny_catalog, _config(seed=1))
        store_b, _ = train(tiny_catalog, _config(seed=2))
        assert not store_a.equals(store_b)

    def test_constraints_hold_after_every_epoch(self, tiny_catalog):
        config = _config(epochs=50, lr=0.5, batch_size=1)
        store = init(tiny_catalog, config.dims, config.seed)
        records = []

        def check(record):
            assert _norms_ok(store)
            records.append(record)

        train(tiny_catalog, config, store=store, on_epoch=check)
        assert len(records) == 50
        for r in records:
            assert math.isfinite(r.penalty) and r.penalty >= 0
            assert 0.0 <= r.active_fraction <= 1.0

    def test_fixed_null_vector(self, tiny_catalog):
        store, _ = train(tiny_catalog, _config(update_null=False, epochs=5, lr=0.2))
        assert not np.any(store.null_vec)

    def test_null_vector_learns_by_default(self, tiny_catalog):
        store, _ = train(tiny_catalog, _config(epochs=5, lr=0.2, gamma_a=10.0))
        assert np.any(store.null_vec)

    def test_validation_every_n_epochs(self, tiny_catalog):
        _, report = train(tiny_catalog, _config(epochs=4, eval_every=2))
        assert [r.validation is not None for r in report.epochs] == [False, True, False, True]
        assert report.epochs[1].validation.n_queries == 1

    def test_negatives_per_positive(self, tiny_catalog):
        records = []
        train(tiny_catalog, _config(epochs=1, negatives_per_positive=3, gamma_a=10.0), on_epoch=records.append)
        assert records[0].active_fraction == 1.0

    def test_no_training_seeds(self, tiny_files, tmp_path):
        tiny_files["seeds_train"] = write_tsv(tmp_path / "none.tsv", [])
        catalog = load_catalog(**tiny_files)
        with pytest.raises(DegenerateCatalogError):
            train(catalog, _config())

    def test_degenerate_seed_skipped(self, tmp_path):
        files = {
            "triples_l1": write_tsv(tmp_path / "l1.tsv", [("x", "q", "y")]),
            "triples_l2": write_tsv(tmp_path / "l2.tsv", [("a", "r", "a")]),
            "types": write_tsv(tmp_path / "types.tsv", [("x", "t"), ("y", "t"), ("a", "t")]),
            "seeds_train": write_tsv(tmp_path / "seeds.tsv", [("x", "q", "y", "a", "r", "a")]),
        }
        catalog = load_catalog(**files)
        _, report = train(catalog, _config(epochs=2))
        assert [r.skipped for r in report.epochs] == [1, 1]
        assert report.loss_sequence == [0.0, 0.0]

    def test_report_tsv(self, tiny_catalog):
        _, report = train(tiny_catalog, _config(epochs=2, eval_every=1))
        lines = report.to_tsv().splitlines()
        assert lines[0] == "# workers=1 reproducible=true"
        assert lines[1].split("\t")[:4] == ["epoch", "mean_loss", "active_fraction", "violations"]
        assert len(lines) == 4
        assert all(len(line.split("\t")) == 10 for line in lines[1:])

    def test_workers_marked_not_reproducible(self, tiny_catalog):
        _, report = train(tiny_catalog, _config(epochs=1, workers=2, eval_every=1))
        assert report.to_tsv().startswith("# workers=2 reproducible=false")
        assert report.summary()["reproducible"] is False

    def test_single_pair_loss_trends_down(self, tiny_files, tmp_path):
        tiny_files["seeds_train"] = write_tsv(tmp_path / "one.tsv", SEEDS_TRAIN[:1])
        catalog = load_catalog(**tiny_files)
        runs = []
        for seed in range(5):
            _, report = train(catalog, _config(epochs=100, lr=0.1, k_e=4, k_r=4, k_s=4, seed=seed))
            runs.append(report.loss_sequence)
        median = [statistics.median(epoch) for epoch in zip(*runs)]
        windows = [statistics.fmean(median[i:i + 20]) for i in range(0, 100, 20)]
        for earlier, later in zip(windows, windows[1:]):
            assert later <= earlier + 0.01 * windows[0]
        assert windows[-1] < windows[0]

    def test_exploding_step_raises_divergence(self, tiny_catalog):
        with pytest.raises(DivergenceError) as exc_info:
            train(tiny_catalog, _config(epochs=5, lr=1e300, gamma_a=100.0, batch_size=1))
        assert exc_info.value.epoch <= 5

    def test_no_non_finite_epoch_is_recorded(self, tiny_catalog):
        records = []
        with pytest.raises(DivergenceError):
            train(tiny_catalog, _config(epochs=5, lr=1e300, gamma_a=100.0, batch_size=1),
                  on_epoch=records.append)
        assert all(math.isfinite(r.mean_loss) for r in records)
