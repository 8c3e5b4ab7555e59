import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hreval import posthoc as ph
from hreval.errors import EmptySplit, PoolTooSmall, ShapeMismatch, UnlabeledData
from hreval.metrics import accuracy
from hreval.store import load_run
from conftest import blob_logits
from oracles import grid_temperature, mean_nll


def overconfident(seed, n=400, k=4, scale=4.0):
    rng = np.random.default_rng(seed)
    z, y = blob_logits(rng, n, k, margin=1.0, noise=1.0)
    return z * scale, y


class TestTemperature:
    def test_matches_grid_oracle(self):
        for seed in range(5):
            z, y = overconfident(seed, scale=float(np.exp(np.random.default_rng(seed).uniform(-1, 2))))
            s = ph.fit_temperature(z, y)
            assert abs(math.log(s.T) - grid_temperature(z, y, points=2000)) < 5e-3
            assert s.val_nll_after <= s.val_nll_before
            assert s.val_nll_after == pytest.approx(mean_nll(z, y, s.T), abs=1e-12)

    def test_overconfident_gets_t_above_one(self):
        z, y = overconfident(0, scale=8.0)
        assert ph.fit_temperature(z, y).T > 1.0

    def test_separable_hits_lower_bound(self):
        z = np.array([[3.0, 0.0], [0.0, 3.0]])
        s = ph.fit_temperature(z, [0, 1])
        assert s.T == pytest.approx(ph.T_MIN, rel=1e-6)

    def test_duplication_invariant(self):
        z, y = overconfident(1)
        a = ph.fit_temperature(z, y).T
        b = ph.fit_temperature(np.concatenate([z, z]), np.concatenate([y, y])).T
        assert abs(math.log(a) - math.log(b)) < 1e-5

    def test_apply_preserves_argmax(self):
        z, y = overconfident(2)
        assert accuracy(ph.apply_temperature(z, 3.7), y) == accuracy(z, y)
        with pytest.raises(ValueError):
            ph.apply_temperature(z, 0.0)

    def test_errors(self):
        with pytest.raises(EmptySplit):
            ph.fit_temperature(np.zeros((0, 2)), [])
        with pytest.raises(UnlabeledData):
            ph.fit_temperature(np.zeros((2, 2)), [0, -1])
        with pytest.raises(ShapeMismatch):
            ph.fit_temperature(np.zeros((2, 2)), [0])


@given(st.floats(0.1, 20.0))
@settings(max_examples=30, deadline=None)
def test_golden_section_quadratic(c):
    x = ph.golden_section(lambda t: (t - math.log(c)) ** 2, -5, 5, 1e-8)
    assert abs(x - math.log(c)) < 1e-6


class TestEnsembleWeights:
    def test_identity_and_cancellation(self):
        z = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(ph.ensemble_logits([z], [1.0]), z)
        assert np.array_equal(ph.ensemble_logits([z, z], [0.5, -0.5]), np.zeros_like(z))

    def test_shape_checks(self):
        with pytest.raises(ShapeMismatch):
            ph.ensemble_logits([np.zeros((2, 2)), np.zeros((3, 2))], [1, 1])
        with pytest.raises(ShapeMismatch):
            ph.ensemble_logits([np.zeros((2, 2))], [1, 1])

    def test_single_member_is_temperature_scaling(self):
        for seed in range(5):
            z, y = overconfident(seed, scale=3.0)
            w = ph.fit_ensemble_weights([z], y)
            t = ph.fit_temperature(z, y).T
            assert abs(1 / w[0] - t) < 1e-3

    def test_gradient_stationary(self):
        z1, y = overconfident(3)
        z2 = np.random.default_rng(9).normal(size=z1.shape)
        w = ph.fit_ensemble_weights([z1, z2], y)
        _, g = ph._loss_and_grad(np.stack([z1, z2]), np.asarray(y), w)
        assert np.linalg.norm(g) < 1e-5

    def test_noise_member_grid(self):
        z1, y = overconfident(4)
        z2 = np.random.default_rng(10).normal(size=z1.shape)
        w = ph.fit_ensemble_weights([z1, z2], y)
        fitted = ph.ensemble_loss([z1, z2], y, w)
        grid = np.linspace(-1, 1, 81)
        best = min(ph.ensemble_loss([z1, z2], y, [a, b]) for a in grid for b in grid)
        assert fitted <= best + 1e-9
        assert abs(w[1]) < abs(w[0])


def pool_runs(make_run, n=5, k=3, seed=0):
    rng = np.random.default_rng(seed)
    y_val = rng.integers(0, k, 200)
    y_test = rng.integers(0, k, 100)
    paths = []
    for i in range(n):
        def noisy(y, margin):
            z = rng.normal(0, 1, (len(y), k))
            z[np.arange(len(y)), y] += margin
            return z
        margin = 0.5 + i * 0.4
        splits = {"id_val": (noisy(y_val, margin), y_val), "id_test": (noisy(y_test, margin), y_test),
                  "ds_a": (noisy(y_test, margin / 2), y_test),
                  "ood_a": (rng.normal(0, 1, (50, k)), np.full(50, -1))}
        paths.append(make_run(splits, model_id=f"m{i}", group=f"g{i % 2}"))
    return [load_run(p) for p in paths]


class TestSearch:
    def test_best_is_replayed_minimum(self, make_run):
        pool = pool_runs(make_run)
        spec = ph.random_ensemble_search(pool, 2, trials=12, seed=3)
        assert len(spec.trials) == 12
        assert spec.val_loss == min(t["val_loss"] for t in spec.trials)
        logits = {r.model_id: r.split("id_val").logits for r in pool}
        labels = pool[0].split("id_val").labels
        for t in spec.trials:
            members = [logits[m] for m in t["member_ids"]]
            replay = ph.fit_ensemble_weights(members, labels)
            assert ph.ensemble_loss(members, labels, replay) == t["val_loss"]

    def test_deterministic_and_order_free(self, make_run):
        pool = pool_runs(make_run)
        a = ph.random_ensemble_search(pool, 3, trials=5, seed=1)
        b = ph.random_ensemble_search(pool[::-1], 3, trials=5, seed=1)
        assert a.to_json() == b.to_json()
        assert ph.EnsembleSpec.from_json(a.to_json()) == a

    def test_pool_too_small(self, make_run):
        pool = pool_runs(make_run, n=2)
        with pytest.raises(PoolTooSmall):
            ph.random_ensemble_search(pool, 3)

    def test_ensemble_run(self, make_run):
        pool = pool_runs(make_run)
        spec = ph.random_ensemble_search(pool, 2, trials=4, seed=0)
        run = ph.ensemble_run(spec, pool)
        assert run.group == "ensemble" and "adv_id" not in run.splits
        assert set(run.splits) == {"id_val", "id_test", "ds_a", "ood_a"}
        by_id = {r.model_id: r for r in pool}
        z = sum(w * by_id[m].split("id_test").logits.astype(float)
                for m, w in zip(spec.member_ids, spec.weights))
        assert np.allclose(run.split("id_test").logits, z, rtol=1e-6, atol=1e-5)
