"""Core abstractions: presence vectors, training, derivative checkers."""

import numpy as np
import pytest

from conftest import QuadraticModel
from vifkit.errors import NonFiniteError
from vifkit.harness import logistic_fixture
from vifkit.losscore import (
    PresenceVector,
    TrainConfig,
    check_gradient,
    check_hessian,
    derive_seed,
    train,
)


class TestPresenceVector:
    def test_all_ones(self):
        b = PresenceVector.all_ones(5)
        assert b.n == 5 and b.count == 5 and b.is_full
        np.testing.assert_array_equal(b.present_indices(), np.arange(5))

    def test_drop_equals_without(self):
        assert PresenceVector.drop(5, 2) == PresenceVector.all_ones(5).without(2)
        assert hash(PresenceVector.drop(5, 2)) == hash(
            PresenceVector.all_ones(5).without(2)
        )

    def test_without_leaves_original(self):
        b = PresenceVector.all_ones(4)
        c = b.without(1)
        assert b.count == 4 and c.count == 3
        assert not c.is_full
        np.testing.assert_array_equal(c.present_indices(), [0, 2, 3])

    def test_immutable(self):
        b = PresenceVector.all_ones(3)
        with pytest.raises(AttributeError):
            b.bits = np.zeros(3, dtype=bool)

    def test_key_distinguishes_masks(self):
        assert PresenceVector.drop(4, 0).key() != PresenceVector.drop(4, 1).key()
        assert PresenceVector.drop(4, 0).key() == PresenceVector.drop(4, 0).key()


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(42, 1) == derive_seed(42, 1)

    def test_sensitive_to_all_inputs(self):
        seeds = {derive_seed(42, 1), derive_seed(42, 2), derive_seed(43, 1)}
        assert len(seeds) == 3


class TestTrainConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"optimizer": "sgd"},
            {"epochs": 0},
            {"batch_size": 0},
            {"weight_decay": -1.0},
            {"grad_tol": 0.0},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestNewton:
    def test_quadratic_one_step_to_mean(self, quad_model, full12):
        res = train(quad_model, full12, TrainConfig(optimizer="newton"))
        assert res.converged
        assert res.iterations == 1
        np.testing.assert_allclose(
            res.params.theta, quad_model.minimizer(full12), atol=1e-12
        )

    def test_masked_optimum_excludes_dropped_center(self, quad_model, full12):
        b = full12.without(3)
        res = train(quad_model, b, TrainConfig(optimizer="newton"))
        np.testing.assert_allclose(res.params.theta, quad_model.minimizer(b), atol=1e-12)

    def test_init_invariance(self):
        model = logistic_fixture(60, 3, seed=0)
        b = PresenceVector.all_ones(60)
        cfg = TrainConfig(optimizer="newton", epochs=50)
        a = train(model, b, cfg)
        z = train(model, b, cfg, init=np.full(3, 5.0))
        assert a.converged and z.converged
        np.testing.assert_allclose(a.params.theta, z.params.theta, atol=1e-7)

    def test_weight_decay_augments_objective(self, quad_model, full12):
        wd = 2.5
        res = train(quad_model, full12, TrainConfig(optimizer="newton", weight_decay=wd))
        n = quad_model.n_objects
        expected = n * quad_model.minimizer(full12) / (n + wd)
        assert res.converged
        np.testing.assert_allclose(res.params.theta, expected, atol=1e-10)

    def test_init_shape_rejected(self, quad_model, full12):
        with pytest.raises(ValueError):
            train(quad_model, full12, TrainConfig(), init=np.zeros(7))


class TestFirstOrder:
    def test_gd_reaches_quadratic_optimum(self, quad_model, full12):
        cfg = TrainConfig(optimizer="gd", learning_rate=0.05, epochs=400)
        res = train(quad_model, full12, cfg)
        np.testing.assert_allclose(
            res.params.theta, quad_model.minimizer(full12), atol=1e-6
        )

    def test_adam_reaches_quadratic_optimum(self, quad_model, full12):
        cfg = TrainConfig(optimizer="adam", learning_rate=0.1, epochs=600)
        res = train(quad_model, full12, cfg)
        np.testing.assert_allclose(
            res.params.theta, quad_model.minimizer(full12), atol=1e-4
        )

    def test_gd_divergence_raises(self, quad_model, full12):
        cfg = TrainConfig(optimizer="gd", learning_rate=1.0, epochs=500)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            train(quad_model, full12, cfg)

    def test_minibatch_deterministic(self):
        model = logistic_fixture(50, 4, seed=1)
        b = PresenceVector.all_ones(50)
        cfg = TrainConfig(optimizer="adam", learning_rate=0.05, epochs=30,
                          batch_size=16, seed=3)
        a = train(model, b, cfg)
        z = train(model, b, cfg)
        np.testing.assert_array_equal(a.params.theta, z.params.theta)

    def test_minibatch_seed_changes_trajectory(self):
        model = logistic_fixture(50, 4, seed=1)
        b = PresenceVector.all_ones(50)
        base = dict(optimizer="adam", learning_rate=0.05, epochs=5, batch_size=16)
        a = train(model, b, TrainConfig(seed=3, **base))
        z = train(model, b, TrainConfig(seed=4, **base))
        assert not np.array_equal(a.params.theta, z.params.theta)

    def test_minibatch_needs_unit_terms(self, quad_model, full12):
        cfg = TrainConfig(optimizer="adam", batch_size=4)
        with pytest.raises(ValueError):
            train(quad_model, full12, cfg)

    def test_reported_grad_norm_matches_final_point(self):
        model = logistic_fixture(40, 3, seed=2)
        b = PresenceVector.all_ones(40)
        res = train(model, b, TrainConfig(optimizer="gd", learning_rate=0.01, epochs=20))
        gn = float(np.linalg.norm(model.gradient(res.params.theta, b)))
        assert res.grad_norm == pytest.approx(gn, rel=1e-12)
        assert res.converged == (gn <= 1e-8)


class TestDerivativeCheckers:
    def test_clean_model_passes(self, quad_model, full12):
        theta = np.array([0.3, -0.2, 0.9])
        assert check_gradient(quad_model, theta, full12) < 1e-8
        assert check_hessian(quad_model, theta, full12) < 1e-8

    def test_broken_gradient_detected(self, quad_model, full12):
        class Broken(QuadraticModel):
            def gradient(self, theta, b):
                return 1.5 * super().gradient(theta, b)

        broken = Broken(quad_model.centers)
        assert check_gradient(broken, np.array([0.3, -0.2, 0.9]), full12) > 1e-2

    def test_broken_hessian_detected(self, quad_model, full12):
        class Broken(QuadraticModel):
            def hessian(self, theta, b):
                h = super().hessian(theta, b)
                return h + 0.25 * np.eye(h.shape[0])

        broken = Broken(quad_model.centers)
        assert check_hessian(broken, np.array([0.3, -0.2, 0.9]), full12) > 1e-3
