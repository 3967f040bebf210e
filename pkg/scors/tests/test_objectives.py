import math

import numpy as np
import pytest

from scors.errors import ConvergenceError, ScorsValidationError
from scors.objectives import (
    LogisticObjective,
    NoisyQuadraticObjective,
    OptimumSource,
    component_grad,
    empirical_optimum,
    export_dataset_csv,
    full_grad,
    hessian_at,
    load_dataset_csv,
    logistic_residual,
    make_noisy_quadratic,
    q_matrix,
    strong_monotonicity_constant,
    synthesize_logistic,
    tau_squared,
    theta_star,
)


class TestLogistic:
    def test_residual_is_stable(self):
        assert logistic_residual(800.0, 1.0) == pytest.approx(0.0, abs=1e-300)
        assert logistic_residual(-800.0, 0.0) == pytest.approx(0.0, abs=1e-300)
        assert logistic_residual(0.0, 1.0) == -0.5

    def test_labels_validated(self):
        with pytest.raises(ScorsValidationError):
            LogisticObjective(np.ones((2, 2)), np.array([0.0, 2.0]))

    def test_coordinate_matches_full_component_gradient(self, logistic_small, rng):
        obj, _ = logistic_small
        x = rng.standard_normal(obj.dim)
        for k in (0, 17, obj.n_components - 1):
            grad = obj.component_grad(k, x)
            for j in range(obj.dim):
                assert obj.component_grad_coord(k, x, j) == grad[j]

    def test_full_gradient_is_mean_of_components(self, logistic_small, rng):
        obj, _ = logistic_small
        x = rng.standard_normal(obj.dim)
        np.testing.assert_allclose(full_grad(obj, x), obj.component_grads(x).mean(axis=0), atol=1e-12)

    def test_gradient_matches_finite_differences(self, logistic_small, rng):
        obj, _ = logistic_small
        x = rng.standard_normal(obj.dim)
        h = 1e-6
        grad = obj.component_grad(5, x)
        for j in range(obj.dim):
            e = np.zeros(obj.dim)
            e[j] = h
            fd = (obj.component_loss(5, x + e) - obj.component_loss(5, x - e)) / (2 * h)
            assert fd == pytest.approx(grad[j], abs=1e-7)

    def test_empirical_optimum(self, logistic_small):
        obj, ref = logistic_small
        assert ref.source is OptimumSource.NUMERICALLY_COMPUTED
        assert np.linalg.norm(obj.full_grad(ref.x_star)) <= 1e-10

    def test_generator_reference(self):
        obj, ref = synthesize_logistic(100, 3, seed=5)
        assert ref.source is OptimumSource.GENERATOR_PARAMETER
        assert np.linalg.norm(ref.x_star) == pytest.approx(1.0)
        assert strong_monotonicity_constant(obj) is None

    def test_synthesis_is_deterministic(self):
        a, _ = synthesize_logistic(50, 3, seed=9)
        b, _ = synthesize_logistic(50, 3, seed=9)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_dataset_csv(self, tmp_path):
        obj, _ = synthesize_logistic(40, 3, seed=2)
        path = export_dataset_csv(obj, tmp_path / "data.csv")
        loaded = load_dataset_csv(path)
        np.testing.assert_array_equal(loaded.features, obj.features)
        np.testing.assert_array_equal(loaded.labels, obj.labels)

    def test_component_index_checked(self, logistic_small):
        obj, _ = logistic_small
        with pytest.raises(ScorsValidationError):
            component_grad(obj, obj.n_components, np.zeros(obj.dim))

    def test_saturated_component_gradient(self):
        w = np.array([1.0, 2.0, 2.0])
        obj = LogisticObjective(w[None, :], np.array([1.0]))
        x = (40.0 / 9.0) * w
        grad = component_grad(obj, 0, x)
        expected = -w * math.exp(-40.0) / (1.0 + math.exp(-40.0))
        np.testing.assert_allclose(grad, expected, rtol=1e-9)
        assert grad[0] == pytest.approx(-4.248e-18, rel=1e-3)

    def test_gradient_at_zero(self, logistic_small):
        obj, _ = logistic_small
        for k in (0, 7):
            expected = (0.5 - obj.labels[k]) * obj.features[k]
            np.testing.assert_allclose(obj.component_grad(k, np.zeros(obj.dim)), expected)

    def test_hessian_at_zero(self, logistic_small):
        obj, _ = logistic_small
        expected = obj.features.T @ obj.features / (4.0 * obj.n_components)
        np.testing.assert_allclose(hessian_at(obj, np.zeros(obj.dim)), expected, rtol=1e-12, atol=1e-15)

    def test_hessian_matches_finite_differences(self, logistic_small, rng):
        obj, _ = logistic_small
        x = rng.standard_normal(obj.dim)
        h = 1e-6
        columns = []
        for j in range(obj.dim):
            e = np.zeros(obj.dim)
            e[j] = h
            columns.append((full_grad(obj, x + e) - full_grad(obj, x - e)) / (2 * h))
        np.testing.assert_allclose(hessian_at(obj, x), np.column_stack(columns), atol=1e-7)

    def test_tau_squared_bound(self, logistic_small, rng):
        obj, ref = logistic_small
        bound = obj.lipschitz_at_optimum
        assert bound == pytest.approx(np.max(np.sum(obj.features**2, axis=1)) ** 2 / 16.0)
        for _ in range(100):
            x = ref.x_star + rng.standard_normal(obj.dim) * rng.uniform(0.1, 5.0)
            dist_sq = float(np.sum((x - ref.x_star) ** 2))
            assert tau_squared(obj, x, ref) <= bound * dist_sq * (1 + 1e-12)

    def test_labels_are_balanced(self):
        for seed in range(1, 21):
            obj, _ = synthesize_logistic(5000, 10, seed=seed)
            assert 0.35 <= obj.labels.mean() <= 0.65

    def test_newton_rejects_underdetermined_data(self):
        with pytest.raises(ConvergenceError, match="rank"):
            synthesize_logistic(3, 5, seed=1, refine=True)


class TestNoisyQuadratic:
    def test_exact_optimum(self, quadratic3):
        obj, ref = quadratic3
        assert ref.source is OptimumSource.EXACT_BY_CONSTRUCTION
        assert np.linalg.norm(obj.noise.sum(axis=0)) <= 1e-10 * obj.n_components
        assert np.linalg.norm(obj.full_grad(ref.x_star)) <= 1e-12

    def test_eigenvalues_in_range(self, quadratic3):
        obj, _ = quadratic3
        assert 0.75 - 1e-12 <= obj.eigenvalues[0] <= obj.eigenvalues[-1] <= 2.0 + 1e-12
        assert strong_monotonicity_constant(obj) == obj.mu

    def test_coordinate_consistency(self, quadratic3, rng):
        obj, _ = quadratic3
        x = rng.standard_normal(3)
        grad = obj.component_grad(4, x)
        for j in range(3):
            assert obj.component_grad_coord(4, x, j) == pytest.approx(grad[j], abs=1e-14)

    def test_q_and_theta(self, quadratic3):
        obj, ref = quadratic3
        q = q_matrix(obj, ref)
        np.testing.assert_allclose(q, obj.noise.T @ obj.noise / obj.n_components, atol=1e-14)
        assert theta_star(obj, ref) == pytest.approx(np.trace(q))
        assert tau_squared(obj, ref.x_star, ref) == 0.0

    def test_tau_squared_bound(self, quadratic3, rng):
        obj, ref = quadratic3
        x = ref.x_star + rng.standard_normal(3)
        dist_sq = float(np.sum((x - ref.x_star) ** 2))
        assert tau_squared(obj, x, ref) <= obj.lipschitz_at_optimum * dist_sq * (1 + 1e-12)

    def test_strong_monotonicity(self, quadratic3, rng):
        obj, ref = quadratic3
        mu = strong_monotonicity_constant(obj)
        assert mu == pytest.approx(float(np.linalg.eigvalsh(obj.matrix)[0]))
        for _ in range(100):
            diff = rng.standard_normal(3) * rng.uniform(0.1, 10.0)
            inner = float(diff @ full_grad(obj, ref.x_star + diff))
            assert inner >= mu * float(diff @ diff) * (1 - 1e-9) - 1e-12

    def test_hessian_is_a(self, quadratic3, rng):
        obj, _ = quadratic3
        np.testing.assert_array_equal(hessian_at(obj, rng.standard_normal(3)), obj.matrix)

    def test_whitened_noise(self):
        obj, ref = make_noisy_quadratic(2, (1.0, 1.0), 2.0, 100, seed=4, whiten_noise=True)
        np.testing.assert_allclose(q_matrix(obj, ref), 4.0 * np.eye(2), atol=1e-12)

    def test_rejects_unbalanced_noise(self):
        with pytest.raises(ScorsValidationError):
            NoisyQuadraticObjective(np.eye(2), np.ones((3, 2)), np.zeros(2))

    def test_newton_recovers_exact_optimum(self, quadratic3):
        obj, ref = quadratic3
        computed = empirical_optimum(obj)
        np.testing.assert_allclose(computed.x_star, ref.x_star, atol=1e-9)
