import math

import numpy as np
import pytest

from scors.directions import DirectionKind, DirectionSampler, sample
from scors.errors import DivergenceError, InvalidSchedule, ScorsValidationError
from scors.objectives import make_noisy_quadratic
from scors.optimizer import (
    SGD,
    GradientTable,
    InitPolicy,
    NuPolicy,
    SnapshotPolicy,
    StepSchedule,
    build_sampler,
    coordinate_cost,
    run,
    run_method,
    run_sgd_baseline,
    scors_step,
    static_nu_sampler,
    step_condition_warnings,
    step_size,
    traces_to_frame,
    unbiasedness_check,
    update_gradient_table,
)

METHODS = ["U", "NU", "G", "S", SGD]


class TestStepSchedule:
    def test_examples(self):
        assert step_size(StepSchedule(1.0, 1.0), 4) == 0.25
        assert step_size(StepSchedule(2.0, 0.75), 16) == pytest.approx(0.25)

    def test_strictly_decreasing(self):
        schedule = StepSchedule(1.5, 0.6)
        steps = [step_size(schedule, n) for n in range(1, 50)]
        assert all(a > b for a, b in zip(steps, steps[1:]))

    @pytest.mark.parametrize("c, alpha", [(1.0, 0.5), (1.0, 1.2), (0.0, 1.0), (-1.0, 0.8)])
    def test_rejected(self, c, alpha):
        with pytest.raises(InvalidSchedule):
            StepSchedule(c, alpha)

    def test_index_starts_at_one(self):
        with pytest.raises(ScorsValidationError):
            step_size(StepSchedule(), 0)

    def test_offset_shifts_the_index(self):
        schedule = StepSchedule(2.0, 1.0, offset=3)
        assert step_size(schedule, 1) == 0.5
        assert step_size(schedule, 97) == pytest.approx(0.02)

    def test_negative_offset_rejected(self):
        with pytest.raises(InvalidSchedule):
            StepSchedule(1.0, 1.0, offset=-1)

    def test_admissibility_metadata(self):
        meta = StepSchedule(0.5, 0.75, offset=10).admissibility()
        assert meta["offset"] == 10
        assert meta["sum_gamma_diverges"]
        assert meta["sum_gamma_squared_converges"]

    @pytest.mark.parametrize("method", ["U", "G", SGD])
    def test_runs_follow_the_offset(self, quadratic3, method):
        obj, ref = quadratic3
        schedule = StepSchedule(1.0, 1.0, offset=9)
        policy = SnapshotPolicy(iterations=(1, 40))
        trace = run_method(obj, method, schedule, 40, 1, reference=ref, snapshot_policy=policy)
        np.testing.assert_allclose(trace.gamma, [0.1, 1.0 / 49.0])


class TestScorsStep:
    def test_canonical_example(self):
        x = scors_step(np.array([1.0, 1.0]), 0.1, np.array([math.sqrt(2.0), 0.0]), np.array([2.0, 3.0]))
        np.testing.assert_allclose(x, [0.6, 1.0], atol=1e-15)

    def test_zero_gradient_is_fixed_point(self, rng):
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(scors_step(x, 0.3, rng.standard_normal(4), np.zeros(4)), x)

    def test_matches_outer_product(self, rng):
        x, v, g = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
        explicit = x - 0.2 * np.outer(v, v) @ g
        np.testing.assert_allclose(scors_step(x, 0.2, v, g), explicit, atol=1e-13)

    def test_canonical_changes_one_coordinate(self, rng):
        sampler = DirectionSampler.uniform(5)
        x = rng.standard_normal(5)
        for _ in range(20):
            updated = scors_step(x, 0.5, sample(sampler, rng), rng.standard_normal(5))
            assert np.count_nonzero(updated != x) <= 1
            x = updated

    def test_shape_mismatch(self):
        with pytest.raises(ScorsValidationError):
            scors_step(np.zeros(2), 0.1, np.zeros(3), np.zeros(2))


class TestGradientTable:
    def test_replace_row(self):
        table = GradientTable(np.array([[1.0, 0.0], [0.0, 1.0]]))
        update_gradient_table(table, 0, np.array([2.0, 2.0]))
        np.testing.assert_array_equal(table.aggregate, [2.0, 3.0])

    def test_replace_with_itself(self, rng):
        table = GradientTable(rng.standard_normal((5, 3)))
        before = table.aggregate.copy()
        update_gradient_table(table, 2, table.rows[2].copy())
        np.testing.assert_allclose(table.aggregate, before, atol=1e-12)

    def test_incremental_sum_tracks_resum(self, rng):
        table = GradientTable(rng.standard_normal((20, 4)))
        for k in rng.integers(0, 20, size=10_000):
            update_gradient_table(table, int(k), rng.standard_normal(4))
        np.testing.assert_allclose(table.aggregate, table.resum(), atol=1e-9)

    def test_from_objective(self, quadratic3):
        obj, _ = quadratic3
        table = GradientTable.from_objective(obj, np.zeros(3))
        np.testing.assert_allclose(table.aggregate, obj.n_components * obj.full_grad(np.zeros(3)), atol=1e-10)

    def test_index_checked(self):
        with pytest.raises(ScorsValidationError):
            update_gradient_table(GradientTable(np.zeros((2, 2))), 2, np.zeros(2))


class TestCoordinateCost:
    def test_costs(self):
        assert coordinate_cost("U", 50) == 1
        assert coordinate_cost(DirectionKind.NON_UNIFORM, 50) == 1
        assert coordinate_cost("G", 50) == 50
        assert coordinate_cost("S", 50) == 50
        assert coordinate_cost(SGD, 50) == 50


class TestPolicies:
    def test_snapshot_grid(self):
        iterations = SnapshotPolicy().iterations_for(1000)
        assert iterations[0] == 1
        assert iterations[-1] == 1000
        assert np.all(np.diff(iterations) > 0)
        assert iterations.size <= 200

    def test_explicit_snapshots(self):
        iterations = SnapshotPolicy(iterations=(10, 5, 500, 50)).iterations_for(100)
        assert iterations.tolist() == [5, 10, 50, 100]

    def test_gaussian_init_radius(self):
        x = InitPolicy("gaussian", 3.0).initial_point(4, seed=1, replicate=2)
        assert np.linalg.norm(x) == pytest.approx(3.0)

    def test_unknown_init(self):
        with pytest.raises(ScorsValidationError):
            InitPolicy("uniform")


class TestRun:
    def test_trace_shape(self, quadratic3):
        obj, ref = quadratic3
        trace = run(obj, DirectionSampler.uniform(3), StepSchedule(), 5000, seed=1, reference=ref)
        assert trace.iterations[-1] == 5000
        assert np.all(np.diff(trace.iterations) > 0)
        assert np.all(np.diff(trace.cumulative_cost) > 0)
        np.testing.assert_allclose(trace.dist**2, trace.dist_sq)
        assert trace.gamma[-1] == pytest.approx(1.0 / 5000)
        assert trace.initial_dist == pytest.approx(np.linalg.norm(ref.x_star))

    @pytest.mark.parametrize("method", METHODS)
    def test_deterministic(self, quadratic3, method):
        obj, ref = quadratic3
        a = run_method(obj, method, StepSchedule(), 3000, 4, reference=ref)
        b = run_method(obj, method, StepSchedule(), 3000, 4, reference=ref)
        np.testing.assert_array_equal(a.dist, b.dist)
        np.testing.assert_array_equal(a.final_iterate, b.final_iterate)

    def test_replicates_differ(self, quadratic3):
        obj, ref = quadratic3
        a = run_method(obj, "U", StepSchedule(), 1000, 4, reference=ref, replicate=0)
        b = run_method(obj, "U", StepSchedule(), 1000, 4, reference=ref, replicate=1)
        assert not np.array_equal(a.final_iterate, b.final_iterate)

    def test_sgd_cost_column(self, quadratic3):
        obj, ref = quadratic3
        trace = run_sgd_baseline(obj, StepSchedule(), 2000, seed=3, reference=ref)
        np.testing.assert_array_equal(trace.cumulative_cost, 3 * trace.iterations)

    def test_sgd_matches_uniform_scors_in_one_dimension(self):
        obj, ref = make_noisy_quadratic(1, (0.75, 2.0), 1.0, 30, seed=5)
        schedule = StepSchedule(1.0, 0.8)
        scors = run(obj, DirectionSampler.uniform(1), schedule, 5000, seed=9, reference=ref)
        sgd = run_sgd_baseline(obj, schedule, 5000, seed=9, reference=ref)
        np.testing.assert_array_equal(scors.final_iterate, sgd.final_iterate)
        np.testing.assert_array_equal(scors.dist, sgd.dist)
        np.testing.assert_array_equal(scors.cumulative_cost, sgd.cumulative_cost)

    @pytest.mark.parametrize("method", METHODS)
    def test_noiseless_convergence(self, noiseless_identity3, method):
        obj, ref = noiseless_identity3
        trace = run_method(obj, method, StepSchedule(), 20_000, 2, reference=ref)
        assert trace.final_relative_gap <= 1e-2

    def test_noisy_convergence_from_far_start(self, quadratic3):
        obj, ref = quadratic3
        init = InitPolicy("gaussian", 10.0)
        for replicate in range(3):
            trace = run_method(obj, "U", StepSchedule(), 20_000, 1, reference=ref, replicate=replicate, init=init)
            assert trace.final_relative_gap <= 0.1

    def test_static_nu_setup_cost(self, quadratic3):
        obj, ref = quadratic3
        trace = run(obj, build_sampler(DirectionKind.NON_UNIFORM, 3), StepSchedule(), 500, 1, reference=ref)
        assert trace.setup_cost == obj.n_components * 3
        expected = static_nu_sampler(obj, np.zeros(3)).probs
        np.testing.assert_allclose(trace.final_probs, expected)

    def test_adaptive_nu_refreshes_probabilities(self, quadratic3):
        obj, ref = quadratic3
        trace = run(
            obj,
            build_sampler(DirectionKind.NON_UNIFORM, 3),
            StepSchedule(),
            2000,
            1,
            reference=ref,
            nu_policy=NuPolicy.ADAPTIVE,
        )
        static = static_nu_sampler(obj, np.zeros(3)).probs
        assert trace.final_probs.sum() == pytest.approx(1.0)
        assert not np.allclose(trace.final_probs, static)

    def test_fixed_nu_keeps_given_probabilities(self, quadratic3):
        obj, ref = quadratic3
        sampler = DirectionSampler.non_uniform(np.array([0.2, 0.3, 0.5]))
        trace = run(obj, sampler, StepSchedule(), 500, 1, reference=ref, nu_policy=NuPolicy.FIXED)
        assert trace.setup_cost == 0
        np.testing.assert_allclose(trace.final_probs, [0.2, 0.3, 0.5])

    def test_divergence_guard(self, quadratic3):
        obj, ref = quadratic3
        with pytest.raises(DivergenceError) as excinfo:
            run(obj, DirectionSampler.uniform(3), StepSchedule(1000.0, 1.0), 1000, 1, reference=ref)
        assert excinfo.value.iteration >= 1

    def test_divergence_guard_uses_the_norm(self):
        # ||X_1|| = 2e9 spread over 100 coordinates
        obj, ref = make_noisy_quadratic(100, (1.0, 1.0), 0.0, 10, seed=2)
        init = InitPolicy("gaussian", radius=2e9)
        with pytest.raises(DivergenceError) as excinfo:
            run(obj, DirectionSampler.uniform(100), StepSchedule(0.01, 1.0), 50, 1, reference=ref, init=init)
        assert excinfo.value.iteration == 1
        assert excinfo.value.norm > 1e9

    def test_traces_to_frame(self, quadratic3):
        obj, ref = quadratic3
        traces = [run_method(obj, "S", StepSchedule(), 200, 1, reference=ref, replicate=r) for r in range(2)]
        frame = traces_to_frame(traces)
        assert list(frame.columns) == [
            "method", "replicate", "n", "cumulative_cost", "dist", "dist_sq", "gamma_n", "relative_gap",
        ]
        assert set(frame["replicate"]) == {0, 1}
        assert set(frame["method"]) == {"S"}


class TestUnbiasedness:
    @pytest.mark.parametrize("method", METHODS)
    def test_mean_direction_is_gradient(self, quadratic3, rng, method):
        obj, ref = quadratic3
        x = ref.x_star + 1.0
        if method == SGD:
            sampler = None
        elif method == "NU":
            sampler = static_nu_sampler(obj, np.zeros(3))
        else:
            sampler = DirectionSampler(DirectionKind(method), 3)
        assert unbiasedness_check(obj, sampler, x, 100_000, rng) <= 0.05


class TestStepConditions:
    def test_admissible(self):
        assert step_condition_warnings(1.0, 1.0, 0.75, 1) == []

    def test_two_c_mu(self):
        found = step_condition_warnings(1.0, 1.0, 0.4, 1)
        assert len(found) == 1
        assert "2*c*mu > 1" in found[0]

    def test_higher_moment(self):
        found = step_condition_warnings(1.2, 1.0, 1.0, 2)
        assert len(found) == 1
        assert "p*c*mu <= 2^alpha" in found[0]

    def test_unknown_mu(self):
        assert step_condition_warnings(5.0, 1.0, None, 1) == []
