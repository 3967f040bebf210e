import numpy as np
import pytest

from scors.asymptotics import (
    asymptotics_report,
    clt_replicate,
    density_table,
    fit_log_slope,
    gamma_closed_form,
    gamma_monte_carlo,
    gamma_table,
    matrix_frame,
    mse_slope,
    rho_check,
    sigma_from_lyapunov,
    stationarity_matrix,
)
from scors.directions import DirectionKind, DirectionSampler
from scors.errors import (
    AdaptiveSamplerNotIID,
    InvalidSchedule,
    MissingProbs,
    NonSymmetric,
    RhoTooSmall,
    ScorsValidationError,
)
from scors.numkit import frobenius_relative_error, quadrature_sigma_oracle
from scors.objectives import make_noisy_quadratic
from scors.optimizer import NuPolicy, StepSchedule, build_sampler, snapshot_grid
from scors.tests.conftest import random_psd, random_spd


class TestGammaClosedForm:
    def test_uniform(self):
        np.testing.assert_array_equal(gamma_closed_form("U", np.eye(2)), 2.0 * np.eye(2))

    def test_gaussian(self):
        np.testing.assert_array_equal(gamma_closed_form(DirectionKind.GAUSSIAN, np.eye(5)), 7.0 * np.eye(5))

    def test_non_uniform(self):
        gamma = gamma_closed_form("NU", np.diag([1.0, 3.0]), probs=np.array([0.25, 0.75]))
        np.testing.assert_allclose(gamma, np.diag([4.0, 4.0]))

    def test_non_uniform_needs_probs(self):
        with pytest.raises(MissingProbs):
            gamma_closed_form("NU", np.eye(2))

    def test_spherical_is_scaled_gaussian(self, rng):
        q = random_psd(rng, 4)
        expected = (4 / (4 + 2.0)) * gamma_closed_form("G", q)
        np.testing.assert_array_equal(gamma_closed_form("S", q), expected)

    def test_isotropic_noise(self):
        q = np.eye(3)
        np.testing.assert_allclose(gamma_closed_form("S", q), 3.0 * q, rtol=1e-14)
        np.testing.assert_allclose(gamma_closed_form("U", q), 3.0 * q, rtol=1e-14)

    def test_sgd_is_q(self, rng):
        q = random_psd(rng, 3)
        np.testing.assert_array_equal(gamma_closed_form("SGD", q), q)

    def test_rejects_asymmetric(self):
        with pytest.raises(NonSymmetric):
            gamma_closed_form("U", np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestGammaMonteCarlo:
    @pytest.mark.parametrize(
        "sampler",
        [
            DirectionSampler.uniform(3),
            DirectionSampler.non_uniform(np.array([0.2, 0.3, 0.5])),
            DirectionSampler.gaussian(3),
            DirectionSampler.spherical(3),
        ],
        ids=["U", "NU", "G", "S"],
    )
    def test_matches_closed_form(self, rng, sampler):
        q = random_psd(rng, 3)
        closed = gamma_closed_form(sampler.kind, q, sampler.probs)
        estimate = gamma_monte_carlo(sampler, q, 200_000, rng)
        assert frobenius_relative_error(estimate, closed) <= 0.05

    def test_zero_noise(self, rng):
        estimate = gamma_monte_carlo(DirectionSampler.gaussian(3), np.zeros((3, 3)), 100_000, rng)
        np.testing.assert_array_equal(estimate, np.zeros((3, 3)))

    def test_needs_enough_draws(self, rng):
        with pytest.raises(ScorsValidationError):
            gamma_monte_carlo(DirectionSampler.uniform(2), np.eye(2), 1000, rng)

    def test_gamma_table(self, rng):
        q = random_psd(rng, 2)
        table = gamma_table(q, [DirectionSampler.uniform(2), None], 100_000, seed=3)
        assert list(table.columns) == ["method", "i", "j", "closed_form", "monte_carlo"]
        assert len(table) == 8
        assert set(table["method"]) == {"U", "SGD"}
        sgd = table[table["method"] == "SGD"]
        np.testing.assert_array_equal(sgd["closed_form"].to_numpy(), sgd["monte_carlo"].to_numpy())


class TestSigma:
    def test_scalar(self):
        sigma = sigma_from_lyapunov([[1.0]], [[2.5]])
        assert sigma[0, 0] == pytest.approx(2.5)

    def test_decoupled(self):
        sigma = sigma_from_lyapunov(np.diag([1.0, 2.0]), np.diag([3.0, 6.0]))
        np.testing.assert_allclose(sigma, np.diag([3.0, 2.0]), atol=1e-14)

    def test_step_constant(self):
        sigma = sigma_from_lyapunov(np.diag([1.0, 2.0]), np.diag([3.0, 7.0]), step_constant=2.0)
        np.testing.assert_allclose(sigma, np.diag([4.0, 4.0]), atol=1e-13)

    def test_matches_quadrature(self, rng):
        for _ in range(3):
            d = int(rng.integers(2, 5))
            h = random_spd(rng, d, 1.0, 2.0)
            gamma = random_psd(rng, d)
            expected = quadrature_sigma_oracle(stationarity_matrix(h), gamma)
            assert frobenius_relative_error(sigma_from_lyapunov(h, gamma), expected) <= 1e-6

    def test_linear_in_gamma(self, rng):
        h = random_spd(rng, 3, 1.0, 2.0)
        gamma = random_psd(rng, 3)
        np.testing.assert_allclose(sigma_from_lyapunov(h, 2.0 * gamma), 2.0 * sigma_from_lyapunov(h, gamma), rtol=1e-13)

    def test_rho_too_small(self):
        with pytest.raises(RhoTooSmall) as excinfo:
            sigma_from_lyapunov(np.diag([0.4, 2.0]), np.eye(2))
        assert excinfo.value.rho == pytest.approx(0.4)

    def test_larger_step_constant_rescues(self):
        sigma = sigma_from_lyapunov(np.diag([0.4, 2.0]), np.eye(2), step_constant=2.0)
        assert np.all(np.linalg.eigvalsh(sigma) > 0.0)

    def test_rho_check(self):
        assert rho_check(np.diag([0.75, 2.0])) == (pytest.approx(0.75), True)
        assert rho_check(np.diag([0.5, 1.0]))[1] is False


class TestReport:
    def test_quadratic(self, quadratic3, rng):
        obj, ref = quadratic3
        report = asymptotics_report(obj, ref, DirectionSampler.uniform(3), 100_000, rng)
        assert report.admissible
        assert report.rho == pytest.approx(obj.mu)
        assert report.lyapunov_residual <= 1e-8
        assert report.mc_relative_error <= 0.05
        np.testing.assert_allclose(report.sigma, report.sigma.T)
        summary = report.summary()
        assert summary["U.admissible"] is True
        assert "U.trace_sigma" in summary

    def test_not_admissible(self, rng):
        obj, ref = make_noisy_quadratic(2, (0.3, 0.4), 1.0, 50, seed=1)
        report = asymptotics_report(obj, ref, None, 100_000, rng)
        assert not report.admissible
        assert report.sigma is None
        assert report.method == "SGD"
        assert "SGD.trace_sigma" not in report.summary()


@pytest.fixture
def scalar_problem():
    return make_noisy_quadratic(1, (1.0, 1.0), 1.0, 1000, seed=21, whiten_noise=True)


class TestClt:
    def test_scalar_variance(self, scalar_problem):
        obj, ref = scalar_problem
        result = clt_replicate(obj, ref, DirectionSampler.uniform(1), StepSchedule(), 2000, 200, base_seed=5)
        assert result.predicted_sigma[0, 0] == pytest.approx(1.0)
        assert 0.6 <= result.sample_cov[0, 0] <= 1.4
        assert result.terminal.shape == (200, 1)
        assert list(result.terminal_frame().columns) == ["replicate", "z_1"]

    def test_needs_alpha_one(self, scalar_problem):
        obj, ref = scalar_problem
        with pytest.raises(InvalidSchedule):
            clt_replicate(obj, ref, DirectionSampler.uniform(1), StepSchedule(1.0, 0.8), 100, 10, base_seed=1)

    def test_needs_two_replicates(self, scalar_problem):
        obj, ref = scalar_problem
        with pytest.raises(ScorsValidationError):
            clt_replicate(obj, ref, DirectionSampler.uniform(1), StepSchedule(), 100, 1, base_seed=1)

    def test_adaptive_rejected(self, quadratic3):
        obj, ref = quadratic3
        with pytest.raises(AdaptiveSamplerNotIID):
            clt_replicate(
                obj,
                ref,
                build_sampler(DirectionKind.NON_UNIFORM, 3),
                StepSchedule(),
                100,
                4,
                base_seed=1,
                nu_policy=NuPolicy.ADAPTIVE,
            )

    def test_rho_too_small(self):
        obj, ref = make_noisy_quadratic(2, (0.3, 0.4), 1.0, 50, seed=1)
        with pytest.raises(RhoTooSmall):
            clt_replicate(obj, ref, DirectionSampler.uniform(2), StepSchedule(), 100, 4, base_seed=1)

    def test_static_nu_runs(self, quadratic3):
        obj, ref = quadratic3
        result = clt_replicate(
            obj, ref, build_sampler(DirectionKind.NON_UNIFORM, 3), StepSchedule(), 500, 5, base_seed=2
        )
        assert result.method == "NU"
        assert result.sample_cov.shape == (3, 3)
        assert result.norm_std > 0.0

    def test_density_table(self, rng):
        table = density_table(rng.standard_normal(10_000), 1.0)
        assert list(table.columns) == ["bin_left", "bin_right", "bin_center", "empirical_density", "normal_density"]
        widths = table["bin_right"] - table["bin_left"]
        assert float((table["empirical_density"] * widths).sum()) == pytest.approx(1.0)


class TestMseSlope:
    def test_fit_log_slope_exact(self):
        grid = np.array([10, 100, 1000, 10_000])
        slope, intercept, start = fit_log_slope(grid, 3.0 / grid)
        assert slope == pytest.approx(-1.0, abs=1e-12)
        assert intercept == pytest.approx(np.log(3.0))
        assert start == 100

    def test_fit_log_slope_short_grid(self):
        grid = np.array([10, 20, 40])
        _, _, start = fit_log_slope(grid, 1.0 / grid)
        assert start == 10

    def test_fit_log_slope_drops_zero_moments(self):
        grid = np.array([10, 100, 1000, 10_000])
        slope, _, _ = fit_log_slope(grid, np.array([1e-1, 1e-3, 0.0, 1e-7]))
        assert slope == pytest.approx(-2.0)

    def test_fit_log_slope_all_zero(self):
        slope, intercept, start = fit_log_slope(np.array([10, 100, 1000]), np.zeros(3))
        assert slope == -np.inf
        assert intercept == -np.inf
        assert start == 10

    def test_noiseless_run_hits_optimum(self):
        obj, ref = make_noisy_quadratic(1, (1.0, 1.0), 0.0, 10, seed=3)
        result = mse_slope(obj, ref, DirectionSampler.uniform(1), StepSchedule(), 1, snapshot_grid(1000, 8), 3, 1)
        assert not np.isnan(result.slope)
        assert result.slope <= -1.0
        frame = result.to_frame()
        assert np.all(np.isfinite(frame["fitted"]))

    def test_second_moment_decays_like_one_over_n(self):
        obj, ref = make_noisy_quadratic(2, (1.0, 1.0), 1.0, 100, seed=8)
        result = mse_slope(
            obj, ref, DirectionSampler.uniform(2), StepSchedule(), 1, snapshot_grid(20_000, 12), 50, base_seed=4
        )
        assert result.slope == pytest.approx(-1.0, abs=0.2)
        frame = result.to_frame()
        assert list(frame.columns) == ["n", "epoch", "mean_moment", "fitted"]
        assert len(frame) == result.grid.size

    def test_warnings_reported(self, quadratic3):
        obj, ref = quadratic3
        result = mse_slope(obj, ref, DirectionSampler.uniform(3), StepSchedule(2.0, 1.0), 2, (10, 100, 200), 2, 1)
        assert any("p*c*mu" in w for w in result.warnings)

    def test_validation(self, quadratic3):
        obj, ref = quadratic3
        with pytest.raises(ScorsValidationError):
            mse_slope(obj, ref, DirectionSampler.uniform(3), StepSchedule(), 0, (10, 100), 2, 1)
        with pytest.raises(ScorsValidationError):
            mse_slope(obj, ref, DirectionSampler.uniform(3), StepSchedule(), 1, (10,), 2, 1)


def test_matrix_frame():
    frame = matrix_frame(np.eye(2))
    assert list(frame.columns) == ["row", "c1", "c2"]
    assert frame["row"].tolist() == [1, 2]
