import dataclasses

import numpy as np
import pytest
from scipy.special import gammaln, ndtri

from frechet_svt.metric_spaces import EuclideanSpace, WassersteinSpace, midpoint_grid
from frechet_svt.regression import Dataset, covariate_stats, fit
from frechet_svt.simulation import (
    AggregateReport,
    SimConfig,
    aggregate,
    add_noise,
    draw_tau_squared,
    evaluate_trial,
    expected_tau,
    gen_covariates,
    gen_linear_responses,
    gen_wasserstein_responses,
    lambda_grid,
    make_spectrum,
    mspe_profile,
    run_cell,
    true_regression_quantile,
    tune_lambda,
)


def small_config(**overrides):
    base = dict(
        n=20,
        p=4,
        trials=3,
        test_size=25,
        eval_points=6,
        quantile_points=21,
        master_seed=7,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestSpectrum:
    def test_two_dimensional_closed_form(self):
        spectrum = make_spectrum(2, 1e3)
        expected = 2 * np.array([1.0, 1e-3]) / 1.001
        assert np.allclose(spectrum, expected, atol=1e-12)

    def test_trace_normalization(self):
        for p in [2, 7, 150]:
            assert abs(make_spectrum(p).sum() - p) <= 1e-10 * p

    def test_effective_low_rank_mass(self):
        spectrum = make_spectrum(150, 1e3)
        assert 0.85 <= spectrum[:50].sum() / 150 <= 0.95

    def test_rejects_scalar_dimension(self):
        with pytest.raises(ValueError):
            make_spectrum(1)


class TestCovariateGeneration:
    def test_deterministic_given_seed(self):
        spectrum = make_spectrum(3)
        a = gen_covariates(5, 3, spectrum, np.random.default_rng(0))
        b = gen_covariates(5, 3, spectrum, np.random.default_rng(0))
        assert np.array_equal(a, b)

    def test_isotropic_spectrum_gives_uncorrelated_columns(self):
        x = gen_covariates(50_000, 3, np.ones(3), np.random.default_rng(1))
        corr = np.corrcoef(x.T)
        assert np.max(np.abs(corr - np.eye(3))) < 0.03

    def test_sample_covariance_matches_target(self):
        rng = np.random.default_rng(2)
        spectrum = make_spectrum(3, 100.0)
        basis = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        x = gen_covariates(100_000, 3, spectrum, rng, basis)
        target = basis @ np.diag(spectrum) @ basis.T
        emp = x.T @ x / x.shape[0]
        assert np.max(np.abs(emp - target)) <= 0.05 * np.max(np.abs(target))


class TestNoise:
    def test_zero_scale_returns_copy(self):
        x = np.ones((3, 2))
        z = add_noise(x, "gaussian", 0.0, np.random.default_rng(0))
        assert np.array_equal(z, x)
        assert z is not x

    def test_gaussian_standard_deviation(self):
        rng = np.random.default_rng(3)
        z = add_noise(np.zeros((1000, 1000)), "gaussian", 0.05, rng)
        assert abs(z.std() - 0.05) <= 0.05 * 0.01

    def test_laplace_literal_scale(self):
        rng = np.random.default_rng(4)
        z = add_noise(np.zeros((1000, 1000)), "laplace", 0.05, rng)
        assert abs(z.std() - 0.05 * np.sqrt(2)) <= 0.05 * np.sqrt(2) * 0.01

    def test_laplace_variance_matched(self):
        rng = np.random.default_rng(5)
        z = add_noise(np.zeros((1000, 1000)), "laplace", 0.05, rng, variance_matched=True)
        assert abs(z.std() - 0.05) <= 0.05 * 0.01

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros((2, 2)), "cauchy", 0.1, np.random.default_rng(0))


class TestScaleNoise:
    def test_inverse_gamma_moments(self):
        rng = np.random.default_rng(6)
        tau_sq = draw_tau_squared(18.0, 17.0, 200_000, rng)
        assert abs(tau_sq.mean() - 1.0) <= 0.01  # 17 / (18 - 1)
        assert abs(tau_sq.var() - 0.0625) <= 0.01  # 17^2 / (17^2 * 16)

    def test_expected_tau_closed_form_vs_monte_carlo(self):
        want = float(np.exp(0.5 * np.log(17.0) + gammaln(17.5) - gammaln(18.0)))
        assert np.isclose(expected_tau(18.0, 17.0), want)
        rng = np.random.default_rng(7)
        tau = np.sqrt(draw_tau_squared(18.0, 17.0, 100_000, rng))
        assert abs(tau.mean() - want) <= 0.01 * want


class TestResponses:
    def test_rows_reconstruct_from_latents(self):
        cfg = small_config()
        rng = np.random.default_rng(8)
        x = gen_covariates(cfg.n, cfg.p, make_spectrum(cfg.p), rng)
        q, latents = gen_wasserstein_responses(x, cfg, rng)
        base = ndtri(midpoint_grid(cfg.quantile_points))
        rebuilt = (latents["mu"] + latents["eta"])[:, None] + latents["tau"][:, None] * base
        assert np.allclose(q, rebuilt, atol=1e-12)
        mu_expected = cfg.alpha_intercept + x @ np.full(cfg.p, cfg.p**-0.5)
        assert np.allclose(latents["mu"], mu_expected, atol=1e-12)

    def test_truth_at_origin_is_standardized_quantile(self):
        cfg = small_config()
        truth = true_regression_quantile(np.zeros(cfg.p), cfg)
        base = ndtri(midpoint_grid(cfg.quantile_points))
        want = cfg.alpha_intercept + expected_tau(cfg.ig_shape, cfg.ig_scale) * base
        assert np.allclose(truth, want, atol=1e-12)

    def test_truth_shift_equivariance(self):
        cfg = small_config()
        rng = np.random.default_rng(9)
        x = rng.standard_normal(cfg.p)
        delta = rng.standard_normal(cfg.p)
        shift = np.full(cfg.p, cfg.p**-0.5) @ delta
        a = true_regression_quantile(x, cfg)
        b = true_regression_quantile(x + delta, cfg)
        assert np.allclose(b - a, shift, atol=1e-12)

    def test_monte_carlo_mean_approaches_truth(self):
        cfg = small_config(n=10_000, p=3)
        rng = np.random.default_rng(10)
        x = rng.standard_normal(cfg.p)
        q, _ = gen_wasserstein_responses(np.tile(x, (cfg.n, 1)), cfg, rng)
        space = WassersteinSpace.with_uniform_grid(cfg.quantile_points)
        mean = space.frechet_mean(q, np.ones(cfg.n))
        assert space.distance(mean, true_regression_quantile(x, cfg)) <= 0.02

    def test_linear_responses_exact_when_noiseless(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((12, 4))
        intercept = np.ones(3)
        slopes = np.full((4, 3), 3**-0.5)
        y, a, b = gen_linear_responses(x, 3, rng, sigma_eta=0.0, intercept=intercept, slopes=slopes)
        assert np.allclose(y, intercept + x @ slopes, atol=1e-12)

    def test_linear_recovery_with_zero_threshold(self):
        # well-conditioned design so the OLS error is sampling-limited
        rng = np.random.default_rng(12)
        x = rng.standard_normal((20_000, 5))
        y, a, b = gen_linear_responses(x, 2, rng, sigma_eta=0.5)
        from frechet_svt.regression import pcr_coefficients
        from oracles import ols_with_intercept

        data = Dataset(x, y, EuclideanSpace())
        ybar, beta = pcr_coefficients(data, 0.0)
        _, slopes = ols_with_intercept(x, y)
        assert np.max(np.abs(beta - slopes)) <= 1e-8
        assert np.max(np.abs(beta - b)) <= 1e-2

    def test_linear_responses_deterministic(self):
        x = np.ones((4, 2))
        y1, *_ = gen_linear_responses(x, 2, np.random.default_rng(13))
        y2, *_ = gen_linear_responses(x, 2, np.random.default_rng(13))
        assert np.array_equal(y1, y2)


class TestLambdaGrid:
    def test_range_and_size(self):
        grid = lambda_grid(4.0, 10, 40, points=40)
        assert grid.size == 40
        assert grid[0] > 0
        assert np.isclose(grid[-1], np.sqrt(4.0 * 10 / 40))

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            lambda_grid(0.0, 5, 10)


def make_trial_data(cfg, rng, sigma_eps=None):
    spectrum = make_spectrum(cfg.p)
    space = WassersteinSpace.with_uniform_grid(cfg.quantile_points)
    x = gen_covariates(cfg.n, cfg.p, spectrum, rng)
    q, _ = gen_wasserstein_responses(x, cfg, rng)
    z = add_noise(x, cfg.noise_kind, cfg.sigma_eps if sigma_eps is None else sigma_eps, rng)
    xt = gen_covariates(cfg.test_size, cfg.p, spectrum, rng)
    qt, _ = gen_wasserstein_responses(xt, cfg, rng)
    return Dataset(x, q, space), Dataset(z, q, space), Dataset(xt, qt, space)


class TestEvaluateTrial:
    def test_zero_noise_makes_ref_and_eiv_identical(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(14), sigma_eps=0.0)
        grid = lambda_grid(covariate_stats(train.covariates).eigenvalues[0], cfg.p, cfg.n, 8)
        report = evaluate_trial(train, noisy, test, grid)
        assert report.mse["REF"] == report.mse["EIV"]
        assert report.mspe["REF"] == report.mspe["EIV"]

    def test_constant_responses_zero_errors(self):
        cfg = small_config()
        rng = np.random.default_rng(15)
        space = WassersteinSpace.with_uniform_grid(cfg.quantile_points)
        x = rng.standard_normal((cfg.n, cfg.p))
        q = np.tile(np.linspace(0, 1, cfg.quantile_points), (cfg.n, 1))
        xt = rng.standard_normal((10, cfg.p))
        qt = np.tile(np.linspace(0, 1, cfg.quantile_points), (10, 1))
        train = Dataset(x, q, space)
        test = Dataset(xt, qt, space)
        report = evaluate_trial(train, train, test, [0.5])
        for est in ("REF", "EIV", "SVT"):
            assert report.mse[est] <= 1e-16
            assert report.mspe[est] <= 1e-16

    def test_micro_instance_matches_independent_reimplementation(self):
        # full独立 recomputation: explicit pinv, explicit weights, explicit
        # means, explicit monotone projection via the partition oracle
        from oracles import monotone_lsq_partition_oracle

        cfg = small_config(n=5, p=2, quantile_points=5, test_size=4)
        rng = np.random.default_rng(16)
        train, noisy, test = make_trial_data(cfg, rng)
        grid = [0.3]
        report = evaluate_trial(train, noisy, test, grid)

        space = train.space
        w_levels = space.cell_weights

        def independent_mspe(covs, responses, lam, test_x, test_q):
            mu = covs.mean(axis=0)
            cen = covs - mu
            cov = cen.T @ cen / covs.shape[0]
            u, s, vt = np.linalg.svd(cov)
            s_inv = np.array([1 / v if v > lam else 0.0 for v in s])
            pinv = (vt.T * s_inv) @ u.T
            total = 0.0
            for xq, yq in zip(test_x, test_q):
                w = 1 + cen @ pinv @ (xq - mu)
                f = w @ responses / w.sum()
                proj = monotone_lsq_partition_oracle(f, w_levels)
                total += float(((proj - yq) ** 2) @ w_levels)
            return total / test_x.shape[0]

        expected = independent_mspe(
            noisy.covariates, noisy.responses, 0.3, test.covariates, test.responses
        )
        assert abs(report.mspe["SVT"] - expected) <= 1e-8

    def test_metrics_nonnegative(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(17))
        grid = lambda_grid(covariate_stats(noisy.covariates).eigenvalues[0], cfg.p, cfg.n, 5)
        report = evaluate_trial(train, noisy, test, grid)
        assert all(v >= 0 for v in report.mse.values())
        assert all(v >= 0 for v in report.mspe.values())


class TestTuneLambda:
    def test_single_point_grid(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(18))
        assert tune_lambda(noisy, test, [0.42]) == 0.42

    def test_plateau_tie_breaks_to_smallest(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(19), sigma_eps=0.0)
        floor = covariate_stats(train.covariates).eigenvalues[-1]
        grid = [floor * 0.1, floor * 0.3, floor * 0.6]  # all below smallest eigenvalue
        assert tune_lambda(train, test, grid) == grid[0]

    def test_argmin_matches_exhaustive_scan(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(20))
        grid = lambda_grid(covariate_stats(noisy.covariates).eigenvalues[0], cfg.p, cfg.n, 12)
        profile = mspe_profile(noisy, test, grid)
        assert tune_lambda(noisy, test, grid) == grid[int(np.argmin(profile))]

    def test_empty_grid_rejected(self):
        cfg = small_config()
        train, noisy, test = make_trial_data(cfg, np.random.default_rng(21))
        with pytest.raises(ValueError):
            tune_lambda(noisy, test, [])


class TestAggregate:
    def euclid_reports(self, preds, truths):
        # scalar Euclidean toy: build reports with zero errors, aggregate
        space = EuclideanSpace()
        reports = [
            dataclasses.replace(
                type("T", (), {})() if False else _plain_report(i), index=i
            )
            for i in range(preds.shape[0])
        ]
        return aggregate(reports, {"REF": preds, "EIV": preds, "SVT": preds}, truths, space)

    def test_single_trial_zero_variance(self):
        preds = np.array([[[1.0], [2.0]]])  # (B=1, M=2, scalar)
        truths = np.array([[1.5], [2.0]])
        report = self.euclid_reports(preds, truths)
        assert report.var["REF"] == 0.0
        assert np.isclose(report.bias_sq["REF"], (0.25 + 0.0) / 2)

    def test_identical_trials_zero_variance(self):
        preds = np.tile(np.array([[[1.0], [2.0]]]), (4, 1, 1))
        truths = np.array([[0.0], [2.0]])
        report = self.euclid_reports(preds, truths)
        assert report.var["REF"] == 0.0
        assert np.isclose(report.bias_sq["REF"], 0.5)

    def test_three_trial_hand_computation(self):
        # predictions 1, 2, 3 at one point: center 2, var 2/3
        preds = np.array([[[1.0]], [[2.0]], [[3.0]]])
        truths = np.array([[2.5]])
        report = self.euclid_reports(preds, truths)
        assert np.isclose(report.bias_sq["REF"], 0.25)
        assert np.isclose(report.var["REF"], 2.0 / 3.0)


def _plain_report(i):
    from frechet_svt.simulation import TrialReport

    zeros = {"REF": 0.0, "EIV": 0.0, "SVT": 0.0}
    return TrialReport(index=i, mse=dict(zeros), mspe=dict(zeros), lambda_hat=0.0)


class TestRunCell:
    def test_bit_identical_reruns(self):
        cfg = small_config()
        a = run_cell(cfg)
        b = run_cell(cfg)
        assert a.report == b.report
        assert [t.lambda_hat for t in a.trials] == [t.lambda_hat for t in b.trials]
        assert np.array_equal(a.profile.svt, b.profile.svt)
        assert a.profile.ref == b.profile.ref

    def test_bias_variance_decomposition_in_flat_geometry(self):
        # mean squared distance to truth = bias^2 + variance, pointwise
        cfg = small_config(trials=4)
        from frechet_svt.simulation import ESTIMATORS, _cell_fixtures, _run_trial

        spectrum, basis, eval_x, truths, params = _cell_fixtures(cfg)
        outs = [
            _run_trial((cfg, spectrum, basis, eval_x, None, params, b))
            for b in range(cfg.trials)
        ]
        space = WassersteinSpace.with_uniform_grid(cfg.quantile_points)
        preds = np.stack([o[1]["SVT"] for o in outs])  # (B, M, m)
        for m in range(cfg.eval_points):
            center = preds[:, m].mean(axis=0)
            total = np.mean(space.distances_to(preds[:, m], truths[m]) ** 2)
            bias_sq = space.distance(center, truths[m]) ** 2
            var = np.mean(space.distances_to(preds[:, m], center) ** 2)
            assert abs(total - (bias_sq + var)) <= 1e-8

    def test_svt_beats_eiv_when_grid_contains_plateau_point(self):
        cfg = small_config(trials=2, sigma_eps=0.0)
        from frechet_svt.simulation import _cell_fixtures

        spectrum, basis, eval_x, truths, params = _cell_fixtures(cfg)
        rng = cfg.rng(4, 0)
        x = gen_covariates(cfg.n, cfg.p, spectrum, rng, basis)
        q, _ = gen_wasserstein_responses(x, cfg, rng)
        z = add_noise(x, "gaussian", 0.02, rng)
        xt = gen_covariates(cfg.test_size, cfg.p, spectrum, rng, basis)
        qt, _ = gen_wasserstein_responses(xt, cfg, rng)
        space = WassersteinSpace.with_uniform_grid(cfg.quantile_points)
        train = Dataset(x, q, space)
        noisy = Dataset(z, q, space)
        test = Dataset(xt, qt, space)
        floor = covariate_stats(z).eigenvalues
        floor = floor[floor > 1e-10][-1]
        grid = np.concatenate([[floor * 0.5], lambda_grid(floor * 50, cfg.p, cfg.n, 6)])
        report = evaluate_trial(train, noisy, test, grid)
        assert report.mspe["SVT"] <= report.mspe["EIV"] + 1e-12

    def test_linear_model_cell_runs(self):
        cfg = small_config(model="linear", metric="euclidean", linear_dim=2, sigma_eps=0.3)
        cell = run_cell(cfg, with_profile=True)
        assert set(cell.report.mspe) == {"REF", "EIV", "SVT"}
        assert np.all(np.isfinite(cell.profile.svt))


class TestConfigValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            SimConfig(n=1, p=3)
        with pytest.raises(ValueError):
            SimConfig(n=5, p=3, ig_shape=2.0)
        with pytest.raises(ValueError):
            SimConfig(n=5, p=3, noise_kind="uniform")
        with pytest.raises(ValueError):
            SimConfig(n=5, p=3, condition_number=1.0)
        with pytest.raises(ValueError):
            SimConfig(n=5, p=3, model="quadratic")
