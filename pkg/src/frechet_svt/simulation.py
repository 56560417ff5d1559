"""Monte Carlo harness for the estimator comparison study.

Each cell of the study fixes a sample size, covariate dimension, and
noise law, then runs independent trials comparing three fits: the
clean-covariate baseline (REF), the naive errors-in-variables fit (EIV,
threshold zero on noisy covariates), and the spectrally truncated fit
(SVT, threshold tuned on a grid). Responses are either random Gaussian
distributions in the Wasserstein geometry or vectors from a linear
model under a choice of norm.

Determinism: every random draw flows from ``default_rng`` seeded by
(master seed, cell key, purpose, trial index), so trial order and
worker count never change the results.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln, ndtri

from .metric_spaces import (
    ConvergenceError,
    DegenerateWeightsError,
    MetricSpace,
    WassersteinSpace,
    midpoint_grid,
    space_from_kind,
)
from .regression import Dataset, FittedModel, covariate_stats, thresholded_precision

ESTIMATORS = ("REF", "EIV", "SVT")


class TrialFailure(RuntimeError):
    """A solver failed inside one Monte Carlo trial."""

    def __init__(self, trial_index: int, cause: Exception):
        super().__init__(f"trial {trial_index} failed: {cause}")
        self.trial_index = trial_index
        self.cause = cause

_NOISE_KINDS = ("gaussian", "laplace")
_MODELS = ("wasserstein", "linear")
_LINEAR_METRICS = ("euclidean", "l1", "linf")

# Purpose tags for deriving independent random streams within a cell.
_BASIS, _EVAL, _MODEL_PARAMS, _TRIAL = 1, 2, 3, 4


@dataclass(frozen=True)
class SimConfig:
    """One study cell plus all data-generating parameters."""

    n: int
    p: int
    trials: int = 50
    test_size: int = 500
    eval_points: int = 100
    quantile_points: int = 101
    noise_kind: str = "gaussian"
    sigma_eps: float = 0.05
    sigma_eta: float = 0.5
    ig_shape: float = 18.0
    ig_scale: float = 17.0
    alpha_intercept: float = 1.0
    condition_number: float = 1e3
    lambda_points: int = 40
    master_seed: int = 0
    laplace_variance_matched: bool = False
    model: str = "wasserstein"
    linear_dim: int = 5
    metric: str = "euclidean"
    label: str = ""  # display name for reports; never feeds the rng

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < 1:
            raise ValueError("p must be positive")
        if min(self.trials, self.test_size, self.eval_points, self.quantile_points) < 1:
            raise ValueError("trials, test_size, eval_points, quantile_points must be positive")
        if self.lambda_points < 1:
            raise ValueError("lambda_points must be positive")
        if self.ig_shape <= 2:
            raise ValueError("ig_shape must exceed 2 for the scale noise to have finite variance")
        if self.condition_number <= 1:
            raise ValueError("condition_number must exceed 1")
        if self.sigma_eps < 0 or self.sigma_eta < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        if self.noise_kind not in _NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {_NOISE_KINDS}")
        if self.model not in _MODELS:
            raise ValueError(f"model must be one of {_MODELS}")
        if self.model == "linear" and self.metric not in _LINEAR_METRICS:
            raise ValueError(f"metric must be one of {_LINEAR_METRICS}")
        if self.model == "linear" and self.linear_dim < 1:
            raise ValueError("linear_dim must be positive")

    def cell_key(self) -> int:
        tag = f"{self.model}|{self.noise_kind}|{self.metric}|n={self.n}|p={self.p}|d={self.linear_dim}"
        return zlib.crc32(tag.encode())

    def display_name(self) -> str:
        if self.label:
            return self.label
        core = f"{self.noise_kind}-{self.n}x{self.p}"
        if self.model == "linear":
            return f"linear-{self.metric}-{core}"
        return core

    def rng(self, purpose: int, index: int | None = None):
        entropy = [int(self.master_seed), self.cell_key(), purpose]
        if index is not None:
            entropy.append(int(index))
        return np.random.default_rng(entropy)


@dataclass(frozen=True)
class TrialReport:
    """Per-trial training and prediction errors for the three fits."""

    index: int
    mse: dict
    mspe: dict
    lambda_hat: float


@dataclass(frozen=True)
class AggregateReport:
    """Monte-Carlo-aggregated squared bias, variance, and mean errors."""

    bias_sq: dict
    var: dict
    mse: dict
    mspe: dict


@dataclass(frozen=True)
class ThresholdProfile:
    """Trial-averaged normalized prediction error along the threshold grid."""

    lambdas: np.ndarray
    svt: np.ndarray
    ref: float
    eiv: float


@dataclass(frozen=True)
class CellResult:
    config: SimConfig
    trials: list
    report: AggregateReport
    profile: ThresholdProfile | None

    @property
    def lambda_hat_median(self) -> float:
        return float(np.median([t.lambda_hat for t in self.trials]))


def make_spectrum(p: int, condition_number: float = 1e3) -> np.ndarray:
    """Geometrically decaying eigenvalues rescaled so they sum to p.

    Interpolates from 1 down to 1/condition_number, then rescales; with
    the default ratio the top third of the spectrum carries roughly 90%
    of the total mass.
    """
    if p < 2:
        raise ValueError("need at least two dimensions to build a spectrum")
    if condition_number <= 1:
        raise ValueError("condition_number must exceed 1")
    decay = condition_number ** (-np.arange(p) / (p - 1))
    return p * decay / decay.sum()


def random_orthogonal(p: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def gen_covariates(n: int, p: int, spectrum, rng, basis: np.ndarray | None = None) -> np.ndarray:
    """Draw n Gaussian rows with covariance basis @ diag(spectrum) @ basis'.

    When no basis is supplied one is drawn from ``rng``; the harness
    fixes one basis per cell so every trial targets the same covariance.
    """
    spectrum = np.asarray(spectrum, dtype=float).ravel()
    if spectrum.size != p or np.any(spectrum <= 0):
        raise ValueError("spectrum must hold p positive eigenvalues")
    if basis is None:
        basis = random_orthogonal(p, rng)
    return (rng.standard_normal((n, p)) * np.sqrt(spectrum)) @ basis.T


def add_noise(x, kind: str, sigma_eps: float, rng, variance_matched: bool = False) -> np.ndarray:
    """Entrywise additive measurement noise, Gaussian or Laplace.

    The Laplace scale parameter is sigma_eps read literally (variance
    2 sigma_eps^2) unless ``variance_matched`` divides it by sqrt(2).
    """
    x = np.asarray(x, dtype=float)
    if sigma_eps < 0:
        raise ValueError("sigma_eps must be nonnegative")
    if sigma_eps == 0:
        return x.copy()
    if kind == "gaussian":
        return x + sigma_eps * rng.standard_normal(x.shape)
    if kind == "laplace":
        scale = sigma_eps / np.sqrt(2.0) if variance_matched else sigma_eps
        return x + rng.laplace(0.0, scale, size=x.shape)
    raise ValueError(f"unknown noise kind: {kind!r}")


def expected_tau(shape: float, scale: float) -> float:
    """Mean of tau where tau^2 is inverse-gamma: sqrt(s2) G(s1-1/2)/G(s1)."""
    if shape <= 0.5:
        raise ValueError("shape must exceed 1/2")
    return float(np.exp(0.5 * np.log(scale) + gammaln(shape - 0.5) - gammaln(shape)))


def draw_tau_squared(shape: float, scale: float, size: int, rng) -> np.ndarray:
    """Inverse-gamma draws as the scale over standard gamma variates."""
    return scale / rng.gamma(shape, 1.0, size=size)


def _slope_vector(p: int) -> np.ndarray:
    return np.full(p, p ** -0.5)


def gen_wasserstein_responses(x, config: SimConfig, rng) -> tuple[np.ndarray, dict]:
    """Random Gaussian distributions, one quantile row per covariate row.

    Row i is the quantile function of N(mu_i + eta_i, tau_i^2) on the
    midpoint grid, with mu_i = alpha + beta'x_i, beta = 1/sqrt(p),
    Gaussian location noise eta, and inverse-gamma scale noise tau^2.
    Returns the responses and the latent draws.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    base = ndtri(midpoint_grid(config.quantile_points))
    mu = config.alpha_intercept + x @ _slope_vector(config.p)
    eta = config.sigma_eta * rng.standard_normal(n)
    tau = np.sqrt(draw_tau_squared(config.ig_shape, config.ig_scale, n, rng))
    responses = (mu + eta)[:, None] + tau[:, None] * base[None, :]
    return responses, {"mu": mu, "eta": eta, "tau": tau}


def true_regression_quantile(x, config: SimConfig) -> np.ndarray:
    """The population regression surface at x: N(alpha + beta'x, E[tau]^2)."""
    x = np.asarray(x, dtype=float).ravel()
    base = ndtri(midpoint_grid(config.quantile_points))
    loc = config.alpha_intercept + float(x @ _slope_vector(config.p))
    return loc + expected_tau(config.ig_shape, config.ig_scale) * base


def gen_linear_responses(
    x,
    dim: int,
    rng,
    sigma_eta: float = 0.5,
    intercept: np.ndarray | None = None,
    slopes: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vector responses Y = intercept + X slopes + noise.

    Defaults draw intercept = 1 + 0.1 g and slopes = 1/sqrt(d) + 0.1 G
    with standard Gaussian g, G; pass both to pin the model. Returns
    (responses, intercept, slopes).
    """
    x = np.asarray(x, dtype=float)
    p = x.shape[1]
    if intercept is None:
        intercept = np.ones(dim) + 0.1 * rng.standard_normal(dim)
    if slopes is None:
        slopes = np.full((p, dim), dim ** -0.5) + 0.1 * rng.standard_normal((p, dim))
    noise = sigma_eta * rng.standard_normal((x.shape[0], dim)) if sigma_eta > 0 else 0.0
    return intercept + x @ slopes + noise, np.asarray(intercept), np.asarray(slopes)


def lambda_grid(top_eigenvalue: float, p: int, n: int, points: int = 40) -> np.ndarray:
    """Evenly spaced thresholds on (0, sqrt(top * p / n)]."""
    if top_eigenvalue <= 0:
        raise ValueError("top eigenvalue must be positive")
    if points < 1:
        raise ValueError("need at least one grid point")
    upper = np.sqrt(top_eigenvalue * p / n)
    return np.linspace(upper / points, upper, points)


def _model_at(stats, lam: float, responses, space) -> FittedModel:
    return FittedModel(
        stats=stats,
        lam=float(lam),
        svt_pinv=thresholded_precision(stats, lam),
        responses=responses,
        space=space,
    )


def _mean_squared_distance(model: FittedModel, covariates, responses) -> float:
    preds = model.predict_many(covariates)
    return float(np.mean(model.space.distances_to(responses, preds) ** 2))


def mspe_profile(train_noisy: Dataset, test: Dataset, grid) -> np.ndarray:
    """Out-of-sample error of the noisy-covariate fit along a threshold grid."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    stats = covariate_stats(train_noisy.covariates)
    out = np.empty(grid.size)
    for j, lam in enumerate(grid):
        model = _model_at(stats, lam, train_noisy.responses, train_noisy.space)
        out[j] = _mean_squared_distance(model, test.covariates, test.responses)
    return out


def tune_lambda(train_noisy: Dataset, test: Dataset, grid) -> float:
    """Threshold minimizing the out-of-sample error; ties pick the smallest."""
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    profile = mspe_profile(train_noisy, test, grid)
    return float(grid[int(np.argmin(profile))])


def evaluate_trial(
    train: Dataset, train_noisy: Dataset, test: Dataset, grid, index: int = 0
) -> TrialReport:
    """Fit REF, EIV, and tuned SVT, reporting training and test errors.

    In-sample errors are measured at the clean training covariates for
    every estimator (the noisy fits act as predictors of the responses
    at the true covariates); test covariates are noiseless too.
    """
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    stats_clean = covariate_stats(train.covariates)
    stats_noisy = covariate_stats(train_noisy.covariates)
    space = train.space
    ref = _model_at(stats_clean, 0.0, train.responses, space)
    eiv = _model_at(stats_noisy, 0.0, train_noisy.responses, space)
    profile = mspe_profile(train_noisy, test, grid)
    lam_hat = float(grid[int(np.argmin(profile))])
    svt = _model_at(stats_noisy, lam_hat, train_noisy.responses, space)
    mse = {
        "REF": _mean_squared_distance(ref, train.covariates, train.responses),
        "EIV": _mean_squared_distance(eiv, train.covariates, train.responses),
        "SVT": _mean_squared_distance(svt, train.covariates, train.responses),
    }
    mspe = {
        "REF": _mean_squared_distance(ref, test.covariates, test.responses),
        "EIV": _mean_squared_distance(eiv, test.covariates, test.responses),
        "SVT": float(profile.min()),
    }
    return TrialReport(index=index, mse=mse, mspe=mspe, lambda_hat=lam_hat)


def aggregate(trial_reports, eval_predictions, truths, space: MetricSpace) -> AggregateReport:
    """Fold per-trial results into bias-squared, variance, and mean errors.

    The across-trial center at each evaluation point is the equal-weight
    Frechet mean of the trial predictions; squared bias measures its
    distance to the truth and variance the spread of trials around it,
    both averaged over evaluation points.
    """
    if not trial_reports:
        raise ValueError("need at least one trial")
    truths = np.asarray(truths, dtype=float)
    n_eval = truths.shape[0]
    bias_sq: dict = {}
    var: dict = {}
    for est, preds in eval_predictions.items():
        preds = np.asarray(preds, dtype=float)
        n_trials = preds.shape[0]
        if preds.shape[1] != n_eval:
            raise ValueError("prediction and truth evaluation points disagree")
        ones = np.ones(n_trials)
        centers = np.stack([space.frechet_mean(preds[:, m], ones) for m in range(n_eval)])
        bias_sq[est] = float(np.mean(space.distances_to(truths, centers) ** 2))
        var[est] = float(
            np.mean(
                [np.mean(space.distances_to(preds[:, m], centers[m]) ** 2) for m in range(n_eval)]
            )
        )
    mse = {est: float(np.mean([t.mse[est] for t in trial_reports])) for est in ESTIMATORS}
    mspe = {est: float(np.mean([t.mspe[est] for t in trial_reports])) for est in ESTIMATORS}
    return AggregateReport(bias_sq=bias_sq, var=var, mse=mse, mspe=mspe)


def _cell_space(config: SimConfig) -> MetricSpace:
    if config.model == "wasserstein":
        return WassersteinSpace.with_uniform_grid(config.quantile_points)
    return space_from_kind(config.metric)


def _cell_fixtures(config: SimConfig):
    """Spectrum, eigenbasis, evaluation points, truths, and model params."""
    spectrum = make_spectrum(config.p, config.condition_number)
    basis = random_orthogonal(config.p, config.rng(_BASIS))
    eval_x = gen_covariates(config.eval_points, config.p, spectrum, config.rng(_EVAL), basis)
    if config.model == "wasserstein":
        truths = np.stack([true_regression_quantile(x, config) for x in eval_x])
        params = None
    else:
        rng = config.rng(_MODEL_PARAMS)
        intercept = np.ones(config.linear_dim) + 0.1 * rng.standard_normal(config.linear_dim)
        slopes = np.full((config.p, config.linear_dim), config.linear_dim ** -0.5)
        slopes = slopes + 0.1 * rng.standard_normal((config.p, config.linear_dim))
        truths = intercept + eval_x @ slopes
        params = (intercept, slopes)
    return spectrum, basis, eval_x, truths, params


def _run_trial(args):
    try:
        return _run_trial_inner(args)
    except (ConvergenceError, DegenerateWeightsError) as exc:
        raise TrialFailure(args[-1], exc) from exc


def _run_trial_inner(args):
    config, spectrum, basis, eval_x, profile_grid, params, b = args
    rng = config.rng(_TRIAL, b)
    space = _cell_space(config)
    x = gen_covariates(config.n, config.p, spectrum, rng, basis)
    if config.model == "wasserstein":
        y, _ = gen_wasserstein_responses(x, config, rng)
    else:
        y, _, _ = gen_linear_responses(x, config.linear_dim, rng, config.sigma_eta, *params)
    z = add_noise(x, config.noise_kind, config.sigma_eps, rng, config.laplace_variance_matched)
    x_new = gen_covariates(config.test_size, config.p, spectrum, rng, basis)
    if config.model == "wasserstein":
        y_new, _ = gen_wasserstein_responses(x_new, config, rng)
    else:
        y_new, _, _ = gen_linear_responses(x_new, config.linear_dim, rng, config.sigma_eta, *params)

    train = Dataset(x, y, space)
    noisy = Dataset(z, y, space)
    test = Dataset(x_new, y_new, space)

    stats_clean = covariate_stats(x)
    stats_noisy = covariate_stats(z)
    grid = lambda_grid(stats_noisy.eigenvalues[0], config.p, config.n, config.lambda_points)
    profile = mspe_profile(noisy, test, grid)
    lam_hat = float(grid[int(np.argmin(profile))])

    models = {
        "REF": _model_at(stats_clean, 0.0, y, space),
        "EIV": _model_at(stats_noisy, 0.0, y, space),
        "SVT": _model_at(stats_noisy, lam_hat, y, space),
    }
    mse = {
        "REF": _mean_squared_distance(models["REF"], x, y),
        "EIV": _mean_squared_distance(models["EIV"], x, y),
        "SVT": _mean_squared_distance(models["SVT"], x, y),
    }
    mspe = {
        "REF": _mean_squared_distance(models["REF"], x_new, y_new),
        "EIV": _mean_squared_distance(models["EIV"], x_new, y_new),
        "SVT": float(profile.min()),
    }
    report = TrialReport(index=b, mse=mse, mspe=mspe, lambda_hat=lam_hat)
    eval_preds = {est: models[est].predict_many(eval_x) for est in ESTIMATORS}

    profile_part = None
    if profile_grid is not None:
        null_pred = space.frechet_mean(y, np.ones(config.n))
        null_mspe = float(np.mean(space.distances_to(y_new, null_pred) ** 2))
        profile_part = (
            mspe_profile(noisy, test, profile_grid),
            mspe["REF"],
            mspe["EIV"],
            null_mspe,
        )
    return report, eval_preds, profile_part


def run_cell(config: SimConfig, workers: int = 1, with_profile: bool = True) -> CellResult:
    """Run every trial of one study cell and aggregate the results.

    Trials are independent given their derived seeds, so they can run in
    worker processes; aggregation folds them in trial order either way.
    """
    spectrum, basis, eval_x, truths, params = _cell_fixtures(config)
    profile_grid = None
    if with_profile:
        profile_grid = lambda_grid(spectrum[0], config.p, config.n, config.lambda_points)
    space = _cell_space(config)
    args = [
        (config, spectrum, basis, eval_x, profile_grid, params, b) for b in range(config.trials)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial, args))
    else:
        outcomes = [_run_trial(a) for a in args]

    reports = [out[0] for out in outcomes]
    eval_predictions = {
        est: np.stack([out[1][est] for out in outcomes]) for est in ESTIMATORS
    }
    report = aggregate(reports, eval_predictions, truths, space)

    profile = None
    if with_profile:
        svt_curves = np.stack([out[2][0] for out in outcomes])
        ref_vals = np.array([out[2][1] for out in outcomes])
        eiv_vals = np.array([out[2][2] for out in outcomes])
        null_vals = np.array([out[2][3] for out in outcomes])
        null_mean = float(null_vals.mean())
        profile = ThresholdProfile(
            lambdas=profile_grid,
            svt=svt_curves.mean(axis=0) / null_mean,
            ref=float(ref_vals.mean()) / null_mean,
            eiv=float(eiv_vals.mean()) / null_mean,
        )
    return CellResult(config=config, trials=reports, report=report, profile=profile)


def run_campaign(configs, workers: int = 1, with_profile: bool = True) -> list:
    return [run_cell(c, workers=workers, with_profile=with_profile) for c in configs]
