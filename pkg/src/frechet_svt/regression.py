"""Globally weighted Frechet regression with spectral truncation.

The fitted object precomputes the covariate statistics and the
pseudoinverse of the hard-thresholded covariance; each prediction builds
the weight vector for the query point and solves one weighted Frechet
mean in the response space. For Euclidean responses the prediction has
the principal-component-regression closed form, exposed separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import RANK_RTOL, SvdFactors, compute_svd, symmetrize
from .metric_spaces import EuclideanSpace, MetricSpace


@dataclass(frozen=True)
class CovariateStats:
    """Sample mean, covariance, and the SVD of the centered design matrix."""

    mean: np.ndarray
    covariance: np.ndarray
    centered_svd: SvdFactors
    _eig: tuple = field(init=False, repr=False, default=None, compare=False)

    def __post_init__(self):
        # Eigendecomposition (descending) of the covariance, cached for the
        # per-threshold precision matrices used when sweeping the threshold.
        w, q = np.linalg.eigh(self.covariance)
        object.__setattr__(self, "_eig", (w[::-1].copy(), q[:, ::-1].copy()))

    @property
    def n(self) -> int:
        return self.centered_svd.left.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        """Covariance eigenvalues, descending."""
        return self._eig[0]

    @property
    def centered(self) -> np.ndarray:
        """The row-centered design matrix, reconstructed from its SVD."""
        return self.centered_svd.reconstruct()


def covariate_stats(x) -> CovariateStats:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("covariates must form an n-by-p matrix")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least two samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates have non-finite entries")
    mean = x.mean(axis=0)
    centered = x - mean
    covariance = symmetrize(centered.T @ centered / n)
    return CovariateStats(mean=mean, covariance=covariance, centered_svd=compute_svd(centered))


def thresholded_precision(stats: CovariateStats, lam: float) -> np.ndarray:
    """Pseudoinverse of the covariance after removing eigenvalues <= lam.

    Equals ``pseudoinverse(svt(covariance, lam))``; computed from the
    cached eigendecomposition so threshold sweeps cost one matrix product
    each. Eigenvalues below the numerical-rank cutoff never survive.
    """
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    w, q = stats._eig
    top = w[0] if w.size else 0.0
    if top <= 0.0:
        return np.zeros_like(stats.covariance)
    keep = (w > lam) & (w > RANK_RTOL * top)
    if not np.any(keep):
        return np.zeros_like(stats.covariance)
    qk = q[:, keep]
    return symmetrize((qk / w[keep]) @ qk.T)


def weight_vector(stats: CovariateStats, lam: float, x) -> np.ndarray:
    """Regression weights 1 + (X_i - mean)' [svt(cov, lam)]^+ (x - mean).

    The weights average to one exactly because the centered rows sum to
    zero; individual weights may be negative.
    """
    x = np.asarray(x, dtype=float).ravel()
    precision = thresholded_precision(stats, lam)
    return 1.0 + stats.centered @ (precision @ (x - stats.mean))


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix paired with metric-space responses of one kind."""

    covariates: np.ndarray
    responses: np.ndarray
    space: MetricSpace

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.responses, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("covariates must be an n-by-p matrix with n >= 2")
        if y.shape[0] != x.shape[0]:
            raise ValueError(f"{x.shape[0]} covariate rows but {y.shape[0]} responses")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]


@dataclass(frozen=True)
class FittedModel:
    """Frozen training state; predictions are lazy per-query solves."""

    stats: CovariateStats
    lam: float
    svt_pinv: np.ndarray
    responses: np.ndarray
    space: MetricSpace

    def weights(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return 1.0 + self.stats.centered @ (self.svt_pinv @ (x - self.stats.mean))

    def weight_matrix(self, queries) -> np.ndarray:
        """Weights for a batch of query points, one column per query."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        return 1.0 + self.stats.centered @ (self.svt_pinv @ (q - self.stats.mean).T)

    def predict(self, x) -> np.ndarray:
        return self.space.frechet_mean(self.responses, self.weights(x))

    def predict_many(self, queries) -> np.ndarray:
        return self.space.frechet_mean_many(self.responses, self.weight_matrix(queries))


def fit(data: Dataset, lam: float) -> FittedModel:
    stats = covariate_stats(data.covariates)
    return FittedModel(
        stats=stats,
        lam=float(lam),
        svt_pinv=thresholded_precision(stats, lam),
        responses=data.responses,
        space=data.space,
    )


def predict(model: FittedModel, x) -> np.ndarray:
    return model.predict(x)


def pcr_coefficients(data: Dataset, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Intercept and slope of the Euclidean-response closed form.

    Returns ``(ybar, beta)`` with ``beta = [svt(cov, lam)]^+ C`` where
    ``C`` is the covariate-response cross-covariance; predictions
    ``ybar + beta' (x - mean)`` coincide with the weighted-mean route.
    Responses regressed jointly column by column when vector-valued.
    """
    if not isinstance(data.space, EuclideanSpace):
        raise ValueError("principal-component coefficients need Euclidean responses")
    y = np.asarray(data.responses, dtype=float)
    squeeze = y.ndim == 1
    y2 = y[:, None] if squeeze else y
    stats = covariate_stats(data.covariates)
    ybar = y2.mean(axis=0)
    cross = stats.centered.T @ (y2 - ybar) / data.n
    beta = thresholded_precision(stats, lam) @ cross
    if squeeze:
        return float(ybar[0]), beta[:, 0]
    return ybar, beta
