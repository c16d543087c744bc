"""Exact GP inference: factorization, marginal likelihood, posterior decomposition."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .covariance import (
    CovarianceBundle,
    ModelParams,
    assemble_total_cov,
    cross_cov,
    prior_cov,
)
from .data import Dataset
from .exceptions import DataValidationError, IllConditionedCovarianceError

logger = logging.getLogger(__name__)

JITTER_SCHEDULE = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Factorization:
    """Lower Cholesky factor of ``K + (noise + jitter) I``."""

    L: np.ndarray
    jitter: float

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, b):
        return sla.cho_solve((self.L, True), b, check_finite=False)

    def half_solve(self, b):
        """``L^{-1} b``."""
        return sla.solve_triangular(self.L, b, lower=True, check_finite=False)

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    @property
    def condition(self):
        """Cheap conditioning indicator: squared ratio of extreme factor pivots."""
        d = np.diag(self.L)
        return float((d.max() / d.min()) ** 2) if d.size else 1.0


@dataclass
class FitDiagnostics:
    log_marginal_likelihood: float
    jitter: float = 0.0
    condition: float = 1.0
    initial_log_marginal_likelihood: float = np.nan
    n_evaluations: int = 0
    restarts: list = field(default_factory=list)


def stable_factorize(K, noise_variance, schedule=JITTER_SCHEDULE) -> Factorization:
    """Cholesky of ``K + noise_variance * I`` with escalating diagonal jitter.

    Raises
    ------
    IllConditionedCovarianceError
        If the factorization fails even with the largest jitter.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DataValidationError(f"covariance must be square, got shape {K.shape}")
    n = K.shape[0]
    for jitter in schedule:
        A = K.copy()
        A[np.diag_indices(n)] += noise_variance + jitter
        try:
            L = sla.cholesky(A, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
        if jitter:
            logger.debug("cholesky needed jitter %.1e", jitter)
        return Factorization(L, jitter)
    raise IllConditionedCovarianceError(
        f"covariance not positive definite even with jitter {schedule[-1]:g} (n={n})"
    )


def log_marginal_likelihood(K, y, noise_variance, factor: Factorization = None):
    y = np.asarray(y, dtype=float)
    if factor is None:
        if y.shape != (np.shape(K)[0],):
            raise DataValidationError(f"y has shape {y.shape}, covariance {np.shape(K)}")
        factor = stable_factorize(K, noise_variance)
    z = factor.half_solve(y)
    return -0.5 * float(z @ z) - 0.5 * factor.logdet - 0.5 * y.size * LOG_2PI


def posterior_part(bundle: CovarianceBundle, cross, prior_at_query, y, noise_variance,
                   factor: Factorization = None):
    """Posterior mean and covariance of one additive part at the query points.

    ``cross`` is ``K_part(X*, X)`` and ``prior_at_query`` is ``K_part(X*, X*)``.
    """
    cross = np.atleast_2d(np.asarray(cross, dtype=float))
    prior_at_query = np.atleast_2d(np.asarray(prior_at_query, dtype=float))
    y = np.asarray(y, dtype=float)
    n = bundle.n
    if cross.shape[1] != n or y.shape != (n,) or prior_at_query.shape != (cross.shape[0],) * 2:
        raise DataValidationError(
            f"shape mismatch: cross {cross.shape}, prior {prior_at_query.shape}, y {y.shape}, n={n}"
        )
    if factor is None:
        factor = stable_factorize(bundle.K_total, noise_variance)
    mean = cross @ factor.solve(y)
    V = factor.half_solve(cross.T)
    cov = prior_at_query - V.T @ V
    return mean, cov


@dataclass(frozen=True, eq=False)
class PosteriorDecomposition:
    """Posterior of total signal, baseline and each component at query rows.

    Variances are marginal (per query row). ``total_var_noisy`` adds the
    observation noise and is what predictive metrics use.
    """

    patient_ids: np.ndarray
    times: np.ndarray
    components: tuple
    total_mean: np.ndarray
    total_var: np.ndarray
    total_var_noisy: np.ndarray
    baseline_mean: np.ndarray
    baseline_var: np.ndarray
    component_means: np.ndarray   # (n, Q)
    component_vars: np.ndarray    # (n, Q)
    n_clamped: int = 0

    def __len__(self):
        return self.total_mean.size

    def additivity_error(self):
        return float(np.max(np.abs(self.baseline_mean + self.component_means.sum(axis=1) - self.total_mean),
                            initial=0.0))

    def shifted(self, offset, scale=1.0):
        """Return the decomposition in original units: ``scale * x + offset``.

        The per-row offset is attributed to the baseline so that
        baseline + components still equals total.
        """
        offset = np.broadcast_to(np.asarray(offset, dtype=float), self.total_mean.shape)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), self.total_mean.shape)
        s2 = scale**2
        return PosteriorDecomposition(
            self.patient_ids, self.times, self.components,
            scale * self.total_mean + offset, s2 * self.total_var, s2 * self.total_var_noisy,
            scale * self.baseline_mean + offset, s2 * self.baseline_var,
            scale[:, None] * self.component_means, s2[:, None] * self.component_vars, self.n_clamped,
        )


def _clamp(var, counter):
    neg = var < 0
    counter[0] += int(neg.sum())
    return np.where(neg, 0.0, var)


def predict(data_train: Dataset, params: ModelParams, queries: Dataset, y=None,
            factor: Factorization = None, bundle: CovarianceBundle = None) -> PosteriorDecomposition:
    """Full posterior decomposition at the rows of ``queries``.

    ``y`` defaults to ``data_train.values`` (expected centered).
    """
    y = data_train.values if y is None else np.asarray(y, dtype=float)
    if bundle is None:
        bundle = assemble_total_cov(data_train, params)
    if factor is None:
        factor = stable_factorize(bundle.K_total, params.noise_variance)
    alpha = factor.solve(y)
    clamped = [0]

    def part(p):
        C = cross_cov(data_train, queries, params, p)
        prior_diag = np.diag(prior_cov(queries, params, p))
        V = factor.half_solve(C.T)
        var = prior_diag - np.einsum("ij,ij->j", V, V)
        return C @ alpha, _clamp(var, clamped)

    b_mean, b_var = part("baseline")
    Q = params.n_components
    c_mean = np.zeros((queries.n_obs, Q))
    c_var = np.zeros((queries.n_obs, Q))
    for q in range(Q):
        c_mean[:, q], c_var[:, q] = part(q)
    t_mean, t_var = part("total")
    if clamped[0]:
        logger.debug("clamped %d negative posterior variances", clamped[0])
    return PosteriorDecomposition(
        queries.obs_patient, queries.times, tuple(params.components),
        t_mean, t_var, t_var + params.noise_variance, b_mean, b_var, c_mean, c_var, clamped[0],
    )
