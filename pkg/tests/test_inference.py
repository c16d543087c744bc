import numpy as np
import pytest
from scipy.stats import multivariate_normal

from compositetrc.covariance import assemble_total_cov, cross_cov, prior_cov
from compositetrc.data import make_queries
from compositetrc.exceptions import DataValidationError, IllConditionedCovarianceError
from compositetrc.inference import (
    log_marginal_likelihood,
    posterior_part,
    predict,
    stable_factorize,
)

from .conftest import random_dataset, random_params

KINDS = ["gp-resp", "gp-lfm", "gp-conv"]


@pytest.mark.parametrize("y, expected", [
    (0.0, -0.5 * np.log(2 * np.pi)),
    (2.0, -2.0 - 0.5 * np.log(2 * np.pi)),
])
def test_lml_single_point(y, expected):
    assert log_marginal_likelihood(np.zeros((1, 1)), [y], 1.0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_lml_matches_gaussian_density(kind, rng):
    data = random_dataset(rng)
    p = random_params(rng, data, kind)
    K = assemble_total_cov(data, p).K_total
    y = data.values
    ref = multivariate_normal(np.zeros(y.size), K + p.noise_variance * np.eye(y.size)).logpdf(y)
    assert log_marginal_likelihood(K, y, p.noise_variance) == pytest.approx(ref, abs=1e-9)


def test_lml_permutation_invariant(rng):
    data = random_dataset(rng)
    p = random_params(rng, data, "gp-resp")
    K = assemble_total_cov(data, p).K_total
    y = data.values
    perm = rng.permutation(y.size)
    a = log_marginal_likelihood(K, y, p.noise_variance)
    b = log_marginal_likelihood(K[np.ix_(perm, perm)], y[perm], p.noise_variance)
    assert a == pytest.approx(b, abs=1e-10)


class TestFactorize:
    def test_no_jitter_when_not_needed(self):
        f = stable_factorize(np.eye(3), 0.1)
        assert f.jitter == 0.0
        np.testing.assert_allclose(f.L @ f.L.T, 1.1 * np.eye(3))

    def test_jitter_escalates(self):
        # rank-one matrix: singular without noise, factorable with a little jitter
        v = np.ones(4)
        f = stable_factorize(np.outer(v, v), 0.0)
        assert f.jitter > 0

    def test_fails_loudly(self):
        with pytest.raises(IllConditionedCovarianceError):
            stable_factorize(-np.eye(3), 0.0)

    @pytest.mark.parametrize("K", [np.zeros((2, 3)), np.zeros(3)])
    def test_shape_check(self, K):
        with pytest.raises(DataValidationError):
            stable_factorize(K, 1.0)


@pytest.mark.parametrize("kind", KINDS)
def test_posterior_matches_dense_inverse(kind, rng):
    data = random_dataset(rng)
    p = random_params(rng, data, kind)
    b = assemble_total_cov(data, p)
    queries = make_queries(data, np.arange(0.0, 8.0, 0.5))
    y = data.values
    A = np.linalg.inv(b.K_total + p.noise_variance * np.eye(b.n))
    dec = predict(data, p, queries, y)
    for part, mean, var in [("total", dec.total_mean, dec.total_var), ("baseline", dec.baseline_mean, dec.baseline_var),
                            (0, dec.component_means[:, 0], dec.component_vars[:, 0])]:
        C = cross_cov(data, queries, p, part)
        np.testing.assert_allclose(mean, C @ A @ y, atol=1e-9)
        ref_var = np.diag(prior_cov(queries, p, part) - C @ A @ C.T)
        np.testing.assert_allclose(var, np.maximum(ref_var, 0), atol=1e-9)
        m2, cov = posterior_part(b, C, prior_cov(queries, p, part), y, p.noise_variance)
        np.testing.assert_allclose(m2, mean, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_decomposition_additive(kind, seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, max_obs=24)
    p = random_params(rng, data, kind)
    dec = predict(data, p, make_queries(data, np.linspace(-1.0, 9.0, 41)))
    assert dec.additivity_error() <= 1e-8
    assert np.all(dec.total_var_noisy == dec.total_var + p.noise_variance)


@pytest.mark.parametrize("kind", KINDS)
def test_posterior_variance_below_prior(kind, rng):
    data = random_dataset(rng)
    p = random_params(rng, data, kind)
    queries = make_queries(data, np.linspace(0.0, 8.0, 17))
    dec = predict(data, p, queries)
    assert np.all(dec.total_var <= np.diag(prior_cov(queries, p, "total")) + 1e-12)
    assert np.all(dec.baseline_var <= np.diag(prior_cov(queries, p, "baseline")) + 1e-12)
    assert np.all(dec.total_var >= 0) and np.all(dec.component_vars >= 0)


def well_conditioned_instance(rng, kind, min_eig=1e-6):
    """Random instance whose prior covariance has smallest eigenvalue >= ``min_eig``.

    The residual of a near-noiseless posterior along an eigenvector is
    ``noise / (lambda + noise)``, so interpolation is only exact when the
    prior itself is well conditioned.
    """
    while True:
        data = random_dataset(rng)
        p = random_params(rng, data, kind)
        p = p.replace(baseline=type(p.baseline)(float(rng.uniform(0.5, 2.0)), p.baseline.variance))
        if np.linalg.eigvalsh(assemble_total_cov(data, p).K_total).min() >= min_eig:
            return data, p


@pytest.mark.parametrize("kind", KINDS)
def test_noiseless_interpolation(kind, rng):
    for _ in range(5):
        data, p = well_conditioned_instance(rng, kind)
        dec = predict(data, p.replace(noise_variance=1e-10), data)
        np.testing.assert_allclose(dec.total_mean, data.values, atol=1e-3, rtol=0)


def test_shifted_keeps_additivity(rng):
    data = random_dataset(rng)
    p = random_params(rng, data, "gp-resp")
    dec = predict(data, p, data)
    sh = dec.shifted(5.0, 2.0)
    np.testing.assert_allclose(sh.total_mean, 2 * dec.total_mean + 5)
    np.testing.assert_allclose(sh.total_var, 4 * dec.total_var)
    assert sh.additivity_error() <= 1e-8
