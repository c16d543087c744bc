import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compositetrc.exceptions import DataValidationError, NumericalAccuracyError, ParameterDomainError
from compositetrc.kernels import (
    ConvFilterParams,
    LfmParams,
    TlseParams,
    _lfm_gauss_legendre,
    conv_filter_params,
    conv_kernel,
    lfm_kernel,
    lfm_kernel_matrix,
    se_kernel,
    tlse_kernel,
    window_indicator,
)

from .oracles import lfm_trapezoid

pos = st.floats(0.05, 5.0)
reltime = st.floats(-2.0, 5.0)


@pytest.mark.parametrize("dt, dt2, ls, expected", [
    (0.5, 0.5, 0.3, 1.0),
    (0.0, 0.3, 0.3, 0.6065306597126334),
])
def test_se_kernel_values(dt, dt2, ls, expected):
    assert se_kernel(dt, dt2, ls) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("ls", [0.0, -1.0, np.nan])
def test_se_kernel_rejects_bad_lengthscale(ls):
    with pytest.raises(ParameterDomainError):
        se_kernel(0.0, 1.0, ls)


@pytest.mark.parametrize("dt, window, expected", [(1.5, 3.0, 1), (-0.1, 3.0, 0), (3.0, 3.0, 0), (0.0, 3.0, 0)])
def test_window_indicator_is_strict(dt, window, expected):
    assert window_indicator(dt, window) == expected


@pytest.mark.parametrize("dt, dt2, expected", [(1.0, 1.0, 1.0), (1.0, 3.5, 0.0), (0.5, 0.8, np.exp(-0.5))])
def test_tlse_kernel_values(dt, dt2, expected):
    assert tlse_kernel(dt, dt2, TlseParams(0.3, 3.0)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(reltime, reltime, pos, pos)
def test_tlse_zero_outside_window(a, b, ls, window):
    p = TlseParams(ls, window)
    k = tlse_kernel(a, b, p)
    if window_indicator(a, window) == 0 or window_indicator(b, window) == 0:
        assert k == 0.0
    else:
        assert 0.0 < k <= 1.0


def test_kernels_symmetric_on_random_draws():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-1, 4, (2, 1000))
    ls = rng.uniform(0.1, 2, 1000)
    assert np.array_equal(se_kernel(a, b, ls[0]), se_kernel(b, a, ls[0]))
    p = TlseParams(0.3, 3.0)
    assert np.array_equal(tlse_kernel(a, b, p), tlse_kernel(b, a, p))
    mu, mu2, s, s2 = rng.uniform(0, 1, (4, 1000))
    k1 = conv_kernel(a, b, mu, s, mu2, s2, 0.4)
    k2 = conv_kernel(b, a, mu2, s2, mu, s, 0.4)
    np.testing.assert_allclose(k1, k2, rtol=0, atol=1e-15)
    lp = LfmParams(1.3, 0.7, TlseParams(0.4, 3.0))
    r = rng.uniform(0, 4, 40)
    K = lfm_kernel_matrix(r, r, lp)
    np.testing.assert_allclose(K, K.T, atol=1e-14)


def test_gram_matrices_psd():
    rng = np.random.default_rng(1)
    for _ in range(20):
        dt = rng.uniform(0.01, 2.99, 30)
        K = tlse_kernel(dt[:, None], dt[None, :], TlseParams(rng.uniform(0.2, 1.0), 3.0))
        assert np.linalg.eigvalsh(K).min() >= -1e-8
        mu, s = rng.uniform(0, 1, (2, 30))
        K = conv_kernel(dt[:, None], dt[None, :], mu[:, None], s[:, None], mu[None, :], s[None, :], 0.3)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


class TestLfm:
    p = LfmParams(1.0, 1.0, TlseParams(0.3, 3.0))

    def test_zero_elapsed_time_gives_zero(self):
        assert lfm_kernel(0.0, 1.7, self.p) == 0.0
        assert lfm_kernel(2.0, 0.0, self.p) == 0.0

    def test_matches_trapezoid_oracle(self):
        # reference computed independently on a 4001 x 4001 trapezoid grid
        assert lfm_kernel(1.0, 1.0, self.p) == pytest.approx(lfm_trapezoid(1.0, 1.0, 1.0, 1.0, 0.3, 3.0), abs=1e-6)

    def test_frozen_reference_value(self):
        # oracle value from lfm_trapezoid(1, 1, D=1, S=1, l=0.3, T=3) at n=4001, frozen
        assert lfm_kernel(1.0, 1.0, self.p) == pytest.approx(0.2347902433, abs=1e-6)

    def test_sensitivity_scales_quadratically(self):
        p2 = LfmParams(1.0, 2.5, TlseParams(0.3, 3.0))
        assert lfm_kernel(1.2, 0.7, p2) == pytest.approx(6.25 * lfm_kernel(1.2, 0.7, self.p), rel=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(DataValidationError):
            lfm_kernel(-0.1, 1.0, self.p)

    def test_node_doubling_self_convergence(self):
        r = np.linspace(0.1, 4.0, 12)
        K, n = lfm_kernel_matrix(r, r, self.p, return_nodes=True)
        K2 = _lfm_gauss_legendre(r, r, 1.0, 0.3, 3.0, 2 * n)
        assert np.max(np.abs(K - K2)) < 1e-7

    def test_nonconvergence_raises(self):
        p = LfmParams(1.0, 1.0, TlseParams(0.01, 3.0), n_nodes=8)
        with pytest.raises(NumericalAccuracyError):
            lfm_kernel_matrix([2.5], [2.5], p, max_nodes=16)

    @pytest.mark.parametrize("n", [4, 7, 8.5])
    def test_node_count_domain(self, n):
        with pytest.raises(ParameterDomainError):
            LfmParams(1.0, 1.0, TlseParams(0.3, 3.0), n_nodes=n)


class TestConv:
    f = ConvFilterParams((0.1,), (0.05,), 0.3)

    @pytest.mark.parametrize("fat, expected", [(0.0, (0.0, 0.0)), (4.0, (0.4, 0.2))])
    def test_filter_params(self, fat, expected):
        assert conv_filter_params([30.0, fat], self.f) == pytest.approx(expected, abs=1e-15)

    def test_filter_linear_in_dosage(self):
        mu, s = conv_filter_params([10.0, 3.0], self.f)
        mu2, s2 = conv_filter_params([10.0, 6.0], self.f)
        assert (mu2, s2) == pytest.approx((2 * mu, 2 * s), rel=1e-15)

    def test_negative_dosage_rejected(self):
        with pytest.raises(DataValidationError):
            conv_filter_params([10.0, -1.0], self.f)

    def test_zero_filter_reduces_to_se(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(-1, 4, (2, 1000))
        ls = rng.uniform(0.05, 3, 1000)
        np.testing.assert_allclose(conv_kernel(a, b, 0.0, 0.0, 0.0, 0.0, ls), se_kernel(a, b, ls),
                                   atol=1e-12, rtol=0)

    def test_peak_value(self):
        v = conv_kernel(1.4, 1.0, 0.6, 0.2, 0.2, 0.1, 0.3)
        assert v == pytest.approx(0.3 / np.sqrt(0.09 + 0.04 + 0.01), rel=1e-14)

    @pytest.mark.parametrize("sigma", [-0.1])
    def test_negative_spread_rejected(self, sigma):
        with pytest.raises(ParameterDomainError):
            conv_kernel(0.0, 0.0, 0.0, sigma, 0.0, 0.0, 0.3)
