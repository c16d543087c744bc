"""
Covariance functions over time-since-treatment.

All functions broadcast over NumPy arrays, so a scalar call and a Gram-matrix
call go through the same code::

    >>> import numpy as np
    >>> dt = np.array([0.25, 0.5, 1.0])
    >>> K = tlse_kernel(dt[:, None], dt[None, :], TlseParams(0.3, 3.0))

Every kernel here has unit marginal scale; amplitudes are carried by the
coregionalization weights assembled in :mod:`compositetrc.covariance`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import (
    DataValidationError,
    NumericalAccuracyError,
    ParameterDomainError,
)

#: Default node count per axis for the latent-force quadrature.
LFM_START_NODES = 32
#: Largest node count tried before giving up.
LFM_MAX_NODES = 1024
LFM_RTOL = 1e-6


def _check_positive(name, value):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)) or np.any(value <= 0):
        raise ParameterDomainError(f"{name} must be positive and finite, got {value!r}")


def _check_nonnegative(name, value):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)) or np.any(value < 0):
        raise ParameterDomainError(f"{name} must be non-negative and finite, got {value!r}")


@dataclass(frozen=True)
class TlseParams:
    """Lengthscale and effect window (both in hours) of a time-limited SE kernel."""

    lengthscale: float
    window: float

    def __post_init__(self):
        _check_positive("lengthscale", self.lengthscale)
        _check_positive("window", self.window)


@dataclass(frozen=True)
class LfmParams:
    """First-order latent force model: decay, sensitivity and the latent TLSE prior.

    ``n_nodes`` is the starting Gauss-Legendre node count per axis; the
    quadrature doubles it until successive estimates agree.
    """

    decay: float
    sensitivity: float
    latent: TlseParams
    n_nodes: int = LFM_START_NODES

    def __post_init__(self):
        _check_positive("decay", self.decay)
        _check_positive("sensitivity", self.sensitivity)
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 8:
            raise ParameterDomainError(f"n_nodes must be an integer >= 8, got {self.n_nodes}")


@dataclass(frozen=True)
class ConvFilterParams:
    """Dosage-to-filter mapping for the convolution kernel.

    ``shift_per_gram`` and ``spread_per_gram`` hold one entry per secondary
    component (components 2..Q); the driving component has none.
    """

    shift_per_gram: tuple
    spread_per_gram: tuple
    lengthscale: float

    def __post_init__(self):
        object.__setattr__(self, "shift_per_gram", tuple(float(v) for v in np.atleast_1d(self.shift_per_gram)))
        object.__setattr__(self, "spread_per_gram", tuple(float(v) for v in np.atleast_1d(self.spread_per_gram)))
        if len(self.shift_per_gram) != len(self.spread_per_gram):
            raise ParameterDomainError("shift_per_gram and spread_per_gram differ in length")
        _check_nonnegative("shift_per_gram", self.shift_per_gram)
        _check_nonnegative("spread_per_gram", self.spread_per_gram)
        _check_positive("lengthscale", self.lengthscale)


def se_kernel(dt, dt2, lengthscale):
    """Unit-variance squared exponential, ``exp(-0.5 (dt - dt2)^2 / l^2)``."""
    _check_positive("lengthscale", lengthscale)
    r = (np.asarray(dt, dtype=float) - np.asarray(dt2, dtype=float)) / lengthscale
    return np.exp(-0.5 * r * r)


def window_indicator(dt, window):
    """1 where ``0 < dt < window`` (strict on both ends), else 0."""
    _check_positive("window", window)
    dt = np.asarray(dt, dtype=float)
    return ((dt > 0.0) & (dt < window)).astype(float)


def tlse_kernel(dt, dt2, params: TlseParams):
    """SE kernel multiplied by the window indicator of both arguments."""
    return (
        se_kernel(dt, dt2, params.lengthscale)
        * window_indicator(dt, params.window)
        * window_indicator(dt2, params.window)
    )


@lru_cache(maxsize=None)
def _legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _lfm_gauss_legendre(r1, r2, decay, lengthscale, window, n):
    """Fixed-order tensor Gauss-Legendre estimate of the unscaled LFM integral.

    Returns ``exp(-D r1 - D r2) * int_0^r1 int_0^r2 exp(D u + D u') k_TLSE(u, u')``
    for every pair in ``r1 x r2``. The latent indicator vanishes beyond the
    window, so each axis integrates over ``[0, min(r, window)]``.
    """
    xi, w = _legendre(n)
    a1 = np.minimum(r1, window)
    a2 = np.minimum(r2, window)
    u1 = 0.5 * a1[:, None] * (1.0 + xi)  # (A, n)
    u2 = 0.5 * a2[:, None] * (1.0 + xi)  # (B, n)
    # fold the exponential tilt into the weights; exponents stay <= 0
    w1 = 0.5 * a1[:, None] * w * np.exp(decay * (u1 - r1[:, None]))
    w2 = 0.5 * a2[:, None] * w * np.exp(decay * (u2 - r2[:, None]))

    out = np.empty((r1.size, r2.size))
    inv2l2 = 0.5 / lengthscale**2
    chunk = max(1, int(4_000_000 // max(1, n * n * r2.size)))
    for s in range(0, r1.size, chunk):
        d = u1[s : s + chunk, :, None, None] - u2[None, None, :, :]
        k = np.exp(-inv2l2 * d * d)
        out[s : s + chunk] = np.einsum("ap,apbr,br->ab", w1[s : s + chunk], k, w2, optimize=True)
    return out


def lfm_kernel_matrix(dt, dt2, params: LfmParams, rtol=LFM_RTOL, max_nodes=LFM_MAX_NODES,
                      return_nodes=False):
    """Latent-force kernel between every pair of ``dt`` and ``dt2``.

    The double integral is estimated by tensor Gauss-Legendre quadrature. The
    node count starts at ``params.n_nodes`` and doubles until every entry
    changes by at most ``rtol`` relative to its magnitude.

    Raises
    ------
    DataValidationError
        If any relative time is negative.
    NumericalAccuracyError
        If ``max_nodes`` is reached without convergence.
    """
    r1 = np.atleast_1d(np.asarray(dt, dtype=float)).ravel()
    r2 = np.atleast_1d(np.asarray(dt2, dtype=float)).ravel()
    if np.any(r1 < 0) or np.any(r2 < 0):
        raise DataValidationError("latent force kernel is defined for relative times >= 0 only")
    if not (np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))):
        raise DataValidationError("relative times must be finite")
    lat = params.latent
    scale = params.sensitivity**2

    n = int(params.n_nodes)
    prev = _lfm_gauss_legendre(r1, r2, params.decay, lat.lengthscale, lat.window, n)
    worst = np.nan
    while 2 * n <= max_nodes:
        n *= 2
        cur = _lfm_gauss_legendre(r1, r2, params.decay, lat.lengthscale, lat.window, n)
        change = np.abs(cur - prev)
        if np.all(change <= rtol * np.abs(cur)):
            out = scale * cur
            return (out, n) if return_nodes else out
        worst = float(np.max(change / np.maximum(np.abs(cur), 1e-300)))
        prev = cur
    raise NumericalAccuracyError(
        f"LFM quadrature did not converge to rtol={rtol:g} within {max_nodes} nodes per axis "
        f"(last relative change {worst:.3g})"
    )


def lfm_kernel(dt, dt2, params: LfmParams, **kwargs):
    """Scalar latent-force kernel; see :func:`lfm_kernel_matrix`."""
    K = lfm_kernel_matrix(dt, dt2, params, **kwargs)
    if np.ndim(dt) == 0 and np.ndim(dt2) == 0:
        return float(K[0, 0])
    return K


def conv_filter_params(dosages, params: ConvFilterParams):
    """Shift and spread (hours) of the Gaussian filter for one or many meals.

    ``dosages`` holds all Q components with the driving component first; only
    components 2..Q enter the filter.
    """
    m = np.asarray(dosages, dtype=float)
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DataValidationError("dosages must be finite and non-negative")
    secondary = m[..., 1:]
    if secondary.shape[-1] != len(params.shift_per_gram):
        raise DataValidationError(
            f"expected {len(params.shift_per_gram) + 1} dosage components, got {m.shape[-1]}"
        )
    mu = secondary @ np.asarray(params.shift_per_gram)
    sigma = secondary @ np.asarray(params.spread_per_gram)
    if np.ndim(mu) == 0:
        return float(mu), float(sigma)
    return mu, sigma


def conv_kernel(dt, dt2, mu, sigma, mu2, sigma2, lengthscale):
    """Closed-form covariance of an SE latent smoothed by two Gaussian filters.

    With ``s2 = l^2 + sigma^2 + sigma2^2`` the value is
    ``l / sqrt(s2) * exp(-0.5 (dt - dt2 - mu + mu2)^2 / s2)``.
    """
    _check_positive("lengthscale", lengthscale)
    sigma = np.asarray(sigma, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma < 0) or np.any(sigma2 < 0):
        raise ParameterDomainError("filter spreads must be non-negative")
    s2 = lengthscale**2 + sigma**2 + sigma2**2
    d = np.asarray(dt, dtype=float) - np.asarray(dt2, dtype=float) - mu + mu2
    return lengthscale / np.sqrt(s2) * np.exp(-0.5 * d * d / s2)
