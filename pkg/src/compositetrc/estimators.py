"""
Estimators with the scikit-learn interface.

``fit`` takes a :class:`~compositetrc.data.Dataset` (its ``values`` are the
targets). ``predict`` and ``predict_decomposition`` take a query dataset
whose meal diaries drive the responses; predictions come back in original
glucose units.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .covariance import ModelParams, assemble_total_cov
from .data import Dataset, check_same_schema
from .exceptions import ConfigError
from .inference import PosteriorDecomposition, predict as gp_predict, stable_factorize
from .parametric import BellParams, bell_components, fit_parametric_map
from .preprocessing import Centerer
from .training import fit_continuous
from .validation import check_dataset, check_positive


class _TRCEstimator(BaseEstimator):
    kind = None

    def _check_common(self):
        if self.center not in ("mean", "zscore"):
            raise ConfigError(f"center must be 'mean' or 'zscore', got {self.center!r}")
        if int(self.n_restarts) < 1:
            raise ConfigError("n_restarts must be at least 1")

    def fit(self, data: Dataset, y=None):
        """Fit on ``data``; ``y`` is accepted for API symmetry and ignored."""
        check_dataset(data, min_obs=2)
        self._check_common()
        self.centerer_ = Centerer(self.center).fit(data)
        self.train_ = self.centerer_.transform(data)
        self.components_ = data.components
        self.training_rows_ = [(str(p), int(r), float(t)) for p, r, t in
                               zip(data.obs_patient, data.row_ids, data.times)]
        self._fit_centered(self.train_)
        return self

    def _queries(self, queries):
        check_is_fitted(self, "params_")
        check_dataset(queries, min_obs=0, name="queries")
        check_same_schema(self.train_, queries)
        return queries

    def predict(self, queries: Dataset, return_std=False):
        """Posterior mean of total glucose; with ``return_std`` also the predictive sd (noise included)."""
        dec = self.predict_decomposition(queries)
        if return_std:
            return dec.total_mean, np.sqrt(dec.total_var_noisy)
        return dec.total_mean

    def predict_decomposition(self, queries: Dataset) -> PosteriorDecomposition:
        queries = self._queries(queries)
        dec = self._decompose_centered(queries)
        off, sc = self.centerer_.row_offsets(queries)
        return dec.shifted(off, sc)

    def score(self, queries: Dataset, y=None):
        """Negative RMSE against ``queries.values`` (higher is better)."""
        pred = self.predict(queries)
        return -float(np.sqrt(np.mean((pred - queries.values) ** 2)))

    def to_dict(self):
        check_is_fitted(self, "params_")
        return {"estimator": type(self).__name__, "kind": self.kind, "estimator_params": self.get_params(),
                "model": self.params_.to_dict(), "centerer": self.centerer_.to_dict()}

    @classmethod
    def restore(cls, d, train: Dataset):
        """Rebuild a fitted estimator from :meth:`to_dict` and its original training data."""
        est = make_estimator(d["kind"], **d["estimator_params"])
        est.centerer_ = Centerer.from_dict(d["centerer"])
        est.train_ = est.centerer_.transform(train)
        est.components_ = train.components
        est.training_rows_ = [(str(p), int(r), float(t)) for p, r, t in
                              zip(train.obs_patient, train.row_ids, train.times)]
        est.params_ = (BellParams if d["kind"].startswith("p-") else ModelParams).from_dict(d["model"])
        est.diagnostics_ = None
        return est


class _GPEstimator(_TRCEstimator):

    def _fixed(self, n_components):
        raise NotImplementedError

    def _fit_centered(self, train):
        check_positive(self.window, "window")
        check_positive(self.baseline_lengthscale, "baseline_lengthscale")
        self.params_, self.diagnostics_ = fit_continuous(
            train, self._fixed(train.n_components), self.kind, random_state=self.random_state,
            n_restarts=int(self.n_restarts), max_evals=self.max_evals,
            quad_nodes=getattr(self, "quad_nodes", 32))

    def _decompose_centered(self, queries):
        cache = getattr(self, "_factor_cache", None)
        if cache is None or cache[0] is not self.params_:
            bundle = assemble_total_cov(self.train_, self.params_)
            cache = (self.params_, bundle, stable_factorize(bundle.K_total, self.params_.noise_variance))
            self._factor_cache = cache
        return gp_predict(self.train_, self.params_, queries, bundle=cache[1], factor=cache[2])


class GPResp(_GPEstimator):
    """Coregionalized response GP with a truncated (windowed) SE time kernel.

    Parameters
    ----------
    window : float
        Effect window T in hours.
    driving_lengthscale, secondary_lengthscale : float
        Time-kernel lengthscales of the first and of every further component.
    baseline_lengthscale : float
    center : {"mean", "zscore"}
    n_restarts : int
    max_evals : int or None
        Objective evaluations per restart (default scales with dimension).
    random_state : int, RandomState or None
    """

    kind = "gp-resp"

    def __init__(self, window=3.0, driving_lengthscale=0.3, secondary_lengthscale=0.8, baseline_lengthscale=10.0,
                 center="mean", n_restarts=3, max_evals=None, random_state=None):
        self.window = window
        self.driving_lengthscale = driving_lengthscale
        self.secondary_lengthscale = secondary_lengthscale
        self.baseline_lengthscale = baseline_lengthscale
        self.center = center
        self.n_restarts = n_restarts
        self.max_evals = max_evals
        self.random_state = random_state

    def _fixed(self, n_components):
        ls = (self.driving_lengthscale,) + (self.secondary_lengthscale,) * (n_components - 1)
        return {"window": self.window, "lengthscales": ls, "baseline_lengthscale": self.baseline_lengthscale}


class GPLFM(GPResp):
    """Latent-force response GP; each component's latent input drives a first-order ODE.

    Parameters are those of :class:`GPResp` plus ``quad_nodes``, the
    starting Gauss-Legendre order of the adaptive kernel quadrature.
    """

    kind = "gp-lfm"

    def __init__(self, window=3.0, driving_lengthscale=0.3, secondary_lengthscale=0.8, baseline_lengthscale=10.0,
                 center="mean", n_restarts=3, max_evals=None, random_state=None, quad_nodes=32):
        super().__init__(window, driving_lengthscale, secondary_lengthscale, baseline_lengthscale,
                         center, n_restarts, max_evals, random_state)
        self.quad_nodes = quad_nodes


class GPConv(_GPEstimator):
    """Convolution response GP: secondary dosages shift and widen the driving response.

    Parameters
    ----------
    window : float
    lengthscale : float
        Lengthscale of the latent driving response.
    baseline_lengthscale, center, n_restarts, max_evals, random_state
        As for :class:`GPResp`.
    """

    kind = "gp-conv"

    def __init__(self, window=3.0, lengthscale=0.3, baseline_lengthscale=10.0, center="mean", n_restarts=3,
                 max_evals=None, random_state=None):
        self.window = window
        self.lengthscale = lengthscale
        self.baseline_lengthscale = baseline_lengthscale
        self.center = center
        self.n_restarts = n_restarts
        self.max_evals = max_evals
        self.random_state = random_state

    def _fixed(self, n_components):
        return {"window": self.window, "lengthscales": (self.lengthscale,),
                "baseline_lengthscale": self.baseline_lengthscale}


class PResp(_TRCEstimator):
    """Hierarchical bell-curve model with a separate width per patient and component.

    Parameters
    ----------
    center : {"mean", "zscore"}
    n_restarts : int
    max_evals : int or None
    hierarchical : bool
        Use the shared log-normal priors (MAP); ``False`` gives per-patient least squares.
    random_state : int, RandomState or None
    """

    kind = "p-resp"

    def __init__(self, center="mean", n_restarts=3, max_evals=None, hierarchical=True, random_state=None):
        self.center = center
        self.n_restarts = n_restarts
        self.max_evals = max_evals
        self.hierarchical = hierarchical
        self.random_state = random_state

    def _fit_centered(self, train):
        self.params_, self.diagnostics_ = fit_parametric_map(
            train, self.kind, random_state=self.random_state, n_restarts=int(self.n_restarts),
            hierarchical=self.hierarchical, max_evals=self.max_evals)

    def _decompose_centered(self, queries):
        comps = bell_components(queries, self.params_)
        n, Q = comps.shape
        zero = np.zeros(n)
        s2 = np.full(n, self.params_.noise_variance)
        return PosteriorDecomposition(queries.obs_patient, queries.times, tuple(self.params_.components),
                                      comps.sum(axis=1), zero, s2, zero, zero, comps, np.zeros((n, Q)))


class PIDR(PResp):
    """Bell-curve model whose secondary widths are global multiples of the driving width."""

    kind = "p-idr"


ESTIMATORS = {"gp-resp": GPResp, "gp-lfm": GPLFM, "gp-conv": GPConv, "p-resp": PResp, "p-idr": PIDR}


def make_estimator(kind, window=None, lengthscales=None, baseline_lengthscale=None, **kwargs):
    """Estimator for ``kind`` configured from a grid point.

    ``lengthscales`` is the grid's tuple (driving first); remaining keyword
    arguments are passed to the constructor.
    """
    try:
        cls = ESTIMATORS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(ESTIMATORS)}") from None
    if cls in (PResp, PIDR):
        return cls(**kwargs)
    if window is not None:
        kwargs["window"] = window
    if baseline_lengthscale is not None:
        kwargs["baseline_lengthscale"] = baseline_lengthscale
    if lengthscales is not None:
        ls = tuple(np.atleast_1d(lengthscales).tolist())
        if cls is GPConv:
            kwargs["lengthscale"] = ls[0]
        else:
            kwargs["driving_lengthscale"] = ls[0]
            if len(ls) > 1:
                kwargs["secondary_lengthscale"] = ls[1]
    return cls(**kwargs)
