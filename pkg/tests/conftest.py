import numpy as np
import pytest

from compositetrc.covariance import BaselineParams, CoregParams, ModelParams
from compositetrc.data import Dataset, PatientRecord


def random_dataset(rng, n_patients=3, max_meals=4, max_obs=20, Q=2, horizon=8.0, meal_grid=None):
    """Small random dataset; observation count summed over patients stays <= ``max_obs``."""
    recs = []
    per = max(1, max_obs // n_patients)
    for i in range(n_patients):
        n = int(rng.integers(1, per + 1))
        t = np.sort(rng.choice(np.arange(0, horizon, 0.25), size=n, replace=False))
        k = int(rng.integers(0, max_meals + 1))
        mt = np.sort(rng.choice(np.arange(0, horizon, 0.5 if meal_grid is None else meal_grid), size=k, replace=False))
        dos = rng.uniform(0, 60, (k, Q)).round(1)
        recs.append(PatientRecord(f"p{i}", t, rng.normal(size=n), mt, dos))
    names = ("carbs", "fat", "protein", "fibre")[:Q]
    return Dataset(tuple(recs), names)


def random_params(rng, data, kind):
    N, Q = len(data), data.n_components
    common = dict(kind=kind, patients=data.patient_ids, components=data.components,
                  window=float(rng.uniform(2.0, 4.0)),
                  baseline=BaselineParams(float(rng.uniform(2, 15)), float(rng.uniform(0.05, 1.0))),
                  noise_variance=float(rng.uniform(0.01, 0.3)))
    W = rng.uniform(0.0, 0.05, (N, Q))
    if kind == "gp-conv":
        return ModelParams(lengthscales=(float(rng.uniform(0.2, 0.5)),), coreg=CoregParams(W, [rng.uniform(0, 0.1)]),
                           shift_per_gram=tuple(rng.uniform(0, 0.08, Q - 1)),
                           spread_per_gram=tuple(rng.uniform(0, 0.04, Q - 1)), **common)
    extra = {}
    if kind == "gp-lfm":
        extra = dict(decay=tuple(rng.uniform(0.3, 3, Q)), sensitivity=tuple(rng.uniform(0.5, 2, Q)))
    return ModelParams(lengthscales=tuple(rng.uniform(0.2, 1.0, Q)), coreg=CoregParams(W, rng.uniform(0, 0.1, Q)),
                       **extra, **common)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
