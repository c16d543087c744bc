"""
Synthetic meal/glucose datasets with known ground truth.

Glucose is sampled on a regular grid. Meals fall in three daytime windows.
Responses come from one of the generative models (GP draws from the
component kernels, or parametric bell curves). Every dataset carries its
noiseless truth so fitted models can be compared with the oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.utils import check_random_state

from .covariance import (
    GP_KINDS,
    BaselineParams,
    CoregParams,
    ModelParams,
    conv_magnitude,
    point_cov,
    response_points,
)
from .data import Dataset, PatientRecord
from .exceptions import ConfigError, DataValidationError
from .kernels import se_kernel
from .parametric import PARAMETRIC_KINDS, BellParams, bell_components

MODEL_KINDS = GP_KINDS + PARAMETRIC_KINDS


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one synthetic cohort.

    ``params`` is a :class:`ModelParams` (GP kinds) or :class:`BellParams`
    (parametric kinds); when ``None`` defaults are drawn from the seed. The
    patient baseline is a GP with ``baseline`` parameters around a
    per-patient level; ``noise_variance`` overrides the model's noise.
    """

    n_patients: int = 12
    days: int = 3
    meals_per_day: tuple = (3, 3)
    dosage_median: tuple = (40.0, 15.0)
    dosage_log_sd: tuple = (0.4, 0.5)
    components: tuple = ("carbs", "fat")
    kind: str = "gp-conv"
    params: object = None
    weight_median: tuple = (0.02, 0.02)
    weight_log_sd: float = 0.25
    baseline: BaselineParams = field(default_factory=lambda: BaselineParams(10.0, 0.05))
    level_mean: float = 5.5
    level_sd: float = 0.5
    noise_variance: float = 0.05
    grid_step: float = 0.25
    meal_time_resolution: float = 0.25
    meal_windows: tuple = ((7.0, 9.0), (11.5, 13.5), (17.5, 19.5))
    seed: int = 0

    def __post_init__(self):
        Q = len(self.components)
        if self.n_patients < 1 or self.days < 1:
            raise ConfigError("n_patients and days must be at least 1")
        lo, hi = self.meals_per_day
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid meals_per_day range {self.meals_per_day}")
        if len(self.dosage_median) != Q or len(self.dosage_log_sd) != Q or len(self.weight_median) != Q:
            raise ConfigError(f"dosage distributions and weight medians must have {Q} entries")
        if any(not w >= 0 for w in self.weight_median) or not self.weight_log_sd >= 0:
            raise ConfigError("weight medians and weight_log_sd must be non-negative")
        if any(not m > 0 for m in self.dosage_median) or any(not s > 0 for s in self.dosage_log_sd):
            raise ConfigError("dosage medians and log-sds must be positive")
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown generating kind {self.kind!r}")
        if not (self.grid_step > 0 and self.meal_time_resolution > 0):
            raise ConfigError("grid_step and meal_time_resolution must be positive")
        if not self.noise_variance >= 0 or not self.level_sd >= 0:
            raise ConfigError("noise_variance and level_sd must be non-negative")
        if not self.meal_windows or any(not 0 <= a < b <= 24 for a, b in self.meal_windows):
            raise ConfigError("meal windows must be non-empty sub-intervals of [0, 24]")

    @property
    def patient_ids(self):
        width = max(2, len(str(self.n_patients)))
        return tuple(f"P{i + 1:0{width}d}" for i in range(self.n_patients))

    @property
    def horizon(self):
        return 24.0 * self.days


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    """Noiseless signal at every generated row: ``total = baseline + components.sum(1)``."""

    patient_ids: np.ndarray
    times: np.ndarray
    baseline: np.ndarray
    components: np.ndarray      # (n, Q)
    total: np.ndarray
    params: object
    grid_step: float
    component_names: tuple = ()

    def __post_init__(self):
        err = np.max(np.abs(self.baseline + self.components.sum(axis=1) - self.total), initial=0.0)
        if err != 0.0:
            raise DataValidationError(f"truth is not additive (max error {err:g})")

    def __len__(self):
        return self.total.size


def default_generating_params(kind, patient_ids, components=("carbs", "fat"), random_state=None,
                              noise_variance=0.05, baseline=None, weight_median=None, weight_log_sd=0.25):
    """Moderate-magnitude parameters for each generating kind.

    Per-patient magnitudes scatter log-normally around ``weight_median``
    (default 0.02 per gram), so a 40 g carbohydrate meal moves glucose by
    roughly 1 unit.
    """
    rng = check_random_state(random_state)
    N, Q = len(patient_ids), len(components)
    baseline = baseline or BaselineParams(10.0, 0.05)
    med = np.full(Q, 0.02) if weight_median is None else np.asarray(weight_median, dtype=float)
    weights = med[None, :] * np.exp(weight_log_sd * rng.standard_normal((N, Q)))
    if kind in PARAMETRIC_KINDS:
        widths = np.array([0.4, 0.8, 0.6, 0.6][:Q] + [0.6] * max(0, Q - 4))
        widths = widths[None, :] * np.exp(0.1 * rng.standard_normal((N, Q)))
        if kind == "p-idr":
            return BellParams(kind, patient_ids, components, weights, widths[:, :1], max(noise_variance, 1e-6),
                              np.full(Q - 1, 2.0))
        return BellParams(kind, patient_ids, components, weights, widths, max(noise_variance, 1e-6))
    common = dict(kind=kind, patients=patient_ids, components=components, window=3.0,
                  baseline=baseline, noise_variance=max(noise_variance, 1e-6))
    if kind == "gp-conv":
        return ModelParams(lengthscales=(0.3,), coreg=CoregParams(weights, [0.01]),
                           shift_per_gram=(0.05,) * (Q - 1), spread_per_gram=(0.02,) * (Q - 1), **common)
    ls = (0.3,) + (0.8,) * (Q - 1)
    kappa = np.full(Q, 0.01)
    if kind == "gp-lfm":
        return ModelParams(lengthscales=ls, coreg=CoregParams(weights, kappa), decay=(1.0,) * Q,
                           sensitivity=(1.0,) * Q, **common)
    return ModelParams(lengthscales=ls, coreg=CoregParams(weights, kappa), **common)


def _mvn(rng, K, size=None):
    """Zero-mean Gaussian draws with covariance ``K`` (PSD, via eigh)."""
    n = K.shape[0]
    shape = (n,) if size is None else (size, n)
    if n == 0:
        return np.zeros(shape)
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal(shape)
    return z @ root.T


def _meal_schedule(cfg: SimConfig, rng):
    lo, hi = cfg.meals_per_day
    res = cfg.meal_time_resolution
    times = []
    for day in range(cfg.days):
        k = int(rng.randint(lo, hi + 1))
        n_win = len(cfg.meal_windows)
        wins = rng.choice(n_win, size=k, replace=k > n_win)
        for w in np.sort(wins):
            a, b = cfg.meal_windows[w]
            times.append(24.0 * day + np.round(rng.uniform(a, b) / res) * res)
    times = np.unique(np.asarray(times, dtype=float))
    Q = len(cfg.components)
    dos = np.exp(np.log(cfg.dosage_median)[None, :] + np.asarray(cfg.dosage_log_sd)[None, :]
                 * rng.standard_normal((times.size, Q)))
    return times, np.round(dos, 1).reshape(times.size, Q)


def draw_components(data: Dataset, params: ModelParams, random_state=None, size=None):
    """Draw per-component responses at the rows of ``data`` from the GP prior.

    Draws are taken at the response points (in-window observation/meal
    pairs) and summed per row, which reproduces the component covariances
    exactly. For gp-conv the total response is drawn once and split by the
    per-meal component shares.

    Returns
    -------
    ndarray of shape ``(n_obs, Q)`` or ``(size, n_obs, Q)``
    """
    rng = check_random_state(random_state)
    P = response_points(data, params)
    PI = P.incidence()
    Q = params.n_components
    m = 1 if size is None else size
    out = np.zeros((m, data.n_obs, Q))
    if params.kind == "gp-conv":
        g = _mvn(rng, point_cov(params, P, P, "response"), m)
        _, share = conv_magnitude(params, P)
        for q in range(Q):
            out[:, :, q] = np.asarray(PI @ (g * share[None, :, q]).T).T
    else:
        for q in range(Q):
            f = _mvn(rng, point_cov(params, P, P, q), m)
            out[:, :, q] = np.asarray(PI @ f.T).T
    return out[0] if size is None else out


def generate_dataset(cfg: SimConfig):
    """Sample a cohort from ``cfg``.

    Returns
    -------
    data : Dataset
    truth : SyntheticTruth
    """
    rng = check_random_state(cfg.seed)
    pids = cfg.patient_ids
    Q = len(cfg.components)
    grid = np.arange(0.0, cfg.horizon, cfg.grid_step)

    records, levels = [], []
    for pid in pids:
        mt, dos = _meal_schedule(cfg, rng)
        records.append(PatientRecord(pid, grid, np.zeros_like(grid), mt, dos if mt.size else np.zeros((0, Q))))
        levels.append(cfg.level_mean + cfg.level_sd * rng.standard_normal())
    data = Dataset(tuple(records), cfg.components)

    params = cfg.params
    if params is None:
        params = default_generating_params(cfg.kind, pids, cfg.components, rng, cfg.noise_variance, cfg.baseline,
                                           cfg.weight_median, cfg.weight_log_sd)
    if tuple(params.patients) != pids or tuple(params.components) != tuple(cfg.components):
        raise ConfigError("generating params do not match the configured patients/components")

    Kb = cfg.baseline.variance * se_kernel(grid[:, None], grid[None, :], cfg.baseline.lengthscale)
    baseline = np.concatenate([lvl + _mvn(rng, Kb) for lvl in levels])
    if cfg.kind in PARAMETRIC_KINDS:
        comps = bell_components(data, params)
    else:
        comps = draw_components(data, params, rng)
    total = baseline + comps.sum(axis=1)
    y = total + np.sqrt(cfg.noise_variance) * rng.standard_normal(total.size)
    truth = SyntheticTruth(data.obs_patient, data.times, baseline, comps, total, params, cfg.grid_step,
                           tuple(cfg.components))
    return data.with_values(y), truth


def oracle_predict(truth: SyntheticTruth, queries: Dataset):
    """Noiseless truth at the query rows; queries must lie on the generation grid."""
    step = truth.grid_step
    lookup = {(p, int(round(t / step))): i for i, (p, t) in enumerate(zip(truth.patient_ids, truth.times))}
    out = np.empty(queries.n_obs)
    for r, (p, t) in enumerate(zip(queries.obs_patient, queries.times)):
        k = int(round(t / step))
        i = lookup.get((p, k))
        if i is None or abs(truth.times[i] - t) > 1e-9:
            raise DataValidationError(f"query ({p}, {t}) is not on the generation grid; interpolation refused")
        out[r] = truth.total[i]
    return out
