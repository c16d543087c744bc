"""
Forward-chaining cross-validation, hyperparameter grid search and
likelihood-based fitting of the continuous parameters.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from sklearn.utils import check_random_state

from .covariance import (
    GP_KINDS,
    BaselineParams,
    CoregParams,
    ModelParams,
    _lfm_gram,
    assemble_total_cov,
    conv_magnitude,
    response_points,
)
from .data import Dataset
from .exceptions import (
    ConfigError,
    DegenerateFoldError,
    IllConditionedCovarianceError,
    NumericalError,
    OptimizationError,
    TrainingError,
)
from .inference import LOG_2PI, FitDiagnostics, log_marginal_likelihood, stable_factorize
from .kernels import conv_kernel, se_kernel, tlse_kernel

logger = logging.getLogger(__name__)

TRAIN_HOURS = 48.0

#: Starting values of the continuous parameters.
DEFAULTS = {
    "weights": 0.01, "kappa": 0.01, "noise_variance": 0.1, "baseline_variance": 0.5,
    "decay": 1.0, "sensitivity": 1.0, "shift_per_gram": 0.05, "spread_per_gram": 0.02,
}
#: Box constraints (natural scale) applied in log space.
BOUNDS = {
    "weights": (1e-6, 10.0), "kappa": (1e-8, 10.0), "noise_variance": (1e-6, 10.0),
    "baseline_variance": (1e-6, 100.0), "decay": (1e-2, 50.0), "sensitivity": (1e-2, 1e2),
    "shift_per_gram": (1e-6, 0.5), "spread_per_gram": (1e-6, 0.5),
}


# ---------------------------------------------------------------------------
# cross-validation splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CvSplit:
    """Split ``index`` trains on ``[train_start, train_stop)`` and validates on
    ``[train_stop, val_stop)``. Row indices refer to the stacked observations
    of the dataset the split was made from."""

    index: int
    train_start: float
    train_stop: float
    val_stop: float
    train_indices: np.ndarray
    validation_indices: np.ndarray

    def train_data(self, data: Dataset):
        return data.select_time(self.train_start, self.train_stop)

    def validation_data(self, data: Dataset):
        return data.select_time(self.train_stop, self.val_stop)


def make_forward_chaining_splits(data: Dataset, n_folds=4, start=0.0, stop=TRAIN_HOURS):
    """Equal-duration folds over ``[start, stop)``; split k trains on folds 1..k
    and validates on fold k+1, giving ``n_folds - 1`` splits."""
    if int(n_folds) != n_folds or n_folds < 2:
        raise ConfigError(f"n_folds must be an integer >= 2, got {n_folds}")
    if not stop > start:
        raise ConfigError(f"empty training window [{start}, {stop})")
    edges = np.linspace(start, stop, int(n_folds) + 1)
    t = data.times
    for f in range(int(n_folds)):
        if not np.any((t >= edges[f]) & (t < edges[f + 1])):
            raise DegenerateFoldError(f"fold {f + 1} [{edges[f]:g}, {edges[f + 1]:g}) h has no observations")
    splits = []
    for k in range(1, int(n_folds)):
        tr = np.flatnonzero((t >= start) & (t < edges[k]))
        va = np.flatnonzero((t >= edges[k]) & (t < edges[k + 1]))
        splits.append(CvSplit(k, float(start), float(edges[k]), float(edges[k + 1]), tr, va))
    return splits


def check_temporal_order(data: Dataset, split: CvSplit):
    """True when every validation time exceeds every training time per patient."""
    t, pid = data.times, data.obs_patient
    for p in np.unique(pid[split.validation_indices]):
        tr = t[split.train_indices][pid[split.train_indices] == p]
        va = t[split.validation_indices][pid[split.validation_indices] == p]
        if tr.size and va.size and not va.min() > tr.max():
            return False
    return True


# ---------------------------------------------------------------------------
# hyperparameter grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperGrid:
    windows: tuple = (2.5, 3.0, 3.5)
    driving_lengthscales: tuple = (0.25, 0.3, 0.35, 0.4)
    secondary_lengthscales: tuple = (0.7, 0.75, 0.8, 0.85)
    baseline_lengthscales: tuple = (5.0, 10.0, 15.0)

    def __post_init__(self):
        for name in ("windows", "driving_lengthscales", "secondary_lengthscales", "baseline_lengthscales"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if not vals or any(not v > 0 for v in vals):
                raise ConfigError(f"grid axis {name} must be non-empty and positive")
            object.__setattr__(self, name, vals)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("windows", "driving_lengthscales", "secondary_lengthscales",
                                   "baseline_lengthscales") if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**known)

    def points(self, kind, n_components=2):
        """Grid points in tie-break order (smaller window, then smaller lengthscales)."""
        if kind not in GP_KINDS:
            return [{}]
        uses_secondary = kind != "gp-conv" and n_components > 1
        sec = sorted(self.secondary_lengthscales) if uses_secondary else [None]
        out = []
        for T, l1, l2, lb in itertools.product(sorted(self.windows), sorted(self.driving_lengthscales),
                                               sec, sorted(self.baseline_lengthscales)):
            ls = (l1,) if l2 is None else (l1,) + (l2,) * (n_components - 1)
            out.append({"window": T, "lengthscales": ls, "baseline_lengthscale": lb})
        return out


# ---------------------------------------------------------------------------
# parameter vector <-> ModelParams
# ---------------------------------------------------------------------------

class ParamLayout:
    """Log-space packing of the continuous parameters of one model."""

    def __init__(self, kind, patients, components, fixed, quad_nodes=32):
        self.kind = kind
        self.patients = tuple(patients)
        self.components = tuple(components)
        self.fixed = dict(fixed)
        self.quad_nodes = quad_nodes
        N, Q = len(self.patients), len(self.components)
        n_kappa = 1 if kind == "gp-conv" else Q
        blocks = [("weights", N * Q), ("kappa", n_kappa), ("noise_variance", 1), ("baseline_variance", 1)]
        if kind == "gp-lfm":
            blocks += [("decay", Q), ("sensitivity", Q)]
        if kind == "gp-conv":
            blocks += [("shift_per_gram", Q - 1), ("spread_per_gram", Q - 1)]
        self.blocks = [(name, size) for name, size in blocks if size]
        self.size = sum(s for _, s in self.blocks)
        self.lower = np.concatenate([np.full(s, np.log(BOUNDS[n][0])) for n, s in self.blocks])
        self.upper = np.concatenate([np.full(s, np.log(BOUNDS[n][1])) for n, s in self.blocks])

    def default_vector(self):
        return np.concatenate([np.full(s, np.log(DEFAULTS[n])) for n, s in self.blocks])

    def unpack(self, theta):
        out, i = {}, 0
        for name, s in self.blocks:
            out[name] = np.exp(theta[i : i + s])
            i += s
        return out

    def to_params(self, theta) -> ModelParams:
        v = self.unpack(np.asarray(theta, dtype=float))
        N, Q = len(self.patients), len(self.components)
        f = self.fixed
        return ModelParams(
            kind=self.kind, patients=self.patients, components=self.components,
            window=f["window"], lengthscales=tuple(f["lengthscales"]),
            baseline=BaselineParams(f["baseline_lengthscale"], float(v["baseline_variance"][0])),
            coreg=CoregParams(v["weights"].reshape(N, Q), v["kappa"]),
            noise_variance=float(v["noise_variance"][0]),
            decay=tuple(v["decay"]) if "decay" in v else None,
            sensitivity=tuple(v["sensitivity"]) if "sensitivity" in v else None,
            shift_per_gram=tuple(v.get("shift_per_gram", ())) if self.kind == "gp-conv" else None,
            spread_per_gram=tuple(v.get("spread_per_gram", ())) if self.kind == "gp-conv" else None,
            quad_nodes=self.quad_nodes,
        )

    def from_params(self, params: ModelParams):
        parts = []
        for name, s in self.blocks:
            if name == "weights":
                v = params.coreg.weights.ravel()
            elif name == "kappa":
                v = params.coreg.kappa
            elif name == "noise_variance":
                v = [params.noise_variance]
            elif name == "baseline_variance":
                v = [params.baseline.variance]
            else:
                v = getattr(params, name)
            parts.append(np.log(np.clip(np.asarray(v, dtype=float), *BOUNDS[name])))
        return np.concatenate(parts)

    def tie_matrix(self):
        """Linear map from a reduced vector (weights shared across patients) to full theta."""
        N, Q = len(self.patients), len(self.components)
        red = 0
        cols_total = self.size - N * Q + Q
        E = np.zeros((self.size, cols_total))
        i = 0
        for name, s in self.blocks:
            if name == "weights":
                for n in range(N):
                    for q in range(Q):
                        E[i + n * Q + q, red + q] = 1.0
                red += Q
            else:
                for k in range(s):
                    E[i + k, red + k] = 1.0
                red += s
            i += s
        return E


# ---------------------------------------------------------------------------
# structured log marginal likelihood
# ---------------------------------------------------------------------------

class StructuredLML:
    """Log marginal likelihood exploiting the block structure of ``K``.

    Rows split into *response rows* (inside at least one meal window) and
    the rest. The baseline-plus-noise part is block diagonal over patients,
    so the rest-rows are eliminated patient by patient and only the Schur
    complement over response rows needs a dense factorization. The result
    is identical (up to roundoff) to the dense ``log_marginal_likelihood``
    of the assembled bundle.
    """

    def __init__(self, data: Dataset, layout: ParamLayout):
        self.layout = layout
        self.data = data
        template = layout.to_params(layout.default_vector())
        self.template = template
        self.y = data.values.copy()
        self.n = self.y.size
        P = response_points(data, template)
        self.points = P
        rows_r = np.unique(P.obs)
        self.rows_r = rows_r
        pos = np.full(self.n, -1)
        pos[rows_r] = np.arange(rows_r.size)
        self.point_row = pos[P.obs]                   # point -> response-row position
        counts = np.bincount(self.point_row, minlength=rows_r.size)
        self.one_to_one = bool(np.all(counts == 1))
        if self.one_to_one:
            self.perm = np.empty(rows_r.size, int)
            self.perm[self.point_row] = np.arange(P.size)
        else:
            import scipy.sparse as sp
            self.Pr = sp.csr_matrix((np.ones(P.size), (self.point_row, np.arange(P.size))),
                                    shape=(rows_r.size, P.size))
        self.same = P.same_meal(P).astype(float)
        obs_pat = template.patient_index(data.obs_patient) if self.n else np.zeros(0, int)
        self.row_patient_r = obs_pat[rows_r]

        # baseline blocks (unit variance) per patient
        lb = layout.fixed["baseline_lengthscale"]
        self.blocks = []
        t = data.times
        is_r = pos >= 0
        for i in range(len(layout.patients)):
            rows = np.flatnonzero(obs_pat == i)
            if rows.size == 0:
                continue
            r = rows[is_r[rows]]
            o = rows[~is_r[rows]]
            blk = {
                "r_pos": pos[r],
                "Koo": se_kernel(t[o][:, None], t[o][None, :], lb),
                "Kro": se_kernel(t[r][:, None], t[o][None, :], lb),
                "Krr": se_kernel(t[r][:, None], t[r][None, :], lb),
                "y_o": self.y[o],
            }
            self.blocks.append(blk)
        self.y_r = self.y[rows_r]

        kind = layout.kind
        Q = len(layout.components)
        m = P.dosages
        if kind == "gp-resp":
            self.A, self.B = [], []
            for q in range(Q):
                Kt = tlse_kernel(P.dt[:, None], P.dt[None, :], template.tlse(q))
                self.A.append(self._project(np.outer(m[:, q], m[:, q]) * Kt))
                self.B.append(self._project(self.same * Kt))
        elif kind == "gp-lfm":
            self.mm = [np.outer(m[:, q], m[:, q]) for q in range(Q)]
            self._lfm_cache = {}
        else:
            self.delta = P.dt[:, None] - P.dt[None, :]

    def _project(self, R):
        if self.one_to_one:
            return R[np.ix_(self.perm, self.perm)]
        return np.asarray(self.Pr @ np.asarray(self.Pr @ R.T).T)

    def response_rr(self, params: ModelParams):
        kind = self.layout.kind
        W = params.coreg.weights
        P = self.points
        if kind == "gp-resp":
            K = np.zeros((self.rows_r.size,) * 2)
            for q in range(params.n_components):
                b = W[self.row_patient_r, q]
                K += np.outer(b, b) * self.A[q] + params.coreg.kappa[q] * self.B[q]
            return K
        if kind == "gp-lfm":
            R = np.zeros((P.size, P.size))
            for q in range(params.n_components):
                Kt = _lfm_gram(P.dt, P.dt, params.lfm(q))
                bp = W[P.patient, q]
                R += (np.outer(bp, bp) * self.mm[q] + params.coreg.kappa[q] * self.same) * Kt
            return self._project(R)
        f = params.conv_filter()
        mu = P.dosages[:, 1:] @ np.asarray(f.shift_per_gram)
        sg = P.dosages[:, 1:] @ np.asarray(f.spread_per_gram)
        Kc = conv_kernel(self.delta, 0.0, mu[:, None], sg[:, None], mu[None, :], sg[None, :], f.lengthscale)
        w, _ = conv_magnitude(params, P)
        return self._project((np.outer(w, w) + params.coreg.kappa[0] * self.same) * Kc)

    def __call__(self, params: ModelParams):
        vb, s2 = params.baseline.variance, params.noise_variance
        S = self.response_rr(params)
        yr = self.y_r.copy()
        quad, logdet = 0.0, 0.0
        for blk in self.blocks:
            rp = blk["r_pos"]
            Koo = vb * blk["Koo"]
            Koo[np.diag_indices_from(Koo)] += s2
            Brr = vb * blk["Krr"]
            Brr[np.diag_indices_from(Brr)] += s2
            if Koo.size:
                L = sla.cholesky(Koo, lower=True, check_finite=False)
                C = sla.solve_triangular(L, vb * blk["Kro"].T, lower=True, check_finite=False)
                z = sla.solve_triangular(L, blk["y_o"], lower=True, check_finite=False)
                quad += z @ z
                logdet += 2.0 * np.sum(np.log(np.diag(L)))
                if rp.size:
                    S[np.ix_(rp, rp)] += Brr - C.T @ C
                    yr[rp] -= C.T @ z
            elif rp.size:
                S[np.ix_(rp, rp)] += Brr
        if yr.size:
            Ls = sla.cholesky(S, lower=True, check_finite=False)
            w = sla.solve_triangular(Ls, yr, lower=True, check_finite=False)
            quad += w @ w
            logdet += 2.0 * np.sum(np.log(np.diag(Ls)))
        return -0.5 * quad - 0.5 * logdet - 0.5 * self.n * LOG_2PI

    def safe(self, params: ModelParams):
        """LML with dense jittered fallback; ``-inf`` when nothing works."""
        try:
            val = self(params)
            if np.isfinite(val):
                return val
        except (np.linalg.LinAlgError, ValueError):
            pass
        try:
            bundle = assemble_total_cov(self.data, params)
            return log_marginal_likelihood(bundle.K_total, self.y, params.noise_variance)
        except (NumericalError, np.linalg.LinAlgError, ValueError):
            return -np.inf


# ---------------------------------------------------------------------------
# continuous fit
# ---------------------------------------------------------------------------

def _nelder_mead(fun, x0, lower, upper, max_evals, step=0.5):
    n = x0.size
    simplex = np.vstack([x0] + [x0 + step * np.eye(n)[i] for i in range(n)])
    simplex = np.clip(simplex, lower, upper)
    # a vertex clipped onto x0 would make the simplex degenerate
    for i in range(n):
        if simplex[i + 1, i] == x0[i]:
            simplex[i + 1, i] = np.clip(x0[i] - step, lower[i], upper[i])
    res = minimize(fun, x0, method="Nelder-Mead", bounds=list(zip(lower, upper)),
                   options={"maxfev": int(max_evals), "initial_simplex": simplex,
                            "xatol": 1e-3, "fatol": 1e-3, "adaptive": n > 4})
    return res


def fit_continuous(data: Dataset, fixed: dict, kind: str, random_state=None, n_restarts=3,
                   max_evals=None, quad_nodes=32, init: ModelParams = None):
    """Maximize the log marginal likelihood over the continuous parameters.

    Parameters are optimized in log space with a bounded Nelder-Mead simplex,
    first with weights tied across patients, then untied. Restart 0 starts
    from the defaults (or ``init``); further restarts perturb each default by
    a factor drawn log-uniformly from [0.5, 2].

    Returns
    -------
    params : ModelParams
    diagnostics : FitDiagnostics
    """
    if kind not in GP_KINDS:
        raise ConfigError(f"fit_continuous handles {GP_KINDS}, got {kind!r}")
    if data.n_obs == 0:
        raise ConfigError("no training observations")
    if n_restarts < 1:
        raise ConfigError("n_restarts must be >= 1")
    rng = check_random_state(random_state)
    layout = ParamLayout(kind, data.patient_ids, data.components, fixed, quad_nodes=quad_nodes)
    lml = StructuredLML(data, layout)
    E = layout.tie_matrix()
    reduced_lower = np.linalg.lstsq(E, layout.lower, rcond=None)[0]
    reduced_upper = np.linalg.lstsq(E, layout.upper, rcond=None)[0]
    if max_evals is None:
        max_evals = 150 * E.shape[1] + 40 * layout.size

    counter = [0]

    def negll(theta):
        counter[0] += 1
        val = lml.safe(layout.to_params(theta))
        return -val if np.isfinite(val) else 1e20

    theta_init = layout.default_vector() if init is None else layout.from_params(init)
    init_lml = -negll(theta_init)
    best, restarts = None, []
    t0 = time.perf_counter()
    for r in range(n_restarts):
        start = counter[0]
        if r == 0:
            x0 = theta_init
        else:
            x0 = np.clip(theta_init + rng.uniform(np.log(0.5), np.log(2.0), theta_init.size),
                         layout.lower, layout.upper)
        try:
            red0 = np.linalg.lstsq(E, x0, rcond=None)[0]
            budget_a = max(50, int(max_evals * E.shape[1] / (E.shape[1] + layout.size)))
            res_a = _nelder_mead(lambda z: negll(E @ z), red0, reduced_lower, reduced_upper, budget_a)
            xa = E @ res_a.x
            # keep the untied stage from starting worse than x0 itself
            if negll(x0) < res_a.fun:
                xa = x0
            res_b = _nelder_mead(negll, xa, layout.lower, layout.upper,
                                 max(50, max_evals - (counter[0] - start)), step=0.3)
            x, f = res_b.x, res_b.fun
            if not np.isfinite(f) or f >= 1e20:
                raise OptimizationError("objective not finite at optimum")
        except (NumericalError, np.linalg.LinAlgError, ValueError) as e:
            restarts.append({"restart": r, "status": "failed", "error": str(e)})
            continue
        restarts.append({"restart": r, "status": "ok", "lml": -f, "evaluations": counter[0] - start})
        if best is None or f < best[1]:
            best = (x, f)
    if best is None:
        raise OptimizationError("all restarts failed", restarts)
    params = layout.to_params(best[0])
    bundle = assemble_total_cov(data, params)
    factor = stable_factorize(bundle.K_total, params.noise_variance)
    final = log_marginal_likelihood(bundle.K_total, data.values, params.noise_variance, factor)
    diag = FitDiagnostics(final, factor.jitter, factor.condition, init_lml, counter[0], restarts)
    logger.info("fit %s: lml %.3f (init %.3f), %d evaluations in %.1fs", kind, final, init_lml,
                counter[0], time.perf_counter() - t0)
    return params, diag


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSearchResult:
    best: dict
    best_score: float
    scores: list = field(default_factory=list)
    accessed_rows: np.ndarray = None


def grid_search(data: Dataset, grid: HyperGrid, kind: str, n_folds=4, train_stop=TRAIN_HOURS,
                train_start=0.0, estimator_kwargs=None, n_jobs=1):
    """Pick the grid point with the lowest mean validation RMSE.

    Only observations before ``train_stop`` are ever read. Points whose fits
    all fail are reported with status ``"failed"`` and excluded.
    """
    from .estimators import make_estimator

    estimator_kwargs = dict(estimator_kwargs or {})
    data = data.select_time(train_start, train_stop)
    splits = make_forward_chaining_splits(data, n_folds, train_start, train_stop)
    points = grid.points(kind, data.n_components)

    def evaluate(point):
        rmses, errors = [], []
        for s in splits:
            try:
                est = make_estimator(kind, **point, **estimator_kwargs).fit(s.train_data(data))
                val = s.validation_data(data)
                pred = est.predict(val)
                rmses.append(float(np.sqrt(np.mean((pred - val.values) ** 2))))
            except (NumericalError, ConfigError, ValueError) as e:
                errors.append(str(e))
                rmses.append(np.nan)
        ok = [r for r in rmses if np.isfinite(r)]
        status = "ok" if len(ok) == len(rmses) else ("failed" if not ok else "partial")
        return {"point": point, "split_rmse": rmses, "mean_rmse": float(np.mean(ok)) if ok else np.nan,
                "status": status, "errors": errors}

    if n_jobs == 1:
        scores = [evaluate(p) for p in points]
    else:
        from joblib import Parallel, delayed
        scores = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(evaluate)(p) for p in points)

    valid = [(i, s) for i, s in enumerate(scores) if s["status"] != "failed"]
    if not valid:
        raise TrainingError("every grid point failed")
    # points are enumerated in tie-break order, so min() keeps the earliest on ties
    i_best, s_best = min(valid, key=lambda t: (t[1]["mean_rmse"], t[0]))
    return GridSearchResult(s_best["point"], s_best["mean_rmse"], scores, data.row_ids)
