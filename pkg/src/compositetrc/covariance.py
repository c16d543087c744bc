"""
Multi-patient, multi-meal covariance assembly.

The total covariance of the observed series is

    K = K_baseline + sum_q K_q

where ``K_baseline`` is a per-patient squared-exponential block and each
``K_q`` is a coregionalized response covariance: every (observation, meal)
pair inside the meal's effect window is a *response point*, and two points
covary as ``C[j, j'] * k_time(dt, dt')`` with
``C = W W^T + kappa * I`` over meals and ``W`` the dosage-scaled patient
weights. Observations outside every window still appear as rows; they only
carry baseline and noise.

For ``gp-conv`` the response is a single joint curve per meal with magnitude
``w_j = sum_q b_iq m_jq``. ``K_q`` is then the covariance between component
q's share of the response (``b_iq m_jq / w_j`` of it) and the total
response, which keeps ``K_total = K_baseline + sum_q K_q`` exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .data import Dataset, MealEvent, Observation
from .exceptions import (
    ConfigError,
    DataValidationError,
    NumericalError,
    ParameterDomainError,
    UnknownPatientError,
)
from .kernels import (
    LFM_START_NODES,
    ConvFilterParams,
    LfmParams,
    TlseParams,
    conv_filter_params,
    conv_kernel,
    lfm_kernel_matrix,
    se_kernel,
    tlse_kernel,
)

GP_KINDS = ("gp-resp", "gp-lfm", "gp-conv")


@dataclass(frozen=True)
class BaselineParams:
    lengthscale: float
    variance: float

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ParameterDomainError(f"baseline lengthscale must be positive, got {self.lengthscale}")
        if not self.variance >= 0:
            raise ParameterDomainError(f"baseline variance must be non-negative, got {self.variance}")


@dataclass(frozen=True, eq=False)
class CoregParams:
    """Per-patient dosage weights ``weights[i, q]`` and per-meal variances ``kappa``."""

    weights: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        k = np.array(self.kappa, dtype=float, ndmin=1)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ParameterDomainError("coregionalization weights must be finite and non-negative")
        if np.any(~np.isfinite(k)) or np.any(k < 0):
            raise ParameterDomainError("kappa must be finite and non-negative")
        w.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kappa", k)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Complete parameter set of one nonparametric model.

    Grid-fixed values: ``window``, ``lengthscales`` (one per component for
    gp-resp/gp-lfm, the single latent lengthscale for gp-conv) and
    ``baseline.lengthscale``. Everything else is fitted by likelihood.
    """

    kind: str
    patients: tuple
    components: tuple
    window: float
    lengthscales: tuple
    baseline: BaselineParams
    coreg: CoregParams
    noise_variance: float
    decay: tuple = None
    sensitivity: tuple = None
    shift_per_gram: tuple = None
    spread_per_gram: tuple = None
    quad_nodes: int = LFM_START_NODES
    _pindex: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in GP_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {GP_KINDS}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("patients", tuple(str(p) for p in self.patients))
        set_("components", tuple(self.components))
        set_("lengthscales", tuple(float(v) for v in np.atleast_1d(self.lengthscales)))
        Q, N = len(self.components), len(self.patients)
        if not self.window > 0:
            raise ParameterDomainError(f"effect window must be positive, got {self.window}")
        if any(not v > 0 for v in self.lengthscales):
            raise ParameterDomainError("lengthscales must be positive")
        if not self.noise_variance > 0:
            raise ParameterDomainError(f"noise variance must be positive, got {self.noise_variance}")
        if self.coreg.weights.shape != (N, Q):
            raise ParameterDomainError(f"weights shape {self.coreg.weights.shape} != ({N}, {Q})")
        n_len = 1 if self.kind == "gp-conv" else Q
        if len(self.lengthscales) != n_len:
            raise ParameterDomainError(f"{self.kind} needs {n_len} lengthscale(s), got {len(self.lengthscales)}")
        if self.coreg.kappa.shape != (n_len,):
            raise ParameterDomainError(f"{self.kind} needs {n_len} kappa value(s), got {self.coreg.kappa.shape}")
        if self.kind == "gp-lfm":
            for name in ("decay", "sensitivity"):
                v = getattr(self, name)
                if v is None or len(v) != Q or any(not x > 0 for x in v):
                    raise ParameterDomainError(f"gp-lfm needs {Q} positive {name} values")
                set_(name, tuple(float(x) for x in v))
        if self.kind == "gp-conv":
            for name in ("shift_per_gram", "spread_per_gram"):
                v = getattr(self, name)
                v = () if v is None else tuple(float(x) for x in np.atleast_1d(v))
                if len(v) != Q - 1 or any(not x >= 0 for x in v):
                    raise ParameterDomainError(f"gp-conv needs {Q - 1} non-negative {name} values")
                set_(name, v)
        set_("_pindex", {p: i for i, p in enumerate(self.patients)})

    @property
    def n_components(self):
        return len(self.components)

    def patient_index(self, patient_ids):
        try:
            return np.array([self._pindex[str(p)] for p in patient_ids], dtype=int)
        except KeyError as e:
            raise UnknownPatientError(f"patient {e.args[0]!r} has no fitted parameters") from None

    def tlse(self, q):
        return TlseParams(self.lengthscales[q], self.window)

    def lfm(self, q):
        return LfmParams(self.decay[q], self.sensitivity[q], self.tlse(q), self.quad_nodes)

    def conv_filter(self):
        return ConvFilterParams(self.shift_per_gram, self.spread_per_gram, self.lengthscales[0])

    def replace(self, **changes):
        changes.pop("_pindex", None)
        return replace(self, **changes)

    # -- serialization ------------------------------------------------
    def to_dict(self):
        d = {
            "kind": self.kind,
            "patients": list(self.patients),
            "components": list(self.components),
            "window": float(self.window),
            "lengthscales": list(self.lengthscales),
            "baseline_lengthscale": float(self.baseline.lengthscale),
            "baseline_variance": float(self.baseline.variance),
            "weights": self.coreg.weights.tolist(),
            "kappa": self.coreg.kappa.tolist(),
            "noise_variance": float(self.noise_variance),
            "quad_nodes": int(self.quad_nodes),
        }
        for name in ("decay", "sensitivity", "shift_per_gram", "spread_per_gram"):
            v = getattr(self, name)
            if v is not None:
                d[name] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"], patients=tuple(d["patients"]), components=tuple(d["components"]),
            window=d["window"], lengthscales=tuple(d["lengthscales"]),
            baseline=BaselineParams(d["baseline_lengthscale"], d["baseline_variance"]),
            coreg=CoregParams(np.array(d["weights"]), np.array(d["kappa"])),
            noise_variance=d["noise_variance"], decay=d.get("decay"), sensitivity=d.get("sensitivity"),
            shift_per_gram=d.get("shift_per_gram"), spread_per_gram=d.get("spread_per_gram"),
            quad_nodes=d.get("quad_nodes", LFM_START_NODES),
        )


@dataclass(frozen=True)
class CovarianceBundle:
    """Assembled prior covariance of the training rows, split by part."""

    K_total: np.ndarray
    K_baseline: np.ndarray
    K_components: tuple
    patient_ids: np.ndarray
    times: np.ndarray

    @property
    def n(self):
        return self.K_total.shape[0]


# ---------------------------------------------------------------------------
# scalar reference entries
# ---------------------------------------------------------------------------

def relative_times(obs_times, meal_time):
    """Hours elapsed since ``meal_time`` for each observation time."""
    return np.asarray(obs_times, dtype=float) - float(meal_time)


def baseline_cov(a: Observation, b: Observation, p: BaselineParams):
    if a.patient_id != b.patient_id:
        return 0.0
    return float(p.variance * se_kernel(a.time, b.time, p.lengthscale))


def _meal_list(meals, patient_id):
    try:
        m = meals[patient_id]
    except KeyError:
        raise UnknownPatientError(f"no meal record for patient {patient_id!r}") from None
    return m.meals() if hasattr(m, "meals") else list(m)


def _scalar_time_kernel(params: ModelParams, q, da, db, ma: MealEvent, mb: MealEvent):
    if params.kind == "gp-resp":
        return float(tlse_kernel(da, db, params.tlse(q)))
    if params.kind == "gp-lfm":
        return float(lfm_kernel_matrix(da, db, params.lfm(q))[0, 0])
    f = params.conv_filter()
    mu_a, s_a = conv_filter_params(ma.dosages, f)
    mu_b, s_b = conv_filter_params(mb.dosages, f)
    return float(conv_kernel(da, db, mu_a, s_a, mu_b, s_b, f.lengthscale))


def response_cross_cov(a: Observation, b: Observation, meals, q, params: ModelParams):
    """Response covariance between two observations, summed over meal pairs.

    ``meals`` maps patient id to that patient's meals (a :class:`Dataset`
    works). ``q=None`` returns the covariance of the whole response. For
    gp-conv a component index selects the covariance of component q's share
    at ``a`` with the total response at ``b``.
    """
    ia, ib = params.patient_index([a.patient_id, b.patient_id])
    W = params.coreg.weights
    T = params.window
    total = 0.0
    comps = range(params.n_components) if (q is None or params.kind == "gp-conv") else [q]
    for ma in _meal_list(meals, a.patient_id):
        da = a.time - ma.time
        if not 0.0 < da < T:
            continue
        for mb in _meal_list(meals, b.patient_id):
            db = b.time - mb.time
            if not 0.0 < db < T:
                continue
            same = a.patient_id == b.patient_id and ma.time == mb.time
            if params.kind == "gp-conv":
                wa = sum(W[ia, k] * ma.dosages[k] for k in comps)
                wb = sum(W[ib, k] * mb.dosages[k] for k in comps)
                c = wa * wb + (params.coreg.kappa[0] if same else 0.0)
                if q is not None:
                    c *= (W[ia, q] * ma.dosages[q] / wa) if wa > 0 else 1.0 / params.n_components
                total += c * _scalar_time_kernel(params, 0, da, db, ma, mb)
            else:
                for k in comps:
                    c = W[ia, k] * ma.dosages[k] * W[ib, k] * mb.dosages[k]
                    if same:
                        c += params.coreg.kappa[k]
                    total += c * _scalar_time_kernel(params, k, da, db, ma, mb)
    return total


# ---------------------------------------------------------------------------
# vectorized assembly over response points
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResponsePoints:
    """All in-window (observation, meal) pairs of a dataset."""

    obs: np.ndarray        # stacked observation row of each point
    patient: np.ndarray    # index into ModelParams.patients
    meal_time: np.ndarray
    dt: np.ndarray
    dosages: np.ndarray    # (n_points, Q)
    n_obs: int

    @property
    def size(self):
        return self.dt.size

    def incidence(self):
        """Sparse ``(n_obs, n_points)`` 0/1 matrix mapping points to rows."""
        return sp.csr_matrix((np.ones(self.size), (self.obs, np.arange(self.size))),
                             shape=(self.n_obs, self.size))

    def same_meal(self, other: "ResponsePoints"):
        return (self.patient[:, None] == other.patient[None, :]) & (
            self.meal_time[:, None] == other.meal_time[None, :])


def response_points(data: Dataset, params: ModelParams, window=None):
    window = params.window if window is None else window
    pidx = params.patient_index(data.patient_ids)
    obs, pat, mt, dts, dos = [], [], [], [], []
    start = 0
    Q = data.n_components
    for i, rec in zip(pidx, data.records):
        if rec.n_meals:
            dt = rec.times[:, None] - rec.meal_times[None, :]
            k, j = np.nonzero((dt > 0.0) & (dt < window))
            obs.append(start + k)
            pat.append(np.full(k.size, i))
            mt.append(rec.meal_times[j])
            dts.append(dt[k, j])
            dos.append(rec.dosages[j])
        start += rec.n_obs
    if obs:
        return ResponsePoints(np.concatenate(obs), np.concatenate(pat), np.concatenate(mt),
                              np.concatenate(dts), np.concatenate(dos).reshape(-1, Q), start)
    return ResponsePoints(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros((0, Q)), start)


def _lfm_gram(dt_a, dt_b, lfm: LfmParams):
    ua, ia = np.unique(dt_a, return_inverse=True)
    ub, ib = np.unique(dt_b, return_inverse=True)
    if ua.size == 0 or ub.size == 0:
        return np.zeros((dt_a.size, dt_b.size))
    G = lfm_kernel_matrix(ua, ub, lfm)
    return G[np.ix_(ia, ib)]


def time_gram(params: ModelParams, q, A: ResponsePoints, B: ResponsePoints):
    """Time-kernel matrix between two point sets for component ``q``."""
    if params.kind == "gp-resp":
        return tlse_kernel(A.dt[:, None], B.dt[None, :], params.tlse(q))
    if params.kind == "gp-lfm":
        return _lfm_gram(A.dt, B.dt, params.lfm(q))
    f = params.conv_filter()
    mu_a, s_a = conv_filter_params(A.dosages, f)
    mu_b, s_b = conv_filter_params(B.dosages, f)
    return conv_kernel(A.dt[:, None], B.dt[None, :], mu_a[:, None], s_a[:, None],
                       mu_b[None, :], s_b[None, :], f.lengthscale)


def conv_magnitude(params: ModelParams, P: ResponsePoints):
    """Magnitude ``w`` of every point and each component's share of it, ``(n, Q)``."""
    parts = params.coreg.weights[P.patient] * P.dosages
    w = parts.sum(axis=1)
    share = np.full_like(parts, 1.0 / params.n_components)
    pos = w > 0
    share[pos] = parts[pos] / w[pos, None]
    return w, share


def point_cov(params: ModelParams, A: ResponsePoints, B: ResponsePoints, part):
    """Response covariance between points of ``A`` and ``B``.

    ``part`` is a component index or ``"response"`` for the whole response.
    For gp-conv a component index returns the share-weighted covariance
    (component share at ``A`` against total response at ``B``).
    """
    same = A.same_meal(B)
    W = params.coreg.weights
    if params.kind == "gp-conv":
        wa, sa = conv_magnitude(params, A)
        wb, _ = conv_magnitude(params, B)
        R = (wa[:, None] * wb[None, :] + params.coreg.kappa[0] * same) * time_gram(params, 0, A, B)
        return R if part == "response" else sa[:, part][:, None] * R
    comps = range(params.n_components) if part == "response" else [part]
    R = np.zeros((A.size, B.size))
    for q in comps:
        ua = W[A.patient, q] * A.dosages[:, q]
        ub = W[B.patient, q] * B.dosages[:, q]
        R += (ua[:, None] * ub[None, :] + params.coreg.kappa[q] * same) * time_gram(params, q, A, B)
    return R


def _project(A: ResponsePoints, B: ResponsePoints, R):
    if R.size == 0:
        return np.zeros((A.n_obs, B.n_obs))
    PA, PB = A.incidence(), B.incidence()
    left = np.asarray(PA @ R)                 # (nA, nB_points)
    return np.asarray(PB @ left.T).T           # (nA, nB)


def baseline_gram(data_a: Dataset, data_b: Dataset, p: BaselineParams):
    pa, pb = data_a.obs_patient, data_b.obs_patient
    same = pa[:, None] == pb[None, :]
    return p.variance * se_kernel(data_a.times[:, None], data_b.times[None, :], p.lengthscale) * same


def _check_finite(K, what):
    bad = ~np.isfinite(K)
    if bad.any():
        idx = np.argwhere(bad)[:5].tolist()
        raise NumericalError(f"non-finite entries in {what} at indices {idx}")
    return K


def _resolve_part(part, Q):
    if part in ("baseline", "total", "response"):
        return part
    if isinstance(part, (int, np.integer)) and 0 <= part < Q:
        return int(part)
    raise ConfigError(f"unknown covariance part {part!r}")


def assemble_total_cov(data: Dataset, params: ModelParams) -> CovarianceBundle:
    """Prior covariance of all rows of ``data`` (noise excluded)."""
    _check_schema(data, params)
    P = response_points(data, params)
    Kb = _check_finite(baseline_gram(data, data, params.baseline), "baseline covariance")
    comps = []
    for q in range(params.n_components):
        Kq = _project(P, P, point_cov(params, P, P, q))
        comps.append(_check_finite(Kq, f"component {q} covariance"))
    K = Kb + sum(comps)
    return CovarianceBundle(K, Kb, tuple(comps), data.obs_patient, data.times)


def _check_schema(data, params):
    if tuple(data.components) != tuple(params.components):
        raise DataValidationError(f"dataset components {data.components} do not match model {params.components}")


def cross_cov(data_train: Dataset, queries: Dataset, params: ModelParams, part="total"):
    """``K_part(X*, X)``: rows are query observations, columns training rows.

    Query meals come from ``queries`` itself, so hypothetical meals can be
    supplied by editing the query dataset's meal diaries.
    """
    _check_schema(data_train, params)
    _check_schema(queries, params)
    part = _resolve_part(part, params.n_components)
    if part == "baseline":
        params.patient_index(queries.patient_ids)
        return baseline_gram(queries, data_train, params.baseline)
    A = response_points(queries, params)
    B = response_points(data_train, params)
    if part == "total":
        K = baseline_gram(queries, data_train, params.baseline) + _project(A, B, point_cov(params, A, B, "response"))
    else:
        K = _project(A, B, point_cov(params, A, B, part))
    return _check_finite(K, "cross covariance")


def prior_cov(queries: Dataset, params: ModelParams, part="total"):
    """Prior covariance of one part at the query rows."""
    _check_schema(queries, params)
    part = _resolve_part(part, params.n_components)
    if part == "baseline":
        params.patient_index(queries.patient_ids)
        return baseline_gram(queries, queries, params.baseline)
    A = response_points(queries, params)
    if part == "total":
        return baseline_gram(queries, queries, params.baseline) + _project(A, A, point_cov(params, A, A, "response"))
    if part == "response":
        return _project(A, A, point_cov(params, A, A, "response"))
    if params.kind == "gp-conv":
        _, sa = conv_magnitude(params, A)
        s = sa[:, part]
        return _project(A, A, s[:, None] * point_cov(params, A, A, "response") * s[None, :])
    return _project(A, A, point_cov(params, A, A, part))
