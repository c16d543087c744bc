"""
Hierarchical bell-curve response models.

Each meal j of patient i contributes, per component q,

    beta_iq * m_jq * exp(-0.5 (tau - t_j - 3 l)^2 / l^2)

with ``l = l_iq`` (p-resp) or ``l = c_q * l_i1`` (p-idr, ``c_1 = 1``).
Magnitudes and widths get log-normal priors whose location and scale are
shared by all patients and estimated jointly (empirical-Bayes MAP).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.utils import check_random_state

from .data import Dataset
from .exceptions import ConfigError, OptimizationError, ParameterDomainError, UnknownPatientError

PARAMETRIC_KINDS = ("p-resp", "p-idr")

# inverse-gamma(shape, scale) prior on each hierarchical variance; keeps the
# MAP away from the zero-variance singularity of the joint density
_IG_SHAPE, _IG_SCALE = 2.0, 0.1
_COUPLING_LOG_SD = 1.0


def bell_response(tau, t_j, h, l):
    """Bell-shaped response of height ``h`` peaking ``3 l`` after ``t_j``."""
    l = np.asarray(l, dtype=float)
    if np.any(~(l > 0)):
        raise ParameterDomainError(f"bell width must be positive, got {l!r}")
    d = np.asarray(tau, dtype=float) - t_j - 3.0 * l
    return h * np.exp(-0.5 * d * d / (l * l))


@dataclass(frozen=True, eq=False)
class BellParams:
    """Parameters of a fitted p-resp or p-idr model.

    ``widths`` is ``(N, Q)`` for p-resp and ``(N, 1)`` (the driving width
    ``l_i1``) for p-idr, where ``coupling`` holds ``c_2..c_Q``.
    """

    kind: str
    patients: tuple
    components: tuple
    magnitudes: np.ndarray
    widths: np.ndarray
    noise_variance: float
    coupling: np.ndarray = None
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PARAMETRIC_KINDS:
            raise ConfigError(f"unknown parametric kind {self.kind!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("patients", tuple(str(p) for p in self.patients))
        set_("components", tuple(self.components))
        N, Q = len(self.patients), len(self.components)
        mag = np.array(self.magnitudes, dtype=float, ndmin=2)
        wid = np.array(self.widths, dtype=float, ndmin=2)
        if mag.shape != (N, Q):
            raise ParameterDomainError(f"magnitudes shape {mag.shape} != ({N}, {Q})")
        if np.any(mag < 0) or not np.all(np.isfinite(mag)):
            raise ParameterDomainError("magnitudes must be finite and non-negative")
        if np.any(~(wid > 0)):
            raise ParameterDomainError("widths must be positive")
        if self.kind == "p-resp":
            if wid.shape != (N, Q):
                raise ParameterDomainError(f"p-resp widths shape {wid.shape} != ({N}, {Q})")
            coup = None
        else:
            wid = wid.reshape(N, -1)[:, :1]
            coup = np.ones(Q - 1) if self.coupling is None else np.array(self.coupling, dtype=float, ndmin=1)
            if coup.shape != (Q - 1,) or np.any(~(coup > 0)):
                raise ParameterDomainError(f"p-idr needs {Q - 1} positive coupling coefficients")
        if not self.noise_variance > 0:
            raise ParameterDomainError("noise variance must be positive")
        set_("magnitudes", mag)
        set_("widths", wid)
        set_("coupling", coup)

    def effective_widths(self):
        """``(N, Q)`` width of every patient/component bell."""
        if self.kind == "p-resp":
            return self.widths
        return self.widths[:, :1] * np.concatenate([[1.0], self.coupling])[None, :]

    def patient_index(self, patient_ids):
        idx = {p: i for i, p in enumerate(self.patients)}
        try:
            return np.array([idx[str(p)] for p in patient_ids], dtype=int)
        except KeyError as e:
            raise UnknownPatientError(f"patient {e.args[0]!r} has no fitted parameters") from None

    def to_dict(self):
        d = {"kind": self.kind, "patients": list(self.patients), "components": list(self.components),
             "magnitudes": self.magnitudes.tolist(), "widths": self.widths.tolist(),
             "noise_variance": float(self.noise_variance),
             "hyper": {k: np.asarray(v).tolist() for k, v in self.hyper.items()}}
        if self.coupling is not None:
            d["coupling"] = self.coupling.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["patients"]), tuple(d["components"]), np.array(d["magnitudes"]),
                   np.array(d["widths"]), d["noise_variance"], d.get("coupling"),
                   {k: np.asarray(v) for k, v in d.get("hyper", {}).items()})


def _bell_components(data: Dataset, magnitudes, widths, patient_idx):
    """``(n_obs, Q)`` per-component responses given per-patient magnitude/width rows."""
    Q = data.n_components
    out = np.zeros((data.n_obs, Q))
    start = 0
    for i, rec in zip(patient_idx, data.records):
        if rec.n_meals:
            dt = rec.times[:, None] - rec.meal_times[None, :]
            for q in range(Q):
                l = widths[i, q]
                h = magnitudes[i, q] * rec.dosages[:, q]
                d = dt - 3.0 * l
                out[start : start + rec.n_obs, q] = np.exp(-0.5 * d * d / (l * l)) @ h
        start += rec.n_obs
    return out


def bell_components(data: Dataset, params: BellParams):
    """Per-component responses at every observation row, shape ``(n_obs, Q)``."""
    return _bell_components(data, params.magnitudes, params.effective_widths(),
                            params.patient_index(data.patient_ids))


def presp_predict(data: Dataset, params: BellParams):
    """Total p-resp response (centered baseline 0) at every row."""
    if params.kind != "p-resp":
        raise ConfigError("presp_predict needs p-resp parameters")
    return bell_components(data, params).sum(axis=1)


def pidr_predict(data: Dataset, params: BellParams):
    if params.kind != "p-idr":
        raise ConfigError("pidr_predict needs p-idr parameters")
    return bell_components(data, params).sum(axis=1)


# ---------------------------------------------------------------------------
# MAP fitting
# ---------------------------------------------------------------------------

class _Layout:
    def __init__(self, kind, N, Q, hierarchical):
        self.kind, self.N, self.Q, self.hier = kind, N, Q, hierarchical
        nw = N * Q if kind == "p-resp" else N
        qw = Q if kind == "p-resp" else 1
        blocks = [("log_mag", N * Q), ("log_width", nw)]
        if kind == "p-idr":
            blocks.append(("log_coupling", Q - 1))
        if hierarchical:
            blocks += [("mag_mu", Q), ("mag_log_sd", Q), ("width_mu", qw), ("width_log_sd", qw)]
        blocks.append(("log_noise", 1))
        self.blocks = [(n, s) for n, s in blocks if s]
        self.size = sum(s for _, s in self.blocks)

    def unpack(self, x):
        out, i = {}, 0
        for n, s in self.blocks:
            out[n] = x[i : i + s]
            i += s
        return out

    def pack(self, d):
        return np.concatenate([np.asarray(d[n], dtype=float).ravel() for n, _ in self.blocks])


def _normal_logpdf(x, mu, log_sd):
    sd = np.exp(log_sd)
    return -0.5 * ((x - mu) / sd) ** 2 - log_sd - 0.5 * np.log(2 * np.pi)


def _log_invgamma_var(log_sd):
    # density of the variance s^2 under InvGamma(shape, scale), in log_sd coordinates
    v = np.exp(2 * log_sd)
    return -(_IG_SHAPE + 1) * np.log(v) - _IG_SCALE / v + np.log(2 * v)


def fit_parametric_map(data: Dataset, kind: str, random_state=None, n_restarts=3, hierarchical=True,
                       max_evals=None, init_width=0.5, init_magnitude=0.01):
    """MAP estimate of a bell-curve model on centered training data.

    With ``hierarchical=False`` the priors are dropped and each patient is
    fitted by plain least squares (used to measure shrinkage).

    Returns
    -------
    params : BellParams
    info : dict
        ``objective`` (log posterior at the optimum), ``initial_objective``
        and per-restart diagnostics.
    """
    if kind not in PARAMETRIC_KINDS:
        raise ConfigError(f"kind must be one of {PARAMETRIC_KINDS}, got {kind!r}")
    rng = check_random_state(random_state)
    N, Q = len(data), data.n_components
    lay = _Layout(kind, N, Q, hierarchical)
    y = data.values
    n = y.size
    pidx = np.arange(N)

    def widths_of(v):
        if kind == "p-resp":
            return np.exp(v["log_width"]).reshape(N, Q)
        base = np.exp(v["log_width"])[:, None]
        return base * np.exp(np.concatenate([[0.0], v["log_coupling"]]))[None, :]

    def log_post(x):
        v = lay.unpack(x)
        mags = np.exp(v["log_mag"]).reshape(N, Q)
        widths = widths_of(v)
        resid = y - _bell_components(data, mags, widths, pidx).sum(axis=1)
        s2 = np.exp(v["log_noise"][0])
        lp = -0.5 * resid @ resid / s2 - 0.5 * n * np.log(2 * np.pi * s2)
        if hierarchical:
            lm = v["log_mag"].reshape(N, Q)
            lp += _normal_logpdf(lm, v["mag_mu"][None, :], v["mag_log_sd"][None, :]).sum()
            lw = v["log_width"].reshape(N, -1)
            lp += _normal_logpdf(lw, v["width_mu"][None, :], v["width_log_sd"][None, :]).sum()
            lp += _log_invgamma_var(v["mag_log_sd"]).sum() + _log_invgamma_var(v["width_log_sd"]).sum()
        if kind == "p-idr":
            lp += _normal_logpdf(v["log_coupling"], 0.0, np.log(_COUPLING_LOG_SD)).sum()
        return lp

    nw = N * Q if kind == "p-resp" else N
    qw = Q if kind == "p-resp" else 1
    base = {
        "log_mag": np.full(N * Q, np.log(init_magnitude)),
        "log_width": np.full(nw, np.log(init_width)),
        "log_coupling": np.zeros(Q - 1),
        "mag_mu": np.full(Q, np.log(init_magnitude)), "mag_log_sd": np.full(Q, np.log(0.5)),
        "width_mu": np.full(qw, np.log(init_width)), "width_log_sd": np.full(qw, np.log(0.5)),
        "log_noise": [np.log(max(np.var(y), 1e-4))],
    }
    x_init = lay.pack(base)
    init_obj = log_post(x_init)
    max_evals = max_evals or 400 * lay.size

    def neg(x):
        val = log_post(np.clip(x, -30, 30))
        return -val if np.isfinite(val) else 1e20

    best, diags = None, []
    for r in range(n_restarts):
        x0 = x_init if r == 0 else x_init + rng.uniform(np.log(0.5), np.log(2.0), x_init.size)
        res = minimize(neg, x0, method="Powell", options={"maxfev": max_evals, "xtol": 1e-4, "ftol": 1e-10})
        # polish; Powell can stall on the coupled width/location directions
        res = minimize(neg, res.x, method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": 1e-5, "fatol": 1e-9, "adaptive": True})
        ok = np.isfinite(res.fun) and res.fun < 1e20
        diags.append({"restart": r, "status": "ok" if ok else "failed", "objective": -float(res.fun)})
        if ok and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizationError("parametric MAP fit failed on every restart", diags)
    x = np.clip(best.x, -30, 30)
    if -neg(x) < init_obj:
        x = x_init
    v = lay.unpack(x)
    hyper = {k: v[k] for k in ("mag_mu", "mag_log_sd", "width_mu", "width_log_sd") if k in v}
    params = BellParams(
        kind, data.patient_ids, data.components, np.exp(v["log_mag"]).reshape(N, Q),
        np.exp(v["log_width"]).reshape(N, -1), float(np.exp(v["log_noise"][0])),
        np.exp(v["log_coupling"]) if kind == "p-idr" else None, hyper,
    )
    return params, {"objective": float(log_post(x)), "initial_objective": float(init_obj), "restarts": diags}
