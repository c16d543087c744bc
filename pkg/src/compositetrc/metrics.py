"""Point and probabilistic accuracy of glucose predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import MetricError

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
METRIC_NAMES = ("rmse", "mae", "mnll")


@dataclass(frozen=True)
class MetricReport:
    """RMSE, MAE and MNLL over all points, per patient, and pooled across patients.

    ``pooled`` maps each metric to ``(mean, standard error)`` over the
    per-patient values.
    """

    rmse: float
    mae: float
    mnll: float
    n: int
    per_patient: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)

    def to_text(self):
        """Flat ``key = value`` lines; floats use ``repr`` so reports round-trip exactly."""
        lines = [f"n = {self.n}"] + [f"{k} = {getattr(self, k)!r}" for k in METRIC_NAMES]
        for k in METRIC_NAMES:
            if k in self.pooled:
                m, se = self.pooled[k]
                lines += [f"pooled.{k}.mean = {m!r}", f"pooled.{k}.se = {se!r}"]
        for pid in sorted(self.per_patient):
            rep = self.per_patient[pid]
            lines.append(f"patient.{pid}.n = {rep['n']}")
            lines += [f"patient.{pid}.{k} = {rep[k]!r}" for k in METRIC_NAMES]
        return "\n".join(lines) + "\n"


def _point_metrics(r, var):
    return {
        "rmse": float(np.sqrt(np.mean(r * r))),
        "mae": float(np.mean(np.abs(r))),
        "mnll": float(np.mean(HALF_LOG_2PI + 0.5 * np.log(var) + 0.5 * r * r / var)),
        "n": int(r.size),
    }


def compute_metrics(y, mean, var, patient_ids=None) -> MetricReport:
    """Score predictive means ``mean`` and variances ``var`` against ``y``.

    ``var`` must already include the observation noise. With
    ``patient_ids`` the report also holds per-patient values and their
    mean and standard error across patients.
    """
    y = np.asarray(y, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    var = np.broadcast_to(np.asarray(var, dtype=float), y.shape) if np.ndim(var) == 0 else np.asarray(var, dtype=float).ravel()
    if not (y.shape == mean.shape == var.shape):
        raise MetricError(f"length mismatch: y {y.size}, mean {mean.size}, var {var.size}")
    if y.size == 0:
        raise MetricError("no points to evaluate")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mean))):
        raise MetricError("non-finite targets or predictions")
    if np.any(~(var > 0)) or not np.all(np.isfinite(var)):
        raise MetricError("predictive variances must be positive and finite")
    r = y - mean
    overall = _point_metrics(r, var)
    per, pooled = {}, {}
    if patient_ids is not None:
        pids = np.asarray(patient_ids, dtype=object).ravel()
        if pids.shape != y.shape:
            raise MetricError(f"patient ids have length {pids.size}, expected {y.size}")
        for pid in sorted(set(pids.tolist())):
            m = pids == pid
            per[str(pid)] = _point_metrics(r[m], var[m])
        k = len(per)
        for name in METRIC_NAMES:
            vals = np.array([per[p][name] for p in sorted(per)])
            se = float(vals.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
            pooled[name] = (float(vals.mean()), se)
    return MetricReport(overall["rmse"], overall["mae"], overall["mnll"], overall["n"], per, pooled)
